//! Platform lifecycle firmware: Establish New Platform, Reboot Old Platform
//! and Add Package to Platform, with a simulated BIOS driving packages that
//! talk over an adversary-controlled [`Mailbox`].

mod info;
mod lifecycle;
pub mod mailbox;
mod manifest;
mod pairing;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub use info::{verify_config_consistency, ConfigField, Inconsistency, MemoryConfig, PlatformInfo};
pub use lifecycle::{
    add_package, build_add_request, establish_platform, predict_platform_keys, reboot_platform,
    required_pairs, BiosConfig, Establishment, MembershipUpdate,
};
pub use mailbox::{Adversary, Envelope, Fault, FaultInjector, Intercept, Mailbox, Passive};
pub use manifest::{Escrow, ManifestPackage, PairingDigest, PlatformManifest};
pub use pairing::{
    derive_session_keys, negotiate_pairing, HandshakeMessage, MessageKind, PairingRecord,
    SessionKeys, SessionMessage,
};

use crate::codec::DecodeError;
use crate::crypto::{CryptoError, Digest, SymmetricKey};
use crate::link::LinkKeySet;
use crate::package::{
    get_key, InstanceId, KeyRequest, PackageError, PackageId, PackageIdentity, PlatformKeys,
};
use crate::registration::ServicePublicKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertProblem {
    WrongPlatform,
    WrongPackage,
    WrongIssuer,
    BadSignature,
}

impl fmt::Display for CertProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CertProblem::WrongPlatform => "certificate names another platform",
            CertProblem::WrongPackage => "certificate names another package",
            CertProblem::WrongIssuer => "certificate issued by another registration service",
            CertProblem::BadSignature => "certificate signature invalid",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EstablishmentError {
    #[error("no packages supplied")]
    NoPackages,
    #[error("package {0} is not part of this platform")]
    UnknownPackage(PackageId),
    #[error("pairing {pkg_a}-{pkg_b}: transcript signature mismatch")]
    SignatureMismatch { pkg_a: PackageId, pkg_b: PackageId },
    #[error("degenerate key exchange")]
    DegenerateKeyExchange,
    #[error("package {recipient} timed out waiting for {waiting_for}")]
    Timeout {
        recipient: PackageId,
        waiting_for: &'static str,
    },
    #[error("unexpected message, wanted {expected}")]
    UnexpectedMessage { expected: &'static str },
    #[error("malformed message: {0}")]
    Malformed(#[from] DecodeError),
    #[error("session message {sender}->{recipient} failed authentication")]
    SessionAuthFailure {
        sender: PackageId,
        recipient: PackageId,
    },
    #[error("configuration inconsistent: {0}")]
    Inconsistent(Inconsistency),
    #[error("platform must be re-established: {0}")]
    NeedsEstablishment(String),
    #[error("platform is not established")]
    NotEstablished,
    #[error("package {0} is already a member")]
    AlreadyMember(PackageId),
    #[error("membership certificate rejected: {0}")]
    CertInvalid(CertProblem),
    #[error("escrow to registration service failed: {0}")]
    Escrow(CryptoError),
}

impl From<CryptoError> for EstablishmentError {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::DegenerateKeyExchange => EstablishmentError::DegenerateKeyExchange,
            other => EstablishmentError::Escrow(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PlatformPhase {
    Unestablished,
    Established,
    BootedSgxReady,
    SgxDisabled,
}

impl fmt::Display for PlatformPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlatformPhase::Unestablished => "unestablished",
            PlatformPhase::Established => "established",
            PlatformPhase::BootedSgxReady => "booted-sgx-ready",
            PlatformPhase::SgxDisabled => "sgx-disabled",
        })
    }
}

pub type Pair = (PackageId, PackageId);

/// Firmware-held state of one platform for the current boot. Holds
/// secrets; has no serialized form.
#[derive(Debug, Clone)]
pub struct PlatformState {
    pub phase: PlatformPhase,
    pub members: Vec<PackageId>,
    pub master: PackageId,
    pub platform_instance_id: InstanceId,
    pub registrar: ServicePublicKey,
    pub reset_epoch: u64,
    pub config_digest: Digest,
    pub pairings: BTreeMap<Pair, PairingRecord>,
    pub session_keys: BTreeMap<Pair, SessionKeys>,
    /// Endpoint key sets per link, `(low end, high end)`.
    pub link_keys: BTreeMap<Pair, (LinkKeySet, LinkKeySet)>,
    package_keys: BTreeMap<PackageId, PlatformKeys>,
    pub disable_reason: Option<String>,
}

impl PlatformState {
    pub fn sgx_usable(&self) -> bool {
        matches!(
            self.phase,
            PlatformPhase::Established | PlatformPhase::BootedSgxReady
        )
    }

    /// Platform keys as loaded into package `id`, if SGX is usable.
    pub fn platform_keys(&self, id: PackageId) -> Option<&PlatformKeys> {
        if self.sgx_usable() {
            self.package_keys.get(&id)
        } else {
            None
        }
    }

    pub fn get_key(
        &self,
        pkg: &PackageIdentity,
        req: &KeyRequest,
    ) -> Result<SymmetricKey, PackageError> {
        get_key(pkg, self.platform_keys(pkg.package_id), req)
    }

    /// Disable SGX for the rest of this boot.
    pub fn disable(&mut self, reason: impl Into<String>) {
        self.phase = PlatformPhase::SgxDisabled;
        self.disable_reason = Some(reason.into());
    }

    pub fn link_endpoint(&self, local: PackageId, remote: PackageId) -> Option<&LinkKeySet> {
        let pair = pairing::ordered(local, remote);
        let (lo, hi) = self.link_keys.get(&pair)?;
        Some(if local == pair.0 { lo } else { hi })
    }
}
