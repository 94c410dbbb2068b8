//! One CPU package: fuse root keys, the identities derived from them, the
//! persistent key blob, and the key-request facility enclaves see.

use std::fmt;

use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{
    aead_open, aead_seal, kdf, keypair_from_seed, suite, CryptoError, Digest, PublicKey, SealedBox,
    SigningKeyPair, SimRng, SymmetricKey,
};
use crate::registration::ServicePublicKey;

pub type PackageId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PackageError {
    #[error("key blob failed authentication")]
    AuthFailure,
    #[error("SGX is not enabled on this package")]
    SgxNotEnabled,
    #[error("key blob contents malformed: {0}")]
    Malformed(#[from] DecodeError),
}

impl From<CryptoError> for PackageError {
    fn from(_: CryptoError) -> Self {
        PackageError::AuthFailure
    }
}

/// 128-bit identifier of one platform instance.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct InstanceId(pub [u8; 16]);

impl InstanceId {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        Some(InstanceId(hex::decode(s.trim()).ok()?.try_into().ok()?))
    }
}

impl fmt::Debug for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InstanceId({})", self.to_hex())
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Canonical for InstanceId {
    fn encode(&self, enc: &mut Encoder) {
        enc.array(&self.0);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(InstanceId(dec.array("platform instance id")?))
    }
}

/// A simulated CPU package. Immutable once manufactured.
#[derive(Clone)]
pub struct PackageIdentity {
    pub package_id: PackageId,
    prov_root_key: SymmetricKey,
    seal_root_key: SymmetricKey,
    signing_identity: SigningKeyPair,
    pub fw_version: u32,
}

impl fmt::Debug for PackageIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PackageIdentity")
            .field("package_id", &self.package_id)
            .field("public", &self.signing_identity.public())
            .field("fw_version", &self.fw_version)
            .finish_non_exhaustive()
    }
}

impl PackageIdentity {
    pub fn from_fuses(
        package_id: PackageId,
        prov_root_key: SymmetricKey,
        seal_root_key: SymmetricKey,
        fw_version: u32,
    ) -> Self {
        assert_ne!(
            prov_root_key.expose_secret(),
            seal_root_key.expose_secret(),
            "provisioning and sealing roots must differ"
        );
        let signing_identity = keypair_from_seed(&prov_root_key);
        Self {
            package_id,
            prov_root_key,
            seal_root_key,
            signing_identity,
            fw_version,
        }
    }

    /// Draw fresh fuse keys.
    pub fn manufacture(package_id: PackageId, fw_version: u32, rng: &mut SimRng) -> Self {
        let prov = rng.key(suite::LABEL_FUSE_PROV);
        let seal = rng.key(suite::LABEL_FUSE_SEAL);
        Self::from_fuses(package_id, prov, seal, fw_version)
    }

    /// Fuse keys as a pure function of a factory secret and the package id.
    pub fn from_factory(factory: &SymmetricKey, package_id: PackageId, fw_version: u32) -> Self {
        let ctx = package_id.to_le_bytes();
        Self::from_fuses(
            package_id,
            kdf(factory, suite::LABEL_FUSE_PROV, &ctx),
            kdf(factory, suite::LABEL_FUSE_SEAL, &ctx),
            fw_version,
        )
    }

    pub fn public_key(&self) -> PublicKey {
        self.signing_identity.public()
    }

    pub fn signing_identity(&self) -> &SigningKeyPair {
        &self.signing_identity
    }

    /// Same part after a microcode update.
    pub fn with_fw_version(&self, fw_version: u32) -> Self {
        Self {
            fw_version,
            ..self.clone()
        }
    }

    /// Fuse roots, exposed for leak scans only.
    pub fn hardware_secrets(&self) -> [&[u8; 32]; 2] {
        [
            self.prov_root_key.expose_secret(),
            self.seal_root_key.expose_secret(),
        ]
    }

    fn blob_key(&self) -> SymmetricKey {
        kdf(
            &self.seal_root_key,
            suite::LABEL_BLOB,
            &self.fw_version.to_le_bytes(),
        )
    }
}

/// Shared platform root keys. Every member package holds an identical copy.
#[derive(Clone, PartialEq, Eq)]
pub struct PlatformKeys {
    pub platform_prov_root: SymmetricKey,
    pub platform_seal_root: SymmetricKey,
    pub platform_instance_id: InstanceId,
}

impl fmt::Debug for PlatformKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlatformKeys")
            .field("platform_instance_id", &self.platform_instance_id)
            .finish_non_exhaustive()
    }
}

impl PlatformKeys {
    pub fn generate(rng: &mut SimRng) -> Self {
        Self {
            platform_prov_root: rng.key("platform-provisioning-root"),
            platform_seal_root: rng.key("platform-sealing-root"),
            platform_instance_id: InstanceId(rng.array()),
        }
    }

    /// Secret encoding, only ever fed into an AEAD.
    pub(crate) fn encode_secret(&self, enc: &mut Encoder) {
        enc.item(&self.platform_instance_id)
            .array(self.platform_prov_root.expose_secret())
            .array(self.platform_seal_root.expose_secret());
    }

    pub(crate) fn decode_secret(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let platform_instance_id = dec.item()?;
        let prov = dec.array("platform prov root")?;
        let seal = dec.array("platform seal root")?;
        Ok(Self {
            platform_prov_root: SymmetricKey::new(prov, "platform-provisioning-root"),
            platform_seal_root: SymmetricKey::new(seal, "platform-sealing-root"),
            platform_instance_id,
        })
    }

    pub fn secret_bytes(&self) -> [&[u8; 32]; 2] {
        [
            self.platform_prov_root.expose_secret(),
            self.platform_seal_root.expose_secret(),
        ]
    }
}

/// One Master Comms Key as held by a package, keyed by the peer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingKey {
    pub peer: PackageId,
    pub master_comms_key: SymmetricKey,
    pub transcript_digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlobContents {
    pub platform: PlatformKeys,
    pub pairings: Vec<PairingKey>,
    pub config_digest: Digest,
    /// The registration service this platform is bound to.
    pub registrar: ServicePublicKey,
}

impl BlobContents {
    fn encode_secret(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.platform.encode_secret(&mut enc);
        enc.seq(&self.pairings, |e, p| {
            e.u32(p.peer)
                .array(p.master_comms_key.expose_secret())
                .item(&p.transcript_digest);
        });
        enc.item(&self.config_digest).item(&self.registrar);
        enc.finish()
    }

    fn decode_secret(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let platform = PlatformKeys::decode_secret(&mut dec)?;
        let pairings = dec.seq("pairings", |d| {
            Ok(PairingKey {
                peer: d.u32("peer")?,
                master_comms_key: SymmetricKey::new(
                    d.array("master comms key")?,
                    suite::LABEL_MASTER_COMMS,
                ),
                transcript_digest: d.item()?,
            })
        })?;
        let config_digest = dec.item()?;
        let registrar = dec.item()?;
        dec.finish()?;
        Ok(Self {
            platform,
            pairings,
            config_digest,
            registrar,
        })
    }
}

const BLOB_FORMAT: u8 = 1;

/// Per-package persistent copy of the platform keys, encrypted under a key
/// derived from that package's sealing root and firmware version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyBlob {
    pub owner_package_id: PackageId,
    pub fw_version_tag: u32,
    pub sealed: SealedBox,
}

impl Canonical for KeyBlob {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(BLOB_FORMAT)
            .u32(self.owner_package_id)
            .u32(self.fw_version_tag)
            .item(&self.sealed);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let format = dec.u8("blob format")?;
        if format != BLOB_FORMAT {
            return Err(DecodeError::InvalidValue {
                field: "blob format",
                value: format as u64,
            });
        }
        Ok(KeyBlob {
            owner_package_id: dec.u32("owner")?,
            fw_version_tag: dec.u32("fw version")?,
            sealed: dec.item()?,
        })
    }
}

fn blob_aad(owner: PackageId, fw_version: u32) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.str("key-blob").u32(owner).u32(fw_version);
    enc.finish()
}

pub fn seal_key_blob(pkg: &PackageIdentity, contents: &BlobContents, rng: &mut SimRng) -> KeyBlob {
    let sealed = aead_seal(
        &pkg.blob_key(),
        rng.array(),
        &blob_aad(pkg.package_id, pkg.fw_version),
        &contents.encode_secret(),
    );
    KeyBlob {
        owner_package_id: pkg.package_id,
        fw_version_tag: pkg.fw_version,
        sealed,
    }
}

/// Opens with the package's *current* firmware version, so a microcode
/// change invalidates every blob sealed before it.
pub fn open_key_blob(pkg: &PackageIdentity, blob: &KeyBlob) -> Result<BlobContents, PackageError> {
    let plain = aead_open(
        &pkg.blob_key(),
        &blob.sealed,
        &blob_aad(pkg.package_id, pkg.fw_version),
    )?;
    Ok(BlobContents::decode_secret(&plain)?)
}

pub fn derive_pck(prov_root: &SymmetricKey, tcb_level: u32) -> SigningKeyPair {
    keypair_from_seed(&kdf(prov_root, suite::LABEL_PCK, &tcb_level.to_le_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeyClass {
    Seal,
    Provisioning,
    AttestationSeed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyRequest {
    pub key_class: KeyClass,
    pub requester_measurement: Digest,
    pub tcb_level: u32,
}

/// Enclave key request. Derivation uses only the platform roots, so every
/// member package answers identically.
pub fn get_key(
    _pkg: &PackageIdentity,
    platform: Option<&PlatformKeys>,
    req: &KeyRequest,
) -> Result<SymmetricKey, PackageError> {
    let platform = platform.ok_or(PackageError::SgxNotEnabled)?;
    let mut ctx = Encoder::new();
    ctx.u32(req.tcb_level);
    let (root, label) = match req.key_class {
        KeyClass::Seal => {
            ctx.item(&req.requester_measurement);
            (&platform.platform_seal_root, suite::LABEL_SEAL_KEY)
        }
        KeyClass::Provisioning => (&platform.platform_prov_root, suite::LABEL_PROVISIONING_KEY),
        KeyClass::AttestationSeed => (&platform.platform_prov_root, suite::LABEL_ATTESTATION_SEED),
    };
    Ok(kdf(root, label, &ctx.finish()))
}
