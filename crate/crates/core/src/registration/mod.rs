//! Registration Service and the CSP-side PCK certificate cache.
//!
//! The service vets manifests against an allow-list of genuine package
//! keys, recovers the escrowed platform provisioning root, derives the
//! platform's PCKs exactly as the packages do, and signs certificates for
//! them. It also approves Add Requests with membership certificates.

mod certs;
mod vetting;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use thiserror::Error;

pub use certs::{AddRequest, MembershipCertificate, PckCertificate, ServicePublicKey};
pub use vetting::{VettingList, VettingParseError};

use crate::crypto::{
    kdf, keypair_from_seed, suite, DhSecret, PublicKey, SigningKeyPair, SymmetricKey,
};
use crate::establishment::PlatformManifest;
use crate::package::{derive_pck, InstanceId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    BadSignature,
    UnvettedPackage,
    UndecryptableEscrow,
    AlreadyRegistered,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RejectReason::BadSignature => "bad manifest signature",
            RejectReason::UnvettedPackage => "package not on the vetting list",
            RejectReason::UndecryptableEscrow => "escrow not decryptable by this service",
            RejectReason::AlreadyRegistered => "platform already registered",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistrationError {
    #[error("manifest rejected: {0}")]
    ManifestRejected(RejectReason),
    #[error("certificate not found")]
    NotFound,
    #[error("unknown platform")]
    UnknownPlatform,
    #[error("new package is not vetted")]
    UnvettedPackage,
    #[error("add request not signed by a platform member")]
    BadRequestSignature,
}

struct RegistryEntry {
    prov_root: SymmetricKey,
    members: Vec<PublicKey>,
    tcb_levels: Vec<u32>,
}

/// Read-mostly store of issued PCK certificates, as hosted by a cloud
/// provider. Every fetch is served locally.
#[derive(Debug, Default)]
pub struct PckCache {
    certs: RwLock<BTreeMap<(InstanceId, u32), PckCertificate>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl PckCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&self, certs: &[PckCertificate]) {
        let mut store = self.certs.write().expect("cache lock poisoned");
        for c in certs {
            store.insert((c.platform_instance_id, c.tcb_level), c.clone());
        }
    }

    pub fn evict(&self, instance: &InstanceId) {
        self.certs
            .write()
            .expect("cache lock poisoned")
            .retain(|(id, _), _| id != instance);
    }

    pub fn fetch(
        &self,
        instance: &InstanceId,
        tcb_level: u32,
    ) -> Result<PckCertificate, RegistrationError> {
        let found = self
            .certs
            .read()
            .expect("cache lock poisoned")
            .get(&(*instance, tcb_level))
            .cloned();
        match found {
            Some(c) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Ok(c)
            }
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                Err(RegistrationError::NotFound)
            }
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}

pub fn fetch_pck_certificate(
    cache: &PckCache,
    instance: &InstanceId,
    tcb_level: u32,
) -> Result<PckCertificate, RegistrationError> {
    cache.fetch(instance, tcb_level)
}

pub struct RegistrationService {
    public: ServicePublicKey,
    signing: SigningKeyPair,
    escrow_secret: DhSecret,
    vetting: VettingList,
    registry: RwLock<BTreeMap<InstanceId, RegistryEntry>>,
    cache: Arc<PckCache>,
    requests: AtomicU64,
}

impl std::fmt::Debug for RegistrationService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegistrationService")
            .field("service_id", &self.public.service_id)
            .finish_non_exhaustive()
    }
}

impl RegistrationService {
    /// Long-term keys are derived from `secret` and the service id.
    pub fn new(
        service_id: &str,
        secret: &SymmetricKey,
        vetting: VettingList,
        cache: Arc<PckCache>,
    ) -> Self {
        let ctx = service_id.as_bytes();
        let signing = keypair_from_seed(&kdf(secret, suite::LABEL_SERVICE_SIGNING, ctx));
        let escrow_secret =
            DhSecret::from_bytes(*kdf(secret, suite::LABEL_SERVICE_ESCROW, ctx).expose_secret());
        let public = ServicePublicKey {
            service_id: service_id.to_string(),
            signing: signing.public(),
            escrow: escrow_secret.public(),
        };
        Self {
            public,
            signing,
            escrow_secret,
            vetting,
            registry: RwLock::new(BTreeMap::new()),
            cache,
            requests: AtomicU64::new(0),
        }
    }

    pub fn public_key(&self) -> &ServicePublicKey {
        &self.public
    }

    pub fn service_id(&self) -> &str {
        &self.public.service_id
    }

    pub fn cache(&self) -> &Arc<PckCache> {
        &self.cache
    }

    /// Number of requests this service has handled.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn is_registered(&self, instance: &InstanceId) -> bool {
        self.registry
            .read()
            .expect("registry lock poisoned")
            .contains_key(instance)
    }

    pub fn register_platform(
        &self,
        manifest: &PlatformManifest,
        tcb_levels: &[u32],
    ) -> Result<Vec<PckCertificate>, RegistrationError> {
        use RegistrationError::ManifestRejected as Rejected;
        self.requests.fetch_add(1, Ordering::Relaxed);
        if !manifest.signature_valid() {
            return Err(Rejected(RejectReason::BadSignature));
        }
        if manifest
            .packages
            .iter()
            .any(|p| !self.vetting.contains(&p.public_key))
        {
            return Err(Rejected(RejectReason::UnvettedPackage));
        }
        let instance = manifest.platform_instance_id;
        if manifest.escrow.service_id != self.public.service_id {
            return Err(Rejected(RejectReason::UndecryptableEscrow));
        }
        let prov_root = manifest
            .escrow
            .open(&self.escrow_secret, &self.public.service_id, &instance)
            .map_err(|_| Rejected(RejectReason::UndecryptableEscrow))?;

        let certs: Vec<PckCertificate> = tcb_levels
            .iter()
            .map(|&tcb| {
                PckCertificate::issue(
                    &self.public.service_id,
                    &self.signing,
                    instance,
                    tcb,
                    derive_pck(&prov_root, tcb).public(),
                )
            })
            .collect();

        let mut registry = self.registry.write().expect("registry lock poisoned");
        if registry.contains_key(&instance) {
            return Err(Rejected(RejectReason::AlreadyRegistered));
        }
        registry.insert(
            instance,
            RegistryEntry {
                prov_root,
                members: manifest.packages.iter().map(|p| p.public_key).collect(),
                tcb_levels: tcb_levels.to_vec(),
            },
        );
        drop(registry);
        self.cache.publish(&certs);
        log::debug!(
            "registered platform {instance} at {} tcb levels",
            certs.len()
        );
        Ok(certs)
    }

    pub fn approve_add_request(
        &self,
        req: &AddRequest,
    ) -> Result<MembershipCertificate, RegistrationError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut registry = self.registry.write().expect("registry lock poisoned");
        let entry = registry
            .get_mut(&req.platform_instance_id)
            .ok_or(RegistrationError::UnknownPlatform)?;
        if !entry.members.contains(&req.signer) || !req.signature_valid() {
            return Err(RegistrationError::BadRequestSignature);
        }
        if !self.vetting.contains(&req.new_package_public_key) {
            return Err(RegistrationError::UnvettedPackage);
        }
        if !entry.members.contains(&req.new_package_public_key) {
            entry.members.push(req.new_package_public_key);
        }
        Ok(MembershipCertificate::issue(
            &self.public.service_id,
            &self.signing,
            req.platform_instance_id,
            req.new_package_public_key,
        ))
    }

    pub fn deregister_platform(&self, instance: &InstanceId) -> Result<(), RegistrationError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        self.registry
            .write()
            .expect("registry lock poisoned")
            .remove(instance)
            .ok_or(RegistrationError::UnknownPlatform)?;
        self.cache.evict(instance);
        Ok(())
    }

    /// Re-derive a certificate from the escrowed root, bypassing the cache.
    pub fn lookup_certificate(
        &self,
        instance: &InstanceId,
        tcb_level: u32,
    ) -> Result<PckCertificate, RegistrationError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let registry = self.registry.read().expect("registry lock poisoned");
        let entry = registry.get(instance).ok_or(RegistrationError::NotFound)?;
        if !entry.tcb_levels.contains(&tcb_level) {
            return Err(RegistrationError::NotFound);
        }
        Ok(PckCertificate::issue(
            &self.public.service_id,
            &self.signing,
            *instance,
            tcb_level,
            derive_pck(&entry.prov_root, tcb_level).public(),
        ))
    }

    /// Text dump of the registry; contains no secrets.
    pub fn render_registry(&self) -> String {
        let registry = self.registry.read().expect("registry lock poisoned");
        let mut out = format!("registration service {}\n", self.public.service_id);
        let _ = writeln!(out, "  signing key: {}", self.public.signing);
        for (id, entry) in registry.iter() {
            let _ = writeln!(out, "platform {id}");
            let _ = writeln!(out, "  tcb levels: {:?}", entry.tcb_levels);
            for m in &entry.members {
                let _ = writeln!(out, "  member: {m}");
            }
        }
        out
    }
}
