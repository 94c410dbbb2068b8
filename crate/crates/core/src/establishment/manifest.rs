use std::fmt;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{
    aead_open, aead_seal, dh_derive, dh_keygen, kdf, suite, verify, CryptoError, DhPublic,
    DhSecret, Digest, PublicKey, SealedBox, Signature, SigningKeyPair, SimRng, SymmetricKey,
};
use crate::package::{InstanceId, PackageId};
use crate::registration::ServicePublicKey;

/// The platform provisioning root, encrypted to one registration service
/// with ephemeral-static DH.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Escrow {
    pub service_id: String,
    pub ephemeral: DhPublic,
    pub sealed: SealedBox,
}

fn escrow_key(
    shared: &SymmetricKey,
    ephemeral: &DhPublic,
    service: &DhPublic,
    id: &InstanceId,
) -> SymmetricKey {
    let mut ctx = Encoder::new();
    ctx.item(ephemeral).item(service).item(id);
    kdf(shared, suite::LABEL_ESCROW, &ctx.finish())
}

fn escrow_aad(service_id: &str, id: &InstanceId) -> Vec<u8> {
    let mut aad = Encoder::new();
    aad.str("escrow").str(service_id).item(id);
    aad.finish()
}

impl Escrow {
    pub fn seal(
        service: &ServicePublicKey,
        instance: &InstanceId,
        prov_root: &SymmetricKey,
        rng: &mut SimRng,
    ) -> Result<Self, CryptoError> {
        let (secret, ephemeral) = dh_keygen(rng);
        let shared = dh_derive(&secret, &service.escrow)?;
        let key = escrow_key(&shared, &ephemeral, &service.escrow, instance);
        let sealed = aead_seal(
            &key,
            rng.array(),
            &escrow_aad(&service.service_id, instance),
            prov_root.expose_secret(),
        );
        Ok(Self {
            service_id: service.service_id.clone(),
            ephemeral,
            sealed,
        })
    }

    pub fn open(
        &self,
        service_secret: &DhSecret,
        service_id: &str,
        instance: &InstanceId,
    ) -> Result<SymmetricKey, CryptoError> {
        let shared = dh_derive(service_secret, &self.ephemeral)?;
        let key = escrow_key(&shared, &self.ephemeral, &service_secret.public(), instance);
        let plain = aead_open(&key, &self.sealed, &escrow_aad(service_id, instance))?;
        let bytes: [u8; 32] = plain.try_into().map_err(|_| CryptoError::AuthFailure)?;
        Ok(SymmetricKey::new(bytes, "platform-provisioning-root"))
    }
}

impl Canonical for Escrow {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.service_id)
            .item(&self.ephemeral)
            .item(&self.sealed);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            service_id: dec.str("escrow service id")?,
            ephemeral: dec.item()?,
            sealed: dec.item()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestPackage {
    pub package_id: PackageId,
    pub public_key: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingDigest {
    pub pkg_a: PackageId,
    pub pkg_b: PackageId,
    pub transcript_digest: Digest,
}

/// Signed record of one establishment, consumed by the registration
/// service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlatformManifest {
    pub platform_instance_id: InstanceId,
    pub master_id: PackageId,
    pub packages: Vec<ManifestPackage>,
    pub pairings: Vec<PairingDigest>,
    pub platform_info_digest: Digest,
    pub escrow: Escrow,
    pub signature: Signature,
}

impl PlatformManifest {
    const MAGIC: &'static [u8; 4] = b"MPM1";

    pub fn tbs_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.array(Self::MAGIC)
            .item(&self.platform_instance_id)
            .u32(self.master_id)
            .seq(&self.packages, |e, p| {
                e.u32(p.package_id).item(&p.public_key);
            })
            .seq(&self.pairings, |e, p| {
                e.u32(p.pkg_a).u32(p.pkg_b).item(&p.transcript_digest);
            })
            .item(&self.platform_info_digest)
            .item(&self.escrow);
        enc.finish()
    }

    pub fn sign(&mut self, master: &SigningKeyPair) {
        self.signature = master.sign(&self.tbs_bytes());
    }

    pub fn master_public_key(&self) -> Option<PublicKey> {
        self.packages
            .iter()
            .find(|p| p.package_id == self.master_id)
            .map(|p| p.public_key)
    }

    /// Signature checks under the listed Master Package key.
    pub fn signature_valid(&self) -> bool {
        self.master_public_key()
            .is_some_and(|pk| verify(&pk, &self.tbs_bytes(), &self.signature))
    }
}

impl Canonical for PlatformManifest {
    fn encode(&self, enc: &mut Encoder) {
        enc.array(&self.tbs_bytes()).item(&self.signature);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        if &dec.array::<4>("manifest magic")? != Self::MAGIC {
            return Err(DecodeError::BadMagic("manifest"));
        }
        Ok(Self {
            platform_instance_id: dec.item()?,
            master_id: dec.u32("master id")?,
            packages: dec.seq("packages", |d| {
                Ok(ManifestPackage {
                    package_id: d.u32("package id")?,
                    public_key: d.item()?,
                })
            })?,
            pairings: dec.seq("pairings", |d| {
                Ok(PairingDigest {
                    pkg_a: d.u32("pkg a")?,
                    pkg_b: d.u32("pkg b")?,
                    transcript_digest: d.item()?,
                })
            })?,
            platform_info_digest: dec.item()?,
            escrow: dec.item()?,
            signature: dec.item()?,
        })
    }
}

impl fmt::Display for PlatformManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Platform manifest")?;
        writeln!(f, "  instance:      {}", self.platform_instance_id)?;
        writeln!(f, "  master:        pkg{}", self.master_id)?;
        for p in &self.packages {
            writeln!(f, "  package pkg{}:  {}", p.package_id, p.public_key)?;
        }
        for p in &self.pairings {
            writeln!(
                f,
                "  pairing {}-{}:   {}",
                p.pkg_a, p.pkg_b, p.transcript_digest
            )?;
        }
        writeln!(f, "  platform info: {}", self.platform_info_digest)?;
        writeln!(f, "  escrowed to:   {}", self.escrow.service_id)?;
        write!(f, "  signature ok:  {}", self.signature_valid())
    }
}
