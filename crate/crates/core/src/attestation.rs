//! Quote generation and verification. The platform PCK certifies an
//! Attestation Key, the Attestation Key signs quotes, and a challenger
//! walks the chain back to the registration service's signing key.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{
    keypair_from_seed, suite, verify, Digest, PublicKey, Signature, SigningKeyPair, SimRng,
};
use crate::establishment::PlatformState;
use crate::package::{derive_pck, InstanceId, PackageId};
use crate::registration::{PckCertificate, ServicePublicKey};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttestationError {
    #[error("SGX is not enabled on this platform")]
    SgxNotEnabled,
    #[error("PCK certificate does not match this platform")]
    CertMismatch,
}

/// PCK-signed binding of an Attestation Key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AkCertificate {
    pub platform_instance_id: InstanceId,
    pub tcb_level: u32,
    pub ak_public: PublicKey,
    pub pck_public: PublicKey,
    pub signature: Signature,
}

impl AkCertificate {
    const MAGIC: &'static [u8; 4] = b"MPAK";

    pub fn tbs_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.array(Self::MAGIC)
            .item(&self.platform_instance_id)
            .u32(self.tcb_level)
            .item(&self.ak_public)
            .item(&self.pck_public);
        enc.finish()
    }

    pub fn verify(&self, pck_public: &PublicKey) -> bool {
        &self.pck_public == pck_public && verify(pck_public, &self.tbs_bytes(), &self.signature)
    }
}

impl Canonical for AkCertificate {
    fn encode(&self, enc: &mut Encoder) {
        enc.array(&self.tbs_bytes()).item(&self.signature);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.magic(Self::MAGIC, "ak certificate")?;
        Ok(Self {
            platform_instance_id: dec.item()?,
            tcb_level: dec.u32("tcb level")?,
            ak_public: dec.item()?,
            pck_public: dec.item()?,
            signature: dec.item()?,
        })
    }
}

pub struct AttestationKey {
    keypair: SigningKeyPair,
    pub ak_certificate: AkCertificate,
    pub pck_certificate: PckCertificate,
}

impl fmt::Debug for AttestationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AttestationKey")
            .field("ak_public", &self.keypair.public())
            .field("tcb_level", &self.ak_certificate.tcb_level)
            .finish_non_exhaustive()
    }
}

impl AttestationKey {
    pub fn public(&self) -> PublicKey {
        self.keypair.public()
    }
}

/// Create an Attestation Key on `package` and certify it with the PCK the
/// package derives from the platform provisioning root.
pub fn provision_attestation_key(
    state: &PlatformState,
    package: PackageId,
    pck_cert: &PckCertificate,
    rng: &mut SimRng,
) -> Result<AttestationKey, AttestationError> {
    let keys = state
        .platform_keys(package)
        .ok_or(AttestationError::SgxNotEnabled)?;
    if pck_cert.platform_instance_id != keys.platform_instance_id {
        return Err(AttestationError::CertMismatch);
    }
    let pck = derive_pck(&keys.platform_prov_root, pck_cert.tcb_level);
    if pck.public() != pck_cert.pck_public {
        return Err(AttestationError::CertMismatch);
    }
    let keypair = keypair_from_seed(&rng.key(suite::LABEL_AK));
    let mut ak_certificate = AkCertificate {
        platform_instance_id: keys.platform_instance_id,
        tcb_level: pck_cert.tcb_level,
        ak_public: keypair.public(),
        pck_public: pck.public(),
        signature: Signature([0; 64]),
    };
    ak_certificate.signature = pck.sign(&ak_certificate.tbs_bytes());
    Ok(AttestationKey {
        keypair,
        ak_certificate,
        pck_certificate: pck_cert.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportBody {
    pub measurement: Digest,
    pub user_data: Vec<u8>,
    pub tcb_level: u32,
    pub platform_instance_id: InstanceId,
}

impl Canonical for ReportBody {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&self.measurement)
            .bytes(&self.user_data)
            .u32(self.tcb_level)
            .item(&self.platform_instance_id);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            measurement: dec.item()?,
            user_data: dec.bytes("user data")?,
            tcb_level: dec.u32("tcb level")?,
            platform_instance_id: dec.item()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quote {
    pub report_body: ReportBody,
    pub ak_signature: Signature,
    pub ak_certificate: AkCertificate,
    pub pck_certificate: PckCertificate,
}

impl Quote {
    const MAGIC: &'static [u8; 4] = b"MPQT";

    fn signed_bytes(body: &ReportBody) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.array(Self::MAGIC).item(body);
        enc.finish()
    }
}

impl Canonical for Quote {
    fn encode(&self, enc: &mut Encoder) {
        enc.array(Self::MAGIC)
            .item(&self.report_body)
            .item(&self.ak_signature)
            .item(&self.ak_certificate)
            .item(&self.pck_certificate);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.magic(Self::MAGIC, "quote")?;
        Ok(Self {
            report_body: dec.item()?,
            ak_signature: dec.item()?,
            ak_certificate: dec.item()?,
            pck_certificate: dec.item()?,
        })
    }
}

pub fn generate_quote(ak: &AttestationKey, measurement: Digest, user_data: &[u8]) -> Quote {
    let report_body = ReportBody {
        measurement,
        user_data: user_data.to_vec(),
        tcb_level: ak.ak_certificate.tcb_level,
        platform_instance_id: ak.ak_certificate.platform_instance_id,
    };
    Quote {
        ak_signature: ak.keypair.sign(&Quote::signed_bytes(&report_body)),
        report_body,
        ak_certificate: ak.ak_certificate.clone(),
        pck_certificate: ak.pck_certificate.clone(),
    }
}

/// The chain link at which verification failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectedLink {
    Malformed,
    PckLink,
    AkLink,
    QuoteSignature,
    Inconsistent,
}

impl fmt::Display for RejectedLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectedLink::Malformed => "malformed",
            RejectedLink::PckLink => "pck_link",
            RejectedLink::AkLink => "ak_link",
            RejectedLink::QuoteSignature => "quote_signature",
            RejectedLink::Inconsistent => "inconsistent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accepted(ReportBody),
    Rejected(RejectedLink),
}

impl Verdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Verdict::Accepted(_))
    }
}

pub fn verify_quote(q: &Quote, service_root: &ServicePublicKey) -> Verdict {
    let pck = &q.pck_certificate;
    let ak = &q.ak_certificate;
    let body = &q.report_body;
    if !pck.verify(service_root) {
        return Verdict::Rejected(RejectedLink::PckLink);
    }
    if !ak.verify(&pck.pck_public) {
        return Verdict::Rejected(RejectedLink::AkLink);
    }
    if !verify(&ak.ak_public, &Quote::signed_bytes(body), &q.ak_signature) {
        return Verdict::Rejected(RejectedLink::QuoteSignature);
    }
    let ids = [
        pck.platform_instance_id,
        ak.platform_instance_id,
        body.platform_instance_id,
    ];
    let tcbs = [pck.tcb_level, ak.tcb_level, body.tcb_level];
    if ids.iter().any(|i| *i != ids[0]) || tcbs.iter().any(|t| *t != tcbs[0]) {
        return Verdict::Rejected(RejectedLink::Inconsistent);
    }
    Verdict::Accepted(body.clone())
}

pub fn verify_quote_bytes(bytes: &[u8], service_root: &ServicePublicKey) -> Verdict {
    match Quote::from_canonical_bytes(bytes) {
        Ok(q) => verify_quote(&q, service_root),
        Err(_) => Verdict::Rejected(RejectedLink::Malformed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::SymmetricKey;

    fn service(id: &str, seed: u8) -> (ServicePublicKey, SigningKeyPair) {
        let kp = keypair_from_seed(&SymmetricKey::new([seed; 32], "svc"));
        let public = ServicePublicKey {
            service_id: id.into(),
            signing: kp.public(),
            escrow: crate::crypto::DhPublic([9; 32]),
        };
        (public, kp)
    }

    /// Builds a chain by hand, without a platform, from a provisioning root.
    fn chain(root: &SigningKeyPair, issuer: &str) -> AttestationKey {
        let prov = SymmetricKey::new([1; 32], "prov");
        let id = InstanceId([2; 16]);
        let pck = derive_pck(&prov, 3);
        let pck_cert = PckCertificate::issue(issuer, root, id, 3, pck.public());
        let keypair = keypair_from_seed(&SymmetricKey::new([5; 32], "ak"));
        let mut ak_certificate = AkCertificate {
            platform_instance_id: id,
            tcb_level: 3,
            ak_public: keypair.public(),
            pck_public: pck.public(),
            signature: Signature([0; 64]),
        };
        ak_certificate.signature = pck.sign(&ak_certificate.tbs_bytes());
        AttestationKey {
            keypair,
            ak_certificate,
            pck_certificate: pck_cert,
        }
    }

    #[test]
    fn round_trip_and_user_data() {
        let (root, kp) = service("rs", 1);
        let ak = chain(&kp, "rs");
        let q1 = generate_quote(&ak, Digest::of(b"m"), b"one");
        let q2 = generate_quote(&ak, Digest::of(b"m"), b"two");
        assert_ne!(q1.ak_signature, q2.ak_signature);
        assert!(verify_quote(&q1, &root).is_accepted());
        assert!(verify_quote_bytes(&q2.to_canonical_bytes(), &root).is_accepted());
    }

    #[test]
    fn other_root_rejected_at_pck_link() {
        let (_, kp) = service("rs", 1);
        let (other, _) = service("rs", 2);
        let q = generate_quote(&chain(&kp, "rs"), Digest::of(b"m"), b"");
        assert_eq!(
            verify_quote(&q, &other),
            Verdict::Rejected(RejectedLink::PckLink)
        );
    }

    #[test]
    fn report_body_flip_hits_signature() {
        let (root, kp) = service("rs", 1);
        let mut q = generate_quote(&chain(&kp, "rs"), Digest::of(b"m"), b"x");
        q.report_body.tcb_level ^= 1;
        assert_eq!(
            verify_quote(&q, &root),
            Verdict::Rejected(RejectedLink::QuoteSignature)
        );
    }

    #[test]
    fn truncation_sweep() {
        let (root, kp) = service("rs", 1);
        let bytes =
            generate_quote(&chain(&kp, "rs"), Digest::of(b"m"), b"abc").to_canonical_bytes();
        for len in 0..bytes.len() {
            assert_eq!(
                verify_quote_bytes(&bytes[..len], &root),
                Verdict::Rejected(RejectedLink::Malformed)
            );
        }
    }
}
