use std::fmt;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{verify, DhPublic, PublicKey, Signature, SigningKeyPair};
use crate::package::InstanceId;

/// What a package or challenger needs to know about a registration service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServicePublicKey {
    pub service_id: String,
    pub signing: PublicKey,
    pub escrow: DhPublic,
}

impl Canonical for ServicePublicKey {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.service_id)
            .item(&self.signing)
            .item(&self.escrow);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            service_id: dec.str("service id")?,
            signing: dec.item()?,
            escrow: dec.item()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PckCertificate {
    pub platform_instance_id: InstanceId,
    pub tcb_level: u32,
    pub pck_public: PublicKey,
    pub issuer: String,
    pub signature: Signature,
}

impl PckCertificate {
    const MAGIC: &'static [u8; 4] = b"MPPC";

    pub fn tbs_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.array(Self::MAGIC)
            .item(&self.platform_instance_id)
            .u32(self.tcb_level)
            .item(&self.pck_public)
            .str(&self.issuer);
        enc.finish()
    }

    pub fn issue(
        issuer: &str,
        key: &SigningKeyPair,
        platform_instance_id: InstanceId,
        tcb_level: u32,
        pck_public: PublicKey,
    ) -> Self {
        let mut cert = Self {
            platform_instance_id,
            tcb_level,
            pck_public,
            issuer: issuer.to_string(),
            signature: Signature([0; 64]),
        };
        cert.signature = key.sign(&cert.tbs_bytes());
        cert
    }

    pub fn verify(&self, issuer: &ServicePublicKey) -> bool {
        self.issuer == issuer.service_id
            && verify(&issuer.signing, &self.tbs_bytes(), &self.signature)
    }
}

impl Canonical for PckCertificate {
    fn encode(&self, enc: &mut Encoder) {
        enc.array(&self.tbs_bytes()).item(&self.signature);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.magic(Self::MAGIC, "pck certificate")?;
        Ok(Self {
            platform_instance_id: dec.item()?,
            tcb_level: dec.u32("tcb level")?,
            pck_public: dec.item()?,
            issuer: dec.str("issuer")?,
            signature: dec.item()?,
        })
    }
}

impl fmt::Display for PckCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "PCK certificate")?;
        writeln!(f, "  platform:   {}", self.platform_instance_id)?;
        writeln!(f, "  tcb level:  {}", self.tcb_level)?;
        writeln!(f, "  pck public: {}", self.pck_public)?;
        write!(f, "  issuer:     {}", self.issuer)
    }
}

/// Authorises one package to receive one platform's keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembershipCertificate {
    pub platform_instance_id: InstanceId,
    pub new_package_public_key: PublicKey,
    pub issuer: String,
    pub signature: Signature,
}

impl MembershipCertificate {
    const MAGIC: &'static [u8; 4] = b"MPMC";

    pub fn tbs_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.array(Self::MAGIC)
            .item(&self.platform_instance_id)
            .item(&self.new_package_public_key)
            .str(&self.issuer);
        enc.finish()
    }

    pub fn issue(
        issuer: &str,
        key: &SigningKeyPair,
        platform_instance_id: InstanceId,
        new_package_public_key: PublicKey,
    ) -> Self {
        let mut cert = Self {
            platform_instance_id,
            new_package_public_key,
            issuer: issuer.to_string(),
            signature: Signature([0; 64]),
        };
        cert.signature = key.sign(&cert.tbs_bytes());
        cert
    }

    pub fn verify(&self, issuer: &ServicePublicKey) -> bool {
        self.issuer == issuer.service_id
            && verify(&issuer.signing, &self.tbs_bytes(), &self.signature)
    }
}

impl Canonical for MembershipCertificate {
    fn encode(&self, enc: &mut Encoder) {
        enc.array(&self.tbs_bytes()).item(&self.signature);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.magic(Self::MAGIC, "membership certificate")?;
        Ok(Self {
            platform_instance_id: dec.item()?,
            new_package_public_key: dec.item()?,
            issuer: dec.str("issuer")?,
            signature: dec.item()?,
        })
    }
}

/// Request to admit a new package into an existing platform. Carries no
/// secrets; travels through untrusted system software.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddRequest {
    pub platform_instance_id: InstanceId,
    pub new_package_public_key: PublicKey,
    pub signer: PublicKey,
    pub signature: Signature,
}

impl AddRequest {
    const MAGIC: &'static [u8; 4] = b"MPAR";

    pub fn tbs_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.array(Self::MAGIC)
            .item(&self.platform_instance_id)
            .item(&self.new_package_public_key)
            .item(&self.signer);
        enc.finish()
    }

    pub fn sign(
        signer: &SigningKeyPair,
        platform_instance_id: InstanceId,
        new_package_public_key: PublicKey,
    ) -> Self {
        let mut req = Self {
            platform_instance_id,
            new_package_public_key,
            signer: signer.public(),
            signature: Signature([0; 64]),
        };
        req.signature = signer.sign(&req.tbs_bytes());
        req
    }

    pub fn signature_valid(&self) -> bool {
        verify(&self.signer, &self.tbs_bytes(), &self.signature)
    }
}

impl Canonical for AddRequest {
    fn encode(&self, enc: &mut Encoder) {
        enc.array(&self.tbs_bytes()).item(&self.signature);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.magic(Self::MAGIC, "add request")?;
        Ok(Self {
            platform_instance_id: dec.item()?,
            new_package_public_key: dec.item()?,
            signer: dec.item()?,
            signature: dec.item()?,
        })
    }
}

impl fmt::Display for AddRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Add request")?;
        writeln!(f, "  platform:    {}", self.platform_instance_id)?;
        writeln!(f, "  new package: {}", self.new_package_public_key)?;
        write!(f, "  signed by:   {}", self.signer)
    }
}
