//! Algorithm selection and KDF label registry.
//!
//! Swapping an algorithm means changing this file and the primitive wrapper
//! that names it; protocol code only sees the wrapper types.

pub const SIGNATURE_SCHEME: &str = "Ed25519 (strict verification)";
pub const DH_GROUP: &str = "X25519";
pub const AEAD: &str = "ChaCha20-Poly1305";
pub const LINK_CIPHER: &str = "ChaCha20 counter mode + HMAC-SHA256/128";
pub const KDF: &str = "HKDF-SHA256";

pub const KDF_SALT: &[u8] = b"mpsim/kdf/v1";

pub const LABEL_SIGNING_IDENTITY: &str = "signing-identity";
pub const LABEL_DH_SHARED: &str = "dh-shared";
pub const LABEL_PCK: &str = "PCK";
pub const LABEL_BLOB: &str = "blob";
pub const LABEL_MASTER_COMMS: &str = "master-comms";
pub const LABEL_SESSION_ENC: &str = "session-enc";
pub const LABEL_SESSION_MAC: &str = "session-mac";
pub const LABEL_LINK_ENC: &str = "link-enc";
pub const LABEL_LINK_MAC: &str = "link-mac";
pub const LABEL_ESCROW: &str = "escrow";
pub const LABEL_SEAL_KEY: &str = "seal-key";
pub const LABEL_PROVISIONING_KEY: &str = "provisioning-key";
pub const LABEL_ATTESTATION_SEED: &str = "attestation-seed";
pub const LABEL_FUSE_PROV: &str = "fuse-provisioning-root";
pub const LABEL_FUSE_SEAL: &str = "fuse-sealing-root";
pub const LABEL_SERVICE_SIGNING: &str = "service-signing";
pub const LABEL_SERVICE_ESCROW: &str = "service-escrow";
pub const LABEL_TME_DOMAIN: &str = "tme-domain";
pub const LABEL_AK: &str = "attestation-key";

pub const ALL_KDF_LABELS: &[&str] = &[
    LABEL_SIGNING_IDENTITY,
    LABEL_DH_SHARED,
    LABEL_PCK,
    LABEL_BLOB,
    LABEL_MASTER_COMMS,
    LABEL_SESSION_ENC,
    LABEL_SESSION_MAC,
    LABEL_LINK_ENC,
    LABEL_LINK_MAC,
    LABEL_ESCROW,
    LABEL_SEAL_KEY,
    LABEL_PROVISIONING_KEY,
    LABEL_ATTESTATION_SEED,
    LABEL_FUSE_PROV,
    LABEL_FUSE_SEAL,
    LABEL_SERVICE_SIGNING,
    LABEL_SERVICE_ESCROW,
    LABEL_TME_DOMAIN,
    LABEL_AK,
];
