//! Deterministic cryptographic primitives used by every protocol module.
//!
//! Algorithm choices live in [`suite`]. Nothing in this module knows about
//! packages, platforms or services.

mod aead;
mod rng;
pub mod suite;

pub use aead::{
    aead_open, aead_seal, ctr_mac_open, ctr_mac_seal, NonceRegistry, SealedBox, NONCE_LEN, TAG_LEN,
};
pub use rng::SimRng;

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use hkdf::Hkdf;
use sha2::{Digest as _, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey as XPublic, StaticSecret};

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};

pub const KEY_LEN: usize = 32;
pub const DIGEST_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("authentication failed")]
    AuthFailure,
    #[error("degenerate key exchange: peer public value has small order")]
    DegenerateKeyExchange,
    #[error("nonce reused under the same key")]
    NonceReuse,
}

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn of(data: &[u8]) -> Self {
        Digest(Sha256::digest(data).into())
    }

    /// Digest over several parts, each length-prefixed so boundaries are
    /// unambiguous.
    pub fn of_parts(parts: &[&[u8]]) -> Self {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u32).to_le_bytes());
            h.update(p);
        }
        Digest(h.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Canonical for Digest {
    fn encode(&self, enc: &mut Encoder) {
        enc.array(&self.0);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Digest(dec.array("digest")?))
    }
}

/// A 256-bit secret with a purpose label. Never serialized by any public
/// encoder; `Debug` prints only the label.
#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey {
    bytes: [u8; KEY_LEN],
    label: String,
}

impl SymmetricKey {
    pub fn new(bytes: [u8; KEY_LEN], label: impl Into<String>) -> Self {
        Self {
            bytes,
            label: label.into(),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Raw secret bytes. Callers outside this crate use it only for leak
    /// scans in tests.
    pub fn expose_secret(&self) -> &[u8; KEY_LEN] {
        &self.bytes
    }

    /// Public fingerprint, safe to log.
    pub fn fingerprint(&self) -> Digest {
        Digest::of_parts(&[b"key-fingerprint", &self.bytes])
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymmetricKey({:?}, <redacted>)", self.label)
    }
}

/// HKDF-SHA256 keyed by `root`, with the label and context bound into the
/// expand info.
pub fn kdf(root: &SymmetricKey, label: &str, context: &[u8]) -> SymmetricKey {
    assert!(!label.is_empty(), "kdf label must be non-empty");
    let hk = Hkdf::<Sha256>::new(Some(suite::KDF_SALT), &root.bytes);
    let mut info = Vec::with_capacity(label.len() + context.len() + 8);
    info.extend_from_slice(&(label.len() as u32).to_le_bytes());
    info.extend_from_slice(label.as_bytes());
    info.extend_from_slice(&(context.len() as u32).to_le_bytes());
    info.extend_from_slice(context);
    let mut out = [0u8; KEY_LEN];
    hk.expand(&info, &mut out)
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    SymmetricKey::new(out, label)
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let raw = hex::decode(s.trim()).ok()?;
        Some(PublicKey(raw.try_into().ok()?))
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Canonical for PublicKey {
    fn encode(&self, enc: &mut Encoder) {
        enc.array(&self.0);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(PublicKey(dec.array("public key")?))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..8]))
    }
}

impl Canonical for Signature {
    fn encode(&self, enc: &mut Encoder) {
        enc.array(&self.0);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Signature(dec.array("signature")?))
    }
}

#[derive(Clone)]
pub struct SigningKeyPair {
    secret: SigningKey,
    public: PublicKey,
}

impl SigningKeyPair {
    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.secret.sign(message).to_bytes())
    }

    pub fn expose_secret(&self) -> [u8; 32] {
        self.secret.to_bytes()
    }
}

impl fmt::Debug for SigningKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

pub fn keypair_from_seed(seed: &SymmetricKey) -> SigningKeyPair {
    let scalar_seed = kdf(seed, "signing-identity", &[]);
    let secret = SigningKey::from_bytes(&scalar_seed.bytes);
    let public = PublicKey(secret.verifying_key().to_bytes());
    SigningKeyPair { secret, public }
}

pub fn sign(key: &SigningKeyPair, message: &[u8]) -> Signature {
    key.sign(message)
}

/// Strict verification; malformed keys or signatures yield `false`.
pub fn verify(public: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(&public.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    vk.verify_strict(message, &sig).is_ok()
}

/// X25519 secret. Used both for ephemeral handshakes and, held long-term,
/// as the registration service's escrow key.
#[derive(Clone)]
pub struct DhSecret(StaticSecret);

impl fmt::Debug for DhSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DhSecret(<redacted>)")
    }
}

impl DhSecret {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        DhSecret(StaticSecret::from(bytes))
    }

    pub fn public(&self) -> DhPublic {
        DhPublic(XPublic::from(&self.0).to_bytes())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct DhPublic(pub [u8; 32]);

impl DhPublic {
    /// The encoding of the curve's neutral element.
    pub const IDENTITY: DhPublic = DhPublic([0u8; 32]);
}

impl fmt::Debug for DhPublic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DhPublic({})", hex::encode(&self.0[..8]))
    }
}

impl Canonical for DhPublic {
    fn encode(&self, enc: &mut Encoder) {
        enc.array(&self.0);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(DhPublic(dec.array("dh public")?))
    }
}

pub fn dh_keygen(rng: &mut SimRng) -> (DhSecret, DhPublic) {
    let secret = DhSecret::from_bytes(rng.array());
    let public = secret.public();
    (secret, public)
}

/// Shared key from our secret and the peer's public value. Rejects
/// small-order peer values, whose output would not depend on our secret.
pub fn dh_derive(secret: &DhSecret, peer: &DhPublic) -> Result<SymmetricKey, CryptoError> {
    let shared = secret.0.diffie_hellman(&XPublic::from(peer.0));
    if !shared.was_contributory() {
        return Err(CryptoError::DegenerateKeyExchange);
    }
    let ikm = SymmetricKey::new(*shared.as_bytes(), "dh-raw");
    Ok(kdf(&ikm, "dh-shared", &[]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn root() -> SymmetricKey {
        SymmetricKey::new([7u8; 32], "root")
    }

    #[test]
    fn kdf_is_deterministic_and_context_separated() {
        let a = kdf(&root(), "PCK", &1u32.to_le_bytes());
        let b = kdf(&root(), "PCK", &1u32.to_le_bytes());
        let c = kdf(&root(), "PCK", &2u32.to_le_bytes());
        assert_eq!(a, b);
        assert_ne!(a.expose_secret(), c.expose_secret());
    }

    #[test]
    fn kdf_never_returns_root_for_known_labels() {
        for label in suite::ALL_KDF_LABELS {
            let out = kdf(&root(), label, b"ctx");
            assert_ne!(out.expose_secret(), root().expose_secret(), "{label}");
        }
    }

    #[test]
    fn kdf_label_and_context_boundaries_are_unambiguous() {
        let a = kdf(&root(), "ab", b"c");
        let b = kdf(&root(), "a", b"bc");
        assert_ne!(a.expose_secret(), b.expose_secret());
    }

    #[test]
    fn kdf_pure_over_many_calls() {
        let first = kdf(&root(), "seal", b"x");
        let distinct: std::collections::HashSet<[u8; 32]> = (0..1000)
            .map(|_| *kdf(&root(), "seal", b"x").expose_secret())
            .collect();
        assert_eq!(distinct.len(), 1);
        assert!(distinct.contains(first.expose_secret()));
    }

    #[test]
    #[should_panic]
    fn kdf_rejects_empty_label() {
        kdf(&root(), "", &[]);
    }

    #[test]
    fn keypair_is_deterministic_per_seed() {
        let a = keypair_from_seed(&root());
        let b = keypair_from_seed(&root());
        let c = keypair_from_seed(&SymmetricKey::new([8u8; 32], "other"));
        assert_eq!(a.public(), b.public());
        assert_ne!(a.public(), c.public());
    }

    #[test]
    fn sign_verify_round_trip_random_messages() {
        let kp = keypair_from_seed(&root());
        let mut rng = SimRng::from_seed(11);
        for _ in 0..100 {
            let len = (rng.next_u64() % 200) as usize;
            let msg = rng.bytes(len);
            assert!(verify(&kp.public(), &msg, &sign(&kp, &msg)));
        }
    }

    #[test]
    fn every_single_byte_flip_of_message_fails() {
        let kp = keypair_from_seed(&root());
        let msg = b"signed manifest of the pairings".to_vec();
        let sig = kp.sign(&msg);
        for i in 0..msg.len() {
            let mut m = msg.clone();
            m[i] ^= 0x01;
            assert!(!verify(&kp.public(), &m, &sig), "byte {i}");
        }
    }

    #[test]
    fn wrong_public_key_or_garbage_signature_rejected() {
        let kp = keypair_from_seed(&root());
        let other = keypair_from_seed(&SymmetricKey::new([9u8; 32], "o"));
        let sig = kp.sign(b"m");
        assert!(!verify(&other.public(), b"m", &sig));
        assert!(!verify(&kp.public(), b"m", &Signature([0xff; 64])));
        assert!(!verify(&PublicKey([0xff; 32]), b"m", &sig));
    }

    #[test]
    fn dh_agreement_and_third_party_separation() {
        let mut rng = SimRng::from_seed(3);
        let (a_sec, a_pub) = dh_keygen(&mut rng);
        let (b_sec, b_pub) = dh_keygen(&mut rng);
        let (c_sec, _) = dh_keygen(&mut rng);
        let ab = dh_derive(&a_sec, &b_pub).unwrap();
        let ba = dh_derive(&b_sec, &a_pub).unwrap();
        assert_eq!(ab, ba);
        assert_ne!(dh_derive(&c_sec, &a_pub).unwrap(), ab);
        assert_ne!(dh_derive(&c_sec, &b_pub).unwrap(), ab);
    }

    #[test]
    fn identity_peer_is_degenerate() {
        let mut rng = SimRng::from_seed(3);
        let (a_sec, _) = dh_keygen(&mut rng);
        assert_eq!(
            dh_derive(&a_sec, &DhPublic::IDENTITY),
            Err(CryptoError::DegenerateKeyExchange)
        );
    }

    #[test]
    fn debug_output_hides_secrets() {
        let k = SymmetricKey::new([0xab; 32], "seal");
        let dbg = format!("{k:?}");
        assert!(!dbg.contains("ab, ab") && !dbg.to_lowercase().contains("abab"));
    }
}
