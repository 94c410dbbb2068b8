//! Signed Diffie-Hellman pairing between two packages and the per-reset
//! session channel derived from its Master Comms Key.
//!
//! Three messages cross the mailbox:
//!
//! ```text
//! initiator -> responder   Hello    { ids, initiator ephemeral }
//! responder -> initiator   Response { ids, responder ephemeral, sig_R(T) }
//! initiator -> responder   Finish   { ids, sig_I(T) }
//! ```
//!
//! `T` is the transcript: protocol tag, both package ids, both signing
//! public keys and both ephemerals. Each side derives the Master Comms Key
//! only after checking the other side's signature over `T`.

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{
    ctr_mac_open, ctr_mac_seal, dh_derive, dh_keygen, kdf, suite, verify, DhPublic, Digest,
    Signature, SimRng, SymmetricKey,
};
use crate::package::{PackageId, PackageIdentity, PairingKey};

use super::mailbox::{Envelope, Mailbox};
use super::EstablishmentError;

const PAIRING_TAG: &str = "mpsim/pairing/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageKind {
    Hello = 1,
    Response = 2,
    Finish = 3,
    ConfigReport = 4,
    KeyDistribution = 5,
    KeyAck = 6,
}

impl MessageKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::Hello,
            2 => Self::Response,
            3 => Self::Finish,
            4 => Self::ConfigReport,
            5 => Self::KeyDistribution,
            6 => Self::KeyAck,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Hello => "hello",
            Self::Response => "response",
            Self::Finish => "finish",
            Self::ConfigReport => "config-report",
            Self::KeyDistribution => "key-distribution",
            Self::KeyAck => "key-ack",
        }
    }
}

/// A pairing message as it appears on the mailbox.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandshakeMessage {
    pub kind: MessageKind,
    pub initiator: PackageId,
    pub responder: PackageId,
    pub ephemeral: Option<DhPublic>,
    pub signature: Option<Signature>,
}

impl Canonical for HandshakeMessage {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.kind as u8)
            .u32(self.initiator)
            .u32(self.responder);
        if let Some(e) = &self.ephemeral {
            enc.item(e);
        }
        if let Some(s) = &self.signature {
            enc.item(s);
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let raw = dec.u8("message kind")?;
        let kind = match MessageKind::from_u8(raw) {
            Some(k @ (MessageKind::Hello | MessageKind::Response | MessageKind::Finish)) => k,
            _ => {
                return Err(DecodeError::InvalidValue {
                    field: "handshake kind",
                    value: raw as u64,
                })
            }
        };
        let initiator = dec.u32("initiator")?;
        let responder = dec.u32("responder")?;
        let ephemeral = match kind {
            MessageKind::Hello | MessageKind::Response => Some(dec.item()?),
            _ => None,
        };
        let signature = match kind {
            MessageKind::Response | MessageKind::Finish => Some(dec.item()?),
            _ => None,
        };
        Ok(Self {
            kind,
            initiator,
            responder,
            ephemeral,
            signature,
        })
    }
}

/// Long-lived pairwise key, identical on both packages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingRecord {
    pub pkg_a: PackageId,
    pub pkg_b: PackageId,
    pub master_comms_key: SymmetricKey,
    pub transcript_digest: Digest,
}

impl PairingRecord {
    pub fn pair(&self) -> (PackageId, PackageId) {
        (self.pkg_a, self.pkg_b)
    }

    /// The copy held by `holder`, as stored in its key blob.
    pub fn key_for(&self, holder: PackageId) -> PairingKey {
        let peer = if holder == self.pkg_a {
            self.pkg_b
        } else {
            self.pkg_a
        };
        PairingKey {
            peer,
            master_comms_key: self.master_comms_key.clone(),
            transcript_digest: self.transcript_digest,
        }
    }

    pub fn from_key(holder: PackageId, key: &PairingKey) -> Self {
        let (pkg_a, pkg_b) = ordered(holder, key.peer);
        Self {
            pkg_a,
            pkg_b,
            master_comms_key: key.master_comms_key.clone(),
            transcript_digest: key.transcript_digest,
        }
    }
}

pub fn ordered(a: PackageId, b: PackageId) -> (PackageId, PackageId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn transcript(
    initiator: &PackageIdentity,
    responder: &PackageIdentity,
    init_eph: &DhPublic,
    resp_eph: &DhPublic,
) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.str(PAIRING_TAG)
        .u32(initiator.package_id)
        .u32(responder.package_id)
        .item(&initiator.public_key())
        .item(&responder.public_key())
        .item(init_eph)
        .item(resp_eph);
    enc.finish()
}

fn receive(
    mbox: &mut Mailbox,
    recipient: PackageId,
    sender: PackageId,
    kind: MessageKind,
) -> Result<HandshakeMessage, EstablishmentError> {
    let env = mbox
        .take(recipient, sender)
        .ok_or(EstablishmentError::Timeout {
            recipient,
            waiting_for: kind.name(),
        })?;
    let msg = HandshakeMessage::from_canonical_bytes(&env.payload)?;
    if msg.kind != kind {
        return Err(EstablishmentError::UnexpectedMessage {
            expected: kind.name(),
        });
    }
    Ok(msg)
}

fn post(mbox: &mut Mailbox, sender: PackageId, recipient: PackageId, msg: &HandshakeMessage) {
    mbox.post(Envelope {
        sender,
        recipient,
        payload: msg.to_canonical_bytes(),
    });
}

/// Runs the three-message signed DH exchange between `initiator` and
/// `responder` over `mbox`.
pub fn negotiate_pairing(
    initiator: &PackageIdentity,
    responder: &PackageIdentity,
    mbox: &mut Mailbox,
    rng: &mut SimRng,
) -> Result<PairingRecord, EstablishmentError> {
    let (i_id, r_id) = (initiator.package_id, responder.package_id);
    let ids_match = |m: &HandshakeMessage| m.initiator == i_id && m.responder == r_id;
    let mismatch = || EstablishmentError::SignatureMismatch {
        pkg_a: i_id,
        pkg_b: r_id,
    };

    // Initiator: Hello.
    let (i_secret, i_eph) = dh_keygen(rng);
    post(
        mbox,
        i_id,
        r_id,
        &HandshakeMessage {
            kind: MessageKind::Hello,
            initiator: i_id,
            responder: r_id,
            ephemeral: Some(i_eph),
            signature: None,
        },
    );

    // Responder: Response.
    let hello = receive(mbox, r_id, i_id, MessageKind::Hello)?;
    if !ids_match(&hello) {
        return Err(EstablishmentError::UnexpectedMessage {
            expected: "hello for this pair",
        });
    }
    let seen_i_eph = hello.ephemeral.expect("hello carries an ephemeral");
    let (r_secret, r_eph) = dh_keygen(rng);
    let r_transcript = transcript(initiator, responder, &seen_i_eph, &r_eph);
    post(
        mbox,
        r_id,
        i_id,
        &HandshakeMessage {
            kind: MessageKind::Response,
            initiator: i_id,
            responder: r_id,
            ephemeral: Some(r_eph),
            signature: Some(responder.signing_identity().sign(&r_transcript)),
        },
    );

    // Initiator: check responder signature, then Finish.
    let response = receive(mbox, i_id, r_id, MessageKind::Response)?;
    if !ids_match(&response) {
        return Err(EstablishmentError::UnexpectedMessage {
            expected: "response for this pair",
        });
    }
    let seen_r_eph = response.ephemeral.expect("response carries an ephemeral");
    let i_transcript = transcript(initiator, responder, &i_eph, &seen_r_eph);
    if !verify(
        &responder.public_key(),
        &i_transcript,
        &response.signature.expect("response is signed"),
    ) {
        return Err(mismatch());
    }
    let i_shared = dh_derive(&i_secret, &seen_r_eph)?;
    post(
        mbox,
        i_id,
        r_id,
        &HandshakeMessage {
            kind: MessageKind::Finish,
            initiator: i_id,
            responder: r_id,
            ephemeral: None,
            signature: Some(initiator.signing_identity().sign(&i_transcript)),
        },
    );

    // Responder: check initiator signature.
    let finish = receive(mbox, r_id, i_id, MessageKind::Finish)?;
    if !ids_match(&finish) {
        return Err(EstablishmentError::UnexpectedMessage {
            expected: "finish for this pair",
        });
    }
    if !verify(
        &initiator.public_key(),
        &r_transcript,
        &finish.signature.expect("finish is signed"),
    ) {
        return Err(mismatch());
    }
    let r_shared = dh_derive(&r_secret, &seen_i_eph)?;

    let i_digest = Digest::of(&i_transcript);
    let r_digest = Digest::of(&r_transcript);
    let i_master = kdf(&i_shared, suite::LABEL_MASTER_COMMS, i_digest.as_bytes());
    let r_master = kdf(&r_shared, suite::LABEL_MASTER_COMMS, r_digest.as_bytes());
    if i_digest != r_digest || i_master != r_master {
        return Err(mismatch());
    }
    let (pkg_a, pkg_b) = ordered(i_id, r_id);
    Ok(PairingRecord {
        pkg_a,
        pkg_b,
        master_comms_key: i_master,
        transcript_digest: i_digest,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionKeys {
    pub enc_key: SymmetricKey,
    pub mac_key: SymmetricKey,
}

pub fn derive_session_keys(rec: &PairingRecord, reset_epoch: u64) -> SessionKeys {
    let mut ctx = Encoder::new();
    ctx.u64(reset_epoch).u32(rec.pkg_a).u32(rec.pkg_b);
    let ctx = ctx.finish();
    SessionKeys {
        enc_key: kdf(&rec.master_comms_key, suite::LABEL_SESSION_ENC, &ctx),
        mac_key: kdf(&rec.master_comms_key, suite::LABEL_SESSION_MAC, &ctx),
    }
}

/// Authenticated, encrypted message between two paired packages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionMessage {
    pub kind: MessageKind,
    pub sender: PackageId,
    pub recipient: PackageId,
    pub ciphertext: Vec<u8>,
    pub tag: [u8; 16],
}

impl SessionMessage {
    fn header(kind: MessageKind, sender: PackageId, recipient: PackageId) -> [u8; 9] {
        let mut h = [0u8; 9];
        h[0] = kind as u8;
        h[1..5].copy_from_slice(&sender.to_le_bytes());
        h[5..9].copy_from_slice(&recipient.to_le_bytes());
        h
    }

    // Each (kind, direction) is sent at most once per session key.
    fn nonce(kind: MessageKind, sender: PackageId, recipient: PackageId) -> [u8; 12] {
        let mut n = [0u8; 12];
        n[..9].copy_from_slice(&Self::header(kind, sender, recipient));
        n
    }

    pub fn seal(
        keys: &SessionKeys,
        kind: MessageKind,
        sender: PackageId,
        recipient: PackageId,
        body: &[u8],
    ) -> Self {
        let (ciphertext, tag) = ctr_mac_seal(
            &keys.enc_key,
            &keys.mac_key,
            Self::nonce(kind, sender, recipient),
            &Self::header(kind, sender, recipient),
            body,
        );
        Self {
            kind,
            sender,
            recipient,
            ciphertext,
            tag,
        }
    }

    pub fn open(&self, keys: &SessionKeys) -> Result<Vec<u8>, EstablishmentError> {
        ctr_mac_open(
            &keys.enc_key,
            &keys.mac_key,
            Self::nonce(self.kind, self.sender, self.recipient),
            &Self::header(self.kind, self.sender, self.recipient),
            &self.ciphertext,
            &self.tag,
        )
        .map_err(|_| EstablishmentError::SessionAuthFailure {
            sender: self.sender,
            recipient: self.recipient,
        })
    }
}

impl Canonical for SessionMessage {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.kind as u8)
            .u32(self.sender)
            .u32(self.recipient)
            .bytes(&self.ciphertext)
            .array(&self.tag);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let raw = dec.u8("message kind")?;
        let kind = match MessageKind::from_u8(raw) {
            Some(
                k
                @ (MessageKind::ConfigReport | MessageKind::KeyDistribution | MessageKind::KeyAck),
            ) => k,
            _ => {
                return Err(DecodeError::InvalidValue {
                    field: "session message kind",
                    value: raw as u64,
                })
            }
        };
        Ok(Self {
            kind,
            sender: dec.u32("sender")?,
            recipient: dec.u32("recipient")?,
            ciphertext: dec.bytes("ciphertext")?,
            tag: dec.array("tag")?,
        })
    }
}

pub(crate) fn send_session(
    mbox: &mut Mailbox,
    keys: &SessionKeys,
    kind: MessageKind,
    sender: PackageId,
    recipient: PackageId,
    body: &[u8],
) {
    let msg = SessionMessage::seal(keys, kind, sender, recipient, body);
    mbox.post(Envelope {
        sender,
        recipient,
        payload: msg.to_canonical_bytes(),
    });
}

pub(crate) fn receive_session(
    mbox: &mut Mailbox,
    keys: &SessionKeys,
    kind: MessageKind,
    recipient: PackageId,
    sender: PackageId,
) -> Result<Vec<u8>, EstablishmentError> {
    let env = mbox
        .take(recipient, sender)
        .ok_or(EstablishmentError::Timeout {
            recipient,
            waiting_for: kind.name(),
        })?;
    let msg = SessionMessage::from_canonical_bytes(&env.payload)?;
    if msg.kind != kind || msg.sender != sender || msg.recipient != recipient {
        return Err(EstablishmentError::UnexpectedMessage {
            expected: kind.name(),
        });
    }
    msg.open(keys)
}
