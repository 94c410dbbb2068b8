//! Inter-package coherency path: caching-agent routing with the secure
//! attribute, the link crypto engine, and an active adversary on the wire.

mod channel;
mod wire;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use channel::{adversary_act, AdversaryAction, LinkChannel};
pub use wire::{WirePacket, HEADER_LEN};

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{
    ctr_mac_open, ctr_mac_seal, kdf, suite, NonceRegistry, SymmetricKey, NONCE_LEN,
};
use crate::package::PackageId;

pub use crate::memory::LINE_SIZE;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("address {0:#x} is not mapped to any package")]
    UnmappedAddress(u64),
    #[error("no link between packages {from} and {to}")]
    NoLink { from: PackageId, to: PackageId },
    #[error("tamper detected on secure packet")]
    TamperDetected,
    #[error("replay detected: counter {counter} not above {watermark}")]
    ReplayDetected { counter: u64, watermark: u64 },
    #[error("secure attribute mismatch for address {address:#x} (secure={secure})")]
    AttributeViolation { address: u64, secure: bool },
    #[error("send counter exhausted; link must be rekeyed")]
    CounterExhausted,
    #[error("malformed packet: {0}")]
    Malformed(#[from] DecodeError),
}

impl LinkError {
    /// Whether this outcome is an attack detection rather than a fault.
    pub fn is_security_event(&self) -> bool {
        matches!(
            self,
            LinkError::TamperDetected
                | LinkError::ReplayDetected { .. }
                | LinkError::AttributeViolation { .. }
                | LinkError::Malformed(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemOp {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoherencyRequest {
    pub origin_package: PackageId,
    pub target_address: u64,
    pub secure_attribute: bool,
    pub op: MemOp,
    pub payload: Option<[u8; LINE_SIZE]>,
}

impl CoherencyRequest {
    pub fn read(origin: PackageId, address: u64) -> Self {
        Self {
            origin_package: origin,
            target_address: address,
            secure_attribute: false,
            op: MemOp::Read,
            payload: None,
        }
    }

    pub fn write(origin: PackageId, address: u64, data: [u8; LINE_SIZE]) -> Self {
        Self {
            origin_package: origin,
            target_address: address,
            secure_attribute: false,
            op: MemOp::Write,
            payload: Some(data),
        }
    }
}

impl Canonical for CoherencyRequest {
    fn encode(&self, enc: &mut Encoder) {
        enc.u32(self.origin_package)
            .u64(self.target_address)
            .bool(self.secure_attribute)
            .u8(match self.op {
                MemOp::Read => 0,
                MemOp::Write => 1,
            });
        match &self.payload {
            Some(p) => enc.u8(1).array(p),
            None => enc.u8(0),
        };
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let origin_package = dec.u32("origin package")?;
        let target_address = dec.u64("target address")?;
        let secure_attribute = dec.bool("secure attribute")?;
        let op = match dec.u8("op")? {
            0 => MemOp::Read,
            1 => MemOp::Write,
            v => {
                return Err(DecodeError::InvalidValue {
                    field: "op",
                    value: v as u64,
                })
            }
        };
        let payload = match dec.u8("payload present")? {
            0 => None,
            1 => Some(dec.array::<LINE_SIZE>("payload")?),
            v => {
                return Err(DecodeError::InvalidValue {
                    field: "payload present",
                    value: v as u64,
                })
            }
        };
        Ok(Self {
            origin_package,
            target_address,
            secure_attribute,
            op,
            payload,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AddressRange {
    pub base: u64,
    pub size: u64,
}

impl AddressRange {
    pub fn new(base: u64, size: u64) -> Self {
        Self { base, size }
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.base && addr - self.base < self.size
    }
}

/// DRAM and EPC ranges owned by one package.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackageMemory {
    pub package: PackageId,
    pub dram: AddressRange,
    pub epc: AddressRange,
}

/// What each caching agent knows about where memory lives.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Topology {
    pub memory: Vec<PackageMemory>,
    pub links: Vec<(PackageId, PackageId)>,
}

impl Topology {
    pub fn owner_of(&self, addr: u64) -> Option<PackageId> {
        self.memory
            .iter()
            .find(|m| m.dram.contains(addr))
            .map(|m| m.package)
    }

    pub fn is_epc(&self, addr: u64) -> bool {
        self.memory.iter().any(|m| m.epc.contains(addr))
    }

    pub fn epc_ranges(&self) -> Vec<AddressRange> {
        self.memory.iter().map(|m| m.epc).collect()
    }

    pub fn linked(&self, a: PackageId, b: PackageId) -> bool {
        self.links
            .iter()
            .any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Local,
    Forward { to: PackageId },
}

/// Decide where `req` goes and stamp its secure attribute from the EPC map.
pub fn route_request(
    mut req: CoherencyRequest,
    topology: &Topology,
) -> Result<(Route, CoherencyRequest), LinkError> {
    let owner = topology
        .owner_of(req.target_address)
        .ok_or(LinkError::UnmappedAddress(req.target_address))?;
    req.secure_attribute = topology.is_epc(req.target_address);
    if owner == req.origin_package {
        return Ok((Route::Local, req));
    }
    if !topology.linked(req.origin_package, owner) {
        return Err(LinkError::NoLink {
            from: req.origin_package,
            to: owner,
        });
    }
    Ok((Route::Forward { to: owner }, req))
}

#[derive(Debug, Clone)]
struct DirectionKeys {
    enc: SymmetricKey,
    mac: SymmetricKey,
    dir: u8,
}

impl DirectionKeys {
    fn derive(master: &SymmetricKey, epoch: u64, from: PackageId, to: PackageId) -> Self {
        let mut ctx = Vec::with_capacity(16);
        ctx.extend_from_slice(&epoch.to_le_bytes());
        ctx.extend_from_slice(&from.to_le_bytes());
        ctx.extend_from_slice(&to.to_le_bytes());
        Self {
            enc: kdf(master, suite::LABEL_LINK_ENC, &ctx),
            mac: kdf(master, suite::LABEL_LINK_MAC, &ctx),
            dir: (from > to) as u8,
        }
    }

    fn nonce(&self, counter: u64) -> [u8; NONCE_LEN] {
        let mut n = [0u8; NONCE_LEN];
        n[0] = self.dir;
        n[4..].copy_from_slice(&counter.to_le_bytes());
        n
    }
}

/// One endpoint's view of a link: keys for each direction plus counters.
#[derive(Clone)]
pub struct LinkKeySet {
    pub local: PackageId,
    pub remote: PackageId,
    pub epoch: u64,
    send: DirectionKeys,
    recv: DirectionKeys,
    next_send: u64,
    last_accepted: u64,
    counters: Arc<NonceRegistry>,
}

impl fmt::Debug for LinkKeySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinkKeySet")
            .field("local", &self.local)
            .field("remote", &self.remote)
            .field("epoch", &self.epoch)
            .field("next_send", &self.next_send)
            .field("last_accepted", &self.last_accepted)
            .finish_non_exhaustive()
    }
}

impl LinkKeySet {
    /// Program an endpoint from the pair's Master Comms Key. Both ends
    /// derive matching keys: one end's send keys are the other's receive
    /// keys.
    pub fn program(master: &SymmetricKey, epoch: u64, local: PackageId, remote: PackageId) -> Self {
        Self {
            local,
            remote,
            epoch,
            send: DirectionKeys::derive(master, epoch, local, remote),
            recv: DirectionKeys::derive(master, epoch, remote, local),
            next_send: 1,
            last_accepted: 0,
            counters: Arc::new(NonceRegistry::new()),
        }
    }

    pub fn next_send_counter(&self) -> u64 {
        self.next_send
    }

    pub fn last_accepted(&self) -> u64 {
        self.last_accepted
    }

    /// Jump the send counter forward. Only useful for exercising exhaustion.
    pub fn advance_send_counter(&mut self, next: u64) {
        assert!(
            next >= self.next_send,
            "send counter may not move backwards"
        );
        self.next_send = next;
    }

    /// Fingerprints of the send-direction keys, for leak scans and tests.
    pub fn send_fingerprint(&self) -> [u8; 32] {
        self.send.enc.fingerprint().0
    }
}

/// Protect an outgoing request. Requests without the secure attribute
/// bypass the engine and go out in plaintext.
pub fn uce_protect(req: &CoherencyRequest, keys: &mut LinkKeySet) -> Result<WirePacket, LinkError> {
    let body = req.to_canonical_bytes();
    if !req.secure_attribute {
        return Ok(WirePacket {
            secure: false,
            counter: 0,
            body,
            tag: None,
        });
    }
    if keys.next_send == u64::MAX {
        return Err(LinkError::CounterExhausted);
    }
    let counter = keys.next_send;
    keys.next_send += 1;
    let nonce = keys.send.nonce(counter);
    keys.counters
        .record(&keys.send.enc, &nonce)
        .expect("link counter reused under one key");
    let header = WirePacket::header_bytes(true, counter, body.len() as u16);
    let (ciphertext, tag) = ctr_mac_seal(&keys.send.enc, &keys.send.mac, nonce, &header, &body);
    Ok(WirePacket {
        secure: true,
        counter,
        body: ciphertext,
        tag: Some(tag),
    })
}

/// Check and decrypt an incoming packet. The tag is verified before the
/// replay check; on any failure the receive watermark is left unchanged.
pub fn uce_unprotect(
    pkt: &WirePacket,
    keys: &mut LinkKeySet,
) -> Result<CoherencyRequest, LinkError> {
    if !pkt.secure {
        let req = CoherencyRequest::from_canonical_bytes(&pkt.body)?;
        if req.secure_attribute {
            // A secure request can only arrive through the engine.
            return Err(LinkError::AttributeViolation {
                address: req.target_address,
                secure: true,
            });
        }
        return Ok(req);
    }
    let tag = pkt.tag.as_ref().ok_or(LinkError::TamperDetected)?;
    let nonce = keys.recv.nonce(pkt.counter);
    let plain = ctr_mac_open(
        &keys.recv.enc,
        &keys.recv.mac,
        nonce,
        &pkt.header(),
        &pkt.body,
        tag,
    )
    .map_err(|_| LinkError::TamperDetected)?;
    if pkt.counter <= keys.last_accepted {
        return Err(LinkError::ReplayDetected {
            counter: pkt.counter,
            watermark: keys.last_accepted,
        });
    }
    let req =
        CoherencyRequest::from_canonical_bytes(&plain).map_err(|_| LinkError::TamperDetected)?;
    if !req.secure_attribute {
        return Err(LinkError::TamperDetected);
    }
    keys.last_accepted = pkt.counter;
    Ok(req)
}

/// The receiving caching agent's gate before touching memory: a request
/// must carry the secure attribute exactly when it targets EPC.
pub fn receiver_attribute_check(
    req: &CoherencyRequest,
    epc_ranges: &[AddressRange],
) -> Result<(), LinkError> {
    let in_epc = epc_ranges.iter().any(|r| r.contains(req.target_address));
    if in_epc == req.secure_attribute {
        Ok(())
    } else {
        Err(LinkError::AttributeViolation {
            address: req.target_address,
            secure: req.secure_attribute,
        })
    }
}
