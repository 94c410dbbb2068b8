use std::collections::VecDeque;

use super::{CoherencyRequest, WirePacket, LINE_SIZE};
use crate::codec::Canonical;
use crate::package::PackageId;

/// Actions available to the adversary sitting on a link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdversaryAction {
    /// Copy every in-flight packet into the adversary log.
    Sniff,
    /// XOR `mask` into byte `offset` of in-flight packet `index`.
    Tamper {
        index: usize,
        offset: usize,
        mask: u8,
    },
    /// Re-inject packet `index` of the transmission log.
    Replay { index: usize },
    /// Remove in-flight packet `index`.
    Drop { index: usize },
    /// Replace in-flight packet `index` with a plaintext write to
    /// `target_address` that lacks the secure attribute.
    StripSecureFlag { index: usize, target_address: u64 },
}

/// One direction of a link as seen on the wire.
#[derive(Debug, Clone)]
pub struct LinkChannel {
    pub from: PackageId,
    pub to: PackageId,
    in_flight: VecDeque<Vec<u8>>,
    transmitted: Vec<Vec<u8>>,
    adversary_log: Vec<Vec<u8>>,
}

impl LinkChannel {
    pub fn new(from: PackageId, to: PackageId) -> Self {
        Self {
            from,
            to,
            in_flight: VecDeque::new(),
            transmitted: Vec::new(),
            adversary_log: Vec::new(),
        }
    }

    pub fn transmit(&mut self, pkt: &WirePacket) {
        let bytes = pkt.to_bytes();
        self.transmitted.push(bytes.clone());
        self.in_flight.push_back(bytes);
    }

    pub fn receive(&mut self) -> Option<Vec<u8>> {
        self.in_flight.pop_front()
    }

    pub fn in_flight_len(&self) -> usize {
        self.in_flight.len()
    }

    /// Every packet the honest sender put on the wire, in order.
    pub fn transmitted(&self) -> &[Vec<u8>] {
        &self.transmitted
    }

    pub fn adversary_log(&self) -> &[Vec<u8>] {
        &self.adversary_log
    }
}

/// Apply one adversary action. Out-of-range indices leave the channel
/// untouched.
pub fn adversary_act(channel: &mut LinkChannel, action: &AdversaryAction) {
    match *action {
        AdversaryAction::Sniff => {
            let captured: Vec<Vec<u8>> = channel.in_flight.iter().cloned().collect();
            channel.adversary_log.extend(captured);
        }
        AdversaryAction::Tamper {
            index,
            offset,
            mask,
        } => {
            if let Some(b) = channel
                .in_flight
                .get_mut(index)
                .and_then(|p| p.get_mut(offset))
            {
                *b ^= mask;
            }
        }
        AdversaryAction::Replay { index } => {
            if let Some(p) = channel.transmitted.get(index).cloned() {
                channel.in_flight.push_back(p);
            }
        }
        AdversaryAction::Drop { index } => {
            channel.in_flight.remove(index);
        }
        AdversaryAction::StripSecureFlag {
            index,
            target_address,
        } => {
            if let Some(slot) = channel.in_flight.get_mut(index) {
                let forged =
                    CoherencyRequest::write(channel.from, target_address, [0u8; LINE_SIZE]);
                *slot = WirePacket {
                    secure: false,
                    counter: 0,
                    body: forged.to_canonical_bytes(),
                    tag: None,
                }
                .to_bytes();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::SymmetricKey;
    use crate::link::{uce_protect, uce_unprotect, LinkError, LinkKeySet};

    fn setup() -> (LinkKeySet, LinkKeySet, LinkChannel) {
        let m = SymmetricKey::new([4; 32], "m");
        (
            LinkKeySet::program(&m, 0, 0, 1),
            LinkKeySet::program(&m, 0, 1, 0),
            LinkChannel::new(0, 1),
        )
    }

    fn send(tx: &mut LinkKeySet, ch: &mut LinkChannel, fill: u8) {
        let mut r = CoherencyRequest::write(0, 0x1800, [fill; LINE_SIZE]);
        r.secure_attribute = true;
        ch.transmit(&uce_protect(&r, tx).unwrap());
    }

    fn deliver(rx: &mut LinkKeySet, ch: &mut LinkChannel) -> Result<CoherencyRequest, LinkError> {
        let bytes = ch.receive().expect("packet in flight");
        uce_unprotect(&WirePacket::from_bytes(&bytes)?, rx)
    }

    #[test]
    fn drop_and_replay() {
        let (mut tx, mut rx, mut ch) = setup();
        send(&mut tx, &mut ch, 1);
        send(&mut tx, &mut ch, 2);
        adversary_act(&mut ch, &AdversaryAction::Drop { index: 0 });
        assert_eq!(
            deliver(&mut rx, &mut ch).unwrap().payload,
            Some([2; LINE_SIZE])
        );
        // Older packet is now below the watermark.
        adversary_act(&mut ch, &AdversaryAction::Replay { index: 0 });
        assert!(matches!(
            deliver(&mut rx, &mut ch),
            Err(LinkError::ReplayDetected { .. })
        ));
    }

    #[test]
    fn every_byte_flip_detected() {
        let (mut tx, rx, mut ch) = setup();
        send(&mut tx, &mut ch, 7);
        let len = ch.transmitted()[0].len();
        for offset in 0..len {
            let mut c = ch.clone();
            let mut r = rx.clone();
            adversary_act(
                &mut c,
                &AdversaryAction::Tamper {
                    index: 0,
                    offset,
                    mask: 0x01,
                },
            );
            let err = deliver(&mut r, &mut c).unwrap_err();
            assert!(err.is_security_event(), "offset {offset}: {err:?}");
            assert_eq!(r.last_accepted(), 0);
        }
    }

    #[test]
    fn strip_is_plaintext_without_attribute() {
        let (mut tx, mut rx, mut ch) = setup();
        send(&mut tx, &mut ch, 1);
        adversary_act(
            &mut ch,
            &AdversaryAction::StripSecureFlag {
                index: 0,
                target_address: 0x1800,
            },
        );
        let req = deliver(&mut rx, &mut ch).unwrap();
        assert!(!req.secure_attribute);
    }
}
