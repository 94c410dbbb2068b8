//! The unprotected shared memory packages use to talk to each other during
//! establishment. Everything posted here is visible to, and may be altered
//! by, an [`Adversary`].

use std::collections::VecDeque;

use crate::package::PackageId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub sender: PackageId,
    pub recipient: PackageId,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Intercept {
    Deliver,
    Drop,
    Replace(Envelope),
}

/// Sees every message as it is posted. `index` counts posts from zero over
/// the mailbox lifetime; `history` holds every earlier message as posted
/// by its sender.
pub trait Adversary {
    fn intercept(&mut self, index: usize, envelope: &Envelope, history: &[Envelope]) -> Intercept;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Passive;

impl Adversary for Passive {
    fn intercept(&mut self, _: usize, _: &Envelope, _: &[Envelope]) -> Intercept {
        Intercept::Deliver
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fault {
    Drop,
    /// XOR `mask` into payload byte `offset` (wrapped to the payload length).
    FlipByte {
        offset: usize,
        mask: u8,
    },
    /// Substitute an earlier message of the same run.
    ReplayEarlier {
        index: usize,
    },
    /// Substitute a message recorded elsewhere, e.g. a previous run.
    Inject(Envelope),
}

/// Applies one fault to the message with a given post index and leaves the
/// rest untouched.
#[derive(Debug, Clone)]
pub struct FaultInjector {
    pub target: usize,
    pub fault: Fault,
    pub fired: bool,
}

impl FaultInjector {
    pub fn new(target: usize, fault: Fault) -> Self {
        Self {
            target,
            fault,
            fired: false,
        }
    }
}

impl Adversary for FaultInjector {
    fn intercept(&mut self, index: usize, envelope: &Envelope, history: &[Envelope]) -> Intercept {
        if index != self.target {
            return Intercept::Deliver;
        }
        self.fired = true;
        match &self.fault {
            Fault::Drop => Intercept::Drop,
            Fault::FlipByte { offset, mask } => {
                let mut altered = envelope.clone();
                if !altered.payload.is_empty() {
                    let at = offset % altered.payload.len();
                    altered.payload[at] ^= mask;
                }
                Intercept::Replace(altered)
            }
            Fault::ReplayEarlier { index } => match history.get(*index) {
                Some(old) => Intercept::Replace(old.clone()),
                None => Intercept::Drop,
            },
            Fault::Inject(env) => Intercept::Replace(env.clone()),
        }
    }
}

pub struct Mailbox {
    pending: VecDeque<Envelope>,
    /// Messages as posted by senders, before interception.
    posted: Vec<Envelope>,
    /// Messages as actually placed in shared memory.
    wire: Vec<Envelope>,
    adversary: Box<dyn Adversary>,
}

impl Default for Mailbox {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for Mailbox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mailbox")
            .field("pending", &self.pending.len())
            .field("posted", &self.posted.len())
            .finish()
    }
}

impl Mailbox {
    pub fn new() -> Self {
        Self::with_adversary(Box::new(Passive))
    }

    pub fn with_adversary(adversary: Box<dyn Adversary>) -> Self {
        Self {
            pending: VecDeque::new(),
            posted: Vec::new(),
            wire: Vec::new(),
            adversary,
        }
    }

    pub fn post(&mut self, envelope: Envelope) {
        let index = self.posted.len();
        let action = self.adversary.intercept(index, &envelope, &self.posted);
        self.posted.push(envelope.clone());
        let delivered = match action {
            Intercept::Deliver => Some(envelope),
            Intercept::Drop => None,
            Intercept::Replace(other) => Some(other),
        };
        if let Some(env) = delivered {
            self.wire.push(env.clone());
            self.pending.push_back(env);
        }
    }

    /// Oldest pending message addressed to `recipient` from `sender`.
    pub fn take(&mut self, recipient: PackageId, sender: PackageId) -> Option<Envelope> {
        let pos = self
            .pending
            .iter()
            .position(|e| e.recipient == recipient && e.sender == sender)?;
        self.pending.remove(pos)
    }

    /// Everything the adversary could observe in shared memory.
    pub fn wire_log(&self) -> &[Envelope] {
        &self.wire
    }

    pub fn posted_log(&self) -> &[Envelope] {
        &self.posted
    }

    pub fn posted_count(&self) -> usize {
        self.posted.len()
    }

    /// Direct write access for adversaries acting outside the post hook.
    pub fn pending_mut(&mut self) -> &mut VecDeque<Envelope> {
        &mut self.pending
    }

    pub fn clear_pending(&mut self) {
        self.pending.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(s: u32, r: u32, p: &[u8]) -> Envelope {
        Envelope {
            sender: s,
            recipient: r,
            payload: p.to_vec(),
        }
    }

    #[test]
    fn fifo_per_sender_recipient_pair() {
        let mut mb = Mailbox::new();
        mb.post(env(0, 1, b"a"));
        mb.post(env(2, 1, b"b"));
        mb.post(env(0, 1, b"c"));
        assert_eq!(mb.take(1, 2).unwrap().payload, b"b");
        assert_eq!(mb.take(1, 0).unwrap().payload, b"a");
        assert_eq!(mb.take(1, 0).unwrap().payload, b"c");
        assert!(mb.take(1, 0).is_none());
    }

    #[test]
    fn injector_hits_only_its_target() {
        let mut mb = Mailbox::with_adversary(Box::new(FaultInjector::new(
            1,
            Fault::FlipByte {
                offset: 0,
                mask: 0xff,
            },
        )));
        mb.post(env(0, 1, &[1]));
        mb.post(env(0, 1, &[2]));
        mb.post(env(0, 1, &[3]));
        let got: Vec<u8> = std::iter::from_fn(|| mb.take(1, 0))
            .map(|e| e.payload[0])
            .collect();
        assert_eq!(got, vec![1, 0xfd, 3]);
        assert_eq!(mb.posted_log()[1].payload, vec![2]);
    }

    #[test]
    fn drop_and_replay() {
        let mut mb = Mailbox::with_adversary(Box::new(FaultInjector::new(1, Fault::Drop)));
        mb.post(env(0, 1, b"x"));
        mb.post(env(1, 0, b"y"));
        assert!(mb.take(0, 1).is_none());

        let mut mb = Mailbox::with_adversary(Box::new(FaultInjector::new(
            1,
            Fault::ReplayEarlier { index: 0 },
        )));
        mb.post(env(0, 1, b"x"));
        mb.post(env(0, 1, b"y"));
        assert_eq!(mb.take(1, 0).unwrap().payload, b"x");
        assert_eq!(mb.take(1, 0).unwrap().payload, b"x");
    }
}
