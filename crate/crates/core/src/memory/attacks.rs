use std::collections::HashSet;

use super::{address::boot_alias_scan, AddressMap, Memory, ReadKind, LINE_SIZE};
use crate::link::AddressRange;

/// Window length used when scanning observations for leaked plaintext.
pub const LEAK_WINDOW: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedRead {
    pub address: u64,
    pub data: [u8; LINE_SIZE],
    pub kind: ReadKind,
}

/// What a software attacker saw, and whether the platform noticed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AttackObservation {
    pub reads: Vec<ObservedRead>,
    pub detected: bool,
    pub sgx_disabled: bool,
    pub alias: Option<(u64, u64)>,
    /// Platform state was changed by the attacker and nothing noticed.
    pub silent_corruption: bool,
}

impl AttackObservation {
    /// Whether any observed read contains an 8-byte run of any secret.
    pub fn leaks(&self, secrets: &[[u8; LINE_SIZE]]) -> bool {
        let windows: HashSet<&[u8]> = secrets
            .iter()
            .flat_map(|s| s.windows(LEAK_WINDOW))
            .collect();
        self.reads
            .iter()
            .any(|r| r.data.windows(LEAK_WINDOW).any(|w| windows.contains(w)))
    }
}

fn insecure_sweep(mem: &mut Memory, addrs: impl Iterator<Item = u64>) -> Vec<ObservedRead> {
    addrs
        .filter_map(|address| {
            mem.read_line(address, false).ok().map(|r| ObservedRead {
                address,
                data: r.data,
                kind: r.kind,
            })
        })
        .collect()
}

/// Force a reset, then read the whole EPC through the non-secure path.
pub fn attack_reset(mem: &mut Memory) -> AttackObservation {
    mem.reset();
    let addrs: Vec<u64> = mem.map().epc_addresses().collect();
    AttackObservation {
        reads: insecure_sweep(mem, addrs.into_iter()),
        sgx_disabled: !mem.status().enabled,
        ..Default::default()
    }
}

/// Tear down EPC protection on `range` without a reset, then read it.
pub fn attack_epc_reclaim(mem: &mut Memory, range: AddressRange) -> AttackObservation {
    mem.reclaim(range.base, range.size);
    let line = LINE_SIZE as u64;
    let start = range.base / line * line;
    let addrs = (start..range.base.saturating_add(range.size)).step_by(LINE_SIZE);
    AttackObservation {
        reads: insecure_sweep(mem, addrs),
        sgx_disabled: !mem.status().enabled,
        ..Default::default()
    }
}

/// Use the first non-EPC alias of an EPC line: read and overwrite the line
/// through the alias, then let the enclave consume it.
pub fn attack_outside_in(mem: &mut Memory, payload: &[u8; LINE_SIZE]) -> AttackObservation {
    let Some((outside, inside)) = mem.map().outside_in_aliases().first().copied() else {
        return AttackObservation {
            sgx_disabled: !mem.status().enabled,
            ..Default::default()
        };
    };
    let mut reads = insecure_sweep(mem, std::iter::once(outside));
    mem.write_line(outside, payload, false)
        .expect("alias is mapped");
    let consumed = mem.read_line(inside, true).expect("EPC is mapped");
    reads.push(ObservedRead {
        address: inside,
        data: consumed.data,
        kind: consumed.kind,
    });
    AttackObservation {
        detected: consumed.kind == ReadKind::FixedValuePoison,
        sgx_disabled: !mem.status().enabled,
        alias: Some((outside, inside)),
        reads,
        ..Default::default()
    }
}

/// Inside-in aliases are caught at boot; the platform never enables SGX.
pub fn attack_inside_in(map: &AddressMap) -> AttackObservation {
    match boot_alias_scan(map) {
        Ok(()) => AttackObservation::default(),
        Err(found) => AttackObservation {
            detected: true,
            sgx_disabled: true,
            alias: Some((found.sa1, found.sa2)),
            ..Default::default()
        },
    }
}

/// Flip the coherence directory bits stored with the line at `addr`.
/// Nothing in the model checks them, so the change goes unnoticed.
pub fn attack_directory_corruption(mem: &mut Memory, addr: u64, mask: u8) -> AttackObservation {
    let corrupted = match mem.line_mut(addr) {
        Ok(line) => {
            line.directory ^= mask;
            mask != 0
        }
        Err(_) => false,
    };
    AttackObservation {
        sgx_disabled: !mem.status().enabled,
        silent_corruption: corrupted,
        ..Default::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::SimRng;

    const LINE: u64 = LINE_SIZE as u64;

    fn setup(mitigations: bool, overrides: &[(u64, u64)]) -> (Memory, Vec<[u8; LINE_SIZE]>) {
        let epc = AddressRange::new(32 * LINE, 8 * LINE);
        let map = AddressMap::new(64, epc, overrides.iter().copied()).unwrap();
        let mut rng = SimRng::from_seed(9);
        let mut mem = Memory::new(map, mitigations, rng.fork(1));
        let mut secrets = Vec::new();
        for sa in (32..40).map(|l| l * LINE) {
            let s: [u8; LINE_SIZE] = rng.array();
            mem.write_line(sa, &s, true).unwrap();
            secrets.push(s);
        }
        (mem, secrets)
    }

    #[test]
    fn reset_and_reclaim_follow_the_toggle() {
        for mitigations in [true, false] {
            let (mut mem, secrets) = setup(mitigations, &[]);
            let obs = attack_reset(&mut mem);
            assert_eq!(obs.leaks(&secrets), !mitigations);
            let (mut mem, secrets) = setup(mitigations, &[]);
            let epc = mem.map().epc();
            let obs = attack_epc_reclaim(&mut mem, epc);
            assert_eq!(obs.leaks(&secrets), !mitigations);
            assert_eq!(obs.reads.len(), 8);
        }
    }

    #[test]
    fn stale_ciphertext_after_reset_is_garbage() {
        let (mut mem, secrets) = setup(true, &[]);
        mem.reset();
        let r = mem.read_line(32 * LINE, true).unwrap();
        assert_eq!(r.kind, ReadKind::Line);
        assert_ne!(r.data, secrets[0]);
    }

    #[test]
    fn reset_without_secrets_is_clean() {
        let epc = AddressRange::new(32 * LINE, 8 * LINE);
        let mut mem = Memory::new(AddressMap::identity(64, epc), true, SimRng::from_seed(2));
        let obs = attack_reset(&mut mem);
        assert!(!obs.leaks(&[[0xee; LINE_SIZE]]));
    }

    #[test]
    fn outside_in_detected() {
        let (mut mem, secrets) = setup(true, &[(3 * LINE, 33)]);
        let obs = attack_outside_in(&mut mem, &[0x41; LINE_SIZE]);
        assert!(obs.detected && obs.sgx_disabled);
        assert_eq!(obs.alias, Some((3 * LINE, 33 * LINE)));
        assert!(!obs.leaks(&secrets));
    }

    #[test]
    fn no_alias_is_clean() {
        let (mut mem, _) = setup(true, &[]);
        let obs = attack_outside_in(&mut mem, &[0; LINE_SIZE]);
        assert!(!obs.detected && !obs.sgx_disabled && obs.reads.is_empty());
        assert_eq!(attack_inside_in(mem.map()), AttackObservation::default());
    }

    #[test]
    fn directory_corruption_is_silent() {
        let (mut mem, _) = setup(true, &[]);
        let obs = attack_directory_corruption(&mut mem, 32 * LINE, 0b11);
        assert!(obs.silent_corruption && !obs.detected);
        assert_eq!(mem.line(32 * LINE).unwrap().directory, 0b11);
    }
}
