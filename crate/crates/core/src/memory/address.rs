use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::LINE_SIZE;
use crate::crypto::Digest;
use crate::link::AddressRange;

const LINE: u64 = LINE_SIZE as u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddressMapError {
    #[error("address {0:#x} is not line aligned")]
    Unaligned(u64),
    #[error("system address {0:#x} is outside the address space")]
    SystemOutOfRange(u64),
    #[error("physical line {0} does not exist")]
    PhysicalOutOfRange(u64),
    #[error("EPC range does not fit in the address space")]
    EpcOutOfRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("EPC addresses {sa1:#x} and {sa2:#x} decode to the same physical line")]
pub struct AliasFound {
    pub sa1: u64,
    pub sa2: u64,
}

/// System address decoding for one package: identity by default, with
/// per-line overrides (for example after DIMM sparing) that may alias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressMap {
    lines: u64,
    overrides: BTreeMap<u64, u64>,
    epc: AddressRange,
}

impl AddressMap {
    pub fn identity(lines: u64, epc: AddressRange) -> Self {
        Self::new(lines, epc, []).expect("identity map with in-range EPC")
    }

    pub fn new(
        lines: u64,
        epc: AddressRange,
        overrides: impl IntoIterator<Item = (u64, u64)>,
    ) -> Result<Self, AddressMapError> {
        let space = lines
            .checked_mul(LINE)
            .ok_or(AddressMapError::EpcOutOfRange)?;
        if !epc.base.is_multiple_of(LINE) {
            return Err(AddressMapError::Unaligned(epc.base));
        }
        if !epc.size.is_multiple_of(LINE) {
            return Err(AddressMapError::Unaligned(epc.size));
        }
        if epc.base.checked_add(epc.size).is_none_or(|end| end > space) {
            return Err(AddressMapError::EpcOutOfRange);
        }
        let mut map = Self {
            lines,
            overrides: BTreeMap::new(),
            epc,
        };
        for (sa, pa) in overrides {
            map.remap(sa, pa)?;
        }
        Ok(map)
    }

    /// Point system address `sa` at physical line `pa`.
    pub fn remap(&mut self, sa: u64, pa: u64) -> Result<(), AddressMapError> {
        if !sa.is_multiple_of(LINE) {
            return Err(AddressMapError::Unaligned(sa));
        }
        if sa / LINE >= self.lines {
            return Err(AddressMapError::SystemOutOfRange(sa));
        }
        if pa >= self.lines {
            return Err(AddressMapError::PhysicalOutOfRange(pa));
        }
        if sa / LINE == pa {
            self.overrides.remove(&pa);
        } else {
            self.overrides.insert(sa / LINE, pa);
        }
        Ok(())
    }

    pub fn physical_lines(&self) -> u64 {
        self.lines
    }

    pub fn size_bytes(&self) -> u64 {
        self.lines * LINE
    }

    pub fn epc(&self) -> AddressRange {
        self.epc
    }

    pub fn overrides(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.overrides.iter().map(|(&l, &pa)| (l * LINE, pa))
    }

    /// Physical line index for system address `addr`.
    pub fn translate(&self, addr: u64) -> Option<u64> {
        let line = addr / LINE;
        if line >= self.lines {
            return None;
        }
        Some(*self.overrides.get(&line).unwrap_or(&line))
    }

    /// Line-aligned system addresses inside the EPC.
    pub fn epc_addresses(&self) -> impl Iterator<Item = u64> {
        let AddressRange { base, size } = self.epc;
        (base..base + size).step_by(LINE_SIZE)
    }

    /// Pairs `(outside, inside)` where a non-EPC address decodes to the
    /// same line as an EPC address.
    pub fn outside_in_aliases(&self) -> Vec<(u64, u64)> {
        let mut by_pa: HashMap<u64, u64> = HashMap::new();
        for sa in self.epc_addresses() {
            by_pa
                .entry(self.translate(sa).expect("EPC in range"))
                .or_insert(sa);
        }
        let mut out = Vec::new();
        for line in 0..self.lines {
            let sa = line * LINE;
            if self.epc.contains(sa) {
                continue;
            }
            if let Some(&inside) = by_pa.get(&self.translate(sa).expect("in range")) {
                out.push((sa, inside));
            }
        }
        out
    }

    pub fn digest(&self) -> Digest {
        let mut bytes = Vec::with_capacity(24 + self.overrides.len() * 16);
        bytes.extend_from_slice(&self.lines.to_le_bytes());
        bytes.extend_from_slice(&self.epc.base.to_le_bytes());
        bytes.extend_from_slice(&self.epc.size.to_le_bytes());
        for (sa, pa) in &self.overrides {
            bytes.extend_from_slice(&sa.to_le_bytes());
            bytes.extend_from_slice(&pa.to_le_bytes());
        }
        Digest::of_parts(&[b"address-map", &bytes])
    }
}

/// Boot-time inside-in alias check: write a pattern unique to each EPC
/// system address, then read every address back. Any mismatch means two
/// EPC addresses share a line.
pub fn boot_alias_scan(map: &AddressMap) -> Result<(), AliasFound> {
    let mut scratch: HashMap<u64, u64> = HashMap::new();
    for sa in map.epc_addresses() {
        scratch.insert(map.translate(sa).expect("EPC in range"), sa);
    }
    for sa in map.epc_addresses() {
        let seen = scratch[&map.translate(sa).expect("EPC in range")];
        if seen != sa {
            return Err(AliasFound {
                sa1: sa.min(seen),
                sa2: sa.max(seen),
            });
        }
    }
    Ok(())
}
