//! Protected memory: MK-TME key domains, the ECC secure bit and its
//! outside-in detection, the boot-time inside-in alias scan, and the
//! software attacks the protections are meant to stop.

mod address;
mod attacks;
mod tables;

use chacha20::cipher::{KeyIvInit, StreamCipher};
use chacha20::ChaCha20;
use thiserror::Error;

pub use address::{boot_alias_scan, AddressMap, AddressMapError, AliasFound};
pub use attacks::{
    attack_directory_corruption, attack_epc_reclaim, attack_inside_in, attack_outside_in,
    attack_reset, AttackObservation, ObservedRead, LEAK_WINDOW,
};
pub use tables::{protection_matrix, tree_capacity, ProtectionRow, Support, DEFAULT_TREE_ARITY};

use crate::crypto::{suite, SimRng, SymmetricKey};

pub const LINE_SIZE: usize = 64;

/// What an access that fails the secure-bit check gets back.
pub const FIXED_VALUE: [u8; LINE_SIZE] = [0u8; LINE_SIZE];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("SGX is not enabled")]
    SgxNotEnabled,
    #[error("address {0:#x} is outside the configured address space")]
    Unmapped(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryLine {
    pub stored_bytes: [u8; LINE_SIZE],
    pub ecc_secure_bit: bool,
    pub poison: bool,
    /// Coherence directory bits kept alongside the line in DRAM.
    pub directory: u8,
    pending_ecc: Option<EccError>,
}

impl Default for MemoryLine {
    fn default() -> Self {
        Self {
            stored_bytes: [0; LINE_SIZE],
            ecc_secure_bit: false,
            poison: false,
            directory: 0,
            pending_ecc: None,
        }
    }
}

/// A correctable single-bit error injected into a line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EccError {
    DataBit(u16),
    SecureBit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DomainId {
    Sgx,
    Vmm(u16),
}

#[derive(Debug, Clone)]
pub struct TmeKeyDomain {
    pub domain_id: DomainId,
    pub key: SymmetricKey,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SgxStatus {
    pub enabled: bool,
    pub disable_reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadKind {
    Line,
    FixedValue,
    FixedValuePoison,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadResult {
    pub data: [u8; LINE_SIZE],
    pub kind: ReadKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MemoryEvent {
    EccCorrected { line: u64 },
    Poisoned { address: u64, line: u64 },
    SgxDisabled { reason: String },
    Reset { epoch: u64 },
}

/// One package's DRAM behind its memory controller.
#[derive(Debug, Clone)]
pub struct Memory {
    map: AddressMap,
    lines: Vec<MemoryLine>,
    sgx: TmeKeyDomain,
    vmm: TmeKeyDomain,
    status: SgxStatus,
    mitigations: bool,
    rng: SimRng,
    events: Vec<MemoryEvent>,
}

impl Memory {
    /// With `mitigations` off the SGX domain shares the VMM key, keeps it
    /// across resets, and protection teardown clears the secure bits.
    pub fn new(map: AddressMap, mitigations: bool, mut rng: SimRng) -> Self {
        let vmm = TmeKeyDomain {
            domain_id: DomainId::Vmm(0),
            key: rng.key(suite::LABEL_TME_DOMAIN),
            epoch: 0,
        };
        let sgx_key = if mitigations {
            rng.key(suite::LABEL_TME_DOMAIN)
        } else {
            vmm.key.clone()
        };
        Self {
            lines: vec![MemoryLine::default(); map.physical_lines() as usize],
            map,
            sgx: TmeKeyDomain {
                domain_id: DomainId::Sgx,
                key: sgx_key,
                epoch: 0,
            },
            vmm,
            status: SgxStatus {
                enabled: true,
                disable_reason: None,
            },
            mitigations,
            rng,
            events: Vec::new(),
        }
    }

    pub fn map(&self) -> &AddressMap {
        &self.map
    }

    pub fn mitigations(&self) -> bool {
        self.mitigations
    }

    pub fn status(&self) -> &SgxStatus {
        &self.status
    }

    pub fn events(&self) -> &[MemoryEvent] {
        &self.events
    }

    pub fn epoch(&self) -> u64 {
        self.sgx.epoch
    }

    pub fn domain(&self, id: DomainId) -> &TmeKeyDomain {
        match id {
            DomainId::Sgx => &self.sgx,
            DomainId::Vmm(_) => &self.vmm,
        }
    }

    pub fn line(&self, addr: u64) -> Result<&MemoryLine, MemoryError> {
        let pa = self
            .map
            .translate(addr)
            .ok_or(MemoryError::Unmapped(addr))?;
        Ok(&self.lines[pa as usize])
    }

    pub fn line_mut(&mut self, addr: u64) -> Result<&mut MemoryLine, MemoryError> {
        let pa = self
            .map
            .translate(addr)
            .ok_or(MemoryError::Unmapped(addr))?;
        Ok(&mut self.lines[pa as usize])
    }

    pub fn disable_sgx(&mut self, reason: impl Into<String>) {
        let reason = reason.into();
        if self.status.enabled {
            self.events.push(MemoryEvent::SgxDisabled {
                reason: reason.clone(),
            });
        }
        self.status = SgxStatus {
            enabled: false,
            disable_reason: Some(reason),
        };
    }

    /// Re-enable after the platform has been fully re-established.
    pub fn reenable_after_establishment(&mut self) {
        self.status = SgxStatus {
            enabled: true,
            disable_reason: None,
        };
    }

    fn keystream(key: &SymmetricKey, pa: u64, data: &mut [u8; LINE_SIZE]) {
        let mut nonce = [0u8; 12];
        nonce[4..].copy_from_slice(&pa.to_le_bytes());
        ChaCha20::new(key.expose_secret().into(), &nonce.into()).apply_keystream(data);
    }

    pub fn write_line(
        &mut self,
        addr: u64,
        plaintext: &[u8; LINE_SIZE],
        secure: bool,
    ) -> Result<(), MemoryError> {
        let pa = self
            .map
            .translate(addr)
            .ok_or(MemoryError::Unmapped(addr))?;
        if secure && !self.status.enabled {
            return Err(MemoryError::SgxNotEnabled);
        }
        let key = if secure { &self.sgx.key } else { &self.vmm.key };
        let mut stored = *plaintext;
        Self::keystream(key, pa, &mut stored);
        let line = &mut self.lines[pa as usize];
        line.stored_bytes = stored;
        line.ecc_secure_bit = secure;
        line.pending_ecc = None;
        Ok(())
    }

    /// Read one line. ECC correction runs first, then the secure-bit check:
    ///
    /// | read secure | written secure | result                |
    /// |-------------|----------------|-----------------------|
    /// | no          | no             | line                  |
    /// | no          | yes            | fixed value           |
    /// | yes         | no             | fixed value + poison  |
    /// | yes         | yes            | line                  |
    pub fn read_line(&mut self, addr: u64, secure: bool) -> Result<ReadResult, MemoryError> {
        let pa = self
            .map
            .translate(addr)
            .ok_or(MemoryError::Unmapped(addr))?;
        let line = &mut self.lines[pa as usize];
        if let Some(err) = line.pending_ecc.take() {
            apply_ecc_error(line, err);
            self.events.push(MemoryEvent::EccCorrected { line: pa });
        }
        let line = &mut self.lines[pa as usize];
        match (secure, line.ecc_secure_bit) {
            (false, false) | (true, true) => {
                let key = if secure { &self.sgx.key } else { &self.vmm.key };
                let mut data = line.stored_bytes;
                Self::keystream(key, pa, &mut data);
                Ok(ReadResult {
                    data,
                    kind: ReadKind::Line,
                })
            }
            (false, true) => Ok(ReadResult {
                data: FIXED_VALUE,
                kind: ReadKind::FixedValue,
            }),
            (true, false) => {
                line.poison = true;
                self.events.push(MemoryEvent::Poisoned {
                    address: addr,
                    line: pa,
                });
                self.disable_sgx(format!("outside-in alias detected at {addr:#x}"));
                Ok(ReadResult {
                    data: FIXED_VALUE,
                    kind: ReadKind::FixedValuePoison,
                })
            }
        }
    }

    /// Flip one bit of a line's stored data or metadata. The next read
    /// corrects it before anything else looks at the line.
    pub fn inject_ecc_error(&mut self, addr: u64, err: EccError) -> Result<(), MemoryError> {
        let line = self.line_mut(addr)?;
        if line.pending_ecc.is_some() {
            // One correctable error per line; a second would be uncorrectable.
            return Ok(());
        }
        apply_ecc_error(line, err);
        line.pending_ecc = Some(err);
        Ok(())
    }

    /// Platform reset. With mitigations on the SGX domain gets a fresh key
    /// and secure bits persist; with them off protections are dropped.
    pub fn reset(&mut self) {
        self.sgx.epoch += 1;
        self.vmm.epoch += 1;
        if self.mitigations {
            self.sgx.key = self.rng.key(suite::LABEL_TME_DOMAIN);
        } else {
            self.clear_secure_bits(0..self.lines.len() as u64);
        }
        self.events.push(MemoryEvent::Reset {
            epoch: self.sgx.epoch,
        });
    }

    /// Tear down EPC protection on `[base, base + size)` without a reset.
    pub fn reclaim(&mut self, base: u64, size: u64) {
        if self.mitigations {
            return;
        }
        let pas: Vec<u64> = (base / LINE_SIZE as u64..(base + size).div_ceil(LINE_SIZE as u64))
            .filter_map(|l| self.map.translate(l * LINE_SIZE as u64))
            .collect();
        for pa in pas {
            self.lines[pa as usize].ecc_secure_bit = false;
        }
    }

    fn clear_secure_bits(&mut self, pas: std::ops::Range<u64>) {
        for pa in pas {
            self.lines[pa as usize].ecc_secure_bit = false;
        }
    }
}

fn apply_ecc_error(line: &mut MemoryLine, err: EccError) {
    match err {
        EccError::DataBit(bit) => {
            let bit = bit as usize % (LINE_SIZE * 8);
            line.stored_bytes[bit / 8] ^= 1 << (bit % 8);
        }
        EccError::SecureBit => line.ecc_secure_bit = !line.ecc_secure_bit,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::AddressRange;

    fn mem(mitigations: bool) -> Memory {
        let map = AddressMap::identity(64, AddressRange::new(32 * 64, 16 * 64));
        Memory::new(map, mitigations, SimRng::from_seed(1))
    }

    #[test]
    fn secure_bit_tracks_last_write() {
        let mut m = mem(true);
        m.write_line(0, &[1; 64], true).unwrap();
        assert!(m.line(0).unwrap().ecc_secure_bit);
        m.write_line(0, &[1; 64], false).unwrap();
        assert!(!m.line(0).unwrap().ecc_secure_bit);
    }

    #[test]
    fn address_tweak_changes_ciphertext() {
        let mut m = mem(true);
        m.write_line(0, &[7; 64], true).unwrap();
        m.write_line(64, &[7; 64], true).unwrap();
        assert_ne!(
            m.line(0).unwrap().stored_bytes,
            m.line(64).unwrap().stored_bytes
        );
    }

    #[test]
    fn table_rows() {
        let mut m = mem(true);
        let p = [0x5a; 64];
        m.write_line(0, &p, false).unwrap();
        assert_eq!(m.read_line(0, false).unwrap().data, p);
        m.write_line(64, &p, true).unwrap();
        assert_eq!(m.read_line(64, false).unwrap().kind, ReadKind::FixedValue);
        assert_eq!(m.read_line(64, true).unwrap().data, p);
        assert!(m.status().enabled);
        let r = m.read_line(0, true).unwrap();
        assert_eq!(r.kind, ReadKind::FixedValuePoison);
        assert!(m.line(0).unwrap().poison);
        assert!(!m.status().enabled);
        assert_eq!(m.write_line(64, &p, true), Err(MemoryError::SgxNotEnabled));
        m.reenable_after_establishment();
        assert!(m.write_line(64, &p, true).is_ok());
    }

    #[test]
    fn ecc_runs_before_secure_check() {
        let mut m = mem(true);
        let p = [3; 64];
        m.write_line(128, &p, true).unwrap();
        m.inject_ecc_error(128, EccError::SecureBit).unwrap();
        assert!(!m.line(128).unwrap().ecc_secure_bit);
        assert_eq!(m.read_line(128, true).unwrap().data, p);
        assert!(m.status().enabled);
        m.inject_ecc_error(128, EccError::DataBit(77)).unwrap();
        assert_eq!(m.read_line(128, true).unwrap().data, p);
    }

    #[test]
    fn unmapped_addresses() {
        let mut m = mem(true);
        assert_eq!(
            m.read_line(64 * 64, false),
            Err(MemoryError::Unmapped(64 * 64))
        );
    }
}
