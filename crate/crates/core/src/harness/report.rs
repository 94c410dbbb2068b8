use serde::Serialize;

use super::config::Expect;
use super::suite::AttackMatrix;
use crate::crypto::SimRng;
use crate::link::AddressRange;
use crate::memory::{protection_matrix, AddressMap, Memory, ReadKind, Support, LINE_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Ok,
    Rejected,
    Fallback,
    Detected,
    SgxDisabled,
    Error,
}

impl std::fmt::Display for StepStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StepStatus::Ok => "ok",
            StepStatus::Rejected => "rejected",
            StepStatus::Fallback => "fallback",
            StepStatus::Detected => "detected",
            StepStatus::SgxDisabled => "sgx_disabled",
            StepStatus::Error => "error",
        })
    }
}

impl StepStatus {
    pub fn satisfies(self, expect: Expect) -> bool {
        matches!(
            (self, expect),
            (StepStatus::Ok, Expect::Ok)
                | (StepStatus::Rejected, Expect::Rejected)
                | (StepStatus::Fallback, Expect::Fallback)
                | (StepStatus::Detected, Expect::Detected)
                | (StepStatus::SgxDisabled, Expect::SgxDisabled)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub status: StepStatus,
    pub detail: String,
}

impl StepOutcome {
    pub fn new(status: StepStatus, detail: String) -> Self {
        Self { status, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepReport {
    pub index: usize,
    pub action: &'static str,
    pub outcome: StepStatus,
    pub detail: String,
    pub expected: Option<Expect>,
    pub as_expected: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SgxReport {
    pub enabled: bool,
    pub phase: String,
    pub disable_reason: Option<String>,
}

/// One cell of the protection matrix, claimed versus what the memory
/// model actually does when attacked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CrossCheck {
    pub property: &'static str,
    pub attacker: &'static str,
    pub claimed: Support,
    pub observed: Support,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub mitigations: bool,
    pub platform_instance_id: Option<String>,
    pub steps: Vec<StepReport>,
    pub security_events: Vec<String>,
    pub sgx_status: SgxReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack_matrix: Option<AttackMatrix>,
    pub protection_matrix: Vec<CrossCheck>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn all_expectations_met(&self) -> bool {
        self.steps.iter().all(|s| s.as_expected)
    }
}

const PROBE_LINE: u64 = 8;

fn probe_memory(seed: u64) -> Memory {
    let epc = AddressRange::new(PROBE_LINE * LINE_SIZE as u64, 4 * LINE_SIZE as u64);
    let mut mem = Memory::new(AddressMap::identity(16, epc), true, SimRng::from_seed(seed));
    mem.reenable_after_establishment();
    mem
}

/// Attack the TEM memory model in each way the protection matrix talks
/// about and record what happened.
pub fn cross_check_protection_matrix(seed: u64) -> Vec<CrossCheck> {
    let addr = PROBE_LINE * LINE_SIZE as u64;
    let secret = [0x5a; LINE_SIZE];
    let other = [0xa5; LINE_SIZE];
    let mut out = Vec::new();
    for row in protection_matrix() {
        let (sw, hw) = match row.property {
            "Loss of Confidentiality" => {
                let mut mem = probe_memory(seed);
                mem.write_line(addr, &secret, true).expect("probe write");
                let sw_read = mem.read_line(addr, false).expect("probe read");
                let sw = if sw_read.data == secret {
                    Support::No
                } else {
                    Support::Yes
                };
                let first = mem.line(addr).expect("probe line").stored_bytes;
                mem.write_line(addr, &other, true).expect("probe write");
                mem.write_line(addr, &secret, true).expect("probe write");
                let again = mem.line(addr).expect("probe line").stored_bytes;
                let hw = if first == secret {
                    Support::No
                } else if first == again {
                    // Equal plaintexts at one address give equal ciphertexts.
                    Support::YesCiphertextOnce
                } else {
                    Support::Yes
                };
                (sw, hw)
            }
            "Loss of Integrity" => {
                let mut mem = probe_memory(seed);
                mem.write_line(addr, &secret, true).expect("probe write");
                mem.write_line(addr, &other, false).expect("probe write");
                let sw = detected(&mut mem, addr, &secret);
                let mut mem = probe_memory(seed);
                mem.write_line(addr, &secret, true).expect("probe write");
                mem.line_mut(addr).expect("probe line").stored_bytes[0] ^= 1;
                let hw = detected(&mut mem, addr, &secret);
                (sw, hw)
            }
            _ => {
                let mut mem = probe_memory(seed);
                mem.write_line(addr, &secret, true).expect("probe write");
                mem.write_line(addr, &other, true).expect("probe write");
                mem.write_line(addr, &secret, false).expect("probe write");
                let sw = detected(&mut mem, addr, &other);
                let mut mem = probe_memory(seed);
                mem.write_line(addr, &secret, true).expect("probe write");
                let old = mem.line(addr).expect("probe line").stored_bytes;
                mem.write_line(addr, &other, true).expect("probe write");
                mem.line_mut(addr).expect("probe line").stored_bytes = old;
                let hw = detected(&mut mem, addr, &other);
                (sw, hw)
            }
        };
        for (attacker, claimed, observed) in
            [("software", row.sw_tem, sw), ("hardware", row.hw_tem, hw)]
        {
            out.push(CrossCheck {
                property: row.property,
                attacker,
                claimed,
                observed,
                agrees: claimed == observed,
            });
        }
    }
    out
}

/// Whether the enclave notices that the line no longer holds `expected`.
fn detected(mem: &mut Memory, addr: u64, expected: &[u8; LINE_SIZE]) -> Support {
    let r = mem.read_line(addr, true).expect("probe read");
    if r.kind == ReadKind::FixedValuePoison || r.data == *expected {
        Support::Yes
    } else {
        Support::No
    }
}
