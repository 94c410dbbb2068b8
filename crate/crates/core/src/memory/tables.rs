use std::fmt;

use serde::Serialize;

use super::LINE_SIZE;

pub const DEFAULT_TREE_ARITY: u64 = 8;

/// Bytes an integrity tree can protect: each on-die counter slot roots a
/// tree of `levels` levels with fan-out `arity` over 64-byte lines.
/// `None` on overflow.
pub fn tree_capacity(levels: u32, on_die_counter_slots: u64, arity: u64) -> Option<u128> {
    let fanout = (arity as u128).checked_pow(levels)?;
    (on_die_counter_slots as u128)
        .checked_mul(fanout)?
        .checked_mul(LINE_SIZE as u128)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Support {
    Yes,
    /// Only against an attacker who sees each ciphertext once.
    #[serde(rename = "Yes*")]
    YesCiphertextOnce,
    No,
}

impl fmt::Display for Support {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Support::Yes => "Yes",
            Support::YesCiphertextOnce => "Yes*",
            Support::No => "No",
        })
    }
}

/// One row of the client SGX versus SGX-TEM comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProtectionRow {
    pub property: &'static str,
    pub sw_sgx: Support,
    pub sw_tem: Support,
    pub hw_sgx: Support,
    pub hw_tem: Support,
}

pub fn protection_matrix() -> [ProtectionRow; 3] {
    use Support::*;
    [
        ProtectionRow {
            property: "Loss of Confidentiality",
            sw_sgx: Yes,
            sw_tem: Yes,
            hw_sgx: Yes,
            hw_tem: YesCiphertextOnce,
        },
        ProtectionRow {
            property: "Loss of Integrity",
            sw_sgx: Yes,
            sw_tem: Yes,
            hw_sgx: Yes,
            hw_tem: No,
        },
        ProtectionRow {
            property: "Anti-Replay",
            sw_sgx: Yes,
            sw_tem: Yes,
            hw_sgx: Yes,
            hw_tem: No,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_examples() {
        assert_eq!(tree_capacity(0, 1, 8), Some(64));
        assert_eq!(tree_capacity(3, 4, 8), Some(4 * 512 * 64));
        assert_eq!(tree_capacity(u32::MAX, 1, 8), None);
    }

    #[test]
    fn software_column_all_yes() {
        for row in protection_matrix() {
            assert_eq!((row.sw_sgx, row.sw_tem), (Support::Yes, Support::Yes));
            assert_eq!(row.hw_sgx, Support::Yes);
        }
    }
}
