use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::package::PackageId;

/// One scenario file. See the README for the full grammar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    pub package_count: u32,
    #[serde(default = "default_fw")]
    pub fw_version: u32,
    /// Undirected package links. Defaults to a full mesh.
    #[serde(default)]
    pub links: Option<Vec<(PackageId, PackageId)>>,
    #[serde(default = "default_true")]
    pub mitigations: bool,
    #[serde(default = "default_service")]
    pub service_id: String,
    #[serde(default = "default_tcb_levels")]
    pub tcb_levels: Vec<u32>,
    /// Allow-list file. Without one, every package the scenario
    /// manufactures is vetted.
    #[serde(default)]
    pub vetting_list: Option<PathBuf>,
    #[serde(default)]
    pub memory: MemorySection,
    #[serde(default)]
    pub adversary: Vec<AdversaryStep>,
    #[serde(default)]
    pub steps: Vec<Step>,
}

fn default_name() -> String {
    "scenario".into()
}
fn default_fw() -> u32 {
    1
}
fn default_true() -> bool {
    true
}
fn default_service() -> String {
    "registration-service".into()
}
fn default_tcb_levels() -> Vec<u32> {
    vec![1, 2, 3]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySection {
    pub lines_per_package: u64,
    pub epc_first_line: u64,
    pub epc_lines: u64,
    pub overrides: Vec<AddressOverride>,
}

impl Default for MemorySection {
    fn default() -> Self {
        Self {
            lines_per_package: 256,
            epc_first_line: 128,
            epc_lines: 64,
            overrides: Vec::new(),
        }
    }
}

/// Decode package-local `system_address` to `physical_line`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddressOverride {
    pub package: PackageId,
    pub system_address: u64,
    pub physical_line: u64,
}

/// Link and memory adversary actions used by the attack suite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversaryStep {
    Sniff,
    Tamper {
        index: usize,
        offset: usize,
        mask: u8,
    },
    Replay {
        index: usize,
    },
    Drop {
        index: usize,
    },
    StripSecureFlag {
        index: usize,
    },
    CorruptDirectory {
        package: PackageId,
        line: u64,
    },
    Misconfigure {
        package: PackageId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertVariant {
    Valid,
    WrongPlatform,
    WrongPackage,
    WrongIssuer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultSpec {
    Drop {
        message: usize,
    },
    Flip {
        message: usize,
        offset: usize,
        mask: u8,
    },
    Replay {
        message: usize,
        earlier: usize,
    },
}

/// What a step is expected to end with; checked into the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expect {
    Ok,
    Rejected,
    Fallback,
    Detected,
    SgxDisabled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    Establish {
        #[serde(default)]
        fault: Option<FaultSpec>,
        #[serde(default)]
        expect: Option<Expect>,
    },
    Reboot {
        #[serde(default)]
        tamper_blob: Option<PackageId>,
        #[serde(default)]
        fw_bump: Option<PackageId>,
        #[serde(default)]
        misconfigure: Option<PackageId>,
        #[serde(default)]
        expect: Option<Expect>,
    },
    Register {
        #[serde(default)]
        expect: Option<Expect>,
    },
    Quote {
        tcb_level: u32,
        #[serde(default)]
        user_data: String,
        #[serde(default)]
        expect: Option<Expect>,
    },
    AddPackage {
        cert: CertVariant,
        #[serde(default)]
        expect: Option<Expect>,
    },
    KeyRequests {
        count: u32,
        #[serde(default)]
        expect: Option<Expect>,
    },
    Coherency {
        transfers: u32,
        #[serde(default)]
        expect: Option<Expect>,
    },
    /// Write an EPC line through its first non-EPC alias, then read it
    /// as the enclave would.
    AliasProbe {
        package: PackageId,
        #[serde(default)]
        expect: Option<Expect>,
    },
    AttackSuite,
}

impl Step {
    pub fn name(&self) -> &'static str {
        match self {
            Step::Establish { .. } => "establish",
            Step::Reboot { .. } => "reboot",
            Step::Register { .. } => "register",
            Step::Quote { .. } => "quote",
            Step::AddPackage { .. } => "add_package",
            Step::KeyRequests { .. } => "key_requests",
            Step::Coherency { .. } => "coherency",
            Step::AliasProbe { .. } => "alias_probe",
            Step::AttackSuite => "attack_suite",
        }
    }

    pub fn expect(&self) -> Option<Expect> {
        match self {
            Step::Establish { expect, .. }
            | Step::Reboot { expect, .. }
            | Step::Register { expect }
            | Step::Quote { expect, .. }
            | Step::AddPackage { expect, .. }
            | Step::KeyRequests { expect, .. }
            | Step::Coherency { expect, .. }
            | Step::AliasProbe { expect, .. } => *expect,
            Step::AttackSuite => None,
        }
    }
}

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> HarnessError {
    HarnessError::ConfigInvalid {
        path: path.into(),
        reason: reason.into(),
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid("<root>", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn package_ids(&self) -> Vec<PackageId> {
        (0..self.package_count).collect()
    }

    pub fn link_list(&self) -> Vec<(PackageId, PackageId)> {
        match &self.links {
            Some(l) => l.clone(),
            None => {
                let n = self.package_count;
                (0..n)
                    .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                    .collect()
            }
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.package_count == 0 || self.package_count > 64 {
            return Err(invalid("package_count", "must be between 1 and 64"));
        }
        for (i, &(a, b)) in self.link_list().iter().enumerate() {
            if a == b || a >= self.package_count || b >= self.package_count {
                return Err(invalid(
                    format!("links[{i}]"),
                    format!("bad link ({a}, {b})"),
                ));
            }
        }
        if self.tcb_levels.is_empty() {
            return Err(invalid("tcb_levels", "at least one level required"));
        }
        if self.service_id.is_empty() {
            return Err(invalid("service_id", "must not be empty"));
        }
        let m = &self.memory;
        if m.lines_per_package == 0 || m.lines_per_package > 1 << 20 {
            return Err(invalid(
                "memory.lines_per_package",
                "must be between 1 and 2^20",
            ));
        }
        if m.epc_lines == 0 {
            return Err(invalid("memory.epc_lines", "must be at least 1"));
        }
        if m.epc_first_line
            .checked_add(m.epc_lines)
            .is_none_or(|e| e > m.lines_per_package)
        {
            return Err(invalid(
                "memory.epc_lines",
                "EPC runs past the end of package memory",
            ));
        }
        for (i, o) in m.overrides.iter().enumerate() {
            let path = format!("memory.overrides[{i}]");
            if o.package >= self.package_count {
                return Err(invalid(format!("{path}.package"), "no such package"));
            }
            if o.system_address % 64 != 0 || o.system_address / 64 >= m.lines_per_package {
                return Err(invalid(
                    format!("{path}.system_address"),
                    "unaligned or out of range",
                ));
            }
            if o.physical_line >= m.lines_per_package {
                return Err(invalid(format!("{path}.physical_line"), "out of range"));
            }
        }
        for (i, a) in self.adversary.iter().enumerate() {
            let pkg = match a {
                AdversaryStep::CorruptDirectory { package, line } => {
                    if *line >= m.lines_per_package {
                        return Err(invalid(format!("adversary[{i}].line"), "out of range"));
                    }
                    Some(*package)
                }
                AdversaryStep::Misconfigure { package } => Some(*package),
                _ => None,
            };
            if pkg.is_some_and(|p| p >= self.package_count) {
                return Err(invalid(
                    format!("adversary[{i}].package"),
                    "no such package",
                ));
            }
        }
        for (i, s) in self.steps.iter().enumerate() {
            match s {
                Step::Quote { tcb_level, .. } if !self.tcb_levels.contains(tcb_level) => {
                    return Err(invalid(
                        format!("steps[{i}].tcb_level"),
                        "not a registered level",
                    ));
                }
                Step::AliasProbe { package, .. } if *package >= self.package_count => {
                    return Err(invalid(format!("steps[{i}].package"), "no such package"));
                }
                Step::Reboot {
                    tamper_blob,
                    fw_bump,
                    misconfigure,
                    ..
                } => {
                    for (field, v) in [
                        ("tamper_blob", tamper_blob),
                        ("fw_bump", fw_bump),
                        ("misconfigure", misconfigure),
                    ] {
                        if v.is_some_and(|p| p >= self.package_count) {
                            return Err(invalid(format!("steps[{i}].{field}"), "no such package"));
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Scenario files shipped with the library.
pub const BUNDLED_SCENARIOS: &[(&str, &str)] = &[
    (
        "two_socket_establish",
        include_str!("scenarios/two_socket_establish.toml"),
    ),
    (
        "four_socket_establish",
        include_str!("scenarios/four_socket_establish.toml"),
    ),
    (
        "single_package",
        include_str!("scenarios/single_package.toml"),
    ),
    (
        "reboot_fallbacks",
        include_str!("scenarios/reboot_fallbacks.toml"),
    ),
    ("add_package", include_str!("scenarios/add_package.toml")),
    (
        "inside_in_alias",
        include_str!("scenarios/inside_in_alias.toml"),
    ),
    (
        "outside_in_alias",
        include_str!("scenarios/outside_in_alias.toml"),
    ),
    (
        "misconfiguration",
        include_str!("scenarios/misconfiguration.toml"),
    ),
    ("attack_suite", include_str!("scenarios/attack_suite.toml")),
];

pub fn bundled_scenario(name: &str) -> Option<ScenarioConfig> {
    BUNDLED_SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ScenarioConfig::from_toml(text).expect("bundled scenarios are valid"))
}
