use std::fmt;

use serde::Serialize;

use super::config::{AdversaryStep, ScenarioConfig};
use super::fabric::{FabricError, Sent};
use super::report::StepStatus;
use super::world::{dimm_tampered, World};
use super::HarnessError;
use crate::crypto::SimRng;
use crate::link::{adversary_act, AddressRange, AdversaryAction, CoherencyRequest, LINE_SIZE};
use crate::memory::{
    attack_directory_corruption, attack_epc_reclaim, attack_inside_in, attack_outside_in,
    attack_reset, AddressMap, AttackObservation, Memory, LEAK_WINDOW,
};

pub const MEMORY_THREATS: [&str; 4] = [
    "Reset",
    "Aliasing/EPC Replay",
    "EPC Reclaim",
    "DIMM Config. Attacks",
];
pub const LINK_THREATS: [&str; 5] = [
    "Eavesdropping",
    "Tampering",
    "Replay",
    "Directory Corruption",
    "Misconfiguration",
];

/// Ordered from best to worst for the platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Mitigated,
    Detected,
    NotApplicable,
    Unmitigated,
    Exploited,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Mitigated => "mitigated",
            Outcome::Detected => "detected",
            Outcome::NotApplicable => "not applicable",
            Outcome::Unmitigated => "unmitigated",
            Outcome::Exploited => "exploited",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Memory,
    Link,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MatrixRow {
    pub category: Category,
    pub threat: &'static str,
    pub outcome: Outcome,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Default)]
pub struct AttackMatrix {
    pub rows: Vec<MatrixRow>,
}

impl AttackMatrix {
    pub fn row(&self, threat: &str) -> Option<&MatrixRow> {
        self.rows.iter().find(|r| r.threat == threat)
    }

    pub fn category(&self, category: Category) -> impl Iterator<Item = &MatrixRow> {
        self.rows.iter().filter(move |r| r.category == category)
    }

    /// Threats whose outcome differs between the two matrices.
    pub fn diff<'a>(&'a self, other: &'a AttackMatrix) -> Vec<&'static str> {
        self.rows
            .iter()
            .filter(|r| other.row(r.threat).map(|o| o.outcome) != Some(r.outcome))
            .map(|r| r.threat)
            .collect()
    }
}

const SECRET_STREAM: u64 = 0x7365_6372;
const LINK_STREAM: u64 = 0x6c69_6e6b;
/// Secure writes queued on the link before each adversary action.
const LINK_BATCH: usize = 4;

/// Run every memory attack and the scenario's link adversary script
/// against a platform booted from `config`.
pub fn run_attack_suite(config: &ScenarioConfig) -> Result<AttackMatrix, HarnessError> {
    let mut world = World::new(config)?;
    let boot = world.establish(None);
    if boot.status != StepStatus::Ok {
        return Err(HarnessError::PlatformDidNotBoot(boot.detail));
    }
    let mut rows = memory_rows(&mut world);
    if !config.adversary.is_empty() {
        rows.extend(link_rows(&mut world)?);
    }
    Ok(AttackMatrix { rows })
}

fn epc_memory(config: &ScenarioConfig, rng: &mut SimRng) -> (Memory, Vec<[u8; LINE_SIZE]>) {
    let m = &config.memory;
    let epc = AddressRange::new(m.epc_first_line * 64, m.epc_lines * 64);
    let mut mem = Memory::new(
        AddressMap::identity(m.lines_per_package, epc),
        config.mitigations,
        rng.fork(0),
    );
    mem.reenable_after_establishment();
    let addrs: Vec<u64> = mem.map().epc_addresses().collect();
    let secrets: Vec<[u8; LINE_SIZE]> = addrs
        .into_iter()
        .map(|a| {
            let s: [u8; LINE_SIZE] = rng.array();
            mem.write_line(a, &s, true).expect("EPC is writable");
            s
        })
        .collect();
    (mem, secrets)
}

fn leak_row(
    threat: &'static str,
    obs: &AttackObservation,
    secrets: &[[u8; LINE_SIZE]],
) -> MatrixRow {
    let (outcome, detail) = if obs.leaks(secrets) {
        (
            Outcome::Exploited,
            "enclave plaintext recovered through the non-secure path".to_string(),
        )
    } else {
        (
            Outcome::Mitigated,
            format!(
                "{} lines read, no {LEAK_WINDOW}-byte run of any secret",
                obs.reads.len()
            ),
        )
    };
    MatrixRow {
        category: Category::Memory,
        threat,
        outcome,
        detail,
    }
}

fn memory_rows(world: &mut World) -> Vec<MatrixRow> {
    let config = world.config.clone();
    let mut rng = SimRng::from_seed(config.seed).fork(SECRET_STREAM);
    let mut rows = Vec::new();

    let (mut mem, secrets) = epc_memory(&config, &mut rng);
    rows.push(leak_row(
        MEMORY_THREATS[0],
        &attack_reset(&mut mem),
        &secrets,
    ));

    let m = &config.memory;
    let epc = AddressRange::new(m.epc_first_line * 64, m.epc_lines * 64);
    let outside_line = if m.epc_first_line > 0 {
        0
    } else {
        m.epc_first_line + m.epc_lines
    };
    let outside = (outside_line < m.lines_per_package)
        .then(|| {
            let mut map = AddressMap::identity(m.lines_per_package, epc);
            map.remap(outside_line * 64, m.epc_first_line).ok()?;
            let mut mem = Memory::new(map, config.mitigations, rng.fork(1));
            mem.reenable_after_establishment();
            for a in mem.map().epc_addresses().collect::<Vec<_>>() {
                mem.write_line(a, &[0x11; LINE_SIZE], true)
                    .expect("EPC is writable");
            }
            Some(attack_outside_in(&mut mem, &[0x41; LINE_SIZE]))
        })
        .flatten();
    let inside = if m.epc_lines > 1 {
        let mut map = AddressMap::identity(m.lines_per_package, epc);
        map.remap(epc.base + 64, m.epc_first_line)
            .ok()
            .map(|()| attack_inside_in(&map))
    } else {
        None
    };
    let outside_caught = outside.map(|o| o.detected && o.sgx_disabled);
    let inside_caught = inside.map(|o| o.detected && o.sgx_disabled);
    let (outcome, detail) = match (outside_caught, inside_caught) {
        (Some(false), _) | (_, Some(false)) => {
            (Outcome::Exploited, "an alias went unnoticed".to_string())
        }
        (None, None) => (
            Outcome::NotApplicable,
            "memory too small to alias".to_string(),
        ),
        (o, i) => (
            Outcome::Detected,
            format!(
                "outside-in {}, inside-in {}",
                if o.is_some() {
                    "poisoned on enclave read"
                } else {
                    "not possible"
                },
                if i.is_some() {
                    "caught by boot scan"
                } else {
                    "not possible"
                }
            ),
        ),
    };
    rows.push(MatrixRow {
        category: Category::Memory,
        threat: MEMORY_THREATS[1],
        outcome,
        detail,
    });

    let (mut mem, secrets) = epc_memory(&config, &mut rng);
    let epc_range = mem.map().epc();
    rows.push(leak_row(
        MEMORY_THREATS[2],
        &attack_epc_reclaim(&mut mem, epc_range),
        &secrets,
    ));

    let master = world.state.as_ref().map_or(0, |s| s.master);
    let target = world
        .packages
        .iter()
        .map(|p| p.package_id)
        .find(|&p| p != master)
        .unwrap_or(master);
    let bios = dimm_tampered(&world.bios, target);
    world.power_cycle();
    let boot = world.boot(&bios);
    let outcome = match boot.status {
        StepStatus::Detected | StepStatus::SgxDisabled => Outcome::Detected,
        _ => Outcome::Exploited,
    };
    rows.push(MatrixRow {
        category: Category::Memory,
        threat: MEMORY_THREATS[3],
        outcome,
        detail: boot.detail,
    });
    rows
}

fn link_threat(action: &AdversaryStep) -> &'static str {
    match action {
        AdversaryStep::Sniff => LINK_THREATS[0],
        AdversaryStep::Tamper { .. } | AdversaryStep::Drop { .. } => LINK_THREATS[1],
        AdversaryStep::Replay { .. } | AdversaryStep::StripSecureFlag { .. } => LINK_THREATS[2],
        AdversaryStep::CorruptDirectory { .. } => LINK_THREATS[3],
        AdversaryStep::Misconfigure { .. } => LINK_THREATS[4],
    }
}

fn link_rows(world: &mut World) -> Result<Vec<MatrixRow>, HarnessError> {
    let config = world.config.clone();
    // The DIMM check leaves the platform disabled; start clean.
    let boot = world.establish(None);
    if boot.status != StepStatus::Ok {
        return Err(HarnessError::PlatformDidNotBoot(boot.detail));
    }
    let mut rng = SimRng::from_seed(config.seed).fork(LINK_STREAM);
    let mut results: Vec<(&'static str, Outcome, String)> = Vec::new();
    for (i, action) in config.adversary.iter().enumerate() {
        let (outcome, detail) = match action {
            AdversaryStep::CorruptDirectory { package, line } => {
                let mem = world.memories.get_mut(package).expect("validated package");
                let obs = attack_directory_corruption(mem, line * 64, 0b11);
                if obs.silent_corruption {
                    (
                        Outcome::Unmitigated,
                        format!("directory bits of package {package} line {line} flipped, nothing noticed"),
                    )
                } else {
                    (Outcome::Mitigated, "directory bits unchanged".into())
                }
            }
            AdversaryStep::Misconfigure { package } => {
                let mut probe = World::new(&config)?;
                probe.establish(None);
                let r = probe.reboot(None, None, Some(*package));
                match r.status {
                    StepStatus::Detected | StepStatus::SgxDisabled => (Outcome::Detected, r.detail),
                    _ => (
                        Outcome::Exploited,
                        format!("misreported topology accepted: {}", r.detail),
                    ),
                }
            }
            link => link_trial(world, link, &mut rng),
        };
        log::debug!("adversary[{i}] {action:?}: {outcome}");
        results.push((link_threat(action), outcome, detail));
    }
    Ok(LINK_THREATS
        .iter()
        .map(|&threat| {
            let mine: Vec<&(&str, Outcome, String)> =
                results.iter().filter(|r| r.0 == threat).collect();
            match mine.iter().max_by_key(|r| r.1) {
                Some(worst) => MatrixRow {
                    category: Category::Link,
                    threat,
                    outcome: worst.1,
                    detail: mine
                        .iter()
                        .map(|r| r.2.as_str())
                        .collect::<Vec<_>>()
                        .join("; "),
                },
                None => MatrixRow {
                    category: Category::Link,
                    threat,
                    outcome: Outcome::NotApplicable,
                    detail: "not exercised by the adversary script".into(),
                },
            }
        })
        .collect())
}

/// Queue a batch of secure writes from the master to a peer's EPC, let the
/// adversary act on the wire, then deliver whatever is left.
fn link_trial(world: &mut World, action: &AdversaryStep, rng: &mut SimRng) -> (Outcome, String) {
    let Some(master) = world.state.as_ref().map(|s| s.master) else {
        return (Outcome::NotApplicable, "platform not booted".into());
    };
    let span = world.span();
    let trial = world.with_fabric(|fabric, mems| {
        let topo = fabric.topology().clone();
        let Some(peer) = topo
            .memory
            .iter()
            .find(|m| m.package != master && topo.linked(master, m.package))
        else {
            return (Outcome::NotApplicable, "no inter-package link".into());
        };
        let peer_id = peer.package;
        let slots = peer.epc.size / 64;
        let mut sent = Vec::new();
        for _ in 0..LINK_BATCH {
            let addr = peer.epc.base + rng.below(slots) * 64;
            let data: [u8; LINE_SIZE] = rng.array();
            match fabric.send(CoherencyRequest::write(master, addr, data), mems) {
                Ok(Sent::Forwarded { .. }) => sent.push((addr, data)),
                other => {
                    return (
                        Outcome::NotApplicable,
                        format!("write did not cross the link: {other:?}"),
                    )
                }
            }
        }
        let wire_action = match *action {
            AdversaryStep::Sniff => AdversaryAction::Sniff,
            AdversaryStep::Tamper {
                index,
                offset,
                mask,
            } => AdversaryAction::Tamper {
                index,
                offset,
                mask,
            },
            AdversaryStep::Drop { index } => AdversaryAction::Drop { index },
            AdversaryStep::Replay { index } => AdversaryAction::Replay { index },
            AdversaryStep::StripSecureFlag { index } => AdversaryAction::StripSecureFlag {
                index,
                target_address: peer.epc.base,
            },
            _ => unreachable!("memory and BIOS actions are handled by the caller"),
        };
        let channel = fabric.channel_mut(master, peer_id).expect("linked");
        adversary_act(channel, &wire_action);
        let captured = channel.adversary_log().to_vec();
        let pending = channel.in_flight_len();

        let mut alarms: Vec<String> = Vec::new();
        for _ in 0..pending.max(LINK_BATCH) {
            match fabric.serve_one(master, peer_id, mems) {
                Ok(_) => {}
                Err(FabricError::Timeout { .. }) => alarms.push("completion timed out".into()),
                Err(FabricError::Link(e)) if e.is_security_event() => alarms.push(e.to_string()),
                Err(e) => alarms.push(format!("request failed: {e}")),
            }
        }

        if let AdversaryStep::Sniff = action {
            let leaked = captured.iter().any(|pkt| {
                sent.iter().any(|(_, d)| {
                    d.windows(LEAK_WINDOW)
                        .any(|w| pkt.windows(LEAK_WINDOW).any(|p| p == w))
                })
            });
            return if leaked {
                (
                    Outcome::Exploited,
                    "payload plaintext visible on the wire".into(),
                )
            } else {
                (
                    Outcome::Mitigated,
                    format!("{} packets captured, only ciphertext", captured.len()),
                )
            };
        }
        if !alarms.is_empty() {
            return (
                Outcome::Detected,
                format!("receiver raised: {}", alarms.join(", ")),
            );
        }
        let mem = mems.get_mut(&peer_id).expect("peer memory");
        let intact = sent.iter().all(|(addr, _)| {
            let last = sent.iter().rev().find(|(a, _)| a == addr).map(|(_, d)| *d);
            mem.read_line(addr - peer_id as u64 * span, true)
                .ok()
                .map(|r| r.data)
                == last
        });
        if intact {
            (Outcome::Mitigated, "adversary action had no effect".into())
        } else {
            (
                Outcome::Exploited,
                "memory changed without any alarm".into(),
            )
        }
    });
    trial.unwrap_or((Outcome::NotApplicable, "SGX is not enabled".into()))
}
