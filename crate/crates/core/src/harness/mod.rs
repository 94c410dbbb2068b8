//! Scenario runner: wires packages, BIOS, the registration service, memory
//! and links together and drives them through a scripted lifecycle.

mod config;
mod fabric;
mod report;
mod serve;
mod store;
mod suite;
mod world;

use std::path::Path;

use thiserror::Error;

pub use config::{
    bundled_scenario, AddressOverride, AdversaryStep, CertVariant, Expect, FaultSpec,
    MemorySection, ScenarioConfig, Step, BUNDLED_SCENARIOS,
};
pub use fabric::{Fabric, FabricError, Sent};
pub use report::{
    cross_check_protection_matrix, CrossCheck, RunReport, SgxReport, StepOutcome, StepReport,
    StepStatus,
};
pub use serve::{
    handle_request, serve_registration, RegistrationClient, ServiceHandle, ServiceRequest,
    ServiceResponse,
};
pub use store::Store;
pub use suite::{
    run_attack_suite, AttackMatrix, Category, MatrixRow, Outcome, LINK_THREATS, MEMORY_THREATS,
};
pub use world::{factory_key, service_secret, World};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error("invalid config at {path}: {reason}")]
    ConfigInvalid { path: String, reason: String },
    #[error("cannot bind {0}")]
    BindFailure(String),
    #[error("store {path}: {reason}")]
    Store { path: String, reason: String },
    #[error("platform did not boot: {0}")]
    PlatformDidNotBoot(String),
    #[error("service transport: {0}")]
    Transport(String),
}

/// Run every scripted step and collect the report. With a work directory
/// the blobs, registry and quotes are persisted there as well.
pub fn run_scenario(
    config: &ScenarioConfig,
    workdir: Option<&Path>,
) -> Result<RunReport, HarnessError> {
    let mut world = World::new(config)?;
    let store = workdir.map(Store::open).transpose()?;
    let mut steps = Vec::new();
    let mut attack_matrix = None;
    for (index, step) in config.steps.iter().enumerate() {
        let outcome = match step {
            Step::Establish { fault, .. } => world.establish(fault.as_ref()),
            Step::Reboot {
                tamper_blob,
                fw_bump,
                misconfigure,
                ..
            } => world.reboot(*tamper_blob, *fw_bump, *misconfigure),
            Step::Register { .. } => world.register(),
            Step::Quote {
                tcb_level,
                user_data,
                ..
            } => world.quote(*tcb_level, user_data.as_bytes()),
            Step::AddPackage { cert, .. } => world.add_package(*cert),
            Step::KeyRequests { count, .. } => world.key_requests(*count),
            Step::Coherency { transfers, .. } => world.coherency(*transfers),
            Step::AliasProbe { package, .. } => world.alias_probe(*package),
            Step::AttackSuite => match run_attack_suite(config) {
                Ok(m) => {
                    let detail = format!(
                        "{} threats evaluated, {} unmitigated or exploited",
                        m.rows.len(),
                        m.rows
                            .iter()
                            .filter(|r| r.outcome >= Outcome::Unmitigated)
                            .count()
                    );
                    attack_matrix = Some(m);
                    StepOutcome::new(StepStatus::Ok, detail)
                }
                Err(e) => StepOutcome::new(StepStatus::Error, e.to_string()),
            },
        };
        log::info!(
            "step {index} {}: {:?} {}",
            step.name(),
            outcome.status,
            outcome.detail
        );
        let expected = step.expect();
        steps.push(StepReport {
            index,
            action: step.name(),
            as_expected: expected.map_or(outcome.status != StepStatus::Error, |e| {
                outcome.status.satisfies(e)
            }),
            outcome: outcome.status,
            detail: outcome.detail,
            expected,
        });
        if let Some(store) = &store {
            store.save_world(&world)?;
        }
    }
    let (enabled, phase, disable_reason) = match &world.state {
        Some(s) => (
            s.sgx_usable(),
            s.phase.to_string(),
            s.disable_reason.clone(),
        ),
        None => {
            let reason = world
                .memories
                .values()
                .find_map(|m| m.status().disable_reason.clone());
            (false, "unestablished".to_string(), reason)
        }
    };
    Ok(RunReport {
        scenario: config.name.clone(),
        seed: config.seed,
        mitigations: config.mitigations,
        platform_instance_id: world
            .state
            .as_ref()
            .map(|s| s.platform_instance_id.to_hex()),
        steps,
        security_events: world.events.clone(),
        sgx_status: SgxReport {
            enabled,
            phase,
            disable_reason,
        },
        attack_matrix,
        protection_matrix: cross_check_protection_matrix(config.seed),
    })
}
