use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mpsim::attestation::{verify_quote_bytes, Verdict};
use mpsim::harness::{
    bundled_scenario, run_attack_suite, run_scenario, serve_registration, service_secret,
    CertVariant, ScenarioConfig, StepOutcome, StepStatus, Store, World,
};
use mpsim::registration::{PckCache, RegistrationService, VettingList};

#[derive(Parser)]
#[command(
    name = "mpsim",
    version,
    about = "Multi-package SGX platform simulator"
)]
struct Cli {
    /// Scenario file. Defaults to the bundled two-socket scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding flash blobs, the registry and quotes.
    #[arg(long, global = true, default_value = "mpsim-work")]
    workdir: PathBuf,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    mitigations: Option<Toggle>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum CertArg {
    Valid,
    WrongPlatform,
    WrongPackage,
    WrongIssuer,
}

impl From<CertArg> for CertVariant {
    fn from(c: CertArg) -> Self {
        match c {
            CertArg::Valid => CertVariant::Valid,
            CertArg::WrongPlatform => CertVariant::WrongPlatform,
            CertArg::WrongPackage => CertVariant::WrongPackage,
            CertArg::WrongIssuer => CertVariant::WrongIssuer,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every scripted step of the scenario.
    Run,
    /// Establish a fresh platform and store its key blobs.
    Establish,
    /// Boot from stored blobs.
    Reboot {
        /// Corrupt this package's blob before booting.
        #[arg(long)]
        tamper_blob: Option<u32>,
    },
    /// Register the stored manifest and store the PCK certificates.
    Register,
    /// Boot, then add the next package under a membership certificate.
    AddPackage {
        #[arg(long, value_enum, default_value = "valid")]
        cert: CertArg,
    },
    /// Boot, then produce a quote at the given TCB level.
    Quote {
        #[arg(long, default_value_t = 1)]
        tcb_level: u32,
        #[arg(long, default_value = "")]
        user_data: String,
        /// File name under <workdir>/quotes.
        #[arg(long, default_value = "latest")]
        name: String,
    },
    /// Verify a quote file against the registration service key.
    Verify { quote: PathBuf },
    /// Run the attack suite and emit the threat matrix.
    Attack,
    /// Host the registration service until stdin closes.
    Serve {
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
        /// Allow-list of package public keys, one hex key per line.
        #[arg(long)]
        vetting_list: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            ScenarioConfig::from_toml(&text)?
        }
        None => bundled_scenario("two_socket_establish").expect("bundled scenario exists"),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(t) = cli.mitigations {
        cfg.mitigations = matches!(t, Toggle::On);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(cli: &Cli, json: &str) -> Result<()> {
    match &cli.report {
        Some(path) => {
            std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn say(verb: &str, outcome: &StepOutcome) {
    println!("{verb}: {} ({})", outcome.status, outcome.detail);
}

/// Rebuild the platform from the work directory and boot it.
fn boot_from_store(world: &mut World, store: &Store) -> Result<StepOutcome> {
    let blobs = store.load_blobs()?;
    if blobs.is_empty() {
        bail!(
            "no key blobs in {}; run `establish` first",
            store.root().join("flash").display()
        );
    }
    let ids: Vec<u32> = blobs.keys().copied().collect();
    world.adopt_packages(&ids)?;
    world.blobs = blobs;
    world.manifest = store.load_manifest()?;
    world.set_reset_epoch(store.load_reset_epoch()?);
    Ok(world.reboot(None, None, None))
}

/// Make this process's copy of the service aware of the stored platform.
fn restore_registration(world: &mut World, store: &Store) -> Result<()> {
    let Some(manifest) = store.load_manifest()? else {
        bail!("no manifest in the work directory; run `establish` first");
    };
    if !world.service.is_registered(&manifest.platform_instance_id) {
        world.manifest = Some(manifest);
        let out = world.register();
        if out.status != StepStatus::Ok {
            bail!("stored platform cannot be registered: {}", out.detail);
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Run => {
            let report = run_scenario(&cfg, Some(&cli.workdir))?;
            if !report.all_expectations_met() {
                eprintln!("warning: some steps did not end as the scenario expected");
            }
            emit(&cli, &report.to_json())?;
        }
        Command::Attack => {
            let matrix = run_attack_suite(&cfg)?;
            emit(&cli, &(serde_json::to_string_pretty(&matrix)? + "\n"))?;
        }
        Command::Establish => {
            let store = Store::open(&cli.workdir)?;
            let mut world = World::new(&cfg)?;
            let out = world.establish(None);
            store.save_world(&world)?;
            say("establish", &out);
        }
        Command::Reboot { tamper_blob } => {
            let store = Store::open(&cli.workdir)?;
            let mut world = World::new(&cfg)?;
            if let Some(id) = tamper_blob {
                let mut blobs = store.load_blobs()?;
                let blob = blobs
                    .get_mut(id)
                    .with_context(|| format!("no blob for package {id}"))?;
                let mid = blob.sealed.ciphertext.len() / 2;
                blob.sealed.ciphertext[mid] ^= 1;
                store.save_blobs(&blobs)?;
            }
            let out = boot_from_store(&mut world, &store)?;
            store.save_world(&world)?;
            say("reboot", &out);
        }
        Command::Register => {
            let store = Store::open(&cli.workdir)?;
            let mut world = World::new(&cfg)?;
            world.manifest = store.load_manifest()?;
            if world.manifest.is_none() {
                bail!("no manifest in the work directory; run `establish` first");
            }
            let out = world.register();
            store.save_world(&world)?;
            say("register", &out);
        }
        Command::AddPackage { cert } => {
            let store = Store::open(&cli.workdir)?;
            let mut world = World::new(&cfg)?;
            restore_registration(&mut world, &store)?;
            let boot = boot_from_store(&mut world, &store)?;
            if boot.status != StepStatus::Ok {
                say("reboot", &boot);
            }
            let out = world.add_package((*cert).into());
            store.save_world(&world)?;
            say("add-package", &out);
        }
        Command::Quote {
            tcb_level,
            user_data,
            name,
        } => {
            let store = Store::open(&cli.workdir)?;
            let mut world = World::new(&cfg)?;
            restore_registration(&mut world, &store)?;
            let boot = boot_from_store(&mut world, &store)?;
            if boot.status != StepStatus::Ok {
                say("reboot", &boot);
            }
            let out = world.quote(*tcb_level, user_data.as_bytes());
            store.save_world(&world)?;
            if let Some(q) = world.quotes.last() {
                let path = store.save_quote(name, q)?;
                println!("quote written to {}", path.display());
            }
            say("quote", &out);
        }
        Command::Verify { quote } => {
            let bytes =
                std::fs::read(quote).with_context(|| format!("reading {}", quote.display()))?;
            let store = Store::open(&cli.workdir)?;
            let root = match store.load_service_key()? {
                Some(k) => k,
                None => World::new(&cfg)?.service.public_key().clone(),
            };
            match verify_quote_bytes(&bytes, &root) {
                Verdict::Accepted(body) => println!(
                    "verify: accepted (platform {}, tcb {}, measurement {})",
                    body.platform_instance_id,
                    body.tcb_level,
                    body.measurement.to_hex()
                ),
                Verdict::Rejected(link) => println!("verify: rejected at {link}"),
            }
        }
        Command::Serve {
            listen,
            vetting_list,
        } => {
            let vetting = match vetting_list.as_ref().or(cfg.vetting_list.as_ref()) {
                Some(path) => load_vetting(path)?,
                None => {
                    let world = World::new(&cfg)?;
                    VettingList::from_keys(world.packages.iter().map(|p| p.public_key()))
                }
            };
            let service = Arc::new(RegistrationService::new(
                &cfg.service_id,
                &service_secret(cfg.seed),
                vetting,
                Arc::new(PckCache::new()),
            ));
            let handle = serve_registration(listen, service)?;
            println!("listening on {}", handle.local_addr());
            let mut sink = Vec::new();
            std::io::stdin().read_to_end(&mut sink)?;
            handle.shutdown();
            println!("stopped");
        }
    }
    Ok(())
}

fn load_vetting(path: &Path) -> Result<VettingList> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    VettingList::parse(&text).with_context(|| format!("parsing {}", path.display()))
}
