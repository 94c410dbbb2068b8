use std::collections::BTreeMap;
use std::sync::Arc;

use super::config::{CertVariant, FaultSpec, ScenarioConfig};
use super::fabric::Fabric;
use super::report::{StepOutcome, StepStatus};
use super::HarnessError;
use crate::attestation::{generate_quote, provision_attestation_key, verify_quote, Quote, Verdict};
use crate::crypto::{keypair_from_seed, Digest, SimRng, SymmetricKey};
use crate::establishment::{
    add_package, build_add_request, establish_platform, reboot_platform, BiosConfig,
    EstablishmentError, Fault, FaultInjector, Mailbox, MemoryConfig, PlatformInfo,
    PlatformManifest, PlatformState,
};
use crate::link::{AddressRange, CoherencyRequest, PackageMemory, Topology, LINE_SIZE};
use crate::memory::{attack_outside_in, boot_alias_scan, AddressMap, Memory};
use crate::package::{KeyBlob, KeyClass, KeyRequest, PackageId, PackageIdentity};
use crate::registration::{
    fetch_pck_certificate, MembershipCertificate, PckCache, PckCertificate, RegistrationService,
    VettingList,
};

const FACTORY_STREAM: u64 = 0x6661_6374;
const SERVICE_STREAM: u64 = 0x7376_6365;
const ROGUE_STREAM: u64 = 0x726f_6775;
const WORLD_STREAM: u64 = 0x776f_726c;
const MEMORY_STREAM: u64 = 0x6d65_6d00;

/// Package ids used for the unrelated platform in wrong-platform checks.
const DECOY_IDS: [PackageId; 2] = [1000, 1001];
/// How many add-package candidates are pre-vetted beyond the initial set.
const SPARE_PACKAGES: u32 = 4;

pub fn factory_key(seed: u64) -> SymmetricKey {
    SimRng::from_seed(seed).fork(FACTORY_STREAM).key("factory")
}

pub fn service_secret(seed: u64) -> SymmetricKey {
    SimRng::from_seed(seed)
        .fork(SERVICE_STREAM)
        .key("service-secret")
}

/// Everything a scenario needs: packages, BIOS, memories, the registration
/// service and the firmware state of the platform under test.
pub struct World {
    pub config: ScenarioConfig,
    pub packages: Vec<PackageIdentity>,
    pub maps: BTreeMap<PackageId, AddressMap>,
    pub memories: BTreeMap<PackageId, Memory>,
    pub bios: BiosConfig,
    pub service: Arc<RegistrationService>,
    pub blobs: BTreeMap<PackageId, KeyBlob>,
    pub manifest: Option<PlatformManifest>,
    pub state: Option<PlatformState>,
    pub pck_certs: Vec<PckCertificate>,
    pub quotes: Vec<Quote>,
    pub events: Vec<String>,
    pub rng: SimRng,
    reset_epoch: u64,
    establishments: u64,
    link_fabric: Option<Fabric>,
}

impl World {
    pub fn new(config: &ScenarioConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let factory = factory_key(config.seed);
        let packages: Vec<PackageIdentity> = config
            .package_ids()
            .into_iter()
            .map(|id| PackageIdentity::from_factory(&factory, id, config.fw_version))
            .collect();
        let vetting = match &config.vetting_list {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| HarnessError::ConfigInvalid {
                        path: "vetting_list".into(),
                        reason: format!("{}: {e}", path.display()),
                    })?;
                VettingList::parse(&text).map_err(|e| HarnessError::ConfigInvalid {
                    path: "vetting_list".into(),
                    reason: e.to_string(),
                })?
            }
            None => default_vetting(config),
        };
        let service = Arc::new(RegistrationService::new(
            &config.service_id,
            &service_secret(config.seed),
            vetting,
            Arc::new(PckCache::new()),
        ));
        let mut rng = SimRng::from_seed(config.seed).fork(WORLD_STREAM);
        let mut mem_rng = rng.fork(MEMORY_STREAM);
        let mut maps = BTreeMap::new();
        let mut memories = BTreeMap::new();
        for &id in &config.package_ids() {
            let map = package_map(config, id)?;
            memories.insert(
                id,
                Memory::new(map.clone(), config.mitigations, mem_rng.fork(id as u64)),
            );
            maps.insert(id, map);
        }
        let bios = BiosConfig::new(platform_info(config, &packages, &maps, config.link_list()));
        Ok(Self {
            config: config.clone(),
            packages,
            maps,
            memories,
            bios,
            service,
            blobs: BTreeMap::new(),
            manifest: None,
            state: None,
            pck_certs: Vec::new(),
            quotes: Vec::new(),
            events: Vec::new(),
            rng,
            reset_epoch: 0,
            establishments: 0,
            link_fabric: None,
        })
    }

    pub fn span(&self) -> u64 {
        self.config.memory.lines_per_package * LINE_SIZE as u64
    }

    pub fn topology(&self) -> Topology {
        let span = self.span();
        let m = &self.config.memory;
        Topology {
            memory: self
                .packages
                .iter()
                .map(|p| {
                    let base = p.package_id as u64 * span;
                    PackageMemory {
                        package: p.package_id,
                        dram: AddressRange::new(base, span),
                        epc: AddressRange::new(base + m.epc_first_line * 64, m.epc_lines * 64),
                    }
                })
                .collect(),
            links: self.bios.platform_info.link_topology.clone(),
        }
    }

    /// The live link fabric for the current boot. Link counters only ever
    /// move forward, so the same fabric is handed out until the platform
    /// state changes.
    pub fn fabric(&mut self) -> Option<&mut Fabric> {
        if self.link_fabric.is_none() {
            let state = self.state.as_ref().filter(|s| s.sgx_usable())?;
            self.link_fabric = Some(Fabric::new(self.topology(), self.span(), state));
        }
        self.link_fabric.as_mut()
    }

    /// Run `f` with the live fabric and the package memories behind it.
    pub fn with_fabric<R>(
        &mut self,
        f: impl FnOnce(&mut Fabric, &mut BTreeMap<PackageId, Memory>) -> R,
    ) -> Option<R> {
        self.fabric()?;
        let fabric = self.link_fabric.as_mut().expect("fabric built above");
        Some(f(fabric, &mut self.memories))
    }

    fn set_state(&mut self, state: Option<PlatformState>) {
        self.state = state;
        self.link_fabric = None;
    }

    /// Bring in packages that joined in an earlier run, each linked to the
    /// master, so the BIOS view matches the one their blobs were sealed for.
    pub fn adopt_packages(&mut self, ids: &[PackageId]) -> Result<(), HarnessError> {
        let factory = factory_key(self.config.seed);
        for &id in ids {
            if self.packages.iter().any(|p| p.package_id == id) {
                continue;
            }
            let master = self.bios.master_for(&self.packages).unwrap_or(0);
            self.add_memory(id)?;
            self.packages.push(PackageIdentity::from_factory(
                &factory,
                id,
                self.config.fw_version,
            ));
            let mut links = self.bios.platform_info.link_topology.clone();
            links.push((master, id));
            self.bios.platform_info =
                platform_info(&self.config, &self.packages, &self.maps, links);
        }
        Ok(())
    }

    pub fn reset_epoch(&self) -> u64 {
        self.reset_epoch
    }

    /// Continue counting resets from an earlier run.
    pub fn set_reset_epoch(&mut self, epoch: u64) {
        self.reset_epoch = epoch;
    }

    pub fn sgx_enabled(&self) -> bool {
        self.state.as_ref().is_some_and(|s| s.sgx_usable())
    }

    fn event(&mut self, text: String) {
        log::info!("security event: {text}");
        self.events.push(text);
    }

    /// Package-local memory for a package id beyond the configured count.
    fn add_memory(&mut self, id: PackageId) -> Result<(), HarnessError> {
        let map = AddressMap::new(
            self.config.memory.lines_per_package,
            epc_local(&self.config),
            std::iter::empty(),
        )
        .map_err(|e| HarnessError::ConfigInvalid {
            path: "memory".into(),
            reason: e.to_string(),
        })?;
        let mut rng = self.rng.fork(MEMORY_STREAM ^ id as u64);
        self.memories.insert(
            id,
            Memory::new(map.clone(), self.config.mitigations, rng.fork(0)),
        );
        self.maps.insert(id, map);
        Ok(())
    }

    /// The BIOS alias check that must pass before SGX can be enabled.
    fn alias_check(&mut self) -> Result<(), String> {
        for (id, map) in &self.maps {
            if let Err(found) = boot_alias_scan(map) {
                let reason = format!("boot alias scan, package {id}: {found}");
                for mem in self.memories.values_mut() {
                    mem.disable_sgx(reason.clone());
                }
                return Err(reason);
            }
        }
        for mem in self.memories.values_mut() {
            mem.reenable_after_establishment();
        }
        Ok(())
    }

    pub fn establish(&mut self, fault: Option<&FaultSpec>) -> StepOutcome {
        self.set_state(None);
        if let Err(reason) = self.alias_check() {
            self.event(reason.clone());
            return StepOutcome::new(
                StepStatus::SgxDisabled,
                format!("alias found, SGX not enabled: {reason}"),
            );
        }
        let mut mbox = match fault {
            None => Mailbox::new(),
            Some(spec) => Mailbox::with_adversary(Box::new(injector(spec))),
        };
        self.establishments += 1;
        let mut rng = self.rng.fork(0x6573_7462 + self.establishments);
        match establish_platform(
            &self.packages,
            &self.bios,
            self.service.public_key(),
            &mut mbox,
            &mut rng,
        ) {
            Ok(est) => {
                self.reset_epoch = 0;
                self.blobs = est.blobs;
                let detail = format!(
                    "platform {} established with {} packages, master {}",
                    est.manifest.platform_instance_id,
                    est.state.members.len(),
                    est.state.master
                );
                self.manifest = Some(est.manifest);
                self.set_state(Some(est.state));
                StepOutcome::new(StepStatus::Ok, detail)
            }
            Err(e) => {
                if fault.is_some() {
                    self.event(format!("establishment aborted: {e}"));
                }
                StepOutcome::new(StepStatus::Rejected, e.to_string())
            }
        }
    }

    /// Reset every package; firmware state is lost until the next boot.
    pub fn power_cycle(&mut self) {
        self.reset_epoch += 1;
        self.set_state(None);
        for mem in self.memories.values_mut() {
            mem.reset();
        }
    }

    pub fn reboot(
        &mut self,
        tamper_blob: Option<PackageId>,
        fw_bump: Option<PackageId>,
        misconfigure: Option<PackageId>,
    ) -> StepOutcome {
        self.power_cycle();
        if let Some(id) = fw_bump {
            if let Some(p) = self.packages.iter_mut().find(|p| p.package_id == id) {
                *p = p.with_fw_version(p.fw_version + 1);
            }
        }
        if let Some(id) = tamper_blob {
            if let Some(blob) = self.blobs.get_mut(&id) {
                let mid = blob.sealed.ciphertext.len() / 2;
                blob.sealed.ciphertext[mid] ^= 0x01;
            }
        }
        let bios = match misconfigure {
            Some(id) => misconfigured(&self.bios, id),
            None => self.bios.clone(),
        };
        self.boot(&bios)
    }

    /// Boot from the stored blobs against the given BIOS view.
    pub fn boot(&mut self, bios: &BiosConfig) -> StepOutcome {
        if let Err(reason) = self.alias_check() {
            self.event(reason.clone());
            return StepOutcome::new(
                StepStatus::SgxDisabled,
                format!("alias found, SGX not enabled: {reason}"),
            );
        }
        let mut mbox = Mailbox::new();
        match reboot_platform(
            &self.packages,
            &self.blobs,
            bios,
            self.reset_epoch,
            &mut mbox,
        ) {
            Ok(state) => {
                let detail = format!(
                    "booted at reset epoch {}, phase {}",
                    state.reset_epoch, state.phase
                );
                self.set_state(Some(state));
                StepOutcome::new(StepStatus::Ok, detail)
            }
            Err(EstablishmentError::NeedsEstablishment(why)) => {
                let again = self.establish(None);
                let status = if again.status == StepStatus::Ok {
                    StepStatus::Fallback
                } else {
                    again.status
                };
                StepOutcome::new(status, format!("{why}; re-establish: {}", again.detail))
            }
            Err(e @ EstablishmentError::Inconsistent(_)) => {
                self.event(format!("reboot refused: {e}"));
                for mem in self.memories.values_mut() {
                    mem.disable_sgx(e.to_string());
                }
                StepOutcome::new(StepStatus::Detected, e.to_string())
            }
            Err(e) => StepOutcome::new(StepStatus::Rejected, e.to_string()),
        }
    }

    pub fn register(&mut self) -> StepOutcome {
        let Some(manifest) = &self.manifest else {
            return StepOutcome::new(StepStatus::Error, "no manifest to register".into());
        };
        match self
            .service
            .register_platform(manifest, &self.config.tcb_levels)
        {
            Ok(certs) => {
                let detail = format!(
                    "platform {} registered, {} PCK certificates issued",
                    manifest.platform_instance_id,
                    certs.len()
                );
                self.pck_certs.extend(certs);
                StepOutcome::new(StepStatus::Ok, detail)
            }
            Err(e) => StepOutcome::new(StepStatus::Rejected, e.to_string()),
        }
    }

    pub fn quote(&mut self, tcb_level: u32, user_data: &[u8]) -> StepOutcome {
        let Some(state) = self.state.as_ref().filter(|s| s.sgx_usable()) else {
            return StepOutcome::new(StepStatus::SgxDisabled, "SGX is not enabled".into());
        };
        let cert = match fetch_pck_certificate(
            self.service.cache(),
            &state.platform_instance_id,
            tcb_level,
        ) {
            Ok(c) => c,
            Err(e) => {
                return StepOutcome::new(StepStatus::Rejected, format!("no PCK certificate: {e}"))
            }
        };
        let mut rng = self.rng.fork(0x7175_6f74 + self.quotes.len() as u64);
        let ak = match provision_attestation_key(state, state.master, &cert, &mut rng) {
            Ok(ak) => ak,
            Err(e) => return StepOutcome::new(StepStatus::Rejected, e.to_string()),
        };
        let measurement = Digest::of_parts(&[b"enclave", user_data]);
        let quote = generate_quote(&ak, measurement, user_data);
        let verdict = verify_quote(&quote, self.service.public_key());
        self.quotes.push(quote);
        match verdict {
            Verdict::Accepted(body) => StepOutcome::new(
                StepStatus::Ok,
                format!(
                    "quote accepted, tcb {} measurement {}",
                    body.tcb_level,
                    &body.measurement.to_hex()[..16]
                ),
            ),
            Verdict::Rejected(link) => {
                StepOutcome::new(StepStatus::Rejected, format!("quote rejected at {link}"))
            }
        }
    }

    fn next_package_id(&self) -> PackageId {
        self.packages
            .iter()
            .map(|p| p.package_id)
            .max()
            .map_or(0, |m| m + 1)
    }

    /// Membership certificate for `new_pkg` of the requested flavour.
    fn membership_cert(
        &mut self,
        variant: CertVariant,
        state: &PlatformState,
        new_pkg: &PackageIdentity,
    ) -> Result<MembershipCertificate, String> {
        let factory = factory_key(self.config.seed);
        let master = self
            .packages
            .iter()
            .find(|p| p.package_id == state.master)
            .ok_or("master package missing")?;
        match variant {
            CertVariant::Valid => {
                let req = build_add_request(state, master, new_pkg).map_err(|e| e.to_string())?;
                self.service
                    .approve_add_request(&req)
                    .map_err(|e| e.to_string())
            }
            CertVariant::WrongPackage => {
                let other = PackageIdentity::from_factory(
                    &factory,
                    new_pkg.package_id + 1,
                    self.config.fw_version,
                );
                let req = build_add_request(state, master, &other).map_err(|e| e.to_string())?;
                self.service
                    .approve_add_request(&req)
                    .map_err(|e| e.to_string())
            }
            CertVariant::WrongPlatform => {
                let decoys: Vec<PackageIdentity> = DECOY_IDS
                    .iter()
                    .map(|&id| PackageIdentity::from_factory(&factory, id, self.config.fw_version))
                    .collect();
                let maps: BTreeMap<PackageId, AddressMap> = decoys
                    .iter()
                    .map(|p| {
                        (
                            p.package_id,
                            AddressMap::identity(4, AddressRange::new(0, 64)),
                        )
                    })
                    .collect();
                let info = platform_info(
                    &self.config,
                    &decoys,
                    &maps,
                    vec![(DECOY_IDS[0], DECOY_IDS[1])],
                );
                let mut rng = self.rng.fork(0x6465_636f);
                let est = establish_platform(
                    &decoys,
                    &BiosConfig::new(info),
                    self.service.public_key(),
                    &mut Mailbox::new(),
                    &mut rng,
                )
                .map_err(|e| e.to_string())?;
                if !self
                    .service
                    .is_registered(&est.manifest.platform_instance_id)
                {
                    self.service
                        .register_platform(&est.manifest, &self.config.tcb_levels)
                        .map_err(|e| e.to_string())?;
                }
                let req = build_add_request(&est.state, &decoys[0], new_pkg)
                    .map_err(|e| e.to_string())?;
                self.service
                    .approve_add_request(&req)
                    .map_err(|e| e.to_string())
            }
            CertVariant::WrongIssuer => {
                let rogue = keypair_from_seed(
                    &SimRng::from_seed(self.config.seed)
                        .fork(ROGUE_STREAM)
                        .key("rogue"),
                );
                Ok(MembershipCertificate::issue(
                    "rogue-service",
                    &rogue,
                    state.platform_instance_id,
                    new_pkg.public_key(),
                ))
            }
        }
    }

    pub fn add_package(&mut self, variant: CertVariant) -> StepOutcome {
        let Some(state) = self.state.clone().filter(|s| s.sgx_usable()) else {
            return StepOutcome::new(StepStatus::SgxDisabled, "SGX is not enabled".into());
        };
        let new_id = self.next_package_id();
        let new_pkg = PackageIdentity::from_factory(
            &factory_key(self.config.seed),
            new_id,
            self.config.fw_version,
        );
        let cert = match self.membership_cert(variant, &state, &new_pkg) {
            Ok(c) => c,
            Err(e) => {
                return StepOutcome::new(StepStatus::Rejected, format!("no certificate: {e}"))
            }
        };
        if let Err(e) = self.add_memory(new_id) {
            return StepOutcome::new(StepStatus::Error, e.to_string());
        }
        let mut everyone = self.packages.clone();
        everyone.push(new_pkg.clone());
        let mut links = self.bios.platform_info.link_topology.clone();
        links.push((state.master, new_id));
        let bios_after = BiosConfig {
            master: self.bios.master,
            platform_info: platform_info(&self.config, &everyone, &self.maps, links),
            per_package: BTreeMap::new(),
        };
        let mut rng = self.rng.fork(0x6164_6400 + new_id as u64);
        let mut mbox = Mailbox::new();
        match add_package(
            &state,
            &self.packages,
            &new_pkg,
            &cert,
            &bios_after,
            &mut mbox,
            &mut rng,
        ) {
            Ok(update) => {
                self.packages = everyone;
                self.bios = bios_after;
                self.blobs = update.blobs;
                let old = self.link_fabric.take();
                self.set_state(Some(update.state));
                if let (Some(old), Some(new)) = (old, self.fabric()) {
                    new.carry_over(old);
                }
                StepOutcome::new(
                    StepStatus::Ok,
                    format!("package {new_id} joined the platform"),
                )
            }
            Err(e) => {
                self.memories.remove(&new_id);
                self.maps.remove(&new_id);
                self.event(format!("add package {new_id} refused: {e}"));
                StepOutcome::new(StepStatus::Rejected, e.to_string())
            }
        }
    }

    /// Issue random key requests on every member package and compare.
    pub fn key_requests(&mut self, count: u32) -> StepOutcome {
        let Some(state) = self.state.as_ref().filter(|s| s.sgx_usable()) else {
            return StepOutcome::new(StepStatus::SgxDisabled, "SGX is not enabled".into());
        };
        let mut rng = self.rng.fork(0x6b65_7973);
        let classes = [
            KeyClass::Seal,
            KeyClass::Provisioning,
            KeyClass::AttestationSeed,
        ];
        for _ in 0..count {
            let req = KeyRequest {
                key_class: classes[rng.below(3) as usize],
                requester_measurement: Digest(rng.array()),
                tcb_level: rng.below(8) as u32,
            };
            let mut keys = self.packages.iter().map(|p| state.get_key(p, &req));
            let first = match keys.next() {
                Some(Ok(k)) => k,
                _ => return StepOutcome::new(StepStatus::Error, "key request failed".into()),
            };
            if keys.any(|k| k.as_ref() != Ok(&first)) {
                return StepOutcome::new(
                    StepStatus::Error,
                    format!("packages disagree on {req:?}"),
                );
            }
        }
        StepOutcome::new(
            StepStatus::Ok,
            format!(
                "{count} key requests identical on {} packages",
                self.packages.len()
            ),
        )
    }

    /// Secure writes and read-backs from package 0 into every other
    /// package's EPC over the links.
    pub fn coherency(&mut self, transfers: u32) -> StepOutcome {
        let Some(topo) = self.fabric().map(|f| f.topology().clone()) else {
            return StepOutcome::new(StepStatus::SgxDisabled, "SGX is not enabled".into());
        };
        let fabric = self.link_fabric.as_mut().expect("fabric built above");
        let remotes: Vec<&PackageMemory> = topo.memory.iter().filter(|m| m.package != 0).collect();
        if remotes.is_empty() {
            return StepOutcome::new(StepStatus::Ok, "single package, no link traffic".into());
        }
        let mut rng = self.rng.fork(0x636f_6865);
        for i in 0..transfers {
            let target = remotes[i as usize % remotes.len()];
            if !topo.linked(0, target.package) {
                continue;
            }
            let line = rng.below(target.epc.size / 64);
            let addr = target.epc.base + line * 64;
            let data: [u8; LINE_SIZE] = rng.array();
            let write = fabric.request(CoherencyRequest::write(0, addr, data), &mut self.memories);
            let read = write
                .and_then(|_| fabric.request(CoherencyRequest::read(0, addr), &mut self.memories));
            match read {
                Ok(Some(back)) if back == data => {}
                Ok(_) => {
                    return StepOutcome::new(
                        StepStatus::Error,
                        format!("read-back mismatch at {addr:#x}"),
                    )
                }
                Err(e) => return StepOutcome::new(StepStatus::Error, e.to_string()),
            }
        }
        StepOutcome::new(
            StepStatus::Ok,
            format!("{transfers} secure transfers round-tripped"),
        )
    }
}

impl World {
    pub fn alias_probe(&mut self, package: PackageId) -> StepOutcome {
        let Some(mem) = self.memories.get_mut(&package) else {
            return StepOutcome::new(StepStatus::Error, format!("no package {package}"));
        };
        let obs = attack_outside_in(mem, &[0x41; LINE_SIZE]);
        let Some((outside, inside)) = obs.alias else {
            return StepOutcome::new(
                StepStatus::Ok,
                "no outside-in alias in the address map".into(),
            );
        };
        if !obs.detected {
            return StepOutcome::new(
                StepStatus::Error,
                format!("write via {outside:#x} reached EPC line {inside:#x} unnoticed"),
            );
        }
        let reason =
            format!("outside-in alias {outside:#x} -> {inside:#x} poisoned on enclave read");
        self.event(reason.clone());
        if let Some(state) = self.state.as_mut() {
            state.disable(reason.clone());
        }
        self.link_fabric = None;
        StepOutcome::new(StepStatus::Detected, reason)
    }
}

fn default_vetting(config: &ScenarioConfig) -> VettingList {
    let factory = factory_key(config.seed);
    let ids = (0..config.package_count + SPARE_PACKAGES).chain(DECOY_IDS);
    VettingList::from_keys(
        ids.map(|id| PackageIdentity::from_factory(&factory, id, config.fw_version).public_key()),
    )
}

fn epc_local(config: &ScenarioConfig) -> AddressRange {
    let m = &config.memory;
    AddressRange::new(m.epc_first_line * 64, m.epc_lines * 64)
}

fn package_map(config: &ScenarioConfig, id: PackageId) -> Result<AddressMap, HarnessError> {
    let m = &config.memory;
    let overrides = m
        .overrides
        .iter()
        .filter(|o| o.package == id)
        .map(|o| (o.system_address, o.physical_line));
    AddressMap::new(m.lines_per_package, epc_local(config), overrides).map_err(|e| {
        HarnessError::ConfigInvalid {
            path: "memory.overrides".into(),
            reason: e.to_string(),
        }
    })
}

fn platform_info(
    config: &ScenarioConfig,
    packages: &[PackageIdentity],
    maps: &BTreeMap<PackageId, AddressMap>,
    links: Vec<(PackageId, PackageId)>,
) -> PlatformInfo {
    let span = config.memory.lines_per_package * 64;
    let mem = packages
        .iter()
        .map(|p| {
            let map = &maps[&p.package_id];
            MemoryConfig {
                package_id: p.package_id,
                epc_base: p.package_id as u64 * span + map.epc().base,
                epc_size: map.epc().size,
                address_map_digest: map.digest(),
            }
        })
        .collect();
    PlatformInfo::new(packages, mem, links)
}

/// BIOS view in which package `id` reports a link that does not exist.
pub(crate) fn misconfigured(bios: &BiosConfig, id: PackageId) -> BiosConfig {
    let mut out = bios.clone();
    let mut info = bios.platform_info.clone();
    info.link_topology.push((id, PackageId::MAX));
    out.per_package.insert(id, info);
    out
}

/// BIOS view in which package `id` reports a tampered DIMM configuration.
pub(crate) fn dimm_tampered(bios: &BiosConfig, id: PackageId) -> BiosConfig {
    let mut out = bios.clone();
    let mut info = bios.platform_info.clone();
    if let Some(m) = info.memory_config.iter_mut().find(|m| m.package_id == id) {
        m.address_map_digest = Digest::of_parts(&[b"dimm", m.address_map_digest.as_bytes()]);
    }
    out.per_package.insert(id, info);
    out
}

fn injector(spec: &FaultSpec) -> FaultInjector {
    match *spec {
        FaultSpec::Drop { message } => FaultInjector::new(message, Fault::Drop),
        FaultSpec::Flip {
            message,
            offset,
            mask,
        } => FaultInjector::new(message, Fault::FlipByte { offset, mask }),
        FaultSpec::Replay { message, earlier } => {
            FaultInjector::new(message, Fault::ReplayEarlier { index: earlier })
        }
    }
}
