use std::collections::{BTreeMap, BTreeSet};

use crate::codec::{Decoder, Encoder};
use crate::crypto::{Digest, SimRng};
use crate::link::LinkKeySet;
use crate::package::{
    open_key_blob, seal_key_blob, BlobContents, KeyBlob, PackageId, PackageIdentity, PairingKey,
    PlatformKeys,
};
use crate::registration::{AddRequest, MembershipCertificate, ServicePublicKey};

use super::info::{verify_config_consistency, ConfigField, Inconsistency, PlatformInfo};
use super::mailbox::Mailbox;
use super::manifest::{Escrow, ManifestPackage, PairingDigest, PlatformManifest};
use super::pairing::{
    derive_session_keys, negotiate_pairing, ordered, receive_session, send_session, MessageKind,
    PairingRecord, SessionKeys,
};
use super::{CertProblem, EstablishmentError, Pair, PlatformPhase, PlatformState};

/// Child stream of the caller's RNG reserved for platform key generation.
const PLATFORM_KEY_STREAM: u64 = 0x706b_6579;

/// What the BIOS knows about the platform before firmware runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiosConfig {
    /// Master Package override; defaults to the lowest package id.
    pub master: Option<PackageId>,
    pub platform_info: PlatformInfo,
    /// What individual packages report when it differs from
    /// `platform_info` (misconfiguration or attack).
    pub per_package: BTreeMap<PackageId, PlatformInfo>,
}

impl BiosConfig {
    pub fn new(platform_info: PlatformInfo) -> Self {
        Self {
            master: None,
            platform_info,
            per_package: BTreeMap::new(),
        }
    }

    pub fn report_for(&self, id: PackageId) -> &PlatformInfo {
        self.per_package.get(&id).unwrap_or(&self.platform_info)
    }

    pub fn master_for(&self, packages: &[PackageIdentity]) -> Option<PackageId> {
        match self.master {
            Some(m) if packages.iter().any(|p| p.package_id == m) => Some(m),
            Some(_) => None,
            None => packages.iter().map(|p| p.package_id).min(),
        }
    }
}

/// Everything establishment hands back to the BIOS.
#[derive(Debug, Clone)]
pub struct Establishment {
    pub manifest: PlatformManifest,
    pub blobs: BTreeMap<PackageId, KeyBlob>,
    pub state: PlatformState,
}

/// Result of admitting a package: new firmware state and the resealed blob
/// of every member.
#[derive(Debug, Clone)]
pub struct MembershipUpdate {
    pub state: PlatformState,
    pub blobs: BTreeMap<PackageId, KeyBlob>,
}

/// The platform keys `establish_platform` will generate when handed an RNG
/// in this exact state. Lets leak scans know what to look for.
pub fn predict_platform_keys(rng: &SimRng) -> PlatformKeys {
    let mut probe = rng.clone();
    PlatformKeys::generate(&mut probe.fork(PLATFORM_KEY_STREAM))
}

/// Each package pairs with its link neighbours and with the Master Package.
pub fn required_pairs(
    ids: &[PackageId],
    master: PackageId,
    links: &[(PackageId, PackageId)],
) -> Result<Vec<Pair>, EstablishmentError> {
    let known: BTreeSet<_> = ids.iter().copied().collect();
    let mut pairs = BTreeSet::new();
    for &(a, b) in links {
        for end in [a, b] {
            if !known.contains(&end) {
                return Err(EstablishmentError::UnknownPackage(end));
            }
        }
        if a != b {
            pairs.insert(ordered(a, b));
        }
    }
    for &id in ids {
        if id != master {
            pairs.insert(ordered(master, id));
        }
    }
    Ok(pairs.into_iter().collect())
}

fn lookup(
    packages: &[PackageIdentity],
    id: PackageId,
) -> Result<&PackageIdentity, EstablishmentError> {
    packages
        .iter()
        .find(|p| p.package_id == id)
        .ok_or(EstablishmentError::UnknownPackage(id))
}

fn held_pairings(holder: PackageId, pairings: &BTreeMap<Pair, PairingRecord>) -> Vec<PairingKey> {
    pairings
        .values()
        .filter(|r| r.pkg_a == holder || r.pkg_b == holder)
        .map(|r| r.key_for(holder))
        .collect()
}

fn program_links(
    links: &[(PackageId, PackageId)],
    pairings: &BTreeMap<Pair, PairingRecord>,
    epoch: u64,
) -> Result<BTreeMap<Pair, (LinkKeySet, LinkKeySet)>, EstablishmentError> {
    let mut out = BTreeMap::new();
    for &(a, b) in links {
        let pair = ordered(a, b);
        if pair.0 == pair.1 {
            continue;
        }
        let rec = pairings
            .get(&pair)
            .ok_or(EstablishmentError::UnknownPackage(pair.1))?;
        out.insert(
            pair,
            (
                LinkKeySet::program(&rec.master_comms_key, epoch, pair.0, pair.1),
                LinkKeySet::program(&rec.master_comms_key, epoch, pair.1, pair.0),
            ),
        );
    }
    Ok(out)
}

fn encode_report(info: &PlatformInfo, digests: &[PairingDigest]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.item(info).seq(digests, |e, d| {
        e.u32(d.pkg_a).u32(d.pkg_b).item(&d.transcript_digest);
    });
    enc.finish()
}

fn decode_report(bytes: &[u8]) -> Result<(PlatformInfo, Vec<PairingDigest>), EstablishmentError> {
    let mut dec = Decoder::new(bytes);
    let info = dec.item()?;
    let digests = dec.seq("pairing digests", |d| {
        Ok(PairingDigest {
            pkg_a: d.u32("pkg a")?,
            pkg_b: d.u32("pkg b")?,
            transcript_digest: d.item()?,
        })
    })?;
    dec.finish()?;
    Ok((info, digests))
}

fn pairing_digests(
    holder: PackageId,
    pairings: &BTreeMap<Pair, PairingRecord>,
) -> Vec<PairingDigest> {
    pairings
        .values()
        .filter(|r| r.pkg_a == holder || r.pkg_b == holder)
        .map(|r| PairingDigest {
            pkg_a: r.pkg_a,
            pkg_b: r.pkg_b,
            transcript_digest: r.transcript_digest,
        })
        .collect()
}

/// Every non-master package reports its configuration to the master over
/// its authenticated session; the master checks them all for consistency.
/// Returns the digests the members vouched for.
fn collect_config_reports(
    packages: &[PackageIdentity],
    master: PackageId,
    bios: &BiosConfig,
    pairings: &BTreeMap<Pair, PairingRecord>,
    sessions: &BTreeMap<Pair, SessionKeys>,
    mbox: &mut Mailbox,
) -> Result<Vec<PairingDigest>, EstablishmentError> {
    let others: Vec<PackageId> = packages
        .iter()
        .map(|p| p.package_id)
        .filter(|&id| id != master)
        .collect();
    for &id in &others {
        let body = encode_report(bios.report_for(id), &pairing_digests(id, pairings));
        send_session(
            mbox,
            &sessions[&ordered(master, id)],
            MessageKind::ConfigReport,
            id,
            master,
            &body,
        );
    }

    let mut infos = vec![(master, bios.report_for(master).clone())];
    let mut vouched = pairing_digests(master, pairings);
    for &id in &others {
        let body = receive_session(
            mbox,
            &sessions[&ordered(master, id)],
            MessageKind::ConfigReport,
            master,
            id,
        )?;
        let (info, digests) = decode_report(&body)?;
        infos.push((id, info));
        vouched.extend(digests);
    }
    verify_config_consistency(&infos).map_err(EstablishmentError::Inconsistent)?;

    // The reported package list must match the identities that actually
    // took part in the signed pairings.
    let actual: Vec<_> = packages.iter().map(|p| p.public_key()).collect();
    if infos[0].1.package_public_keys != actual {
        return Err(EstablishmentError::Inconsistent(Inconsistency {
            package: master,
            field: ConfigField::PackagePublicKeys,
        }));
    }
    vouched.sort_by_key(|d| (d.pkg_a, d.pkg_b));
    vouched.dedup();
    Ok(vouched)
}

/// Master sends the platform keys to `member` and waits for its
/// acknowledgement. Returns the member's received copy.
fn distribute_keys(
    keys: &PlatformKeys,
    master: PackageId,
    member: PackageId,
    session: &SessionKeys,
    mbox: &mut Mailbox,
) -> Result<PlatformKeys, EstablishmentError> {
    let mut enc = Encoder::new();
    keys.encode_secret(&mut enc);
    send_session(
        mbox,
        session,
        MessageKind::KeyDistribution,
        master,
        member,
        &enc.finish(),
    );

    let body = receive_session(mbox, session, MessageKind::KeyDistribution, member, master)?;
    let mut dec = Decoder::new(&body);
    let received = PlatformKeys::decode_secret(&mut dec)?;
    dec.finish()?;
    let ack = Digest::of_parts(&[
        b"key-ack",
        &received.platform_instance_id.0,
        &member.to_le_bytes(),
    ]);
    send_session(
        mbox,
        session,
        MessageKind::KeyAck,
        member,
        master,
        ack.as_bytes(),
    );

    let body = receive_session(mbox, session, MessageKind::KeyAck, master, member)?;
    let expected = Digest::of_parts(&[
        b"key-ack",
        &keys.platform_instance_id.0,
        &member.to_le_bytes(),
    ]);
    if body != expected.as_bytes() {
        return Err(EstablishmentError::UnexpectedMessage {
            expected: "matching key ack",
        });
    }
    Ok(received)
}

fn seal_blobs(
    packages: &[PackageIdentity],
    package_keys: &BTreeMap<PackageId, PlatformKeys>,
    pairings: &BTreeMap<Pair, PairingRecord>,
    config_digest: Digest,
    registrar: &ServicePublicKey,
    rng: &mut SimRng,
) -> BTreeMap<PackageId, KeyBlob> {
    packages
        .iter()
        .map(|pkg| {
            let contents = BlobContents {
                platform: package_keys[&pkg.package_id].clone(),
                pairings: held_pairings(pkg.package_id, pairings),
                config_digest,
                registrar: registrar.clone(),
            };
            (pkg.package_id, seal_key_blob(pkg, &contents, rng))
        })
        .collect()
}

/// Establish New Platform. On any failure nothing derived from the new
/// platform keys leaves this function.
pub fn establish_platform(
    packages: &[PackageIdentity],
    bios: &BiosConfig,
    registrar: &ServicePublicKey,
    mbox: &mut Mailbox,
    rng: &mut SimRng,
) -> Result<Establishment, EstablishmentError> {
    let mut key_rng = rng.fork(PLATFORM_KEY_STREAM);
    if packages.is_empty() {
        return Err(EstablishmentError::NoPackages);
    }
    let master = bios
        .master_for(packages)
        .ok_or(EstablishmentError::UnknownPackage(
            bios.master.unwrap_or_default(),
        ))?;
    let ids: Vec<PackageId> = packages.iter().map(|p| p.package_id).collect();
    let links = &bios.platform_info.link_topology;
    let epoch = 0;

    let mut pairings = BTreeMap::new();
    for (a, b) in required_pairs(&ids, master, links)? {
        let rec = negotiate_pairing(lookup(packages, a)?, lookup(packages, b)?, mbox, rng)?;
        pairings.insert((a, b), rec);
    }
    let sessions: BTreeMap<Pair, SessionKeys> = pairings
        .iter()
        .map(|(k, r)| (*k, derive_session_keys(r, epoch)))
        .collect();

    let vouched = collect_config_reports(packages, master, bios, &pairings, &sessions, mbox)?;
    let config_digest = bios.report_for(master).digest();

    let platform_keys = PlatformKeys::generate(&mut key_rng);
    let mut package_keys = BTreeMap::from([(master, platform_keys.clone())]);
    for &id in ids.iter().filter(|&&id| id != master) {
        let received = distribute_keys(
            &platform_keys,
            master,
            id,
            &sessions[&ordered(master, id)],
            mbox,
        )?;
        package_keys.insert(id, received);
    }

    let link_keys = program_links(links, &pairings, epoch)?;
    let blobs = seal_blobs(
        packages,
        &package_keys,
        &pairings,
        config_digest,
        registrar,
        rng,
    );

    let escrow = Escrow::seal(
        registrar,
        &platform_keys.platform_instance_id,
        &platform_keys.platform_prov_root,
        rng,
    )?;
    let mut manifest = PlatformManifest {
        platform_instance_id: platform_keys.platform_instance_id,
        master_id: master,
        packages: packages
            .iter()
            .map(|p| ManifestPackage {
                package_id: p.package_id,
                public_key: p.public_key(),
            })
            .collect(),
        pairings: vouched,
        platform_info_digest: config_digest,
        escrow,
        signature: crate::crypto::Signature([0; 64]),
    };
    manifest.sign(lookup(packages, master)?.signing_identity());

    let state = PlatformState {
        phase: PlatformPhase::Established,
        members: ids,
        master,
        platform_instance_id: platform_keys.platform_instance_id,
        registrar: registrar.clone(),
        reset_epoch: epoch,
        config_digest,
        pairings,
        session_keys: sessions,
        link_keys,
        package_keys,
        disable_reason: None,
    };
    Ok(Establishment {
        manifest,
        blobs,
        state,
    })
}

/// Reboot Old Platform: decrypt every package's blob, re-key sessions and
/// links for the new reset epoch, and re-check configuration.
pub fn reboot_platform(
    packages: &[PackageIdentity],
    blobs: &BTreeMap<PackageId, KeyBlob>,
    bios: &BiosConfig,
    reset_epoch: u64,
    mbox: &mut Mailbox,
) -> Result<PlatformState, EstablishmentError> {
    if packages.is_empty() {
        return Err(EstablishmentError::NoPackages);
    }
    let mut opened = BTreeMap::new();
    for pkg in packages {
        let blob = blobs.get(&pkg.package_id).ok_or_else(|| {
            EstablishmentError::NeedsEstablishment(format!(
                "package {} has no key blob",
                pkg.package_id
            ))
        })?;
        let contents = open_key_blob(pkg, blob).map_err(|e| {
            EstablishmentError::NeedsEstablishment(format!("package {} blob: {e}", pkg.package_id))
        })?;
        opened.insert(pkg.package_id, contents);
    }

    let master = bios
        .master_for(packages)
        .ok_or(EstablishmentError::UnknownPackage(
            bios.master.unwrap_or_default(),
        ))?;
    let reference = &opened[&master];
    let instance = reference.platform.platform_instance_id;
    let registrar = reference.registrar.clone();
    if opened
        .values()
        .any(|c| c.platform.platform_instance_id != instance || c.registrar != registrar)
    {
        return Err(EstablishmentError::NeedsEstablishment(
            "key blobs belong to different platform instances".into(),
        ));
    }

    let mut pairings = BTreeMap::new();
    for (&holder, contents) in &opened {
        for key in &contents.pairings {
            if opened.contains_key(&key.peer) {
                let rec = PairingRecord::from_key(holder, key);
                pairings.entry(rec.pair()).or_insert(rec);
            }
        }
    }
    let ids: Vec<PackageId> = packages.iter().map(|p| p.package_id).collect();
    for (a, b) in required_pairs(&ids, master, &bios.platform_info.link_topology)? {
        if !pairings.contains_key(&(a, b)) {
            return Err(EstablishmentError::NeedsEstablishment(format!(
                "no stored pairing between packages {a} and {b}"
            )));
        }
    }
    let sessions: BTreeMap<Pair, SessionKeys> = pairings
        .iter()
        .map(|(k, r)| (*k, derive_session_keys(r, reset_epoch)))
        .collect();

    collect_config_reports(packages, master, bios, &pairings, &sessions, mbox)?;
    let config_digest = bios.report_for(master).digest();
    if config_digest != reference.config_digest {
        return Err(EstablishmentError::Inconsistent(Inconsistency {
            package: master,
            field: ConfigField::EstablishedDigest,
        }));
    }

    let link_keys = program_links(&bios.platform_info.link_topology, &pairings, reset_epoch)?;
    let package_keys = opened.into_iter().map(|(id, c)| (id, c.platform)).collect();
    Ok(PlatformState {
        phase: PlatformPhase::BootedSgxReady,
        members: ids,
        master,
        platform_instance_id: instance,
        registrar,
        reset_epoch,
        config_digest,
        pairings,
        session_keys: sessions,
        link_keys,
        package_keys,
        disable_reason: None,
    })
}

/// Signed by the Master Package; names the platform and the newcomer.
pub fn build_add_request(
    state: &PlatformState,
    master: &PackageIdentity,
    new_pkg: &PackageIdentity,
) -> Result<AddRequest, EstablishmentError> {
    if !state.sgx_usable() {
        return Err(EstablishmentError::NotEstablished);
    }
    if master.package_id != state.master {
        return Err(EstablishmentError::UnknownPackage(master.package_id));
    }
    if state.members.contains(&new_pkg.package_id) {
        return Err(EstablishmentError::AlreadyMember(new_pkg.package_id));
    }
    Ok(AddRequest::sign(
        master.signing_identity(),
        state.platform_instance_id,
        new_pkg.public_key(),
    ))
}

/// Add Package to Platform. The Master Package checks the membership
/// certificate against the registration service this platform is bound
/// to, pairs with the newcomer and shares the existing platform keys.
/// `members` are the current member identities; `bios_after` describes the
/// platform including the new package.
pub fn add_package(
    state: &PlatformState,
    members: &[PackageIdentity],
    new_pkg: &PackageIdentity,
    cert: &MembershipCertificate,
    bios_after: &BiosConfig,
    mbox: &mut Mailbox,
    rng: &mut SimRng,
) -> Result<MembershipUpdate, EstablishmentError> {
    if !state.sgx_usable() {
        return Err(EstablishmentError::NotEstablished);
    }
    if state.members.contains(&new_pkg.package_id)
        || members
            .iter()
            .any(|m| m.public_key() == new_pkg.public_key())
    {
        return Err(EstablishmentError::AlreadyMember(new_pkg.package_id));
    }
    if cert.issuer != state.registrar.service_id {
        return Err(EstablishmentError::CertInvalid(CertProblem::WrongIssuer));
    }
    if !cert.verify(&state.registrar) {
        return Err(EstablishmentError::CertInvalid(CertProblem::BadSignature));
    }
    if cert.platform_instance_id != state.platform_instance_id {
        return Err(EstablishmentError::CertInvalid(CertProblem::WrongPlatform));
    }
    if cert.new_package_public_key != new_pkg.public_key() {
        return Err(EstablishmentError::CertInvalid(CertProblem::WrongPackage));
    }

    let master = lookup(members, state.master)?;
    let platform_keys = state
        .platform_keys(state.master)
        .ok_or(EstablishmentError::NotEstablished)?
        .clone();
    let rec = negotiate_pairing(master, new_pkg, mbox, rng)?;
    let session = derive_session_keys(&rec, state.reset_epoch);
    let received = distribute_keys(
        &platform_keys,
        master.package_id,
        new_pkg.package_id,
        &session,
        mbox,
    )?;

    let mut next = state.clone();
    next.members.push(new_pkg.package_id);
    next.package_keys.insert(new_pkg.package_id, received);
    next.session_keys.insert(rec.pair(), session);
    next.pairings.insert(rec.pair(), rec);
    next.link_keys = program_links(
        &bios_after.platform_info.link_topology,
        &next.pairings,
        state.reset_epoch,
    )?;
    next.config_digest = bios_after.report_for(state.master).digest();

    let mut everyone: Vec<PackageIdentity> = members
        .iter()
        .filter(|m| state.members.contains(&m.package_id))
        .cloned()
        .collect();
    everyone.push(new_pkg.clone());
    let blobs = seal_blobs(
        &everyone,
        &next.package_keys,
        &next.pairings,
        next.config_digest,
        &next.registrar,
        rng,
    );
    Ok(MembershipUpdate { state: next, blobs })
}
