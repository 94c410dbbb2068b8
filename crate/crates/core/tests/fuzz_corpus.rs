//! Every checked-in fuzz seed goes through the decoder its target uses.
//! Regenerate the seeds with `cargo test --test fuzz_corpus -- --ignored`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use mpsim::attestation::{AkCertificate, Quote};
use mpsim::codec::Canonical;
use mpsim::crypto::SimRng;
use mpsim::establishment::{
    build_add_request, establish_platform, HandshakeMessage, Mailbox, PlatformInfo,
    PlatformManifest, SessionMessage,
};
use mpsim::harness::{
    bundled_scenario, factory_key, handle_request, ScenarioConfig, ServiceRequest, ServiceResponse,
    World, BUNDLED_SCENARIOS,
};
use mpsim::link::{CoherencyRequest, WirePacket};
use mpsim::package::{KeyBlob, PackageIdentity};
use mpsim::registration::{
    AddRequest, MembershipCertificate, PckCertificate, ServicePublicKey, VettingList,
};

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus")
}

fn canonical<T: Canonical>(bytes: &[u8]) -> Option<bool> {
    T::from_canonical_bytes(bytes)
        .ok()
        .map(|v| v.to_canonical_bytes() == bytes)
}

/// Decode with the target's entry point. `Some(true)` means the input was
/// accepted and re-encodes to itself.
fn decode(target: &str, bytes: &[u8]) -> Option<bool> {
    let text = || std::str::from_utf8(bytes).ok();
    match target {
        "manifest" => canonical::<PlatformManifest>(bytes),
        "add_request" => canonical::<AddRequest>(bytes),
        "key_blob" => canonical::<KeyBlob>(bytes),
        "quote" => canonical::<Quote>(bytes),
        "ak_cert" => canonical::<AkCertificate>(bytes),
        "pck_cert" => canonical::<PckCertificate>(bytes),
        "membership_cert" => canonical::<MembershipCertificate>(bytes),
        "service_key" => canonical::<ServicePublicKey>(bytes),
        "service_request" => canonical::<ServiceRequest>(bytes),
        "service_response" => canonical::<ServiceResponse>(bytes),
        "handshake" => canonical::<HandshakeMessage>(bytes),
        "session_message" => canonical::<SessionMessage>(bytes),
        "platform_info" => canonical::<PlatformInfo>(bytes),
        "coherency_request" => canonical::<CoherencyRequest>(bytes),
        "wire_packet" => WirePacket::from_bytes(bytes)
            .ok()
            .map(|p| p.to_bytes() == bytes),
        "scenario_config" => {
            let cfg = ScenarioConfig::from_toml(text()?).ok()?;
            Some(ScenarioConfig::from_toml(&cfg.to_toml()).ok()? == cfg)
        }
        "vetting_list" => {
            let list = VettingList::parse(text()?).ok()?;
            Some(VettingList::parse(&list.render()).ok()? == list)
        }
        other => panic!("no decoder for fuzz target {other}"),
    }
}

const TARGETS: [&str; 17] = [
    "add_request",
    "ak_cert",
    "coherency_request",
    "handshake",
    "key_blob",
    "manifest",
    "membership_cert",
    "pck_cert",
    "platform_info",
    "quote",
    "scenario_config",
    "service_key",
    "service_request",
    "service_response",
    "session_message",
    "vetting_list",
    "wire_packet",
];

#[test]
fn every_target_has_seeds_that_decode_and_round_trip() {
    for target in TARGETS {
        let dir = corpus_dir().join(target);
        let entries: Vec<_> = std::fs::read_dir(&dir)
            .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
            .map(|e| e.unwrap().path())
            .collect();
        assert!(!entries.is_empty(), "{target} has no seeds");
        for path in entries {
            let bytes = std::fs::read(&path).unwrap();
            assert_eq!(decode(target, &bytes), Some(true), "{}", path.display());
        }
    }
}

#[test]
fn truncated_and_flipped_seeds_never_panic() {
    for target in TARGETS {
        for entry in std::fs::read_dir(corpus_dir().join(target)).unwrap() {
            let bytes = std::fs::read(entry.unwrap().path()).unwrap();
            for cut in 0..bytes.len().min(64) {
                decode(target, &bytes[..cut]);
            }
            for i in (0..bytes.len()).step_by(7) {
                let mut b = bytes.clone();
                b[i] ^= 0x80;
                decode(target, &b);
            }
        }
    }
}

fn seeds() -> BTreeMap<&'static str, Vec<Vec<u8>>> {
    let mut out: BTreeMap<&'static str, Vec<Vec<u8>>> = BTreeMap::new();
    let cfg = bundled_scenario("two_socket_establish").unwrap();
    let mut world = World::new(&cfg).unwrap();
    world.establish(None);
    world.register();
    world.quote(1, b"seed");
    world.coherency(2);
    let state = world.state.clone().unwrap();
    let manifest = world.manifest.clone().unwrap();
    let quote = world.quotes[0].clone();

    let new_pkg = PackageIdentity::from_factory(&factory_key(cfg.seed), 2, cfg.fw_version);
    let add = build_add_request(&state, &world.packages[0], &new_pkg).unwrap();
    let membership = world.service.approve_add_request(&add).unwrap();

    out.insert("manifest", vec![manifest.to_canonical_bytes()]);
    out.insert("add_request", vec![add.to_canonical_bytes()]);
    out.insert(
        "key_blob",
        world
            .blobs
            .values()
            .map(|b| b.to_canonical_bytes())
            .collect(),
    );
    out.insert("quote", vec![quote.to_canonical_bytes()]);
    out.insert("ak_cert", vec![quote.ak_certificate.to_canonical_bytes()]);
    out.insert(
        "pck_cert",
        world
            .pck_certs
            .iter()
            .map(|c| c.to_canonical_bytes())
            .collect(),
    );
    out.insert("membership_cert", vec![membership.to_canonical_bytes()]);
    out.insert(
        "service_key",
        vec![world.service.public_key().to_canonical_bytes()],
    );
    out.insert(
        "platform_info",
        vec![world.bios.platform_info.to_canonical_bytes()],
    );

    let requests = [
        ServiceRequest::PublicKey,
        ServiceRequest::FetchPck {
            instance: state.platform_instance_id,
            tcb_level: 2,
        },
        ServiceRequest::ApproveAdd(add),
        ServiceRequest::Deregister(state.platform_instance_id),
        ServiceRequest::Register {
            manifest,
            tcb_levels: vec![1, 2],
        },
    ];
    out.insert(
        "service_request",
        requests.iter().map(|r| r.to_canonical_bytes()).collect(),
    );
    out.insert(
        "service_response",
        requests
            .iter()
            .map(|r| handle_request(&world.service, &r.to_canonical_bytes()))
            .collect(),
    );

    let mut mbox = Mailbox::new();
    let mut rng = SimRng::from_seed(5);
    establish_platform(
        &world.packages,
        &world.bios,
        world.service.public_key(),
        &mut mbox,
        &mut rng,
    )
    .unwrap();
    for env in mbox.posted_log() {
        let key = if HandshakeMessage::from_canonical_bytes(&env.payload).is_ok() {
            "handshake"
        } else if SessionMessage::from_canonical_bytes(&env.payload).is_ok() {
            "session_message"
        } else {
            continue;
        };
        out.entry(key).or_default().push(env.payload.clone());
    }

    out.insert(
        "coherency_request",
        vec![
            CoherencyRequest::read(0, 0x2000).to_canonical_bytes(),
            CoherencyRequest::write(1, 0x4040, [0x33; 64]).to_canonical_bytes(),
        ],
    );
    let fabric = world.fabric().unwrap();
    let wire: Vec<Vec<u8>> = fabric.channel(0, 1).unwrap().transmitted().to_vec();
    out.insert("wire_packet", wire);

    out.insert(
        "scenario_config",
        BUNDLED_SCENARIOS
            .iter()
            .map(|(_, t)| t.as_bytes().to_vec())
            .collect(),
    );
    let list = VettingList::from_keys(world.packages.iter().map(|p| p.public_key()));
    out.insert(
        "vetting_list",
        vec![
            list.render().into_bytes(),
            format!("# vetted packages\n\n{}", list.render()).into_bytes(),
        ],
    );
    out
}

#[test]
#[ignore = "rewrites fuzz/corpus"]
fn regenerate_seeds() {
    for (target, items) in seeds() {
        let dir = corpus_dir().join(target);
        std::fs::create_dir_all(&dir).unwrap();
        for (i, bytes) in items.iter().enumerate() {
            std::fs::write(dir.join(format!("seed-{i}")), bytes).unwrap();
        }
    }
}

#[test]
fn generated_seeds_cover_every_target() {
    let s = seeds();
    for target in TARGETS {
        let items = s.get(target).unwrap_or_else(|| panic!("{target} missing"));
        assert!(!items.is_empty(), "{target}");
        for bytes in items {
            assert_eq!(decode(target, bytes), Some(true), "{target}");
        }
    }
}
