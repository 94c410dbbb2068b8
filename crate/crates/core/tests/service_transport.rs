use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::thread;

use mpsim::codec::Canonical;
use mpsim::establishment::build_add_request;
use mpsim::harness::{
    bundled_scenario, factory_key, handle_request, serve_registration, RegistrationClient,
    ServiceRequest, ServiceResponse, World,
};
use mpsim::package::PackageIdentity;

fn established() -> World {
    let mut world = World::new(&bundled_scenario("two_socket_establish").unwrap()).unwrap();
    world.establish(None);
    world
}

fn script(world: &World) -> Vec<ServiceRequest> {
    let state = world.state.as_ref().unwrap();
    let manifest = world.manifest.clone().unwrap();
    let newcomer =
        PackageIdentity::from_factory(&factory_key(world.config.seed), 2, world.config.fw_version);
    let add = build_add_request(state, &world.packages[0], &newcomer).unwrap();
    let id = state.platform_instance_id;
    vec![
        ServiceRequest::PublicKey,
        ServiceRequest::FetchPck {
            instance: id,
            tcb_level: 1,
        },
        ServiceRequest::Register {
            manifest: manifest.clone(),
            tcb_levels: vec![1, 2, 3],
        },
        ServiceRequest::Register {
            manifest,
            tcb_levels: vec![1],
        },
        ServiceRequest::FetchPck {
            instance: id,
            tcb_level: 2,
        },
        ServiceRequest::FetchPck {
            instance: id,
            tcb_level: 9,
        },
        ServiceRequest::ApproveAdd(add),
        ServiceRequest::Deregister(id),
        ServiceRequest::FetchPck {
            instance: id,
            tcb_level: 1,
        },
    ]
}

#[test]
fn tcp_and_in_process_answers_are_byte_identical() {
    let local = established();
    let remote = established();
    let handle = serve_registration("127.0.0.1:0", remote.service.clone()).unwrap();
    let client = RegistrationClient::new(handle.local_addr());
    for req in script(&local) {
        let bytes = req.to_canonical_bytes();
        let want = handle_request(&local.service, &bytes);
        let got = client.call_raw(&bytes).unwrap();
        assert_eq!(got, want, "{req:?}");
    }
    handle.shutdown();
}

#[test]
fn concurrent_clients_see_the_same_certificates() {
    let mut world = established();
    world.register();
    let id = world.state.as_ref().unwrap().platform_instance_id;
    let handle = serve_registration("127.0.0.1:0", world.service.clone()).unwrap();
    let addr = handle.local_addr();
    let service = Arc::clone(&world.service);
    let workers: Vec<_> = (0..8u32)
        .map(|i| {
            thread::spawn(move || {
                let client = RegistrationClient::new(addr);
                (0..10)
                    .map(|j| client.fetch_pck(id, 1 + (i + j) % 3).unwrap())
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    for (i, w) in workers.into_iter().enumerate() {
        for (j, resp) in w.join().unwrap().into_iter().enumerate() {
            let tcb = 1 + (i as u32 + j as u32) % 3;
            let ServiceResponse::Certificate(cert) = resp else {
                panic!("client {i} request {j}: {resp:?}");
            };
            assert_eq!(cert, service.lookup_certificate(&id, tcb).unwrap());
        }
    }
    handle.shutdown();
}

#[test]
fn garbage_and_oversized_frames_do_not_stop_the_service() {
    let world = established();
    let handle = serve_registration("127.0.0.1:0", world.service.clone()).unwrap();
    let client = RegistrationClient::new(handle.local_addr());
    let resp = client.call_raw(b"not a request").unwrap();
    assert!(matches!(
        ServiceResponse::from_canonical_bytes(&resp).unwrap(),
        ServiceResponse::Error(_)
    ));
    let mut raw = TcpStream::connect(handle.local_addr()).unwrap();
    raw.write_all(&(64u32 << 20).to_le_bytes()).unwrap();
    let mut reply = Vec::new();
    raw.read_to_end(&mut reply).unwrap();
    let resp = ServiceResponse::from_canonical_bytes(&reply[4..]).unwrap();
    assert!(
        matches!(resp, ServiceResponse::Error(ref e) if e.contains("too large")),
        "{resp:?}"
    );
    assert!(matches!(
        client.call(&ServiceRequest::PublicKey).unwrap(),
        ServiceResponse::PublicKey(k) if k == *world.service.public_key()
    ));
}
