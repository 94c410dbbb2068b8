#![no_main]

use libfuzzer_sys::fuzz_target;
use mpsim::codec::Canonical;
use mpsim::registration::ServicePublicKey;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = ServicePublicKey::from_canonical_bytes(data) {
        assert_eq!(v.to_canonical_bytes(), data);
    }
});
