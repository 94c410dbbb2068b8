#![no_main]

use libfuzzer_sys::fuzz_target;
use mpsim::link::WirePacket;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = WirePacket::from_bytes(data) {
        assert_eq!(p.to_bytes(), data);
    }
});
