#![no_main]

use libfuzzer_sys::fuzz_target;
use mpsim::registration::VettingList;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(list) = VettingList::parse(text) {
        assert_eq!(VettingList::parse(&list.render()).unwrap(), list);
    }
});
