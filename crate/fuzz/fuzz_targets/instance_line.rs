#![no_main]

use introspect::tasks::{parse_instance_line, verify};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(line) = std::str::from_utf8(data) {
        if let Ok((inst, _seed)) = parse_instance_line(line) {
            let r = verify(&inst, &inst.gold);
            assert!(r == 0.0 || r == 1.0);
        }
    }
});
