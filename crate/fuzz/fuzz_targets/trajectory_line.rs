#![no_main]

use introspect::rollout::parse_trajectory_line;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(line) = std::str::from_utf8(data) {
        let _ = parse_trajectory_line(line);
    }
});
