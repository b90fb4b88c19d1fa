#![no_main]

use introspect::rollout::PolicyMode;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.len() < 8 {
        return;
    }
    let (tau, name) = data.split_at(8);
    let tau = f64::from_le_bytes(tau.try_into().unwrap());
    if let Ok(name) = std::str::from_utf8(name) {
        let _ = PolicyMode::from_name(name, tau);
    }
});
