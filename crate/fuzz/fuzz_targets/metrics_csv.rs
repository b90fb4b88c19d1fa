#![no_main]

use introspect::grpo::read_metrics_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_metrics_csv(data);
});
