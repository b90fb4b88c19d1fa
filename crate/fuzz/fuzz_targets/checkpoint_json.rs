#![no_main]

use introspect::model::{forward, Checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(ck) = Checkpoint::from_json(text) else {
        return;
    };
    // A checkpoint that loads must be usable.
    if let Ok(params) = ck.to_params() {
        let n = params.config.max_len.min(4);
        let tokens: Vec<usize> = (0..n).map(|i| i % params.config.vocab_size.max(1)).collect();
        if !tokens.is_empty() {
            let _ = forward(&params, &tokens);
        }
    }
});
