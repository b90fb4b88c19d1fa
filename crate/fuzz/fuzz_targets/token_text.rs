#![no_main]

use introspect::tasks::Vocab;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(ids) = Vocab::encode(text) {
            let again = Vocab::encode(&Vocab::render(&ids)).expect("rendered text re-encodes");
            assert_eq!(ids, again);
        }
    }
});
