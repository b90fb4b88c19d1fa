#![no_main]

use introspect::numkit::Rng;
use introspect::tasks::TaskMix;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(mix) = TaskMix::parse(spec) {
        let inst = mix.sample(&mut Rng::new(0)).expect("parsed mix samples");
        assert!((1..=5).contains(&inst.difficulty));
    }
});
