#![no_main]

use libfuzzer_sys::fuzz_target;
use prescribe_core::synth::SyntheticSpec;

fuzz_target!(|text: &str| {
    let _ = SyntheticSpec::parse(text);
});
