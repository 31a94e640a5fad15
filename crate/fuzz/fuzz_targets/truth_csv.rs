#![no_main]

use libfuzzer_sys::fuzz_target;
use prescribe_core::synth::read_truth;

fuzz_target!(|data: &[u8]| {
    let _ = read_truth(data);
});
