#![no_main]

use libfuzzer_sys::fuzz_target;
use prescribe_core::features::parse_encoder;

fuzz_target!(|text: &str| {
    let _ = parse_encoder(text);
});
