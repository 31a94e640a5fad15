#![no_main]

use libfuzzer_sys::fuzz_target;
use prescribe_core::features::{parse_encoder, EncodedDataset};

fuzz_target!(|data: &[u8]| {
    let encoder = parse_encoder(include_str!("../corpus/encoder_json/synth.json")).expect("seed encoder");
    let _ = EncodedDataset::read_matrix(data, &encoder);
});
