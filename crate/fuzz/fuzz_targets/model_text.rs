#![no_main]

use libfuzzer_sys::fuzz_target;
use prescribe_core::OrfModel;

fuzz_target!(|text: &str| {
    let _ = OrfModel::from_text(text, None);
});
