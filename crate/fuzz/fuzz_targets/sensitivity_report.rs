#![no_main]

use libfuzzer_sys::fuzz_target;
use prescribe_core::sensitivity::SensitivityReport;

fuzz_target!(|text: &str| {
    let _ = SensitivityReport::from_json(text);
});
