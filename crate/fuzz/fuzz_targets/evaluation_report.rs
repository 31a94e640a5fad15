#![no_main]

use libfuzzer_sys::fuzz_target;
use prescribe_core::policy::EvaluationReport;

fuzz_target!(|text: &str| {
    let _ = EvaluationReport::from_json(text);
});
