#![no_main]

use libfuzzer_sys::fuzz_target;
use prescribe_core::Policy;
use prescribe_service::PolicyRecord;

fuzz_target!(|text: &str| {
    let _ = Policy::from_json(text);
    if let Ok(r) = serde_json::from_str::<PolicyRecord>(text) {
        let _ = r.policy.validate();
    }
});
