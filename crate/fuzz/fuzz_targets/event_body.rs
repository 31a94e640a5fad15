#![no_main]

use libfuzzer_sys::fuzz_target;
use prescribe_core::event_log::Schema;
use prescribe_service::http::{to_incoming, EventBody};

fuzz_target!(|data: &[u8]| {
    if let Ok(body) = serde_json::from_slice::<EventBody>(data) {
        let _ = to_incoming(&Schema::default(), "case", &body);
    }
});
