#![no_main]

use libfuzzer_sys::fuzz_target;
use prescribe_core::event_log::{parse_csv_reader, ColumnMapping};

fuzz_target!(|data: &[u8]| {
    let mapping = ColumnMapping::default();
    if let Ok(out) = parse_csv_reader(data, &mapping) {
        for t in &out.log.traces {
            assert!(t.events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        }
    }
});
