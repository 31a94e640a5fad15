#![no_main]

use libfuzzer_sys::fuzz_target;
use prescribe_core::event_log::ColumnMapping;

fuzz_target!(|text: &str| {
    if let Ok(m) = ColumnMapping::from_kv(text) {
        let again = ColumnMapping::from_kv(&m.to_kv()).expect("written mapping parses");
        assert_eq!(again, m);
    }
});
