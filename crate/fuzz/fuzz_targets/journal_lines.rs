#![no_main]

use libfuzzer_sys::fuzz_target;
use prescribe_service::journal::{parse_lines, JournalEntry};

fuzz_target!(|text: &str| {
    let _ = parse_lines::<JournalEntry>(text, "fuzz");
});
