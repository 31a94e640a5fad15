#![no_main]

use libfuzzer_sys::fuzz_target;
use prescribe_core::time::TimestampFormat;

fuzz_target!(|text: &str| {
    let _ = TimestampFormat::Iso8601.parse(text);
    let _ = TimestampFormat::Pattern("%d/%m/%Y %H:%M".into()).parse(text);
});
