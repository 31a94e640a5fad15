#![no_main]

use libfuzzer_sys::fuzz_target;
use prescribe_core::kv::KvDoc;

fuzz_target!(|text: &str| {
    let _ = KvDoc::parse(text);
});
