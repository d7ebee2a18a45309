#![no_main]

use libfuzzer_sys::fuzz_target;
use paircal::io::parse_schema_json;

fuzz_target!(|data: &[u8]| {
    let _ = parse_schema_json(data);
});
