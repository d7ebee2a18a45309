#![no_main]

use libfuzzer_sys::fuzz_target;
use paircal::report::parse_json_report;

fuzz_target!(|data: &[u8]| {
    let _ = parse_json_report(data);
});
