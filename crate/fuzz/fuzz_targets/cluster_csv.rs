#![no_main]

use libfuzzer_sys::fuzz_target;
use paircal::io::parse_cluster_csv;

fuzz_target!(|data: &[u8]| {
    let _ = parse_cluster_csv(data, "fuzz");
});
