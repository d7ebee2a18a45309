#![no_main]

use libfuzzer_sys::fuzz_target;
use paircal::io::parse_patient_csv;
use paircal::model::crude_summaries;

fuzz_target!(|data: &[u8]| {
    // Anything that validates must also summarise without panicking.
    if let Ok(study) = parse_patient_csv(data, "fuzz", None, None) {
        let _ = crude_summaries(&study);
    }
});
