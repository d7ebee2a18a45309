#![no_main]

use libfuzzer_sys::fuzz_target;
use paircal::config::AnalysisConfig;
use paircal::io::parse_summary_csv;
use paircal::report::{run_analysis, AnalysisInput};

fuzz_target!(|data: &[u8]| {
    // Small inputs go through the whole summary pipeline as well.
    if let Ok(rows) = parse_summary_csv(data, "fuzz") {
        if rows.len() <= 12 {
            let _ = run_analysis(&AnalysisInput::Summaries(rows), &AnalysisConfig::summary_level());
        }
    }
});
