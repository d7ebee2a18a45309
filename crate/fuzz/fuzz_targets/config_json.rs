#![no_main]

use libfuzzer_sys::fuzz_target;
use paircal::config::AnalysisConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = AnalysisConfig::from_json(data) {
        let _ = cfg.validate();
    }
});
