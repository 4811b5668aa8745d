#![no_main]

use libfuzzer_sys::fuzz_target;
use synthkit_core::sandbox::parse_metric_text;

fuzz_target!(|stdout: &str| {
    if let Ok(Some(metric)) = parse_metric_text(stdout) {
        assert!(metric.value.is_finite());
        assert!(!metric.name.is_empty());
    }
});
