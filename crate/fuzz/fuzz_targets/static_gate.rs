#![no_main]

use libfuzzer_sys::fuzz_target;
use synthkit_core::synthesis::{static_gate, GateConfig};

fuzz_target!(|code: &str| {
    let report = static_gate(code, &GateConfig::default());
    let _ = report.describe();
});
