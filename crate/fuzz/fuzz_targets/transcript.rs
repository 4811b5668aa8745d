#![no_main]

use libfuzzer_sys::fuzz_target;
use synthkit_core::llm::ScriptedBackend;

fuzz_target!(|text: &str| {
    let _ = ScriptedBackend::from_text(text);
});
