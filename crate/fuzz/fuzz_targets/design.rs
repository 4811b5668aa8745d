#![no_main]

use libfuzzer_sys::fuzz_target;
use synthkit_core::synthesis::parse_design;

fuzz_target!(|reply: &str| {
    if let Ok(design) = parse_design(reply) {
        assert!(!design.subtasks.is_empty());
        let _ = design.render();
    }
});
