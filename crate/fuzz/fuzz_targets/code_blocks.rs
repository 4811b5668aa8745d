#![no_main]

use libfuzzer_sys::fuzz_target;
use synthkit_core::synthesis::extract_code_blocks;

fuzz_target!(|text: &str| {
    for block in extract_code_blocks(text) {
        // Every code line comes from the input.
        for line in block.code.lines().filter(|l| !l.trim().is_empty()) {
            assert!(text.contains(line.trim()));
        }
    }
});
