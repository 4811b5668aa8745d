#![no_main]

use libfuzzer_sys::fuzz_target;
use synthkit_core::retrieval::{extract_title, html_to_text};

fuzz_target!(|markup: &str| {
    let _ = html_to_text(markup);
    let _ = extract_title(markup);
});
