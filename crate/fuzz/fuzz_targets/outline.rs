#![no_main]

use libfuzzer_sys::fuzz_target;
use synthkit_core::synthesis::parse_outline;

fuzz_target!(|reply: &str| {
    if let Ok(outline) = parse_outline(reply) {
        // Rendering and parsing again is stable.
        let rendered = outline.render();
        assert_eq!(parse_outline(&rendered).expect("re-parse").render(), rendered);
    }
});
