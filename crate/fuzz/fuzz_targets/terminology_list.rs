#![no_main]

use libfuzzer_sys::fuzz_target;
use synthkit_core::retrieval::{parse_relevance, parse_terminologies};

fuzz_target!(|reply: &str| {
    if let Some(terms) = parse_terminologies(reply) {
        assert!(!terms.is_empty());
        assert!(terms.iter().all(|t| !t.term.is_empty()));
    }
    if let Some(picked) = parse_relevance(reply, 5) {
        assert!(picked.iter().all(|&i| i < 5));
    }
});
