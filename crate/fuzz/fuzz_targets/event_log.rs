#![no_main]

use libfuzzer_sys::fuzz_target;
use synthkit_core::store::{parse_log, replay};

fuzz_target!(|raw: &[u8]| {
    if let Ok(events) = parse_log(raw, None) {
        for (i, event) in events.iter().enumerate() {
            assert_eq!(event.seq, i as u64 + 1);
        }
        let _ = replay("fuzz", &events);
    }
});
