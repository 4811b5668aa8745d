#![no_main]

use libfuzzer_sys::fuzz_target;
use synthkit_core::UserProblem;

fuzz_target!(|text: &str| {
    if let Ok(problem) = UserProblem::parse(text) {
        // A parsed problem survives its own serialization.
        let again = UserProblem::parse(&problem.to_toml()).expect("re-parse");
        assert_eq!(again, problem);
        let _ = problem.render();
    }
});
