use std::io::{BufRead, Write};
use std::sync::Mutex;

use synthkit_core::session::{FeedbackGate, MAX_FEEDBACK_BYTES};
use synthkit_core::state::FeedbackRequest;
use synthkit_core::GateDecision;

/// Headless steering: every gate continues without instructions.
pub struct AutoContinue;

impl FeedbackGate for AutoContinue {
    fn wait(&self, _request: &FeedbackRequest) -> Option<GateDecision> {
        Some(GateDecision::Continue)
    }
}

/// Asks on the console. An empty line continues, `stop` finalizes, anything
/// else is passed on as instructions. End of input leaves the session paused.
pub struct ConsoleGate<R> {
    input: Mutex<R>,
}

impl ConsoleGate<std::io::BufReader<std::io::Stdin>> {
    pub fn stdin() -> Self {
        Self::new(std::io::BufReader::new(std::io::stdin()))
    }
}

impl<R: BufRead> ConsoleGate<R> {
    pub fn new(input: R) -> Self {
        Self { input: Mutex::new(input) }
    }
}

impl<R: BufRead + Send> FeedbackGate for ConsoleGate<R> {
    fn wait(&self, request: &FeedbackRequest) -> Option<GateDecision> {
        let mut input = self.input.lock().unwrap();
        loop {
            eprintln!("{}", request.reason);
            eprint!("feedback (empty to continue, \"stop\" to finish)> ");
            std::io::stderr().flush().ok();
            let mut line = String::new();
            if input.read_line(&mut line).ok()? == 0 {
                eprintln!();
                return None;
            }
            let text = line.trim();
            return Some(match text {
                "" => GateDecision::Continue,
                "stop" => GateDecision::Stop,
                _ if text.len() > MAX_FEEDBACK_BYTES => {
                    eprintln!("feedback is limited to {MAX_FEEDBACK_BYTES} bytes");
                    continue;
                }
                _ => GateDecision::Feedback(text.to_string()),
            });
        }
    }
}
