//! Parsers for the outline and detailed-design response formats.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlineStep {
    pub title: String,
    pub summary: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlgorithmOutline {
    pub steps: Vec<OutlineStep>,
}

impl AlgorithmOutline {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, step) in self.steps.iter().enumerate() {
            if step.summary.is_empty() {
                let _ = writeln!(out, "{}. {}", i + 1, step.title);
            } else {
                let _ = writeln!(out, "{}. {}: {}", i + 1, step.title, step.summary);
            }
        }
        out.trim_end().to_string()
    }
}

fn numbered_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s{0,3}(?:\*\*)?(\d{1,2})[.)](?:\*\*)?\s+(.+)$").unwrap())
}

fn unbold(s: &str) -> String {
    s.replace("**", "").trim().to_string()
}

/// Parses a numbered list of `N. Title: summary` lines. Indented or bulleted
/// lines following a step extend its summary.
pub fn parse_outline(reply: &str) -> Result<AlgorithmOutline, String> {
    let mut steps: Vec<OutlineStep> = Vec::new();
    for line in reply.lines() {
        if let Some(caps) = numbered_re().captures(line) {
            let body = unbold(&caps[2]);
            let (title, summary) = match body.split_once(':') {
                Some((t, s)) if !t.trim().is_empty() => (t.trim().to_string(), s.trim().to_string()),
                _ => (body.clone(), String::new()),
            };
            steps.push(OutlineStep { title, summary });
            continue;
        }
        let trimmed = line.trim();
        let continues = line.starts_with([' ', '\t']) || trimmed.starts_with(['-', '*']);
        if let (Some(step), true) = (steps.last_mut(), continues && !trimmed.is_empty()) {
            let extra = unbold(trimmed.trim_start_matches(['-', '*']));
            if !step.summary.is_empty() {
                step.summary.push(' ');
            }
            step.summary.push_str(&extra);
        }
    }
    if steps.len() < 2 {
        return Err(format!(
            "the outline must be a numbered list with at least 2 steps, found {}",
            steps.len()
        ));
    }
    let mut seen = HashSet::new();
    for step in &steps {
        if !seen.insert(step.title.to_lowercase()) {
            return Err(format!("step title {:?} appears more than once; titles must be unique", step.title));
        }
    }
    Ok(AlgorithmOutline { steps })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    /// 1-based outline step this subtask elaborates.
    pub step: usize,
    /// `"3"` or `"3.2"`, as written in the reply.
    pub label: String,
    pub title: String,
    pub function_name: String,
    pub actions: Vec<String>,
    pub io_contract: String,
}

impl Subtask {
    pub fn render(&self) -> String {
        let mut out = format!("### Step {}: {}\nFunction: {}\nActions:\n", self.label, self.title, self.function_name);
        for action in &self.actions {
            let _ = writeln!(out, "- {action}");
        }
        let _ = write!(out, "IO: {}", self.io_contract);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetailedDesign {
    pub subtasks: Vec<Subtask>,
}

impl DetailedDesign {
    pub fn render(&self) -> String {
        self.subtasks.iter().map(Subtask::render).collect::<Vec<_>>().join("\n\n")
    }

    pub fn function_names(&self) -> Vec<String> {
        self.subtasks.iter().map(|s| s.function_name.clone()).collect()
    }

    /// 1-based outline steps with no subtask.
    pub fn missing_steps(&self, outline_len: usize) -> Vec<usize> {
        let covered: BTreeSet<usize> = self.subtasks.iter().map(|s| s.step).collect();
        (1..=outline_len).filter(|s| !covered.contains(s)).collect()
    }
}

fn step_header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*#{2,4}\s*(?:\*\*)?step\s+(\d+)((?:\.\d+)*)\s*[:.\-]?\s*(.*?)(?:\*\*)?\s*$").unwrap())
}

fn identifier_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_]*$").unwrap())
}

fn field<'a>(line: &'a str, name: &str) -> Option<&'a str> {
    let line = line.trim().trim_start_matches(['-', '*', ' ']);
    let line = line.strip_prefix("**").unwrap_or(line);
    let head = line.get(..name.len())?;
    if !head.eq_ignore_ascii_case(name) {
        return None;
    }
    let rest = line[name.len()..].trim_start_matches("**");
    rest.strip_prefix(':').map(|r| r.trim_start_matches("**").trim())
}

#[derive(PartialEq)]
enum Section {
    None,
    Actions,
    Io,
}

/// Parses `### Step N[.k]: title` blocks with `Function:`, `Actions:` and
/// `IO:` fields. Does not check coverage; see [`validate_design`].
pub fn parse_design(reply: &str) -> Result<DetailedDesign, String> {
    let mut subtasks: Vec<Subtask> = Vec::new();
    let mut section = Section::None;
    for line in reply.lines() {
        if let Some(caps) = step_header_re().captures(line) {
            let step: usize = caps[1].parse().map_err(|_| format!("bad step number in {line:?}"))?;
            subtasks.push(Subtask {
                step,
                label: format!("{}{}", &caps[1], &caps[2]),
                title: unbold(&caps[3]),
                function_name: String::new(),
                actions: Vec::new(),
                io_contract: String::new(),
            });
            section = Section::None;
            continue;
        }
        let Some(current) = subtasks.last_mut() else { continue };
        if let Some(name) = field(line, "Function") {
            current.function_name = name.trim_matches('`').trim_end_matches("()").trim_matches('`').to_string();
            section = Section::None;
        } else if let Some(rest) = field(line, "Actions") {
            section = Section::Actions;
            if !rest.is_empty() {
                current.actions.push(rest.to_string());
            }
        } else if let Some(rest) = field(line, "IO") {
            section = Section::Io;
            current.io_contract = rest.to_string();
        } else {
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            match section {
                Section::Actions => {
                    let item = trimmed.trim_start_matches(['-', '*']).trim();
                    if trimmed.starts_with(['-', '*']) || current.actions.is_empty() {
                        current.actions.push(item.to_string());
                    } else if let Some(last) = current.actions.last_mut() {
                        last.push(' ');
                        last.push_str(item);
                    }
                }
                Section::Io => {
                    if !current.io_contract.is_empty() {
                        current.io_contract.push('\n');
                    }
                    current.io_contract.push_str(trimmed);
                }
                Section::None => {}
            }
        }
    }
    if subtasks.is_empty() {
        return Err("no `### Step <n>: <title>` blocks found".into());
    }
    let mut names = HashSet::new();
    for subtask in &subtasks {
        if !identifier_re().is_match(&subtask.function_name) {
            return Err(format!(
                "step {} needs a `Function: <function_name>` line with a valid identifier",
                subtask.label
            ));
        }
        if !names.insert(subtask.function_name.clone()) {
            return Err(format!("function name {} is used by more than one subtask", subtask.function_name));
        }
        if subtask.actions.is_empty() {
            return Err(format!("step {} lists no actions", subtask.label));
        }
    }
    Ok(DetailedDesign { subtasks })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DesignProblem {
    Unparseable(String),
    CoverageGap(Vec<usize>),
}

pub fn validate_design(design: &DetailedDesign, outline: &AlgorithmOutline) -> Result<(), DesignProblem> {
    let n = outline.steps.len();
    if let Some(bad) = design.subtasks.iter().find(|s| s.step == 0 || s.step > n) {
        return Err(DesignProblem::Unparseable(format!(
            "step {} does not exist; the outline has steps 1 to {n}",
            bad.label
        )));
    }
    let missing = design.missing_steps(n);
    if missing.is_empty() {
        Ok(())
    } else {
        Err(DesignProblem::CoverageGap(missing))
    }
}

/// Adds the subtasks of `patch` that cover steps `base` lacks, keeping outline
/// order.
pub fn merge_design(base: &DetailedDesign, patch: &DetailedDesign, outline_len: usize) -> DetailedDesign {
    let missing: BTreeSet<usize> = base.missing_steps(outline_len).into_iter().collect();
    let mut subtasks = base.subtasks.clone();
    let names: HashSet<String> = base.function_names().into_iter().collect();
    subtasks.extend(
        patch
            .subtasks
            .iter()
            .filter(|s| missing.contains(&s.step) && !names.contains(&s.function_name))
            .cloned(),
    );
    subtasks.sort_by_key(|s| s.step);
    DetailedDesign { subtasks }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OUTLINE: &str = "Here is the outline:\n\
        1. Data loading: read the MIT-BIH records with wfdb\n\
        2. **Preprocessing**: band-pass filter 5-15 Hz\n\
           - remove baseline wander\n\
        3. R-peak detection: Pan-Tompkins thresholds\n\
        4) Evaluation: match peaks to annotations within 150 ms\n\
        5. Reporting: print the accuracy\n\
        Good luck!";

    #[test]
    fn five_steps_in_order() {
        let outline = parse_outline(OUTLINE).unwrap();
        let titles: Vec<_> = outline.steps.iter().map(|s| s.title.as_str()).collect();
        assert_eq!(titles, ["Data loading", "Preprocessing", "R-peak detection", "Evaluation", "Reporting"]);
        assert_eq!(outline.steps[1].summary, "band-pass filter 5-15 Hz remove baseline wander");
        assert_eq!(parse_outline(&outline.render()).unwrap(), outline);
    }

    #[test]
    fn one_step_or_duplicates_rejected() {
        assert!(parse_outline("1. Only: one").is_err());
        assert!(parse_outline("1. A: x\n2. a: y").is_err());
        assert!(parse_outline("no list here").is_err());
    }

    fn design_text(steps: &[usize]) -> String {
        steps
            .iter()
            .map(|s| format!("### Step {s}: Task {s}\nFunction: `task_{s}()`\nActions:\n- do {s}\n- check {s}\nIO: takes x, returns y\n"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn design_round_trip_and_coverage() {
        let outline = parse_outline(OUTLINE).unwrap();
        let design = parse_design(&design_text(&[1, 2, 3, 4, 5])).unwrap();
        assert_eq!(design.subtasks.len(), 5);
        assert_eq!(design.subtasks[0].function_name, "task_1");
        assert_eq!(design.subtasks[0].actions, ["do 1", "check 1"]);
        assert_eq!(validate_design(&design, &outline), Ok(()));
        assert_eq!(parse_design(&design.render()).unwrap(), design);
    }

    #[test]
    fn gap_is_reported_and_merged() {
        let outline = parse_outline(OUTLINE).unwrap();
        let partial = parse_design(&design_text(&[1, 2, 4, 5])).unwrap();
        assert_eq!(validate_design(&partial, &outline), Err(DesignProblem::CoverageGap(vec![3])));
        let patch = parse_design(&design_text(&[3])).unwrap();
        let merged = merge_design(&partial, &patch, 5);
        assert_eq!(merged.subtasks.iter().map(|s| s.step).collect::<Vec<_>>(), [1, 2, 3, 4, 5]);
        assert_eq!(validate_design(&merged, &outline), Ok(()));
    }

    #[test]
    fn sub_steps_and_bad_references() {
        let text = "## Step 2.1: Filter\nFunction: bandpass\nActions: apply butterworth\nIO: signal\n\
                    ## Step 2.2: Square\nFunction: square\nActions:\n- square samples\nIO: signal";
        let design = parse_design(text).unwrap();
        assert_eq!(design.subtasks[0].label, "2.1");
        assert_eq!(design.subtasks[1].step, 2);
        let outline = AlgorithmOutline {
            steps: vec![OutlineStep { title: "a".into(), summary: String::new() }; 1],
        };
        assert!(matches!(validate_design(&design, &outline), Err(DesignProblem::Unparseable(_))));
        assert!(parse_design("### Step 1: x\nActions:\n- y").is_err());
    }
}
