//! Static checks on generated Python: placeholder-only functions and calls
//! to names that are neither defined, imported nor built in.
//!
//! This is a token scan, not a parser. It splits the text into logical lines,
//! tracks indentation, and collects bindings from the usual binding forms
//! (`def`, `class`, imports, assignments, `for` targets, `as` clauses,
//! parameters, lambdas, walrus). Anything it cannot scan is reported as a
//! diagnostic and fails the gate.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateReport {
    pub null_functions: Vec<String>,
    pub undefined_calls: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
    pub verdict: Verdict,
}

impl GateReport {
    fn new(null_functions: Vec<String>, undefined_calls: Vec<String>, diagnostics: Vec<String>) -> Self {
        let verdict = if null_functions.is_empty() && undefined_calls.is_empty() && diagnostics.is_empty() {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        Self { null_functions, undefined_calls, diagnostics, verdict }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn add_diagnostic(&mut self, message: impl Into<String>) {
        self.diagnostics.push(message.into());
        self.verdict = Verdict::Fail;
    }

    /// Human-readable summary for reprompts.
    pub fn describe(&self) -> String {
        let mut out = Vec::new();
        if !self.null_functions.is_empty() {
            out.push(format!(
                "Null functions (bodies with only placeholder statements): {}",
                self.null_functions.join(", ")
            ));
        }
        if !self.undefined_calls.is_empty() {
            out.push(format!(
                "Calls to functions that are neither defined, imported nor built in: {}",
                self.undefined_calls.join(", ")
            ));
        }
        for d in &self.diagnostics {
            out.push(d.clone());
        }
        if out.is_empty() {
            out.push("No problems found.".into());
        }
        out.join("\n")
    }
}

pub const PYTHON_BUILTINS: &[&str] = &[
    "__import__", "abs", "aiter", "all", "anext", "any", "ascii", "bin", "bool", "breakpoint", "bytearray",
    "bytes", "callable", "chr", "classmethod", "compile", "complex", "delattr", "dict", "dir", "divmod",
    "enumerate", "eval", "exec", "exit", "filter", "float", "format", "frozenset", "getattr", "globals",
    "hasattr", "hash", "help", "hex", "id", "input", "int", "isinstance", "issubclass", "iter", "len", "list",
    "locals", "map", "max", "memoryview", "min", "next", "object", "oct", "open", "ord", "pow", "print",
    "property", "quit", "range", "repr", "reversed", "round", "set", "setattr", "slice", "sorted",
    "staticmethod", "str", "sum", "super", "tuple", "type", "vars", "zip",
    "ArithmeticError", "AssertionError", "AttributeError", "BaseException", "BlockingIOError",
    "BrokenPipeError", "BufferError", "ConnectionError", "DeprecationWarning", "EOFError", "Exception",
    "FileExistsError", "FileNotFoundError", "FloatingPointError", "FutureWarning", "IOError", "ImportError",
    "IndexError", "InterruptedError", "IsADirectoryError", "KeyError", "KeyboardInterrupt", "LookupError",
    "MemoryError", "ModuleNotFoundError", "NameError", "NotADirectoryError", "NotImplementedError", "OSError",
    "OverflowError", "PermissionError", "RecursionError", "ReferenceError", "RuntimeError", "RuntimeWarning",
    "StopIteration", "SyntaxError", "SystemError", "SystemExit", "TimeoutError", "TypeError",
    "UnicodeDecodeError", "UnicodeEncodeError", "UnicodeError", "UserWarning", "ValueError", "Warning",
    "ZeroDivisionError",
];

const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue", "def",
    "del", "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in", "is", "lambda",
    "nonlocal", "not", "or", "pass", "raise", "return", "try", "while", "with", "yield",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GateConfig {
    pub builtins: BTreeSet<String>,
    /// Names defined elsewhere, e.g. sibling modules of the same design.
    pub known_names: BTreeSet<String>,
    pub max_source_bytes: Option<usize>,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            builtins: PYTHON_BUILTINS.iter().map(|s| s.to_string()).collect(),
            known_names: BTreeSet::new(),
            max_source_bytes: None,
        }
    }
}

impl GateConfig {
    pub fn with_known<I: IntoIterator<Item = S>, S: Into<String>>(mut self, names: I) -> Self {
        self.known_names.extend(names.into_iter().map(Into::into));
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Name(String),
    Op(&'static str),
    Str,
    Num,
}

impl Tok {
    fn is_name(&self, s: &str) -> bool {
        matches!(self, Tok::Name(n) if n == s)
    }

    fn is_op(&self, s: &str) -> bool {
        matches!(self, Tok::Op(o) if *o == s)
    }
}

#[derive(Clone, Debug)]
struct LogicalLine {
    indent: usize,
    lineno: usize,
    toks: Vec<Tok>,
    /// Bracket depth at the start of each token.
    depths: Vec<usize>,
}

const OPS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "==", "!=", "<=", ">=", "**", "//", "<<", ">>", "+=", "-=",
    "*=", "/=", "%=", "&=", "|=", "^=", "@=", "(", ")", "[", "]", "{", "}", ",", ":", ".", ";", "=", "+", "-",
    "*", "/", "%", "&", "|", "^", "~", "<", ">", "@", "!",
];

const STRING_PREFIXES: &[&str] = &["r", "u", "b", "f", "br", "rb", "fr", "rf"];

#[derive(Default)]
struct Scanner {
    lines: Vec<LogicalLine>,
    diagnostics: Vec<String>,
}

fn tokenize(code: &str) -> Scanner {
    let chars: Vec<char> = code.chars().collect();
    let mut sc = Scanner::default();
    let mut i = 0;
    let mut lineno = 1;
    let mut brackets: Vec<(char, usize)> = Vec::new();
    let mut current: Option<LogicalLine> = None;
    let mut at_line_start = true;

    let finish = |sc: &mut Scanner, current: &mut Option<LogicalLine>| {
        if let Some(line) = current.take() {
            if !line.toks.is_empty() {
                sc.lines.push(line);
            }
        }
    };

    while i < chars.len() {
        if at_line_start && brackets.is_empty() {
            let mut indent = 0;
            while i < chars.len() && (chars[i] == ' ' || chars[i] == '\t' || chars[i] == '\x0c') {
                indent = if chars[i] == '\t' { (indent / 8 + 1) * 8 } else { indent + 1 };
                i += 1;
            }
            at_line_start = false;
            if current.is_none() {
                current = Some(LogicalLine { indent, lineno, toks: Vec::new(), depths: Vec::new() });
            }
            continue;
        }
        let c = chars[i];
        match c {
            '\n' => {
                lineno += 1;
                i += 1;
                at_line_start = true;
                if brackets.is_empty() {
                    finish(&mut sc, &mut current);
                }
            }
            '\r' | ' ' | '\t' | '\x0c' => i += 1,
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '\\' if chars.get(i + 1) == Some(&'\n') => {
                i += 2;
                lineno += 1;
            }
            '\\' if chars.get(i + 1) == Some(&'\r') && chars.get(i + 2) == Some(&'\n') => {
                i += 3;
                lineno += 1;
            }
            '"' | '\'' => {
                i = scan_string(&chars, i, &mut lineno, &mut sc.diagnostics);
                push(&mut current, Tok::Str, brackets.len(), lineno);
            }
            c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '.' || chars[i] == '_') {
                    i += 1;
                }
                push(&mut current, Tok::Num, brackets.len(), lineno);
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                if matches!(chars.get(i), Some('"' | '\'')) && STRING_PREFIXES.contains(&word.to_ascii_lowercase().as_str()) {
                    i = scan_string(&chars, i, &mut lineno, &mut sc.diagnostics);
                    push(&mut current, Tok::Str, brackets.len(), lineno);
                } else {
                    push(&mut current, Tok::Name(word), brackets.len(), lineno);
                }
            }
            _ => {
                let Some(op) = OPS.iter().find(|op| op.chars().enumerate().all(|(k, oc)| chars.get(i + k) == Some(&oc)))
                else {
                    sc.diagnostics.push(format!("line {lineno}: unexpected character {c:?}"));
                    i += 1;
                    continue;
                };
                i += op.chars().count();
                match *op {
                    "(" | "[" | "{" => {
                        push(&mut current, Tok::Op(op), brackets.len(), lineno);
                        brackets.push((op.chars().next().unwrap(), lineno));
                    }
                    ")" | "]" | "}" => {
                        let expected = match *op {
                            ")" => '(',
                            "]" => '[',
                            _ => '{',
                        };
                        match brackets.pop() {
                            Some((open, _)) if open == expected => {}
                            Some((open, at)) => sc
                                .diagnostics
                                .push(format!("line {lineno}: {op:?} does not match {open:?} opened on line {at}")),
                            None => sc.diagnostics.push(format!("line {lineno}: unmatched {op:?}")),
                        }
                        push(&mut current, Tok::Op(op), brackets.len(), lineno);
                    }
                    ";" if brackets.is_empty() => {
                        let indent = current.as_ref().map_or(0, |l| l.indent);
                        finish(&mut sc, &mut current);
                        current = Some(LogicalLine { indent, lineno, toks: Vec::new(), depths: Vec::new() });
                    }
                    _ => push(&mut current, Tok::Op(op), brackets.len(), lineno),
                }
            }
        }
    }
    for (open, at) in brackets {
        sc.diagnostics.push(format!("line {at}: {open:?} is never closed"));
    }
    finish(&mut sc, &mut current);
    sc
}

fn push(current: &mut Option<LogicalLine>, tok: Tok, depth: usize, lineno: usize) {
    let line = current.get_or_insert_with(|| LogicalLine { indent: 0, lineno, toks: Vec::new(), depths: Vec::new() });
    line.toks.push(tok);
    line.depths.push(depth);
}

/// Scans a string literal starting at its opening quote; returns the index
/// just past it.
fn scan_string(chars: &[char], start: usize, lineno: &mut usize, diagnostics: &mut Vec<String>) -> usize {
    let quote = chars[start];
    let triple = chars.get(start + 1) == Some(&quote) && chars.get(start + 2) == Some(&quote);
    let opened_on = *lineno;
    let mut i = if triple { start + 3 } else { start + 1 };
    while i < chars.len() {
        let c = chars[i];
        if c == '\\' {
            if chars.get(i + 1) == Some(&'\n') {
                *lineno += 1;
            }
            i += 2;
            continue;
        }
        if c == '\n' {
            if !triple {
                diagnostics.push(format!("line {opened_on}: unterminated string literal"));
                return i;
            }
            *lineno += 1;
        }
        if c == quote {
            if !triple {
                return i + 1;
            }
            if chars.get(i + 1) == Some(&quote) && chars.get(i + 2) == Some(&quote) {
                return i + 3;
            }
        }
        i += 1;
    }
    diagnostics.push(format!("line {opened_on}: unterminated string literal"));
    chars.len()
}

#[derive(Clone, Debug)]
struct FunctionDef {
    name: String,
    top_level: bool,
    null: bool,
}

/// Everything the gate learns from one scan.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PythonScan {
    pub functions: Vec<String>,
    pub top_level_functions: Vec<String>,
    pub classes: Vec<String>,
    /// Root package names of every import, in order of appearance.
    pub imports: Vec<String>,
    pub wildcard_import: bool,
    pub bindings: BTreeSet<String>,
    /// Bare-name calls in order of first appearance.
    pub calls: Vec<String>,
    pub null_functions: Vec<String>,
    pub diagnostics: Vec<String>,
}

fn is_placeholder_statement(toks: &[Tok]) -> bool {
    match toks {
        [] => true,
        [Tok::Name(n)] if n == "pass" => true,
        [Tok::Op("...")] => true,
        rest if rest.iter().all(|t| *t == Tok::Str) => true,
        [Tok::Name(r), Tok::Name(e), rest @ ..] if r == "raise" && e == "NotImplementedError" => {
            rest.is_empty() || rest[0].is_op("(")
        }
        _ => false,
    }
}

/// Index of the colon ending a `def` header, starting from the name.
fn header_colon(line: &LogicalLine, from: usize) -> Option<usize> {
    (from..line.toks.len()).find(|&k| line.depths[k] == 0 && line.toks[k].is_op(":"))
}

fn add_unique(list: &mut Vec<String>, name: &str) {
    if !list.iter().any(|n| n == name) {
        list.push(name.to_string());
    }
}

pub fn scan_python(code: &str) -> PythonScan {
    let sc = tokenize(code);
    let mut scan = PythonScan { diagnostics: sc.diagnostics, ..PythonScan::default() };
    let lines = sc.lines;
    let mut defs: Vec<FunctionDef> = Vec::new();

    for (n, line) in lines.iter().enumerate() {
        let toks = &line.toks;
        let prev = n.checked_sub(1).map(|p| &lines[p]);
        let opens_block = |l: &LogicalLine| l.toks.last().is_some_and(|t| t.is_op(":"));
        match prev {
            None if line.indent > 0 => scan.diagnostics.push(format!("line {}: unexpected indent", line.lineno)),
            Some(p) if line.indent > p.indent && !opens_block(p) => {
                scan.diagnostics.push(format!("line {}: unexpected indent", line.lineno))
            }
            Some(p) if opens_block(p) && line.indent <= p.indent => {
                scan.diagnostics.push(format!("line {}: expected an indented block", p.lineno))
            }
            _ => {}
        }

        collect_bindings(line, &mut scan);

        let mut k = 0;
        if toks.first().is_some_and(|t| t.is_name("async")) {
            k = 1;
        }
        if toks.get(k).is_some_and(|t| t.is_name("def")) {
            match (toks.get(k + 1), toks.get(k + 2)) {
                (Some(Tok::Name(name)), Some(Tok::Op("("))) => {
                    let inline_body = header_colon(line, k + 2).map(|c| &toks[c + 1..]);
                    let body: Vec<&[Tok]> = match inline_body {
                        Some(rest) if !rest.is_empty() => vec![rest],
                        _ => lines[n + 1..]
                            .iter()
                            .take_while(|l| l.indent > line.indent)
                            .map(|l| l.toks.as_slice())
                            .collect(),
                    };
                    let null = body.iter().all(|stmt| is_placeholder_statement(stmt));
                    defs.push(FunctionDef {
                        name: name.clone(),
                        top_level: line.indent == 0,
                        null,
                    });
                }
                _ => scan.diagnostics.push(format!("line {}: malformed function definition", line.lineno)),
            }
        }
    }
    if let Some(last) = lines.last() {
        if last.toks.last().is_some_and(|t| t.is_op(":")) {
            scan.diagnostics.push(format!("line {}: expected an indented block", last.lineno));
        }
    }

    for line in &lines {
        for (k, tok) in line.toks.iter().enumerate() {
            let Tok::Name(name) = tok else { continue };
            if !line.toks.get(k + 1).is_some_and(|t| t.is_op("(")) || KEYWORDS.contains(&name.as_str()) {
                continue;
            }
            let prev = k.checked_sub(1).map(|p| &line.toks[p]);
            if prev.is_some_and(|p| p.is_op(".") || p.is_name("def") || p.is_name("class")) {
                continue;
            }
            add_unique(&mut scan.calls, name);
        }
    }

    for def in &defs {
        add_unique(&mut scan.functions, &def.name);
        if def.top_level {
            scan.top_level_functions.push(def.name.clone());
        }
        if def.null {
            add_unique(&mut scan.null_functions, &def.name);
        }
    }
    scan
}

fn collect_bindings(line: &LogicalLine, scan: &mut PythonScan) {
    let toks = &line.toks;
    let bind = |scan: &mut PythonScan, name: &str| {
        if !KEYWORDS.contains(&name) {
            scan.bindings.insert(name.to_string());
        }
    };
    let first = toks.iter().position(|t| !t.is_name("async")).unwrap_or(0);

    match toks.get(first) {
        Some(Tok::Name(kw)) if kw == "def" || kw == "class" => {
            if let Some(Tok::Name(name)) = toks.get(first + 1) {
                bind(scan, name);
                if kw == "class" {
                    scan.classes.push(name.clone());
                }
            }
            if kw == "def" {
                // parameters: names right after `(`, `,`, `*` or `**` inside the signature
                for k in first + 2..toks.len() {
                    if line.depths[k] == 0 && toks[k].is_op(":") {
                        break;
                    }
                    if let Tok::Name(name) = &toks[k] {
                        let after_sep = k > 0
                            && line.depths[k] == 1
                            && matches!(&toks[k - 1], Tok::Op("(" | "," | "*" | "**" | "/"));
                        if after_sep {
                            bind(scan, name);
                        }
                    }
                }
            }
        }
        Some(Tok::Name(kw)) if kw == "import" => {
            let mut k = first + 1;
            while k < toks.len() {
                if let Tok::Name(root) = &toks[k] {
                    add_unique(&mut scan.imports, root);
                    let mut end = k + 1;
                    while toks.get(end).is_some_and(|t| t.is_op(".")) && matches!(toks.get(end + 1), Some(Tok::Name(_))) {
                        end += 2;
                    }
                    if toks.get(end).is_some_and(|t| t.is_name("as")) {
                        if let Some(Tok::Name(alias)) = toks.get(end + 1) {
                            bind(scan, alias);
                        }
                        end += 2;
                    } else {
                        bind(scan, root);
                    }
                    k = end;
                } else {
                    k += 1;
                }
            }
        }
        Some(Tok::Name(kw)) if kw == "from" => {
            if let Some(Tok::Name(root)) = toks.get(first + 1) {
                add_unique(&mut scan.imports, root);
            }
            if let Some(at) = toks.iter().position(|t| t.is_name("import")) {
                let names = &toks[at + 1..];
                if names.iter().any(|t| t.is_op("*")) {
                    scan.wildcard_import = true;
                }
                let mut k = 0;
                while k < names.len() {
                    if let Tok::Name(name) = &names[k] {
                        if names.get(k + 1).is_some_and(|t| t.is_name("as")) {
                            if let Some(Tok::Name(alias)) = names.get(k + 2) {
                                bind(scan, alias);
                            }
                            k += 3;
                            continue;
                        }
                        bind(scan, name);
                    }
                    k += 1;
                }
            }
            return;
        }
        Some(Tok::Name(kw)) if kw == "global" || kw == "nonlocal" => {
            for t in &toks[first + 1..] {
                if let Tok::Name(name) = t {
                    bind(scan, name);
                }
            }
        }
        _ => {}
    }

    // assignment targets: names before the last depth-0 `=`
    if let Some(last_eq) = (0..toks.len()).rev().find(|&k| line.depths[k] == 0 && toks[k].is_op("=")) {
        for k in 0..last_eq {
            if let Tok::Name(name) = &toks[k] {
                if k == 0 || !toks[k - 1].is_op(".") {
                    bind(scan, name);
                }
            }
        }
    }

    for (k, tok) in toks.iter().enumerate() {
        match tok {
            Tok::Name(kw) if kw == "for" => {
                let depth = line.depths[k];
                for j in k + 1..toks.len() {
                    if line.depths[j] == depth && toks[j].is_name("in") {
                        break;
                    }
                    if let Tok::Name(name) = &toks[j] {
                        bind(scan, name);
                    }
                }
            }
            Tok::Name(kw) if kw == "as" => {
                if let Some(Tok::Name(name)) = toks.get(k + 1) {
                    bind(scan, name);
                }
            }
            Tok::Name(kw) if kw == "lambda" => {
                let depth = line.depths[k];
                for j in k + 1..toks.len() {
                    if line.depths[j] == depth && toks[j].is_op(":") {
                        break;
                    }
                    if let Tok::Name(name) = &toks[j] {
                        bind(scan, name);
                    }
                }
            }
            Tok::Op(":=") => {
                if let Some(Tok::Name(name)) = k.checked_sub(1).map(|p| &toks[p]) {
                    bind(scan, name);
                }
            }
            _ => {}
        }
    }
}

pub fn static_gate(code: &str, config: &GateConfig) -> GateReport {
    let scan = scan_python(code);
    let mut diagnostics = scan.diagnostics.clone();
    if let Some(limit) = config.max_source_bytes {
        if code.len() > limit {
            diagnostics.push(format!("program is {} bytes, over the {limit}-byte limit", code.len()));
        }
    }
    let undefined = if scan.wildcard_import {
        Vec::new()
    } else {
        scan.calls
            .iter()
            .filter(|name| {
                !scan.bindings.contains(*name) && !config.builtins.contains(*name) && !config.known_names.contains(*name)
            })
            .cloned()
            .collect()
    };
    GateReport::new(scan.null_functions, undefined, diagnostics)
}
