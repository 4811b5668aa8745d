//! Fenced code block extraction from model replies.
//!
//! Fences follow CommonMark: up to three spaces of indentation, a run of at
//! least three backticks or tildes, and an optional info string whose first
//! word is the language. A block closes at a fence of the same character that
//! is at least as long and carries no info string. An unclosed block runs to
//! the end of the text.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBlock {
    pub language: Option<String>,
    pub code: String,
    /// The fence was never closed; the block extends to end of text.
    pub unterminated: bool,
}

struct Fence {
    indent: usize,
    ch: char,
    len: usize,
    info: String,
}

fn parse_fence(line: &str) -> Option<Fence> {
    let indent = line.len() - line.trim_start_matches(' ').len();
    if indent > 3 {
        return None;
    }
    let rest = &line[indent..];
    let ch = rest.chars().next().filter(|c| *c == '`' || *c == '~')?;
    let len = rest.chars().take_while(|c| *c == ch).count();
    if len < 3 {
        return None;
    }
    let info = rest[len..].trim();
    if ch == '`' && info.contains('`') {
        return None;
    }
    Some(Fence { indent, ch, len, info: info.to_string() })
}

fn strip_indent(line: &str, indent: usize) -> &str {
    let spaces = line.len() - line.trim_start_matches(' ').len();
    &line[spaces.min(indent)..]
}

pub fn extract_code_blocks(text: &str) -> Vec<CodeBlock> {
    let mut blocks = Vec::new();
    let mut open: Option<(Fence, String)> = None;
    for line in text.lines() {
        match open.take() {
            None => {
                if let Some(fence) = parse_fence(line) {
                    open = Some((fence, String::new()));
                }
            }
            Some((fence, mut code)) => {
                let closes = parse_fence(line)
                    .is_some_and(|f| f.ch == fence.ch && f.len >= fence.len && f.info.is_empty());
                if closes {
                    blocks.push(CodeBlock { language: language(&fence.info), code, unterminated: false });
                } else {
                    code.push_str(strip_indent(line, fence.indent));
                    code.push('\n');
                    open = Some((fence, code));
                }
            }
        }
    }
    if let Some((fence, code)) = open {
        blocks.push(CodeBlock { language: language(&fence.info), code, unterminated: true });
    }
    blocks
}

fn language(info: &str) -> Option<String> {
    info.split_whitespace().next().map(|w| w.to_ascii_lowercase())
}

pub fn is_python(block: &CodeBlock) -> bool {
    matches!(block.language.as_deref(), None | Some("python" | "py" | "python3"))
}

pub fn is_markdown(block: &CodeBlock) -> bool {
    matches!(block.language.as_deref(), Some("markdown" | "md"))
}
