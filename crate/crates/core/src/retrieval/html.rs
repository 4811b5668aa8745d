//! Plain-text extraction from fetched markup.

const BLOCK_TAGS: &[&str] = &[
    "address", "article", "aside", "blockquote", "br", "dd", "div", "dl", "dt", "figcaption", "figure",
    "footer", "h1", "h2", "h3", "h4", "h5", "h6", "header", "hr", "li", "main", "nav", "ol", "p", "pre",
    "section", "table", "td", "th", "tr", "ul",
];

/// Elements whose content is dropped entirely.
const SKIPPED_TAGS: &[&str] = &["script", "style", "title", "noscript", "template"];

fn starts_with_ci(haystack: &[char], at: usize, needle: &str) -> bool {
    let mut i = at;
    for n in needle.chars() {
        match haystack.get(i) {
            Some(c) if c.eq_ignore_ascii_case(&n) => i += 1,
            _ => return false,
        }
    }
    true
}

fn find_ci(haystack: &[char], from: usize, needle: &str) -> Option<usize> {
    (from..haystack.len()).find(|&i| starts_with_ci(haystack, i, needle))
}

/// Index just past the `>` closing the tag that starts at `start`, honouring
/// quoted attribute values.
fn tag_end(chars: &[char], start: usize) -> usize {
    let mut quote: Option<char> = None;
    for (i, c) in chars.iter().enumerate().skip(start + 1) {
        match (quote, c) {
            (Some(q), c) if *c == q => quote = None,
            (None, '"' | '\'') => quote = Some(*c),
            (None, '>') => return i + 1,
            _ => {}
        }
    }
    chars.len()
}

fn tag_name(chars: &[char], start: usize) -> (bool, String) {
    let mut i = start + 1;
    let closing = chars.get(i) == Some(&'/');
    if closing {
        i += 1;
    }
    let name: String = chars[i.min(chars.len())..]
        .iter()
        .take_while(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect();
    (closing, name)
}

fn decode_entity(chars: &[char], at: usize) -> Option<(char, usize)> {
    let end = (at + 1..chars.len().min(at + 12)).find(|&i| chars[i] == ';')?;
    let name: String = chars[at + 1..end].iter().collect();
    let decoded = match name.as_str() {
        "amp" => '&',
        "lt" => '<',
        "gt" => '>',
        "quot" => '"',
        "apos" | "#39" => '\'',
        "nbsp" => ' ',
        _ => {
            let code = if let Some(hex) = name.strip_prefix("#x").or_else(|| name.strip_prefix("#X")) {
                u32::from_str_radix(hex, 16).ok()?
            } else {
                name.strip_prefix('#')?.parse().ok()?
            };
            char::from_u32(code)?
        }
    };
    Some((decoded, end + 1))
}

/// Strips tags, drops script/style content, decodes common entities and
/// collapses whitespace. Block elements become line breaks.
pub fn html_to_text(markup: &str) -> String {
    let chars: Vec<char> = markup.chars().collect();
    let mut out = String::with_capacity(markup.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '<' {
            if starts_with_ci(&chars, i, "<!--") {
                i = find_ci(&chars, i + 4, "-->").map_or(chars.len(), |e| e + 3);
                continue;
            }
            let next = chars.get(i + 1).copied().unwrap_or(' ');
            if next.is_ascii_alphabetic() || next == '/' || next == '!' || next == '?' {
                let (closing, name) = tag_name(&chars, i);
                let end = tag_end(&chars, i);
                if !closing && SKIPPED_TAGS.contains(&name.as_str()) {
                    let close = format!("</{name}");
                    i = match find_ci(&chars, end, &close) {
                        Some(at) => tag_end(&chars, at),
                        None => chars.len(),
                    };
                    continue;
                }
                if BLOCK_TAGS.contains(&name.as_str()) {
                    out.push('\n');
                }
                i = end;
                continue;
            }
        }
        if c == '&' {
            if let Some((decoded, next)) = decode_entity(&chars, i) {
                push_text(&mut out, decoded);
                i = next;
                continue;
            }
        }
        push_text(&mut out, c);
        i += 1;
    }
    normalize_whitespace(&out)
}

/// A literal `<` never ends up directly before something that reads as a tag.
fn push_text(out: &mut String, c: char) {
    if out.ends_with('<') && (c.is_ascii_alphabetic() || matches!(c, '/' | '!' | '?')) {
        out.push(' ');
    }
    out.push(c);
}

fn normalize_whitespace(text: &str) -> String {
    text.lines()
        .map(|line| line.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|line| !line.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn extract_title(markup: &str) -> Option<String> {
    let chars: Vec<char> = markup.chars().collect();
    let open = find_ci(&chars, 0, "<title")?;
    let start = tag_end(&chars, open);
    let close = find_ci(&chars, start, "</title")?;
    let title: String = chars[start..close].iter().collect();
    let title = html_to_text(&title);
    (!title.is_empty()).then_some(title)
}
