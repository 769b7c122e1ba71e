use std::sync::LazyLock;

use regex::Regex;

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:https?://|ftp://|www\.)\S+").unwrap());
// [1], [2,3], [4-7], [1, 5–9]
static CITATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\[\s*\d+(?:\s*[,\-–]\s*\d+)*\s*\]").unwrap());
static CAPTION_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:Figure|Table)\s+\d").unwrap());
static INLINE_WS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[ \t\u{a0}\f\v]+").unwrap());

/// Strips URLs, bracketed numeric citations and figure/table caption lines,
/// then collapses whitespace runs. Line structure is kept: runs of blank
/// lines collapse to a single blank line so paragraph breaks survive.
///
/// The rules are applied until the text stops changing, so the function is
/// a projection: `clean_text(&clean_text(x)) == clean_text(x)`.
pub fn clean_text(raw: &str) -> String {
    let mut cur = clean_once(raw);
    loop {
        let next = clean_once(&cur);
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

fn clean_once(raw: &str) -> String {
    let mut lines: Vec<String> = Vec::new();
    let mut pending_blank = false;
    for line in raw.lines() {
        if CAPTION_LINE.is_match(line) {
            continue;
        }
        let line = URL.replace_all(line, "");
        let line = CITATION.replace_all(&line, "");
        let line = INLINE_WS.replace_all(&line, " ");
        let line = line.trim();
        if line.is_empty() {
            pending_blank = !lines.is_empty();
            continue;
        }
        if pending_blank {
            lines.push(String::new());
            pending_blank = false;
        }
        lines.push(line.to_string());
    }
    lines.join("\n")
}
