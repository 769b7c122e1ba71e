use crate::tokenize::Tokenizer;

const TERMINALS: [char; 3] = ['.', '?', '!'];
const CLOSERS: [char; 5] = ['"', '\'', ')', ']', '”'];
// Lowercased tokens ending in '.' that never close a sentence.
const ABBREVIATIONS: [&str; 12] = [
    "e.g.", "i.e.", "dr.", "mr.", "mrs.", "ms.", "vs.", "fig.", "approx.", "et al.", "no.", "st.",
];

/// True when `s` ends with terminal punctuation, optionally followed by
/// closing quotes or brackets.
pub fn ends_with_terminal(s: &str) -> bool {
    let t = s.trim_end().trim_end_matches(CLOSERS);
    t.ends_with(TERMINALS)
}

/// Splits a paragraph after `.`, `?` or `!` (plus any closing quotes or
/// brackets) when followed by whitespace and an uppercase letter, or by the
/// end of text. A handful of common abbreviations do not end a sentence.
/// Internal whitespace is normalised to single spaces, so joining the output
/// with `" "` reproduces the whitespace-normalised paragraph.
pub fn split_sentences(paragraph: &str) -> Vec<String> {
    let words: Vec<&str> = paragraph.split_whitespace().collect();
    let mut out = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    for (i, w) in words.iter().enumerate() {
        cur.push(w);
        let next_starts_upper = words
            .get(i + 1)
            .and_then(|n| n.trim_start_matches(['"', '\'', '(', '“']).chars().next())
            .is_none_or(char::is_uppercase);
        let boundary = ends_with_terminal(w) && next_starts_upper && !is_abbreviation(&cur);
        if boundary {
            out.push(cur.join(" "));
            cur.clear();
        }
    }
    if !cur.is_empty() {
        out.push(cur.join(" "));
    }
    out
}

fn is_abbreviation(words: &[&str]) -> bool {
    let Some(last) = words.last() else {
        return false;
    };
    let last = last.to_lowercase();
    if ABBREVIATIONS.contains(&last.as_str()) {
        return true;
    }
    if words.len() >= 2 {
        let pair = format!("{} {}", words[words.len() - 2].to_lowercase(), last);
        if ABBREVIATIONS.contains(&pair.as_str()) {
            return true;
        }
    }
    // Single capital initial such as "J." in "J. Smith".
    let core = words[words.len() - 1].trim_end_matches('.');
    core.chars().count() == 1 && core.chars().all(char::is_uppercase)
}

/// Sentences a paragraph contributes to chunking. A final sentence without
/// terminal punctuation gets a closing `.` so that every chunk ends on a
/// sentence boundary.
pub fn retained_sentences(paragraph: &str) -> Vec<String> {
    let mut sents = split_sentences(paragraph);
    if let Some(last) = sents.last_mut() {
        if !ends_with_terminal(last) {
            last.push('.');
        }
    }
    sents
}

/// Splits section text on blank lines and keeps paragraphs whose token count
/// reaches `min_tokens`. Lines inside a paragraph are joined with spaces.
pub fn split_and_filter_paragraphs(
    section_text: &str,
    min_tokens: usize,
    tokenizer: &dyn Tokenizer,
) -> Vec<String> {
    let mut paras = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    let flush = |cur: &mut Vec<&str>, paras: &mut Vec<String>| {
        if !cur.is_empty() {
            let p = cur.join(" ");
            cur.clear();
            if tokenizer.count(&p) >= min_tokens {
                paras.push(p);
            }
        }
    };
    for line in section_text.lines() {
        let line = line.trim();
        if line.is_empty() {
            flush(&mut cur, &mut paras);
        } else {
            cur.push(line);
        }
    }
    flush(&mut cur, &mut paras);
    paras
}
