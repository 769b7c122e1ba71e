//! Token counting.
//!
//! The default tokenizer treats every maximal run of alphanumeric characters
//! as one token and every other non-whitespace character as a token of its
//! own. Whitespace never produces tokens, so counts are additive over
//! whitespace joins.

/// Pluggable tokenizer. Implementations must be deterministic.
pub trait Tokenizer: Send + Sync {
    fn tokenize<'a>(&self, text: &'a str) -> Vec<&'a str>;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WordPunctTokenizer;

impl Tokenizer for WordPunctTokenizer {
    fn tokenize<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let mut out = Vec::new();
        let mut run_start: Option<usize> = None;
        for (i, ch) in text.char_indices() {
            if ch.is_alphanumeric() {
                if run_start.is_none() {
                    run_start = Some(i);
                }
                continue;
            }
            if let Some(s) = run_start.take() {
                out.push(&text[s..i]);
            }
            if !ch.is_whitespace() {
                out.push(&text[i..i + ch.len_utf8()]);
            }
        }
        if let Some(s) = run_start {
            out.push(&text[s..]);
        }
        out
    }

    fn count(&self, text: &str) -> usize {
        let mut n = 0;
        let mut in_run = false;
        for ch in text.chars() {
            if ch.is_alphanumeric() {
                if !in_run {
                    n += 1;
                    in_run = true;
                }
            } else {
                in_run = false;
                if !ch.is_whitespace() {
                    n += 1;
                }
            }
        }
        n
    }
}

/// Token count under the default tokenizer.
pub fn count_tokens(text: &str) -> usize {
    WordPunctTokenizer.count(text)
}

/// Lowercased alphanumeric terms, used by BM25 and the mock providers.
pub fn terms(text: &str) -> Vec<String> {
    WordPunctTokenizer
        .tokenize(text)
        .into_iter()
        .filter(|t| t.chars().next().is_some_and(char::is_alphanumeric))
        .map(str::to_lowercase)
        .collect()
}
