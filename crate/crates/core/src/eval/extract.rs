use std::collections::BTreeSet;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

static ANSWER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Answer[:\s]*\(?([A-Z])\)?").unwrap());
static LOOSE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([A-Z])\)|\b([A-Z])\.").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Prediction {
    Letter(char),
    Abstain,
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::Letter(c) => write!(f, "{c}"),
            Prediction::Abstain => f.write_str("ABSTAIN"),
        }
    }
}

impl Serialize for Prediction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prediction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let mut cs = s.chars();
        match (cs.next(), cs.next()) {
            (Some(c), None) if c.is_ascii_uppercase() => Ok(Prediction::Letter(c)),
            _ if s == "ABSTAIN" => Ok(Prediction::Abstain),
            _ => Err(serde::de::Error::custom(format!("bad prediction {s:?}"))),
        }
    }
}

/// Extracts the chosen option letter. Rules, first match wins:
///
/// 1. the last `Answer: X` / `Answer (X)` with `X` a valid letter not
///    followed by another letter or digit;
/// 2. a bare letter as the first token of the output (`C`, `C.`, `(C)`);
/// 3. the earliest `(X)` or `X.` with `X` a valid letter.
///
/// Anything else is [`Prediction::Abstain`].
pub fn extract_answer(generation: &str, letters: &BTreeSet<char>) -> Prediction {
    let valid = |c: char| letters.contains(&c);

    let last_answer = ANSWER
        .captures_iter(generation)
        .filter_map(|cap| {
            let m = cap.get(1)?;
            let c = m.as_str().chars().next()?;
            let next = generation[m.end()..].chars().next();
            (valid(c) && !next.is_some_and(char::is_alphanumeric)).then_some(c)
        })
        .last();
    if let Some(c) = last_answer {
        return Prediction::Letter(c);
    }

    let trimmed = generation.trim_start();
    if let Some(first) = trimmed.split_whitespace().next() {
        let bare = first
            .trim_start_matches(['(', '['])
            .trim_end_matches(['.', ':', ')', ']', ',']);
        let mut cs = bare.chars();
        if let (Some(c), None) = (cs.next(), cs.next()) {
            let rest = &trimmed[first.len()..];
            let delimited =
                first != bare || rest.trim().is_empty() || rest.starts_with(['\n', '\r']);
            if valid(c) && delimited {
                return Prediction::Letter(c);
            }
        }
    }

    LOOSE
        .captures_iter(generation)
        .filter_map(|cap| {
            cap.get(1)
                .or(cap.get(2))
                .and_then(|m| m.as_str().chars().next())
        })
        .find(|&c| valid(c))
        .map_or(Prediction::Abstain, Prediction::Letter)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abcd() -> BTreeSet<char> {
        ['A', 'B', 'C', 'D'].into_iter().collect()
    }

    fn x(s: &str) -> Prediction {
        extract_answer(s, &abcd())
    }

    #[test]
    fn rule_one() {
        assert_eq!(x("Answer: B"), Prediction::Letter('B'));
        assert_eq!(
            x("Answer: A ... on reflection\nAnswer: (D)"),
            Prediction::Letter('D')
        );
        assert_eq!(
            x("Answer: Because of X, the answer is C."),
            Prediction::Letter('C')
        );
        assert_eq!(x("Answer: E"), Prediction::Abstain);
    }

    #[test]
    fn rule_two() {
        assert_eq!(x("C"), Prediction::Letter('C'));
        assert_eq!(x("  B. Mitral regurgitation"), Prediction::Letter('B'));
        assert_eq!(x("(A) because"), Prediction::Letter('A'));
        // an article is not an answer
        assert_eq!(x("A patient with sepsis."), Prediction::Abstain);
    }

    #[test]
    fn rule_three() {
        assert_eq!(
            x("I think the correct option is (C) because ..."),
            Prediction::Letter('C')
        );
        assert_eq!(x("Options B. and D. are wrong"), Prediction::Letter('B'));
    }

    #[test]
    fn abstain() {
        assert_eq!(x("The patient likely has sepsis."), Prediction::Abstain);
        assert_eq!(x(""), Prediction::Abstain);
    }

    #[test]
    fn serde_form() {
        assert_eq!(
            serde_json::to_string(&Prediction::Abstain).unwrap(),
            "\"ABSTAIN\""
        );
        assert_eq!(
            serde_json::from_str::<Prediction>("\"C\"").unwrap(),
            Prediction::Letter('C')
        );
    }
}
