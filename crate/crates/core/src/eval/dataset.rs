use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MCQuestion {
    pub qid: String,
    pub stem: String,
    /// Letter → option text; letters run consecutively from `A`.
    pub options: BTreeMap<char, String>,
    pub gold: char,
}

impl MCQuestion {
    pub fn letters(&self) -> Vec<char> {
        self.options.keys().copied().collect()
    }
}

#[derive(Deserialize)]
struct Line {
    question: String,
    options: BTreeMap<String, String>,
    answer: String,
    #[serde(default)]
    answer_idx: Option<String>,
    #[serde(default)]
    qid: Option<serde_json::Value>,
}

/// Loads a JSONL multiple-choice dataset of
/// `{"question", "options": {"A": …}, "answer", "qid"?}` lines.
///
/// MedQA-style lines, whose `answer` holds the option text and whose
/// `answer_idx` holds the letter, are accepted too. Missing qids become
/// `q<line number>`.
pub fn load_dataset(path: &Path) -> Result<Vec<MCQuestion>, EvalError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |msg: String| EvalError::Dataset { line: lineno, msg };
        let raw: Line = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        let mut options = BTreeMap::new();
        for (k, v) in raw.options {
            let mut cs = k.trim().chars();
            match (cs.next(), cs.next()) {
                (Some(c), None) if c.is_ascii_uppercase() => {
                    options.insert(c, v);
                }
                _ => return Err(schema(format!("option key {k:?} is not a capital letter"))),
            }
        }
        if options.len() < 2 {
            return Err(schema("need at least two options".into()));
        }
        if options.keys().zip('A'..).any(|(k, want)| *k != want) {
            return Err(schema(
                "option letters must run consecutively from A".into(),
            ));
        }
        let letter = raw
            .answer_idx
            .as_deref()
            .unwrap_or(&raw.answer)
            .trim()
            .to_string();
        let gold = match (letter.chars().next(), letter.chars().count()) {
            (Some(c), 1) if options.contains_key(&c) => c,
            _ => {
                return Err(schema(format!(
                    "answer {letter:?} is not one of the option letters"
                )))
            }
        };
        let qid = match raw.qid {
            Some(serde_json::Value::String(s)) => s,
            Some(serde_json::Value::Number(n)) => n.to_string(),
            None => format!("q{lineno}"),
            Some(other) => {
                return Err(schema(format!(
                    "qid must be a string or number, got {other}"
                )))
            }
        };
        out.push(MCQuestion {
            qid,
            stem: raw.question,
            options,
            gold,
        });
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(q) = out.iter().find(|q| !seen.insert(q.qid.clone())) {
        return Err(EvalError::Dataset {
            line: 0,
            msg: format!("duplicate qid {}", q.qid),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(lines: &[&str]) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(&p, lines.join("\n")).unwrap();
        (dir, p)
    }

    #[test]
    fn three_valid_lines() {
        let (_d, p) = write(&[
            r#"{"question":"Q1","options":{"A":"x","B":"y"},"answer":"B","qid":"a"}"#,
            r#"{"question":"Q2","options":{"A":"x","B":"y","C":"z"},"answer":"A"}"#,
            r#"{"question":"Q3","options":{"A":"x","B":"y","C":"z","D":"w","E":"v"},"answer":"Vitamin","answer_idx":"E","qid":7}"#,
        ]);
        let qs = load_dataset(&p).unwrap();
        assert_eq!(qs.len(), 3);
        assert_eq!(qs[0].gold, 'B');
        assert_eq!(qs[1].qid, "q2");
        assert_eq!(qs[2].qid, "7");
        assert_eq!(qs[2].gold, 'E');
    }

    #[test]
    fn gold_outside_options() {
        let (_d, p) = write(&[
            r#"{"question":"Q1","options":{"A":"x","B":"y"},"answer":"B"}"#,
            r#"{"question":"Q2","options":{"A":"x","B":"y","C":"z","D":"w"},"answer":"E"}"#,
        ]);
        let err = load_dataset(&p).unwrap_err();
        assert!(matches!(err, EvalError::Dataset { line: 2, .. }), "{err}");
    }

    #[test]
    fn letters_must_be_consecutive() {
        let (_d, p) = write(&[r#"{"question":"Q","options":{"A":"x","C":"y"},"answer":"A"}"#]);
        assert!(load_dataset(&p).is_err());
    }
}
