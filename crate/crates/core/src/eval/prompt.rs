use serde::{Deserialize, Serialize};

use super::MCQuestion;
use crate::retrieval::EvidenceContext;

pub const EVIDENCE_HEADER: &str = "Evidence:";
pub const QUESTION_HEADER: &str = "Question:";
pub const OPTIONS_HEADER: &str = "Options:";
pub const ZERO_SHOT_INSTRUCTION: &str = "Respond with the letter of the single best option only.";
pub const COT_INSTRUCTION: &str =
    "Think through the problem step by step, then finish with a final line of the form \"Answer: <letter>\".";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptMode {
    #[serde(rename = "zero_shot", alias = "Zero shot", alias = "zero-shot")]
    ZeroShot,
    #[serde(rename = "cot", alias = "CoT")]
    Cot,
}

impl PromptMode {
    /// Label used in results tables.
    pub fn label(self) -> &'static str {
        match self {
            PromptMode::ZeroShot => "Zero shot",
            PromptMode::Cot => "cot",
        }
    }
}

/// Deterministic answer prompt: optional evidence block (passages in rank
/// order, each tagged with its book, chapter and section), the question,
/// lettered options and the mode's instruction line.
pub fn build_prompt(
    q: &MCQuestion,
    evidence: Option<&EvidenceContext>,
    mode: PromptMode,
) -> String {
    let mut s = String::from("You are answering a medical multiple-choice exam question.\n\n");
    if let Some(ctx) = evidence.filter(|c| !c.passages.is_empty()) {
        s.push_str("Use the textbook evidence below where it is relevant.\n\n");
        s.push_str(EVIDENCE_HEADER);
        s.push('\n');
        for (i, p) in ctx.passages.iter().enumerate() {
            s.push_str(&format!(
                "[{}] ({} | {} | {})\n{}\n\n",
                i + 1,
                p.book,
                p.chapter,
                p.section,
                p.text
            ));
        }
    }
    s.push_str(QUESTION_HEADER);
    s.push(' ');
    s.push_str(q.stem.trim());
    s.push_str("\n\n");
    s.push_str(OPTIONS_HEADER);
    s.push('\n');
    for (letter, text) in &q.options {
        s.push_str(&format!("{letter}. {}\n", text.trim()));
    }
    s.push('\n');
    s.push_str(match mode {
        PromptMode::ZeroShot => ZERO_SHOT_INSTRUCTION,
        PromptMode::Cot => COT_INSTRUCTION,
    });
    s.push('\n');
    s
}
