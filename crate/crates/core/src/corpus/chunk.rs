use super::sentences::retained_sentences;
use super::{ChunkRecord, ChunkingParams, Section};
use crate::tokenize::Tokenizer;

/// Greedy sentence-window chunking inside one section.
///
/// Sentences accumulate until the next one would push the window past
/// `max_tokens`; the chunk then closes at the preceding sentence boundary
/// and the overflowing sentence starts the next chunk. A sentence longer
/// than the window is emitted alone and flagged `oversized`.
///
/// A trailing chunk below `min_chunk_tokens` is merged into its predecessor
/// when the merge stays within the window. Otherwise whole sentences move
/// from the end of the predecessor into the tail until the tail reaches the
/// minimum, as long as both chunks stay non-empty and within the window.
pub fn chunk_section(
    section: &Section,
    params: &ChunkingParams,
    tokenizer: &dyn Tokenizer,
) -> Vec<ChunkRecord> {
    let sentences: Vec<String> = section
        .paragraphs
        .iter()
        .flat_map(|p| retained_sentences(p))
        .collect();
    let count = |sents: &[String]| tokenizer.count(&sents.join(" "));

    let mut windows: Vec<Window> = Vec::new();
    let mut cur: Vec<String> = Vec::new();
    for s in sentences {
        if tokenizer.count(&s) > params.max_tokens {
            if !cur.is_empty() {
                windows.push(Window {
                    sentences: std::mem::take(&mut cur),
                    oversized: false,
                });
            }
            windows.push(Window {
                sentences: vec![s],
                oversized: true,
            });
            continue;
        }
        cur.push(s);
        if cur.len() > 1 && count(&cur) > params.max_tokens {
            let overflow = cur.pop().unwrap();
            windows.push(Window {
                sentences: std::mem::replace(&mut cur, vec![overflow]),
                oversized: false,
            });
        }
    }
    if !cur.is_empty() {
        windows.push(Window {
            sentences: cur,
            oversized: false,
        });
    }

    if let [.., prev, last] = windows.as_mut_slice() {
        if !prev.oversized && !last.oversized && count(&last.sentences) < params.min_chunk_tokens {
            let merged: Vec<String> = prev
                .sentences
                .iter()
                .chain(&last.sentences)
                .cloned()
                .collect();
            if count(&merged) <= params.max_tokens {
                prev.sentences = merged;
                windows.pop();
            } else {
                rebalance(prev, last, params, &count);
            }
        }
    }

    windows
        .into_iter()
        .enumerate()
        .map(|(k, w)| {
            let text = w.sentences.join(" ");
            ChunkRecord {
                chunk_id: format!("{}#{:04}", section.section_id, k),
                n_tokens: tokenizer.count(&text),
                text,
                book: section.book_name.clone(),
                chapter: section.chapter_title.clone(),
                section: section.section_title.clone(),
                oversized: w.oversized,
            }
        })
        .collect()
}

struct Window {
    sentences: Vec<String>,
    oversized: bool,
}

fn rebalance(
    prev: &mut Window,
    last: &mut Window,
    params: &ChunkingParams,
    count: &dyn Fn(&[String]) -> usize,
) {
    while prev.sentences.len() > 1 && count(&last.sentences) < params.min_chunk_tokens {
        let moved = prev.sentences.last().unwrap().clone();
        let mut grown = Vec::with_capacity(last.sentences.len() + 1);
        grown.push(moved);
        grown.extend(last.sentences.iter().cloned());
        if count(&grown) > params.max_tokens {
            break;
        }
        prev.sentences.pop();
        last.sentences = grown;
    }
}
