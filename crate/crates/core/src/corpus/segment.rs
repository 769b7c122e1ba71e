use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;

use super::sentences::{ends_with_terminal, split_and_filter_paragraphs};
use super::{ChunkingParams, RawDocument, Section};
use crate::tokenize::Tokenizer;

static MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(#{1,6})\s+(\S.*)$").unwrap());

const DEFAULT_SECTION: &str = "body";
const MAX_CAPS_HEADING_WORDS: usize = 12;

enum Line<'a> {
    Chapter(&'a str),
    Section(&'a str),
    Body(&'a str),
}

/// Splits a cleaned document into sections.
///
/// Headings use markdown-style markers: `# Title` opens a chapter and `##`
/// (or deeper) opens a section. Documents without any marker fall back to
/// treating short all-caps lines as section headings. Text before the first
/// section heading of a chapter goes to a section named `body`; a document
/// with no headings at all becomes a single `body` section whose chapter is
/// the book name. Sections left without paragraphs after filtering are
/// dropped.
pub fn segment_structure(
    doc: &RawDocument,
    params: &ChunkingParams,
    tokenizer: &dyn Tokenizer,
) -> Vec<Section> {
    let has_markers = doc.body.lines().any(|l| MARKER.is_match(l.trim()));
    fn classify(line: &str, has_markers: bool) -> Line<'_> {
        let t = line.trim();
        if has_markers {
            if let Some(c) = MARKER.captures(t) {
                let title = c.get(2).unwrap().as_str().trim();
                return if c[1].len() == 1 {
                    Line::Chapter(title)
                } else {
                    Line::Section(title)
                };
            }
        } else if is_caps_heading(t) {
            return Line::Section(t);
        }
        Line::Body(line)
    }

    let mut sections = Vec::new();
    let mut used_ids: HashMap<String, usize> = HashMap::new();
    let mut chapter = doc.book_name.clone();
    let mut section = DEFAULT_SECTION.to_string();
    let mut body = String::new();

    let mut flush = |chapter: &str, section: &str, body: &mut String, out: &mut Vec<Section>| {
        let paragraphs = split_and_filter_paragraphs(body, params.min_paragraph_tokens, tokenizer);
        body.clear();
        if paragraphs.is_empty() {
            return;
        }
        let base = format!(
            "{}/{}/{}",
            id_part(&doc.book_name),
            id_part(chapter),
            id_part(section)
        );
        let seen = used_ids.entry(base.clone()).or_insert(0);
        *seen += 1;
        let section_id = if *seen == 1 {
            base
        } else {
            format!("{base}~{seen}")
        };
        out.push(Section {
            book_name: doc.book_name.clone(),
            chapter_title: chapter.to_string(),
            section_title: section.to_string(),
            paragraphs,
            section_id,
        });
    };

    for line in doc.body.lines() {
        match classify(line, has_markers) {
            Line::Chapter(t) => {
                flush(&chapter, &section, &mut body, &mut sections);
                chapter = t.to_string();
                section = DEFAULT_SECTION.to_string();
            }
            Line::Section(t) => {
                flush(&chapter, &section, &mut body, &mut sections);
                section = t.to_string();
            }
            Line::Body(l) => {
                body.push_str(l);
                body.push('\n');
            }
        }
    }
    flush(&chapter, &section, &mut body, &mut sections);
    sections
}

fn id_part(s: &str) -> String {
    s.replace(['/', '#', '~'], "-")
}

fn is_caps_heading(line: &str) -> bool {
    let letters: Vec<char> = line.chars().filter(|c| c.is_alphabetic()).collect();
    letters.len() >= 2
        && letters.iter().all(|c| c.is_uppercase())
        && line.split_whitespace().count() <= MAX_CAPS_HEADING_WORDS
        && !ends_with_terminal(line)
}
