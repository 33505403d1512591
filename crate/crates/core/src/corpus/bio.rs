//! BIO-tagged column files (CoNLL-2003 / CoNLL-2000 layout).
//!
//! Token in the first column, tag in the last, blank line between sentences,
//! `-DOCSTART-` lines skipped. Both IOB variants are understood: under IOB1
//! an `I-X` token may open an entity and `B-X` only separates adjacent
//! same-type entities, while under IOB2 every entity opens with `B-X`. The
//! segmenter normalizes either variant to the same span list; `auto` sniffs
//! the variant from the file.

use std::fs;
use std::path::Path;

use super::{Corpus, LabelSet, LabeledSpan, Sentence, Span, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Iob1,
    Iob2,
    Auto,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
}

impl Tag {
    /// Parse "O" / "B-X" / "I-X"; anything else is rejected.
    pub fn parse(s: &str) -> Option<Tag> {
        if s == "O" {
            return Some(Tag::Outside);
        }
        let (kind, ty) = s.split_at_checked(2)?;
        if ty.is_empty() {
            return None;
        }
        match kind {
            "B-" => Some(Tag::Begin(ty.to_string())),
            "I-" => Some(Tag::Inside(ty.to_string())),
            _ => None,
        }
    }

    fn entity_type(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) => Some(t),
        }
    }

    fn render(&self) -> String {
        match self {
            Tag::Outside => "O".to_string(),
            Tag::Begin(t) => format!("B-{t}"),
            Tag::Inside(t) => format!("I-{t}"),
        }
    }
}

/// Sniff IOB1 vs IOB2. An `I-X` opening an entity — at sentence start, after
/// `O`, or after a different type — only occurs in IOB1; absent any such
/// evidence the file is read as IOB2 (the two agree on every such sequence).
pub fn detect_scheme(sentences: &[Vec<Tag>]) -> Scheme {
    for tags in sentences {
        let mut prev: Option<&Tag> = None;
        for tag in tags {
            if let Tag::Inside(ty) = tag {
                let continues = matches!(prev, Some(p) if p.entity_type() == Some(ty));
                if !continues {
                    return Scheme::Iob1;
                }
            }
            prev = Some(tag);
        }
    }
    Scheme::Iob2
}

/// Segment a tag sequence into labeled spans (1-based inclusive), sorted by
/// (a, b). Lenient mode repairs out-of-place `I-X` tags by opening a new
/// entity; strict mode raises `InvalidTransition` on sequences that are
/// illegal under the declared scheme.
pub fn spans_from_tags(
    tags: &[Tag],
    scheme: Scheme,
    strict: bool,
    labels: &mut LabelSet,
) -> Result<Vec<LabeledSpan>> {
    let scheme_name = match scheme {
        Scheme::Iob1 => "IOB1",
        Scheme::Iob2 => "IOB2",
        Scheme::Auto => "auto",
    };
    let mut out = Vec::new();
    let mut open: Option<(String, usize)> = None; // (type, start index 1-based)
    let mut prev: Option<&Tag> = None;

    let close = |open: &mut Option<(String, usize)>, end: usize, labels: &mut LabelSet, out: &mut Vec<LabeledSpan>| {
        if let Some((ty, start)) = open.take() {
            out.push(LabeledSpan {
                span: Span::new(start, end),
                label: labels.get_or_insert(&ty),
            });
        }
    };

    for (i, tag) in tags.iter().enumerate() {
        let pos = i + 1;
        match tag {
            Tag::Outside => close(&mut open, pos - 1, labels, &mut out),
            Tag::Begin(ty) => {
                if strict && scheme == Scheme::Iob1 {
                    // IOB1 uses B-X only to split adjacent same-type entities.
                    let after_same = matches!(prev, Some(p) if p.entity_type() == Some(ty));
                    if !after_same {
                        return Err(Error::InvalidTransition {
                            scheme: scheme_name.to_string(),
                            prev: prev.map(|p| p.render()).unwrap_or_else(|| "<start>".into()),
                            tag: tag.render(),
                            pos,
                        });
                    }
                }
                close(&mut open, pos - 1, labels, &mut out);
                open = Some((ty.clone(), pos));
            }
            Tag::Inside(ty) => {
                let continues = matches!(&open, Some((t, _)) if t == ty);
                if continues {
                    // extend the open entity
                } else {
                    if strict && scheme == Scheme::Iob2 {
                        return Err(Error::InvalidTransition {
                            scheme: scheme_name.to_string(),
                            prev: prev.map(|p| p.render()).unwrap_or_else(|| "<start>".into()),
                            tag: tag.render(),
                            pos,
                        });
                    }
                    close(&mut open, pos - 1, labels, &mut out);
                    open = Some((ty.clone(), pos));
                }
            }
        }
        prev = Some(tag);
    }
    close(&mut open, tags.len(), labels, &mut out);
    out.sort_by_key(|ls| ls.span);
    Ok(out)
}

/// Render non-overlapping spans as IOB2 tags. Inverse of `spans_from_tags`
/// for valid flat span sets.
pub fn tags_from_spans(spans: &[LabeledSpan], len: usize, labels: &LabelSet) -> Vec<String> {
    let mut tags = vec!["O".to_string(); len];
    for ls in spans {
        let ty = labels.name(ls.label);
        tags[ls.span.a - 1] = format!("B-{ty}");
        for t in ls.span.a..ls.span.b {
            tags[t] = format!("I-{ty}");
        }
    }
    tags
}

/// Parse a BIO column file into a corpus, interning labels into `labels`.
pub fn parse_bio(
    path: &Path,
    scheme: Scheme,
    labels: &mut LabelSet,
    split: Split,
) -> Result<Corpus> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();

    // First pass: tokens and validated tags per sentence.
    let mut sentences: Vec<(Vec<String>, Vec<Tag>)> = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<Tag> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() {
            if !tokens.is_empty() {
                sentences.push((std::mem::take(&mut tokens), std::mem::take(&mut tags)));
            }
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols[0] == "-DOCSTART-" {
            continue;
        }
        if cols.len() < 2 {
            return Err(Error::MalformedLine {
                path: display,
                line: lineno + 1,
                msg: format!("expected ≥2 columns, got {}", cols.len()),
            });
        }
        let tag = Tag::parse(cols[cols.len() - 1]).ok_or_else(|| Error::InvalidTag {
            path: display.clone(),
            line: lineno + 1,
            tag: cols[cols.len() - 1].to_string(),
        })?;
        tokens.push(cols[0].to_string());
        tags.push(tag);
    }
    if !tokens.is_empty() {
        sentences.push((tokens, tags));
    }

    let scheme = match scheme {
        Scheme::Auto => detect_scheme(
            &sentences.iter().map(|(_, t)| t.clone()).collect::<Vec<_>>(),
        ),
        s => s,
    };

    let mut corpus = Corpus::new(split);
    for (id, (tokens, tags)) in sentences.into_iter().enumerate() {
        let gold_spans = spans_from_tags(&tags, scheme, false, labels)?;
        corpus.sentences.push(Sentence {
            id,
            tokens,
            gold_spans,
        });
    }
    Ok(corpus)
}

/// Write a flat corpus as a two-column IOB2 file.
pub fn write_bio(corpus: &Corpus, labels: &LabelSet, path: &Path) -> Result<()> {
    let mut out = String::new();
    for s in &corpus.sentences {
        let tags = tags_from_spans(&s.gold_spans, s.len(), labels);
        for (tok, tag) in s.tokens.iter().zip(&tags) {
            out.push_str(tok);
            out.push(' ');
            out.push_str(tag);
            out.push('\n');
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
