//! Line-delimited nested-span records.
//!
//! One JSON object per line: `{"tokens": [...], "spans": [[a, b, "LABEL"],
//! ...]}` with 1-based inclusive indices. Spans may nest and overlap freely;
//! only an exact (a, b) repeat is rejected, since every candidate window
//! carries exactly one gold label.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_gold_spans, Corpus, LabelSet, LabeledSpan, Sentence, Span, Split};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    tokens: Vec<String>,
    spans: Vec<(usize, usize, String)>,
}

pub fn parse_nested(path: &Path, labels: &mut LabelSet, split: Split) -> Result<Corpus> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut corpus = Corpus::new(split);
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            path: display.clone(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        if record.tokens.is_empty() {
            return Err(Error::MalformedLine {
                path: display.clone(),
                line: lineno + 1,
                msg: "empty token list".into(),
            });
        }
        let len = record.tokens.len();
        let mut gold_spans = Vec::with_capacity(record.spans.len());
        for (a, b, name) in record.spans {
            if a < 1 || b > len || a > b {
                return Err(Error::SpanOutOfRange { a, b, len });
            }
            gold_spans.push(LabeledSpan {
                span: Span::new(a, b),
                label: labels.get_or_insert(&name),
            });
        }
        validate_gold_spans(&gold_spans, len, labels)?;
        gold_spans.sort_by_key(|ls| ls.span);
        corpus.sentences.push(Sentence {
            id: corpus.sentences.len(),
            tokens: record.tokens,
            gold_spans,
        });
    }
    Ok(corpus)
}

pub fn write_nested(corpus: &Corpus, labels: &LabelSet, path: &Path) -> Result<()> {
    let mut out = String::new();
    for s in &corpus.sentences {
        let record = Record {
            tokens: s.tokens.clone(),
            spans: s
                .gold_spans
                .iter()
                .map(|ls| (ls.span.a, ls.span.b, labels.name(ls.label).to_string()))
                .collect(),
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(dir: &tempfile::TempDir, lines: &str) -> std::path::PathBuf {
        let path = dir.path().join("data.jsonl");
        fs::write(&path, lines).unwrap();
        path
    }

    #[test]
    fn nesting_is_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            r#"{"tokens": ["the", "human", "p53", "gene"], "spans": [[2, 4, "DNA"], [3, 3, "protein"]]}"#,
        );
        let mut labels = LabelSet::new();
        let corpus = parse_nested(&path, &mut labels, Split::Train).unwrap();
        let s = &corpus.sentences[0];
        assert_eq!(s.gold_spans.len(), 2);
        assert_eq!(s.gold_spans[0].span, Span::new(2, 4));
        assert_eq!(labels.name(s.gold_spans[0].label), "DNA");
        assert_eq!(s.gold_spans[1].span, Span::new(3, 3));
    }

    #[test]
    fn out_of_range_span_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            r#"{"tokens": ["a", "b", "c", "d", "e"], "spans": [[4, 9, "DNA"]]}"#,
        );
        let mut labels = LabelSet::new();
        let err = parse_nested(&path, &mut labels, Split::Train).unwrap_err();
        assert!(matches!(err, Error::SpanOutOfRange { a: 4, b: 9, len: 5 }));
    }

    #[test]
    fn duplicate_window_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            r#"{"tokens": ["a", "b"], "spans": [[1, 2, "DNA"], [1, 2, "RNA"]]}"#,
        );
        let mut labels = LabelSet::new();
        let err = parse_nested(&path, &mut labels, Split::Train).unwrap_err();
        assert!(matches!(err, Error::DuplicateSpan { a: 1, b: 2, .. }));
    }

    #[test]
    fn malformed_json_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            &dir,
            "{\"tokens\": [\"a\"], \"spans\": []}\nnot json\n",
        );
        let mut labels = LabelSet::new();
        let err = parse_nested(&path, &mut labels, Split::Train).unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 2, .. }));
    }

    #[test]
    fn write_then_parse_roundtrip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let names = ["DNA", "RNA", "protein"];
        let mut labels = LabelSet::new();
        for n in names {
            labels.get_or_insert(n);
        }
        let mut corpus = Corpus::new(Split::Test);
        for id in 0..50 {
            let t = rng.gen_range(3..12);
            let tokens: Vec<String> = (0..t).map(|i| format!("w{id}_{i}")).collect();
            let mut gold_spans: Vec<LabeledSpan> = Vec::new();
            for _ in 0..rng.gen_range(0..4) {
                let a = rng.gen_range(1..=t);
                let b = rng.gen_range(a..=t.min(a + 4));
                if gold_spans.iter().any(|ls| ls.span == Span::new(a, b)) {
                    continue;
                }
                gold_spans.push(LabeledSpan {
                    span: Span::new(a, b),
                    label: labels.get_or_insert(names[rng.gen_range(0..3)]),
                });
            }
            gold_spans.sort_by_key(|ls| ls.span);
            corpus.sentences.push(Sentence { id, tokens, gold_spans });
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roundtrip.jsonl");
        write_nested(&corpus, &labels, &path).unwrap();
        let mut labels2 = LabelSet::new();
        for n in names {
            labels2.get_or_insert(n);
        }
        let back = parse_nested(&path, &mut labels2, Split::Test).unwrap();
        assert_eq!(back, corpus);
        assert_eq!(labels2, labels);
    }
}
