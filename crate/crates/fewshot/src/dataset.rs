//! Dataset construction: evaluation examples with correct/incorrect answer
//! sets, the demonstration pool expanded from them, the (correct, incorrect)
//! scoring triplets, and leave-one-out candidate filtering.
//!
//! Two ingestion formats are supported: canonical JSON Lines (one object per
//! example) and a CSV converter for the TruthfulQA layout.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::embedding::Embedding;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Question equality used everywhere (leave-one-out, deduplication):
/// Unicode NFC normalization plus leading/trailing whitespace trim.
pub fn normalize_text(text: &str) -> String {
    text.nfc().collect::<String>().trim().to_string()
}

/// Full sha256 of the NFC+trim normalized text, hex-encoded. Used as the
/// key for embedding caches and input manifests.
pub fn content_hash(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(normalize_text(text).as_bytes());
    hex::encode(h.finalize())
}

/// sha256 of a file's raw bytes, hex-encoded. Used for dataset ids and
/// run manifests.
pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(hex::encode(h.finalize()))
}

/// Short (128-bit) content hash used for stable example/demonstration ids.
fn short_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h.update([0x1f]);
        }
        h.update(normalize_text(p).as_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

/// One evaluation example: a question with its sets of correct and
/// incorrect reference answers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalExample {
    pub id: String,
    pub question: String,
    pub correct_answers: Vec<String>,
    pub incorrect_answers: Vec<String>,
}

/// A (question, correct answer) pair usable as an in-context example,
/// with optionally attached question embedding and quality bias.
#[derive(Debug, Clone)]
pub struct Demonstration {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub source_example_id: String,
    pub embedding: Option<Arc<Embedding>>,
    /// Mean per-token log-probability of the answer given the question,
    /// in nats; finite and <= 0 when present.
    pub bias: Option<f64>,
}

impl Demonstration {
    pub fn stable_id(question: &str, answer: &str) -> String {
        short_hash(&[question, answer])
    }
}

/// A (question, correct, incorrect) scoring triplet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DpoTriplet {
    pub question: String,
    pub correct: String,
    pub incorrect: String,
    pub source_example_id: String,
}

/// Raw ingestion record, one per JSONL line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRecord {
    pub question: String,
    pub correct_answers: Vec<String>,
    #[serde(default)]
    pub incorrect_answers: Vec<String>,
}

/// Build evaluation examples from ingested rows. Ids are stable content
/// hashes of the question, so caches survive re-ingestion.
pub fn build_eval_set(records: &[RawRecord]) -> Result<Vec<EvalExample>, DatasetError> {
    let mut seen_questions: HashSet<String> = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let line = i + 1;
        let malformed = |reason: String| DatasetError::MalformedRecord { line, reason };
        if normalize_text(&rec.question).is_empty() {
            return Err(malformed("empty question".into()));
        }
        if rec.correct_answers.is_empty() {
            return Err(malformed("no correct answers".into()));
        }
        for (kind, answers) in [
            ("correct", &rec.correct_answers),
            ("incorrect", &rec.incorrect_answers),
        ] {
            if let Some(j) = answers.iter().position(|a| normalize_text(a).is_empty()) {
                return Err(malformed(format!("{kind} answer {} is empty", j + 1)));
            }
        }
        if !seen_questions.insert(normalize_text(&rec.question)) {
            return Err(malformed(format!(
                "duplicate question: {:?}",
                normalize_text(&rec.question)
            )));
        }
        out.push(EvalExample {
            id: short_hash(&[&rec.question]),
            question: rec.question.clone(),
            correct_answers: rec.correct_answers.clone(),
            incorrect_answers: rec.incorrect_answers.clone(),
        });
    }
    Ok(out)
}

/// The demonstration pool. Immutable after construction; indexed by
/// normalized question text for leave-one-out filtering.
#[derive(Debug, Clone)]
pub struct DemoStore {
    demos: Vec<Demonstration>,
    by_question: HashMap<String, Vec<usize>>,
}

impl DemoStore {
    fn from_demos(demos: Vec<Demonstration>) -> Self {
        let mut by_question: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, d) in demos.iter().enumerate() {
            by_question
                .entry(normalize_text(&d.question))
                .or_default()
                .push(i);
        }
        Self { demos, by_question }
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn demos(&self) -> &[Demonstration] {
        &self.demos
    }

    pub fn get(&self, id: &str) -> Option<&Demonstration> {
        self.demos.iter().find(|d| d.id == id)
    }

    /// First demonstration whose normalized question matches, if any.
    pub fn find_by_question(&self, question: &str) -> Option<&Demonstration> {
        self.by_question
            .get(&normalize_text(question))
            .and_then(|idx| idx.first())
            .map(|&i| &self.demos[i])
    }

    /// All demonstrations whose normalized question differs from the given
    /// question, in store order. The store itself is unmodified.
    pub fn leave_one_out(&self, question: &str) -> Vec<&Demonstration> {
        let excluded: &[usize] = self
            .by_question
            .get(&normalize_text(question))
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        self.demos
            .iter()
            .enumerate()
            .filter(|(i, _)| !excluded.contains(i))
            .map(|(_, d)| d)
            .collect()
    }

    /// New store with embeddings and biases attached from the given lookup
    /// functions. Demos the lookups do not cover keep `None`.
    pub fn attach(
        &self,
        embedding_of: impl Fn(&str) -> Option<Arc<Embedding>>,
        bias_of: impl Fn(&str) -> Option<f64>,
    ) -> DemoStore {
        let demos = self
            .demos
            .iter()
            .map(|d| Demonstration {
                embedding: embedding_of(&d.question).or_else(|| d.embedding.clone()),
                bias: bias_of(&d.id).or(d.bias),
                ..d.clone()
            })
            .collect();
        DemoStore::from_demos(demos)
    }
}

/// Expand evaluation examples into the demonstration pool: one demo per
/// distinct (question, correct answer) pair, duplicates collapsed using
/// normalized-text equality, first occurrence wins.
pub fn expand_pairs(evals: &[EvalExample]) -> DemoStore {
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut demos = Vec::new();
    for ex in evals {
        for answer in &ex.correct_answers {
            let key = (normalize_text(&ex.question), normalize_text(answer));
            if !seen.insert(key) {
                continue;
            }
            demos.push(Demonstration {
                id: Demonstration::stable_id(&ex.question, answer),
                question: ex.question.clone(),
                answer: answer.clone(),
                source_example_id: ex.id.clone(),
                embedding: None,
                bias: None,
            });
        }
    }
    DemoStore::from_demos(demos)
}

/// Expand evaluation examples into distinct (question, correct, incorrect)
/// triplets: the per-example Cartesian product, deduplicated globally with
/// normalized-text equality.
pub fn expand_triplets(evals: &[EvalExample]) -> Vec<DpoTriplet> {
    let mut seen: HashSet<(String, String, String)> = HashSet::new();
    let mut out = Vec::new();
    for ex in evals {
        for correct in &ex.correct_answers {
            for incorrect in &ex.incorrect_answers {
                if normalize_text(correct) == normalize_text(incorrect) {
                    continue;
                }
                let key = (
                    normalize_text(&ex.question),
                    normalize_text(correct),
                    normalize_text(incorrect),
                );
                if !seen.insert(key) {
                    continue;
                }
                out.push(DpoTriplet {
                    question: ex.question.clone(),
                    correct: correct.clone(),
                    incorrect: incorrect.clone(),
                    source_example_id: ex.id.clone(),
                });
            }
        }
    }
    out
}

/// Parse canonical JSONL: one `RawRecord` object per line. Blank lines are
/// rejected so the file round-trips byte-identically through `ingest`.
pub fn read_jsonl(path: &Path) -> Result<Vec<RawRecord>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let rec: RawRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::MalformedRecord {
                line: i + 1,
                reason: e.to_string(),
            })?;
        records.push(rec);
    }
    Ok(records)
}

/// Convert a TruthfulQA-layout CSV to raw records. Answer lists use the
/// "; " separator; the "Best Answer" column, when present, is merged into
/// the correct answers first, with duplicates collapsed.
pub fn read_truthfulqa_csv(path: &Path) -> Result<Vec<RawRecord>, DatasetError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let q_col = col("Question").ok_or_else(|| DatasetError::MalformedRecord {
        line: 1,
        reason: "missing 'Question' column".into(),
    })?;
    let correct_col = col("Correct Answers").ok_or_else(|| DatasetError::MalformedRecord {
        line: 1,
        reason: "missing 'Correct Answers' column".into(),
    })?;
    let incorrect_col = col("Incorrect Answers").ok_or_else(|| DatasetError::MalformedRecord {
        line: 1,
        reason: "missing 'Incorrect Answers' column".into(),
    })?;
    let best_col = col("Best Answer");

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2; // header is line 1
        let field = |c: usize| row.get(c).unwrap_or("").to_string();

        let mut correct: Vec<String> = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        if let Some(c) = best_col {
            let best = field(c);
            if !normalize_text(&best).is_empty() && seen.insert(normalize_text(&best)) {
                correct.push(best);
            }
        }
        for a in split_answer_list(&field(correct_col)) {
            if seen.insert(normalize_text(&a)) {
                correct.push(a);
            }
        }
        if correct.is_empty() {
            return Err(DatasetError::MalformedRecord {
                line,
                reason: "no correct answers".into(),
            });
        }
        records.push(RawRecord {
            question: field(q_col),
            correct_answers: correct,
            incorrect_answers: split_answer_list(&field(incorrect_col)),
        });
    }
    Ok(records)
}

fn split_answer_list(field: &str) -> Vec<String> {
    field
        .split("; ")
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}
