//! Preference-pair synthesis from retrieval results.
//!
//! For each question the ranked retrieval list is cut into nested prefix
//! contexts. Each selected context size yields one record whose chosen
//! side carries a generated explanation and the gold answer, and whose
//! rejected side is the bare answer.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backends::{pool, Embedder, Reasoner, ReasoningRequest};
use crate::error::{Error, Result};
use crate::graphbuild::HierarchicalIndex;
use crate::retrieve::{rank, RetrievalResult};

pub const REASON_MARKER: &str = "###Reason: ";
pub const ANSWER_MARKER: &str = "\n###Answer: ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub id: String,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub context_size: usize,
    pub source_qa_id: String,
    /// Name of the reasoning backend that wrote the chosen side.
    pub backend: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub query: String,
    pub context: Vec<String>,
    pub chosen: String,
    pub rejected: String,
    pub meta: RecordMeta,
}

/// `[C_1, ..., C_n]` where `C_j` holds the texts of the first `j` entries.
pub fn build_contexts(result: &RetrievalResult, index: &HierarchicalIndex) -> Result<Vec<Vec<String>>> {
    let texts = result
        .entries
        .iter()
        .map(|e| {
            index
                .chunk(e.chunk_id)
                .map(|c| c.text.clone())
                .ok_or_else(|| Error::input(format!("chunk {} is not in the index", e.chunk_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((1..=texts.len()).map(|j| texts[..j].to_vec()).collect())
}

pub fn make_record(query: &str, context: Vec<String>, answer: &str, reasoning: &str) -> Result<PreferenceRecord> {
    if answer.trim().is_empty() {
        return Err(Error::input("answer is empty"));
    }
    Ok(PreferenceRecord {
        query: query.to_string(),
        chosen: format!("{REASON_MARKER}{reasoning}{ANSWER_MARKER}{answer}"),
        rejected: answer.to_string(),
        meta: RecordMeta { context_size: context.len(), source_qa_id: String::new(), backend: String::new() },
        context,
    })
}

/// Splits a chosen response into `(reasoning, answer)`.
pub fn parse_chosen(chosen: &str) -> Option<(&str, &str)> {
    chosen.strip_prefix(REASON_MARKER)?.rsplit_once(ANSWER_MARKER)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub context_sizes: Vec<usize>,
    /// Admits size 0 (no context) when listed in `context_sizes`.
    pub allow_empty_context: bool,
    pub max_concurrent: usize,
    /// Offsets the reasoning-backend rotation.
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { context_sizes: vec![1, 2, 4, 10], allow_empty_context: false, max_concurrent: 4, seed: 0 }
    }
}

impl SynthConfig {
    /// Sorted, deduplicated sizes clamped to the available retrieval depth.
    pub fn effective_sizes(&self, available: usize) -> Vec<usize> {
        let mut sizes: Vec<usize> = self
            .context_sizes
            .iter()
            .filter(|&&k| k > 0 || self.allow_empty_context)
            .map(|&k| k.min(available))
            .filter(|&k| k > 0 || self.allow_empty_context)
            .collect();
        sizes.sort_unstable();
        sizes.dedup();
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthFailure {
    pub qa_id: String,
    pub context_size: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct SynthReport {
    pub records: Vec<PreferenceRecord>,
    pub failures: Vec<SynthFailure>,
}

impl SynthReport {
    pub fn skipped(&self) -> usize {
        self.failures.len()
    }
}

/// Builds one record per (question, context size). Reasoning backends are
/// used round-robin over the global record sequence. Failed records are
/// skipped and reported; output order follows input order.
pub fn synthesize_dataset(
    qa_pairs: &[QaPair],
    index: &HierarchicalIndex,
    config: &SynthConfig,
    reasoners: &[&dyn Reasoner],
    embedder: &dyn Embedder,
) -> Result<SynthReport> {
    if reasoners.is_empty() {
        return Err(Error::Config("at least one reasoning backend is required".into()));
    }
    let depth = config.context_sizes.iter().copied().max().unwrap_or(0).min(index.node_count());
    let sizes = config.effective_sizes(depth);
    let per_qa = sizes.len();

    let outcomes = pool::map(qa_pairs, config.max_concurrent, |qi, qa| {
        let fail = |size: usize, e: &Error| SynthFailure {
            qa_id: qa.id.clone(),
            context_size: size,
            message: e.to_string(),
        };
        let contexts = if depth == 0 {
            Ok(Vec::new())
        } else {
            rank(index, &qa.question, depth, embedder).and_then(|r| build_contexts(&r, index))
        };
        let contexts = match contexts {
            Ok(c) => c,
            Err(e) => return sizes.iter().map(|&k| Err(fail(k, &e))).collect::<Vec<_>>(),
        };
        sizes
            .iter()
            .enumerate()
            .map(|(si, &k)| {
                let context = if k == 0 { Vec::new() } else { contexts[k - 1].clone() };
                let slot = (config.seed as usize).wrapping_add(qi * per_qa + si) % reasoners.len();
                let reasoner = reasoners[slot];
                let request = ReasoningRequest { question: &qa.question, context: &context, answer: &qa.answer };
                reasoner
                    .reason(&request)
                    .and_then(|reasoning| make_record(&qa.question, context.clone(), &qa.answer, &reasoning))
                    .map(|mut rec| {
                        rec.meta.source_qa_id = qa.id.clone();
                        rec.meta.backend = reasoner.name().to_string();
                        rec
                    })
                    .map_err(|e| fail(k, &e))
            })
            .collect()
    });

    let mut report = SynthReport::default();
    for outcome in outcomes.into_iter().flatten() {
        match outcome {
            Ok(r) => report.records.push(r),
            Err(f) => {
                warn!("skipping record for {} (k={}): {}", f.qa_id, f.context_size, f.message);
                report.failures.push(f);
            }
        }
    }
    Ok(report)
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| Error::input(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::MockBackend;
    use crate::docmodel::{BuildConfig, ChunkKind};
    use crate::graphbuild::build_hierarchy;
    use crate::retrieve::RetrievalEntry;

    fn index() -> HierarchicalIndex {
        let text: String = (0..30).map(|i| format!("topic alpha item{i} beta gamma delta. ")).collect();
        let cfg = BuildConfig { large: 40, small: 8, ..BuildConfig::default() };
        let m = MockBackend::default();
        build_hierarchy(&text, &cfg, &m, &m).unwrap()
    }

    fn entries(ids: &[u64]) -> RetrievalResult {
        RetrievalResult {
            entries: ids
                .iter()
                .map(|&id| RetrievalEntry { chunk_id: id, layer_index: 0, score: 0.0, kind: ChunkKind::Leaf })
                .collect(),
        }
    }

    #[test]
    fn contexts_are_nested_prefixes() {
        let idx = index();
        let ids: Vec<u64> = idx.layers[0].node_ids.iter().take(3).copied().collect();
        let ctx = build_contexts(&entries(&ids), &idx).unwrap();
        let text = |i: usize| idx.chunk(ids[i]).unwrap().text.clone();
        assert_eq!(ctx, vec![vec![text(0)], vec![text(0), text(1)], vec![text(0), text(1), text(2)]]);
        assert_eq!(build_contexts(&entries(&ids[..1]), &idx).unwrap(), vec![vec![text(0)]]);
    }

    #[test]
    fn record_format() {
        let r = make_record("q", vec![], "yes", "Histologic chorioamnionitis is a reliable indicator").unwrap();
        assert_eq!(r.chosen, "###Reason: Histologic chorioamnionitis is a reliable indicator\n###Answer: yes");
        assert_eq!(r.rejected, "yes");
        let empty = make_record("q", vec![], "no", "").unwrap();
        assert_eq!(empty.chosen, "###Reason: \n###Answer: no");
        assert_eq!(parse_chosen(&empty.chosen), Some(("", "no")));
        assert!(matches!(make_record("q", vec![], " ", "x"), Err(Error::Input(_))));
    }

    #[test]
    fn sizes_are_clamped_and_deduplicated() {
        let cfg = SynthConfig { context_sizes: vec![0, 4, 1, 3, 10], ..SynthConfig::default() };
        assert_eq!(cfg.effective_sizes(3), vec![1, 3]);
        let with_zero = SynthConfig { allow_empty_context: true, ..cfg };
        assert_eq!(with_zero.effective_sizes(3), vec![0, 1, 3]);
    }

    #[test]
    fn one_pair_two_sizes() {
        let idx = index();
        let m = MockBackend::default();
        let qa = vec![QaPair { id: "q1".into(), question: "what is alpha".into(), answer: "beta".into(), options: None }];
        let cfg = SynthConfig { context_sizes: vec![1, 3], ..SynthConfig::default() };
        let report = synthesize_dataset(&qa, &idx, &cfg, &[&m], &m).unwrap();
        assert_eq!(report.records.len(), 2);
        let (a, b) = (&report.records[0], &report.records[1]);
        assert_eq!(a.context.len(), 1);
        assert_eq!(b.context.len(), 3);
        assert_eq!(a.context[..], b.context[..1]);
        assert_eq!(a.meta.source_qa_id, "q1");
        assert!(synthesize_dataset(&[], &idx, &cfg, &[&m], &m).unwrap().records.is_empty());
    }

    struct Failing;

    impl Reasoner for Failing {
        fn name(&self) -> &str {
            "failing"
        }

        fn reason(&self, _: &ReasoningRequest<'_>) -> Result<String> {
            Err(Error::Backend { status: Some(500), retryable: true, message: "down".into() })
        }
    }

    #[test]
    fn failures_are_skipped_and_counted() {
        let idx = index();
        let m = MockBackend::default();
        let qa: Vec<QaPair> = (0..3)
            .map(|i| QaPair { id: format!("q{i}"), question: format!("alpha {i}"), answer: "yes".into(), options: None })
            .collect();
        let cfg = SynthConfig { context_sizes: vec![1, 2], ..SynthConfig::default() };
        let report = synthesize_dataset(&qa, &idx, &cfg, &[&m, &Failing], &m).unwrap();
        assert_eq!(report.records.len() + report.skipped(), 6);
        assert_eq!(report.skipped(), 3);
        assert!(report.records.iter().all(|r| r.meta.backend == "mock"));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qa.jsonl");
        let qa = vec![
            QaPair { id: "1".into(), question: "q".into(), answer: "a".into(), options: Some(vec!["a".into(), "b".into()]) },
            QaPair { id: "2".into(), question: "r".into(), answer: "b".into(), options: None },
        ];
        write_jsonl(&path, &qa).unwrap();
        assert_eq!(read_jsonl::<QaPair>(&path).unwrap(), qa);
    }
}
