use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ROUGE-L F1 over whitespace tokens, case-sensitive. Zero when either
/// side has no tokens.
pub fn rouge_l_f1(prediction: &str, reference: &str) -> f64 {
    let p: Vec<&str> = prediction.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    if p.is_empty() || r.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&p, &r);
    if lcs == 0 {
        return 0.0;
    }
    let precision = lcs as f64 / p.len() as f64;
    let recall = lcs as f64 / r.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn normalize_choice(s: &str) -> String {
    s.trim().to_lowercase()
}

pub fn choice_accuracy(predictions: &[String], golds: &[String]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::input(format!(
            "{} predictions for {} gold answers",
            predictions.len(),
            golds.len()
        )));
    }
    if golds.is_empty() {
        return Err(Error::input("accuracy needs at least one item"));
    }
    let hits = predictions.iter().zip(golds).filter(|(p, g)| normalize_choice(p) == normalize_choice(g)).count();
    Ok(hits as f64 / golds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub index: usize,
    pub rouge_l_f1: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub rouge_l_f1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: Vec<ItemScore>,
    pub aggregate: Aggregate,
    pub item_count: usize,
}

pub fn evaluate(predictions: &[String], golds: &[String]) -> Result<EvalReport> {
    let accuracy = choice_accuracy(predictions, golds)?;
    let items: Vec<ItemScore> = predictions
        .iter()
        .zip(golds)
        .enumerate()
        .map(|(index, (p, g))| ItemScore {
            index,
            rouge_l_f1: rouge_l_f1(p, g),
            correct: normalize_choice(p) == normalize_choice(g),
        })
        .collect();
    let n = items.len() as f64;
    let rouge = items.iter().map(|i| i.rouge_l_f1).sum::<f64>() / n;
    Ok(EvalReport { item_count: items.len(), aggregate: Aggregate { rouge_l_f1: rouge, accuracy }, items })
}

/// One answer per item. `.jsonl` files hold objects with an `answer` or
/// `prediction` string and an optional `id`; any other file is read as
/// one answer per line.
pub fn read_answers(path: &Path) -> Result<Vec<(Option<String>, String)>> {
    let text = fs::read_to_string(path)?;
    let jsonl = path.extension().is_some_and(|e| e == "jsonl");
    if !jsonl {
        return Ok(text.lines().map(|l| (None, l.to_string())).collect());
    }
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::input(format!("{}:{}: {e}", path.display(), n + 1)))?;
        let answer = ["answer", "prediction"]
            .iter()
            .find_map(|k| v.get(*k).and_then(serde_json::Value::as_str))
            .ok_or_else(|| Error::input(format!("{}:{}: no answer or prediction field", path.display(), n + 1)))?;
        let id = v.get("id").map(|i| i.as_str().map_or_else(|| i.to_string(), str::to_string));
        out.push((id, answer.to_string()));
    }
    Ok(out)
}

/// Pairs predictions with golds by id when every row on both sides has
/// one, otherwise by position.
pub fn align_answers(
    predictions: Vec<(Option<String>, String)>,
    golds: Vec<(Option<String>, String)>,
) -> Result<(Vec<String>, Vec<String>)> {
    let all_ids = predictions.iter().chain(&golds).all(|(id, _)| id.is_some());
    if !all_ids {
        return Ok((predictions.into_iter().map(|p| p.1).collect(), golds.into_iter().map(|g| g.1).collect()));
    }
    let by_id: std::collections::HashMap<String, String> =
        predictions.into_iter().map(|(id, a)| (id.expect("checked"), a)).collect();
    let mut preds = Vec::with_capacity(golds.len());
    let mut gold_answers = Vec::with_capacity(golds.len());
    for (id, g) in golds {
        let id = id.expect("checked");
        let p = by_id.get(&id).ok_or_else(|| Error::input(format!("no prediction for id {id}")))?;
        preds.push(p.clone());
        gold_answers.push(g);
    }
    Ok((preds, gold_answers))
}
