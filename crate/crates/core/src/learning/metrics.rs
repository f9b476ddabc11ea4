use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub per_class: Vec<ClassReport>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Per-class precision, recall and F1 over `(gold, predicted)` pairs.
///
/// `order` fixes the row order; labels outside it are appended sorted. Macro
/// F1 averages over labels that occur in gold or predictions; weighted F1
/// weights by gold support.
pub fn task_metrics(pairs: &[(String, String)], order: &[&str]) -> TaskMetrics {
    let mut tp: BTreeMap<&str, usize> = BTreeMap::new();
    let mut gold_n: BTreeMap<&str, usize> = BTreeMap::new();
    let mut pred_n: BTreeMap<&str, usize> = BTreeMap::new();
    let mut correct = 0;
    for (g, p) in pairs {
        *gold_n.entry(g).or_default() += 1;
        *pred_n.entry(p).or_default() += 1;
        if g == p {
            *tp.entry(g).or_default() += 1;
            correct += 1;
        }
    }
    let mut labels: Vec<&str> = order
        .iter()
        .copied()
        .filter(|l| gold_n.contains_key(l) || pred_n.contains_key(l))
        .collect();
    let mut extra: Vec<&str> = gold_n
        .keys()
        .chain(pred_n.keys())
        .copied()
        .filter(|l| !order.contains(l))
        .collect();
    extra.sort();
    extra.dedup();
    labels.extend(extra);

    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let per_class: Vec<ClassReport> = labels
        .iter()
        .map(|&l| {
            let t = tp.get(l).copied().unwrap_or(0);
            let support = gold_n.get(l).copied().unwrap_or(0);
            let precision = ratio(t, pred_n.get(l).copied().unwrap_or(0));
            let recall = ratio(t, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassReport {
                label: l.to_string(),
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let n = pairs.len();
    let macro_f1 = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64
    };
    let weighted_f1 = if n == 0 {
        0.0
    } else {
        per_class.iter().map(|c| c.f1 * c.support as f64).sum::<f64>() / n as f64
    };
    TaskMetrics {
        per_class,
        macro_f1,
        weighted_f1,
        accuracy: ratio(correct, n),
        count: n,
    }
}
