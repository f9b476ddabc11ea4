//! Independent softmax classifiers, one per linear scorer.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::task_metrics;
use super::TrainConfig;
use crate::dsl::CheckedProgram;
use crate::error::Result;
use crate::features::FeatureVec;
use crate::kb::{Const, Corpus};
use crate::params::{uses_linear_scorer, FeatureCache, LabelSpace, LinearScorer, ParameterStore};
use crate::taxonomy::{MoralFoundation, MoralRole};

#[derive(Debug, Clone)]
pub struct LocalExample {
    pub features: Arc<FeatureVec>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerReport {
    pub scorer: String,
    pub examples: usize,
    pub epochs: usize,
    pub train_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_macro_f1: Option<f64>,
    /// Labels with no training example; they keep zero parameters.
    pub absent_labels: Vec<String>,
}

fn label_name(space: LabelSpace, i: usize) -> &'static str {
    match space {
        LabelSpace::Mf => MoralFoundation::ALL[i].name(),
        LabelSpace::Role => MoralRole::ALL[i].name(),
    }
}

/// Gold-labeled heads of `t` with their feature vectors.
pub fn local_examples(scorer: &LinearScorer, params: &ParameterStore, corpus: &Corpus) -> Result<Vec<LocalExample>> {
    let kb = &corpus.kb;
    let mut cache = FeatureCache::new();
    let mut out = Vec::new();
    match scorer.space {
        LabelSpace::Mf => {
            for tw in kb.tweet_ids() {
                if let Some(m) = kb.gold_mf(tw) {
                    let args = [Const::Tweet(tw), Const::Mf(m)];
                    let features = params.grounding_features(&scorer.families, &args, corpus, &mut cache)?;
                    out.push(LocalExample {
                        features,
                        label: m.index(),
                    });
                }
            }
        }
        LabelSpace::Role => {
            for (tw, e) in kb.tweet_entity_pairs() {
                if let Some(r) = kb.gold_role(tw, e) {
                    let args = [Const::Tweet(tw), Const::Entity(e), Const::Role(r)];
                    let features = params.grounding_features(&scorer.families, &args, corpus, &mut cache)?;
                    out.push(LocalExample {
                        features,
                        label: r.index(),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Highest-scoring label among those seen in training; first label on ties.
pub fn predict_label(s: &LinearScorer, x: &FeatureVec) -> usize {
    let logits = s.logits(x);
    let mut best: Option<usize> = None;
    for (l, &v) in logits.iter().enumerate() {
        if s.absent[l] {
            continue;
        }
        if best.is_none_or(|b| v > logits[b]) {
            best = Some(l);
        }
    }
    best.unwrap_or(0)
}

fn softmax_step(s: &mut LinearScorer, ex: &LocalExample, rate: f64) {
    let logits = s.logits(&ex.features);
    let max = logits
        .iter()
        .zip(&s.absent)
        .filter(|(_, a)| !**a)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .zip(&s.absent)
        .map(|(v, a)| if *a { 0.0 } else { (v - max).exp() })
        .collect();
    let z: f64 = exps.iter().sum();
    for (l, e) in exps.iter().enumerate() {
        if s.absent[l] {
            continue;
        }
        let g = e / z - f64::from(u8::from(l == ex.label));
        if g != 0.0 {
            s.add_scaled(&ex.features, l, -rate * g);
        }
    }
}

fn accuracy(s: &LinearScorer, xs: &[LocalExample]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().filter(|x| predict_label(s, &x.features) == x.label).count() as f64 / xs.len() as f64
}

fn macro_f1(s: &LinearScorer, xs: &[LocalExample]) -> f64 {
    let pairs: Vec<(String, String)> = xs
        .iter()
        .map(|x| {
            (
                label_name(s.space, x.label).to_string(),
                label_name(s.space, predict_label(s, &x.features)).to_string(),
            )
        })
        .collect();
    task_metrics(&pairs, &[]).macro_f1
}

/// Fit one scorer by SGD on cross-entropy with L2 decay, early-stopping on
/// validation macro-F1 when a validation set is given.
pub fn fit_scorer(
    s: &mut LinearScorer,
    name: &str,
    train: &[LocalExample],
    val: &[LocalExample],
    cfg: &TrainConfig,
    seed: u64,
) -> ScorerReport {
    let n = s.space.size();
    let mut seen = vec![false; n];
    for x in train {
        seen[x.label] = true;
    }
    s.absent = seen.iter().map(|b| !b).collect();
    for l in 0..n {
        if s.absent[l] {
            s.row_mut(l).iter_mut().for_each(|w| *w = 0.0);
            s.bias[l] = 0.0;
        }
    }
    let absent_labels: Vec<String> = (0..n)
        .filter(|&l| s.absent[l])
        .map(|l| label_name(s.space, l).to_string())
        .collect();
    if !absent_labels.is_empty() && !train.is_empty() {
        log::warn!("scorer `{name}`: no training example for {}", absent_labels.join(", "));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, LinearScorer, usize)> = None;
    let mut stale = 0;
    let mut epochs = 0;
    let decay = 1.0 - cfg.learning_rate * cfg.l2;
    while epochs < cfg.epochs && !train.is_empty() {
        epochs += 1;
        order.shuffle(&mut rng);
        for &i in &order {
            softmax_step(s, &train[i], cfg.learning_rate);
        }
        s.l2_shrink(decay.powi(train.len() as i32));
        if !val.is_empty() {
            let f = macro_f1(s, val);
            if best.as_ref().is_none_or(|b| f > b.0) {
                best = Some((f, s.clone(), epochs));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
    }
    let mut validation_macro_f1 = None;
    if let Some((f, kept, _)) = best {
        *s = kept;
        validation_macro_f1 = Some(f);
    }
    ScorerReport {
        scorer: name.to_string(),
        examples: train.len(),
        epochs,
        train_accuracy: accuracy(s, train),
        validation_macro_f1,
        absent_labels,
    }
}

/// Train every linear scorer of `program` independently.
pub fn train_local(
    program: &CheckedProgram,
    train: &Corpus,
    val: Option<&Corpus>,
    params: &mut ParameterStore,
    cfg: &TrainConfig,
) -> Result<Vec<ScorerReport>> {
    let mut reports = Vec::new();
    let mut done: Vec<String> = Vec::new();
    for t in &program.templates {
        let Some(name) = t.scorer() else { continue };
        if !uses_linear_scorer(t) || done.iter().any(|d| d == name) {
            continue;
        }
        done.push(name.to_string());
        let Some(scorer) = params.linear(name).cloned() else {
            continue;
        };
        let xs = local_examples(&scorer, params, train)?;
        let vs = match val {
            Some(v) => local_examples(&scorer, params, v)?,
            None => Vec::new(),
        };
        let mut s = scorer;
        let seed = cfg.seed.wrapping_add(done.len() as u64);
        let report = fit_scorer(&mut s, name, &xs, &vs, cfg, seed);
        *params.linear_mut(name).expect("scorer exists") = s;
        reports.push(report);
    }
    Ok(reports)
}
