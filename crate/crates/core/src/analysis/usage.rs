use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::kb::{entity_key, Ideology};
use crate::learning::PredictionSet;
use crate::taxonomy::{MoralRole, Polarity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankPoint {
    pub role: MoralRole,
    pub polarity: Polarity,
    pub count: usize,
    /// Dense usage rank scaled to [0, 1]; the most used role scores 1.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolaritySeries {
    pub ideology: Ideology,
    pub points: Vec<RankPoint>,
}

fn role_counts(preds: &PredictionSet, entity: &str, ideology: Ideology) -> [usize; 16] {
    let key = entity_key(entity);
    let mut c = [0; 16];
    for t in preds.tweets.iter().filter(|t| t.ideology == ideology) {
        for e in t.entities.iter().filter(|e| e.entity == key) {
            c[e.role.index()] += 1;
        }
    }
    c
}

/// Per ideology (left, then right), the entity's roles used at least
/// `min_count` times, ordered by rising score then taxonomy order.
pub fn polarity_rank(preds: &PredictionSet, entity: &str, min_count: usize) -> Vec<PolaritySeries> {
    Ideology::ALL
        .iter()
        .map(|&ideology| {
            let c = role_counts(preds, entity, ideology);
            let kept: Vec<MoralRole> = MoralRole::ALL
                .into_iter()
                .filter(|r| c[r.index()] >= min_count.max(1))
                .collect();
            let mut distinct: Vec<usize> = kept.iter().map(|r| c[r.index()]).collect();
            distinct.sort_unstable();
            distinct.dedup();
            let score = |n: usize| {
                if distinct.len() <= 1 {
                    1.0
                } else {
                    let rank = distinct.binary_search(&n).expect("count present");
                    rank as f64 / (distinct.len() - 1) as f64
                }
            };
            let mut points: Vec<RankPoint> = kept
                .iter()
                .map(|&role| RankPoint {
                    role,
                    polarity: role.polarity(),
                    count: c[role.index()],
                    score: score(c[role.index()]),
                })
                .collect();
            points.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.role.cmp(&b.role)));
            PolaritySeries { ideology, points }
        })
        .collect()
}

/// Share of the entity's mentions per role, most frequent first; empty when
/// the entity is never mentioned by that side.
pub fn role_distribution(preds: &PredictionSet, entity: &str, ideology: Ideology) -> Vec<(MoralRole, f64)> {
    let c = role_counts(preds, entity, ideology);
    let total: usize = c.iter().sum();
    if total == 0 {
        return Vec::new();
    }
    let mut out: Vec<(MoralRole, f64)> = MoralRole::ALL
        .into_iter()
        .filter(|r| c[r.index()] > 0)
        .map(|r| (r, c[r.index()] as f64 / total as f64))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Mention counts per entity key, most frequent first.
pub fn entity_frequencies(preds: &PredictionSet) -> Vec<(String, usize)> {
    let mut m: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &preds.tweets {
        for e in &t.entities {
            *m.entry(&e.entity).or_default() += 1;
        }
    }
    let mut v: Vec<(String, usize)> = m.into_iter().map(|(e, c)| (e.to_string(), c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}
