use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::Ideology;
use crate::learning::PredictionSet;
use crate::taxonomy::{MoralFoundation, MoralRole};

/// Signed partisanship score; positive leans left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub z: f64,
    /// Pooled proportion was 0 or 1, so the statistic is undefined and set to 0.
    pub degenerate: bool,
}

/// Pooled two-proportion z statistic for `(successes, trials)` on each side.
pub fn partisanship_zscore(left: (u64, u64), right: (u64, u64)) -> Result<ZScore> {
    let ((sl, nl), (sr, nr)) = (left, right);
    if nl == 0 || nr == 0 {
        return Err(Error::Data("z-score needs at least one trial on each side".into()));
    }
    if sl > nl || sr > nr {
        return Err(Error::Data(format!("successes exceed trials ({sl}/{nl}, {sr}/{nr})")));
    }
    let (nl, nr) = (nl as f64, nr as f64);
    let pooled = (sl as f64 + sr as f64) / (nl + nr);
    if pooled <= 0.0 || pooled >= 1.0 {
        return Ok(ZScore {
            z: 0.0,
            degenerate: true,
        });
    }
    let diff = sl as f64 / nl - sr as f64 / nr;
    let se = (pooled * (1.0 - pooled) * (1.0 / nl + 1.0 / nr)).sqrt();
    Ok(ZScore {
        z: diff / se,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartisanConfig {
    /// Minimum total mentions for a (role, entity) pair to be ranked.
    pub min_count: usize,
}

impl Default for PartisanConfig {
    fn default() -> Self {
        PartisanConfig { min_count: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartisanPair {
    pub role: MoralRole,
    pub entity: String,
    pub score: ZScore,
}

/// One row of the per-topic partisanship table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicPartisanship {
    pub topic: String,
    pub common_mf: MoralFoundation,
    /// `None` when one side has no tweet on the topic.
    pub mf_score: Option<ZScore>,
    pub most_right: Option<PartisanPair>,
    pub most_left: Option<PartisanPair>,
}

/// Per topic: the most frequent MF with its z-score, and the (role, entity)
/// pairs leaning furthest right and left. Ties go to the earlier label or the
/// lexicographically smaller entity.
pub fn partisanship_table(preds: &PredictionSet, cfg: &PartisanConfig) -> Vec<TopicPartisanship> {
    #[derive(Default)]
    struct Topic {
        tweets: [u64; 2],
        mf: BTreeMap<MoralFoundation, [u64; 2]>,
        rows: [u64; 2],
        pairs: BTreeMap<(MoralRole, String), [u64; 2]>,
    }
    let mut topics: BTreeMap<&str, Topic> = BTreeMap::new();
    for t in &preds.tweets {
        let side = t.ideology.index();
        let entry = topics.entry(&t.topic).or_default();
        entry.tweets[side] += 1;
        entry.mf.entry(t.mf).or_default()[side] += 1;
        for e in &t.entities {
            entry.rows[side] += 1;
            entry.pairs.entry((e.role, e.entity.clone())).or_default()[side] += 1;
        }
    }
    let l = Ideology::Left.index();
    let r = Ideology::Right.index();
    topics
        .into_iter()
        .map(|(topic, t)| {
            let (common_mf, counts) =
                t.mf.iter()
                    .fold(None::<(MoralFoundation, [u64; 2])>, |best, (m, c)| match best {
                        Some((_, b)) if b[0] + b[1] >= c[0] + c[1] => best,
                        _ => Some((*m, *c)),
                    })
                    .expect("a topic has at least one tweet");
            let mf_score = partisanship_zscore((counts[l], t.tweets[l]), (counts[r], t.tweets[r])).ok();
            let mut most_left: Option<PartisanPair> = None;
            let mut most_right: Option<PartisanPair> = None;
            for ((role, entity), c) in &t.pairs {
                if ((c[0] + c[1]) as usize) < cfg.min_count {
                    continue;
                }
                let Ok(score) = partisanship_zscore((c[l], t.rows[l]), (c[r], t.rows[r])) else {
                    continue;
                };
                let pair = || PartisanPair {
                    role: *role,
                    entity: entity.clone(),
                    score,
                };
                if score.z > 0.0 && most_left.as_ref().is_none_or(|b| score.z > b.score.z) {
                    most_left = Some(pair());
                }
                if score.z < 0.0 && most_right.as_ref().is_none_or(|b| score.z < b.score.z) {
                    most_right = Some(pair());
                }
            }
            TopicPartisanship {
                topic: topic.to_string(),
                common_mf,
                mf_score,
                most_right,
                most_left,
            }
        })
        .collect()
}
