//! Synthetic corpora with known structure, for tests and benchmarks.
//!
//! Tweets carry one MF marker token (`mfw0` … `mfw4`) and filler words; the
//! marker names the gold foundation with probability `text_signal`. Entities
//! either come from a small role-specific pool (surface `r{role}n{k}`, a
//! reliable role cue) or are unique to their tweet (no cue). Entity surfaces
//! never appear in the tweet text, so MF evidence from entities reaches the
//! MF decision only through joint inference.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kb::{Corpus, EntityMention, Ideology, PriorScores, TweetInstance};
use crate::taxonomy::{MoralFoundation, MoralRole};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub tweets: usize,
    pub seed: u64,
    /// Probability that the MF marker names the gold foundation.
    pub text_signal: f64,
    /// Probability that an entity comes from its role's pool.
    pub entity_signal: f64,
    pub max_entities: usize,
    pub pool_size: usize,
    pub topics: usize,
    /// Filler vocabulary size; zero leaves fillers out.
    pub filler_words: usize,
    /// Emit the MF marker token. Without it the text says nothing about MF.
    pub marker: bool,
    /// Append entity surfaces to the text and record their spans, as the
    /// on-disk corpus format requires.
    pub mention_entities: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            tweets: 120,
            seed: 1,
            text_signal: 0.45,
            entity_signal: 0.75,
            max_entities: 3,
            pool_size: 3,
            topics: 3,
            filler_words: 40,
            marker: true,
            mention_entities: false,
        }
    }
}

impl SyntheticConfig {
    /// Text without MF evidence: the foundation shows only through entity roles.
    pub fn role_driven(tweets: usize, seed: u64) -> Self {
        SyntheticConfig {
            tweets,
            seed,
            text_signal: 0.0,
            entity_signal: 0.9,
            pool_size: 1,
            filler_words: 0,
            marker: false,
            ..Default::default()
        }
    }

    /// Fully separable: reliable markers and entity cues.
    pub fn separable(tweets: usize, seed: u64) -> Self {
        SyntheticConfig {
            tweets,
            seed,
            text_signal: 1.0,
            entity_signal: 1.0,
            ..Default::default()
        }
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.tweets);
    for i in 0..cfg.tweets {
        let mf = MoralFoundation::ALL[rng.random_range(0..5)];
        let marker = if rng.random_bool(cfg.text_signal) {
            mf
        } else {
            *MoralFoundation::ALL.choose(&mut rng).expect("non-empty")
        };
        let n_words = rng.random_range(3..8);
        let mut words: Vec<String> = if cfg.filler_words == 0 {
            Vec::new()
        } else {
            (0..n_words)
                .map(|_| format!("w{}", rng.random_range(0..cfg.filler_words)))
                .collect()
        };
        if cfg.marker {
            words.push(format!("mfw{}", marker.index()));
        }
        words.shuffle(&mut rng);
        let n_ent = rng.random_range(1..=cfg.max_entities.max(1)).min(mf.roles().len());
        let mut roles: Vec<MoralRole> = mf.roles().to_vec();
        roles.shuffle(&mut rng);
        let mut entities: Vec<EntityMention> = roles[..n_ent]
            .iter()
            .enumerate()
            .map(|(k, &r)| {
                let id = if rng.random_bool(cfg.entity_signal) {
                    format!("r{}n{}", r.index(), rng.random_range(0..cfg.pool_size.max(1)))
                } else {
                    format!("u{i}x{k}")
                };
                EntityMention {
                    id: id.clone(),
                    surface: id,
                    spans: Vec::new(),
                    gold_role: Some(r),
                }
            })
            .collect();
        let mut text = words.join(" ");
        if cfg.mention_entities {
            for e in &mut entities {
                if !text.is_empty() {
                    text.push(' ');
                }
                let start = text.chars().count();
                text.push_str(&e.surface);
                e.spans = vec![(start, start + e.surface.chars().count())];
            }
        }
        out.push(TweetInstance {
            id: format!("s{i}"),
            text,
            ideology: if rng.random_bool(0.5) {
                Ideology::Left
            } else {
                Ideology::Right
            },
            topic: format!("topic{}", rng.random_range(0..cfg.topics.max(1))),
            entities,
            gold_mf: Some(mf),
        });
    }
    Corpus::from_instances(out)
}

/// Prior scores where role priors are reliable and MF priors favor a wrong
/// foundation on `mf_misleading` of the tweets that mention an entity.
pub fn synthetic_priors(corpus: &Corpus, mf_misleading: f64, seed: u64) -> PriorScores {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = PriorScores::default();
    for inst in &corpus.instances {
        let gold = inst.gold_mf.unwrap_or(MoralFoundation::CareHarm);
        let decoy = if !inst.entities.is_empty() && rng.random_bool(mf_misleading) {
            let others: Vec<MoralFoundation> = MoralFoundation::ALL.iter().copied().filter(|&m| m != gold).collect();
            Some(*others.choose(&mut rng).expect("four others"))
        } else {
            None
        };
        for m in MoralFoundation::ALL {
            let s = if Some(m) == decoy {
                0.7
            } else if m == gold {
                0.6
            } else {
                0.1
            };
            p.insert_mf(&inst.id, m, s);
        }
        for e in &inst.entities {
            for r in MoralRole::ALL {
                let s = if Some(r) == e.gold_role { 0.9 } else { 0.05 };
                p.insert_role(&inst.id, &e.id, r, s);
            }
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_consistent() {
        let cfg = SyntheticConfig::default();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.instances, b.instances);
        for inst in &a.instances {
            assert!(inst.is_fully_labeled());
            let m = inst.gold_mf.unwrap();
            assert!(inst.entities.iter().all(|e| e.gold_role.unwrap().foundation() == m));
        }
    }
}
