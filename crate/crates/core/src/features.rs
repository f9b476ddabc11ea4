//! Sparse feature extraction for the local linear scorers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{tokenize, EntityMention, TweetInstance};
use crate::lexicon::Lexicon;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFamily {
    TextUnigrams,
    EntityUnigrams,
    Lexicon,
    Ideology,
    Topic,
}

impl FeatureFamily {
    pub const ALL: [FeatureFamily; 5] = [
        FeatureFamily::TextUnigrams,
        FeatureFamily::EntityUnigrams,
        FeatureFamily::Lexicon,
        FeatureFamily::Ideology,
        FeatureFamily::Topic,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// Bit set of families, used as a cache key.
pub fn family_mask(families: &[FeatureFamily]) -> u8 {
    families.iter().fold(0, |m, f| m | f.bit())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyToggles {
    pub text: bool,
    pub entity: bool,
    pub lexicon: bool,
    pub ideology: bool,
    pub topic: bool,
}

impl Default for FamilyToggles {
    fn default() -> Self {
        FamilyToggles {
            text: true,
            entity: true,
            lexicon: true,
            ideology: true,
            topic: true,
        }
    }
}

impl FamilyToggles {
    pub fn enabled(&self, f: FeatureFamily) -> bool {
        match f {
            FeatureFamily::TextUnigrams => self.text,
            FeatureFamily::EntityUnigrams => self.entity,
            FeatureFamily::Lexicon => self.lexicon,
            FeatureFamily::Ideology => self.ideology,
            FeatureFamily::Topic => self.topic,
        }
    }

    pub fn any(&self) -> bool {
        FeatureFamily::ALL.iter().any(|&f| self.enabled(f))
    }
}

/// Sparse vector of `(index, value)` pairs sorted by index, no duplicates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVec(pub Vec<(u32, f64)>);

impl FeatureVec {
    pub fn from_unsorted(mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        let mut out: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => out.push((i, v)),
            }
        }
        out.retain(|e| e.1 != 0.0);
        FeatureVec(out)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.0.iter().map(|&(i, v)| dense[i as usize] * v).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Vocabulary-backed featurizer; frozen once fitted.
///
/// Layout: `[text unigrams | entity unigrams | lexicon (5) | ideology (2) | topic]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub vocab: BTreeMap<String, u32>,
    pub topics: BTreeMap<String, u32>,
    pub lexicon: Option<Lexicon>,
    pub toggles: FamilyToggles,
}

impl Featurizer {
    pub fn fit(instances: &[TweetInstance], lexicon: Option<Lexicon>, toggles: FamilyToggles) -> Result<Self> {
        if !toggles.any() {
            return Err(Error::Learning(
                "every feature family is disabled; features would be zero-dimensional".into(),
            ));
        }
        let mut words: Vec<String> = Vec::new();
        let mut topics: Vec<String> = Vec::new();
        for inst in instances {
            words.extend(inst.tokens());
            for m in &inst.entities {
                words.extend(tokenize(&m.surface));
            }
            topics.push(inst.topic.clone());
        }
        words.sort();
        words.dedup();
        topics.sort();
        topics.dedup();
        if toggles.lexicon && lexicon.is_none() {
            log::warn!("lexicon features enabled but no lexicon supplied; the family will be empty");
        }
        Ok(Featurizer {
            vocab: words.into_iter().enumerate().map(|(i, w)| (w, i as u32)).collect(),
            topics: topics.into_iter().enumerate().map(|(i, t)| (t, i as u32)).collect(),
            lexicon,
            toggles,
        })
    }

    fn offset(&self, f: FeatureFamily) -> u32 {
        let v = self.vocab.len() as u32;
        match f {
            FeatureFamily::TextUnigrams => 0,
            FeatureFamily::EntityUnigrams => v,
            FeatureFamily::Lexicon => 2 * v,
            FeatureFamily::Ideology => 2 * v + 5,
            FeatureFamily::Topic => 2 * v + 7,
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.vocab.len() + 7 + self.topics.len()
    }

    /// Families actually produced for a request, after applying the toggles.
    pub fn active(&self, families: &[FeatureFamily]) -> Vec<FeatureFamily> {
        let mut out: Vec<FeatureFamily> = families.iter().copied().filter(|&f| self.toggles.enabled(f)).collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn features(
        &self,
        inst: &TweetInstance,
        entity: Option<&EntityMention>,
        families: &[FeatureFamily],
    ) -> FeatureVec {
        let mut out = Vec::new();
        for f in self.active(families) {
            let base = self.offset(f);
            match f {
                FeatureFamily::TextUnigrams => {
                    for tok in inst.tokens() {
                        if let Some(&i) = self.vocab.get(&tok) {
                            out.push((base + i, 1.0));
                        }
                    }
                }
                FeatureFamily::EntityUnigrams => {
                    if let Some(m) = entity {
                        for tok in tokenize(&m.surface) {
                            if let Some(&i) = self.vocab.get(&tok) {
                                out.push((base + i, 1.0));
                            }
                        }
                    }
                }
                FeatureFamily::Lexicon => {
                    if let Some(lex) = &self.lexicon {
                        for (k, s) in lex.mf_scores(&inst.tokens()).into_iter().enumerate() {
                            out.push((base + k as u32, s));
                        }
                    }
                }
                FeatureFamily::Ideology => out.push((base + inst.ideology.index() as u32, 1.0)),
                FeatureFamily::Topic => {
                    if let Some(&k) = self.topics.get(&inst.topic) {
                        out.push((base + k, 1.0));
                    }
                }
            }
        }
        FeatureVec::from_unsorted(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::Ideology;

    fn inst(text: &str, topic: &str) -> TweetInstance {
        TweetInstance {
            id: text.into(),
            text: text.into(),
            ideology: Ideology::Right,
            topic: topic.into(),
            entities: vec![EntityMention {
                id: "the wall".into(),
                surface: "The Wall".into(),
                spans: vec![(0, 8)],
                gold_role: None,
            }],
            gold_mf: None,
        }
    }

    #[test]
    fn layout_and_counts() {
        let data = [inst("build the wall the", "immigration"), inst("health care", "aca")];
        let f = Featurizer::fit(&data, None, FamilyToggles::default()).unwrap();
        // vocab: build care health the wall
        assert_eq!(f.vocab.len(), 5);
        assert_eq!(f.dim(), 2 * 5 + 7 + 2);
        let all = FeatureFamily::ALL;
        let v = f.features(&data[0], Some(&data[0].entities[0]), &all);
        let the = f.vocab["the"];
        assert!(v.0.contains(&(the, 2.0)));
        assert!(v.0.contains(&(5 + the, 1.0)));
        assert!(v.0.contains(&(10 + 5 + 1, 1.0)));
        assert!(v.0.contains(&(10 + 7 + f.topics["immigration"], 1.0)));
        assert_eq!(v, f.features(&data[0], Some(&data[0].entities[0]), &all));
    }

    #[test]
    fn toggles() {
        let data = [inst("a b", "t")];
        let off = FamilyToggles {
            text: false,
            entity: false,
            lexicon: false,
            ideology: false,
            topic: false,
        };
        assert!(Featurizer::fit(&data, None, off).is_err());
        let only_topic = FamilyToggles { topic: true, ..off };
        let f = Featurizer::fit(&data, None, only_topic).unwrap();
        let v = f.features(&data[0], None, &FeatureFamily::ALL);
        assert_eq!(v.0.len(), 1);
    }

    #[test]
    fn merges_duplicates() {
        let v = FeatureVec::from_unsorted(vec![(3, 1.0), (1, 2.0), (3, 1.5), (2, 0.0)]);
        assert_eq!(v.0, vec![(1, 2.0), (3, 2.5)]);
    }
}
