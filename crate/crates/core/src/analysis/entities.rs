use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{entity_key, tokenize, Ideology};
use crate::learning::PredictionSet;
use crate::taxonomy::MoralRole;

/// Canonical entity names with their case-folded surface aliases.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityAliasMap {
    canonical: BTreeMap<String, Vec<String>>,
    #[serde(skip)]
    lookup: BTreeMap<String, String>,
}

impl EntityAliasMap {
    pub fn new(groups: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut lookup = BTreeMap::new();
        let mut canonical = BTreeMap::new();
        for name in groups.keys() {
            lookup.insert(entity_key(name), name.clone());
        }
        for (name, aliases) in groups {
            let mut folded: Vec<String> = aliases
                .iter()
                .map(|a| entity_key(a))
                .filter(|a| !a.is_empty())
                .collect();
            folded.sort();
            folded.dedup();
            for a in &folded {
                match lookup.get(a) {
                    Some(other) if *other != name => {
                        return Err(Error::Data(format!(
                            "alias `{a}` of `{name}` is already claimed by `{other}`"
                        )));
                    }
                    _ => {
                        lookup.insert(a.clone(), name.clone());
                    }
                }
            }
            canonical.insert(name, folded);
        }
        Ok(EntityAliasMap { canonical, lookup })
    }

    /// JSON object mapping each canonical name to its aliases.
    pub fn from_json(src: &str) -> Result<Self> {
        let groups: BTreeMap<String, Vec<String>> =
            serde_json::from_str(src).map_err(|e| Error::Data(format!("alias map: {e}")))?;
        Self::new(groups)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn groups(&self) -> &BTreeMap<String, Vec<String>> {
        &self.canonical
    }

    /// Canonical name for a surface, if it is a known alias or canonical.
    pub fn resolve(&self, surface: &str) -> Option<&str> {
        self.lookup.get(&entity_key(surface)).map(String::as_str)
    }

    /// Rewrite every entity row to its canonical name.
    pub fn apply(&self, preds: &PredictionSet) -> PredictionSet {
        let mut out = preds.clone();
        for t in &mut out.tweets {
            for e in &mut t.entities {
                let hit = self.resolve(&e.entity).or_else(|| self.resolve(&e.surface));
                if let Some(name) = hit {
                    e.entity = entity_key(name);
                    e.surface = name.to_string();
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopEntitiesConfig {
    pub top_k: usize,
    pub max_n: usize,
    /// N-grams starting or ending with one of these words are not counted.
    pub stopwords: Vec<String>,
}

impl Default for TopEntitiesConfig {
    fn default() -> Self {
        TopEntitiesConfig {
            top_k: 5,
            max_n: 5,
            stopwords: [
                "a", "an", "and", "at", "by", "for", "in", "of", "on", "or", "the", "to", "with",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityGroup {
    /// Most frequent surface among mentions containing the head n-gram.
    pub representative: String,
    /// Highest-count n-gram of the group (stemmed).
    pub head: String,
    pub count: usize,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleEntities {
    pub ideology: Ideology,
    pub role: MoralRole,
    pub mentions: usize,
    pub groups: Vec<EntityGroup>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn contains(long: &[String], short: &[String]) -> bool {
    short.len() < long.len() && long.windows(short.len()).any(|w| w == short)
}

/// Group stemmed n-grams of `surfaces` and rank the groups.
///
/// Each n-gram counts the mentions containing it. N-grams are visited by
/// descending count, then lexicographically; one that contains or is
/// contained in members of existing groups joins them (merging those groups),
/// otherwise it opens a new group. A group's count is its head's count.
pub fn rank_entity_groups(surfaces: &[String], cfg: &TopEntitiesConfig) -> Vec<EntityGroup> {
    let stemmer = Stemmer::create(Algorithm::English);
    let stop: BTreeSet<&str> = cfg.stopwords.iter().map(String::as_str).collect();
    let mut counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    let mut grams_of: Vec<BTreeSet<Vec<String>>> = Vec::with_capacity(surfaces.len());
    for s in surfaces {
        let toks = tokenize(s);
        let stems: Vec<String> = toks.iter().map(|t| stemmer.stem(t).into_owned()).collect();
        let mut grams = BTreeSet::new();
        for n in 1..=cfg.max_n.min(stems.len()) {
            for (i, w) in stems.windows(n).enumerate() {
                if stop.contains(toks[i].as_str()) || stop.contains(toks[i + n - 1].as_str()) {
                    continue;
                }
                grams.insert(w.to_vec());
            }
        }
        for g in &grams {
            *counts.entry(g.clone()).or_default() += 1;
        }
        grams_of.push(grams);
    }
    let mut order: Vec<(&Vec<String>, usize)> = counts.iter().map(|(g, c)| (g, *c)).collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.join(" ").cmp(&b.0.join(" "))));

    let mut parent: Vec<usize> = (0..order.len()).collect();
    for i in 0..order.len() {
        for j in 0..i {
            let (a, b) = (order[i].0, order[j].0);
            if contains(a, b) || contains(b, a) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    // the earlier root keeps the head
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..order.len() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<EntityGroup> = groups
        .into_iter()
        .map(|(root, members)| {
            let head = order[root].0;
            let mut surf: BTreeMap<String, usize> = BTreeMap::new();
            for (k, s) in surfaces.iter().enumerate() {
                if grams_of[k].contains(head) {
                    *surf.entry(entity_key(s)).or_default() += 1;
                }
            }
            let representative = surf
                .iter()
                .fold(None::<(&String, usize)>, |best, (s, c)| match best {
                    Some((_, b)) if b >= *c => best,
                    _ => Some((s, *c)),
                })
                .map(|(s, _)| s.clone())
                .unwrap_or_default();
            EntityGroup {
                representative,
                head: head.join(" "),
                count: order[root].1,
                members: members.iter().map(|&i| order[i].0.join(" ")).collect(),
            }
        })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.head.cmp(&b.head)));
    out.truncate(cfg.top_k);
    out
}

/// Frequent entities for every (ideology, role) with at least one mention.
pub fn top_entities_per_role(preds: &PredictionSet, cfg: &TopEntitiesConfig) -> Vec<RoleEntities> {
    let mut by: BTreeMap<(Ideology, MoralRole), Vec<String>> = BTreeMap::new();
    for t in &preds.tweets {
        for e in &t.entities {
            by.entry((t.ideology, e.role)).or_default().push(e.surface.clone());
        }
    }
    by.into_iter()
        .map(|((ideology, role), surfaces)| RoleEntities {
            ideology,
            role,
            mentions: surfaces.len(),
            groups: rank_entity_groups(&surfaces, cfg),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn inclusive_ngrams_merge() {
        let s = strings(&[
            "law abiding citizens",
            "Law Abiding  citizens",
            "Law abiding",
            "the wall",
        ]);
        let g = rank_entity_groups(&s, &TopEntitiesConfig::default());
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].count, 3);
        assert_eq!(g[0].representative, "law abiding citizens");
        assert!(g[0].members.contains(&"law abid citizen".to_string()));
        assert_eq!(g[1].head, "wall");
        assert_eq!(g[1].representative, "the wall");
    }

    #[test]
    fn single_entity() {
        let s = strings(&["Planned Parenthood"; 4]);
        let g = rank_entity_groups(&s, &TopEntitiesConfig::default());
        assert_eq!(g.len(), 1);
        assert_eq!((g[0].representative.as_str(), g[0].count), ("planned parenthood", 4));
    }

    #[test]
    fn ties_are_lexicographic() {
        let s = strings(&["zeta", "alpha", "zeta", "alpha"]);
        let g = rank_entity_groups(&s, &TopEntitiesConfig::default());
        assert_eq!(g[0].representative, "alpha");
        assert_eq!(g[1].representative, "zeta");
    }

    #[test]
    fn alias_map_rejects_shared_alias() {
        let mut m = BTreeMap::new();
        m.insert("A".to_string(), strings(&["x"]));
        m.insert("B".to_string(), strings(&["X"]));
        assert!(EntityAliasMap::new(m).is_err());
    }
}
