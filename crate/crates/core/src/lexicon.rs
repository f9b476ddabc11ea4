//! PMI lexicon induction, dictionary loading, lexicon matching, and the
//! lexicon-matching baseline classifier.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{tokenize, Corpus, TweetInstance};
use crate::taxonomy::MoralFoundation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Pmi,
    Mfd,
    Merged,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Pmi => "pmi",
            Provenance::Mfd => "mfd",
            Provenance::Merged => "merged",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pmi" => Ok(Provenance::Pmi),
            "mfd" => Ok(Provenance::Mfd),
            "merged" => Ok(Provenance::Merged),
            _ => Err(Error::Lexicon(format!("unknown provenance `{s}`"))),
        }
    }
}

/// Tokens of one document with its label.
pub type Doc = (Vec<String>, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    /// Space-joined tokens.
    pub ngram: String,
    pub weight: f64,
    pub provenance: Provenance,
    /// Dictionary stem written with a trailing `*`: matches any token it prefixes.
    #[serde(default)]
    pub prefix: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    /// Entries per label, sorted by weight descending then ngram.
    pub labels: BTreeMap<String, Vec<LexiconEntry>>,
    pub n_max: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmiConfig {
    pub n_max: usize,
    pub min_count: usize,
    /// Keep at most this many entries per label.
    pub top_k: Option<usize>,
    /// Guard added to P(w) only when it is zero.
    pub smoothing: f64,
}

impl Default for PmiConfig {
    fn default() -> Self {
        PmiConfig {
            n_max: 5,
            min_count: 2,
            top_k: None,
            smoothing: 1e-12,
        }
    }
}

/// Which instance field supplies document labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelField {
    Mf,
    Topic,
    Ideology,
}

fn ngrams(tokens: &[String], n_max: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n_max).flat_map(move |n| tokens.windows(n).map(|w| w.join(" ")))
}

/// Raw PMI values `I(w, l) = ln(P(w|l) / P(w))` for every ngram seen under a label.
///
/// `P(w|l)` is the count of `w` over all tweets labeled `l` divided by the
/// number of tokens in those tweets; `P(w)` is the same over the whole corpus.
/// Ngrams whose corpus count is below `min_count` are dropped.
pub fn pmi_table(docs: &[Doc], labels: &[String], cfg: &PmiConfig) -> Result<BTreeMap<String, BTreeMap<String, f64>>> {
    if cfg.n_max < 1 || cfg.min_count < 1 {
        return Err(Error::Lexicon("n_max and min_count must be >= 1".into()));
    }
    if docs.is_empty() {
        return Err(Error::Lexicon("empty corpus".into()));
    }
    let mut per_label: BTreeMap<&str, (HashMap<String, usize>, usize, usize)> = BTreeMap::new();
    for l in labels {
        per_label.insert(l.as_str(), (HashMap::new(), 0, 0));
    }
    let mut total: HashMap<String, usize> = HashMap::new();
    let mut total_tokens = 0usize;
    for (tokens, label) in docs {
        let slot = per_label
            .get_mut(label.as_str())
            .ok_or_else(|| Error::Lexicon(format!("document label `{label}` is not in the label set")))?;
        slot.1 += tokens.len();
        slot.2 += 1;
        total_tokens += tokens.len();
        for g in ngrams(tokens, cfg.n_max) {
            *slot.0.entry(g.clone()).or_default() += 1;
            *total.entry(g).or_default() += 1;
        }
    }
    if let Some((l, _)) = per_label.iter().find(|(_, s)| s.2 == 0) {
        return Err(Error::Lexicon(format!("label `{l}` has no documents")));
    }
    let mut out = BTreeMap::new();
    for (label, (counts, label_tokens, _)) in per_label {
        let mut row = BTreeMap::new();
        for (g, &c) in &counts {
            let c_all = total[g];
            if c_all < cfg.min_count || c == 0 {
                continue;
            }
            let p_wl = c as f64 / label_tokens as f64;
            let mut p_w = c_all as f64 / total_tokens as f64;
            if p_w == 0.0 {
                p_w = cfg.smoothing;
            }
            row.insert(g.clone(), (p_wl / p_w).ln());
        }
        out.insert(label.to_string(), row);
    }
    Ok(out)
}

/// Rank ngrams per label by PMI and keep the positively associated ones.
///
/// Weights are PMI scaled into (0, 1] by min-max normalization anchored at
/// PMI = 0 (the inclusion threshold), i.e. `I / max I` within the label.
pub fn build_pmi_lexicon(docs: &[Doc], labels: &[String], cfg: &PmiConfig) -> Result<Lexicon> {
    let table = pmi_table(docs, labels, cfg)?;
    let mut out = BTreeMap::new();
    for (label, row) in table {
        let mut ranked: Vec<(String, f64)> = row.into_iter().filter(|(_, i)| *i > 0.0).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(k) = cfg.top_k {
            ranked.truncate(k);
        }
        let max = ranked.first().map(|r| r.1).unwrap_or(1.0);
        let entries = ranked
            .into_iter()
            .map(|(ngram, i)| LexiconEntry {
                ngram,
                weight: i / max,
                provenance: Provenance::Pmi,
                prefix: false,
            })
            .collect();
        out.insert(label, entries);
    }
    Ok(Lexicon {
        labels: out,
        n_max: cfg.n_max,
        provenance: Provenance::Pmi,
    })
}

pub fn documents(corpus: &Corpus, field: LabelField) -> Result<(Vec<Doc>, Vec<String>)> {
    let mut docs = Vec::with_capacity(corpus.len());
    for inst in &corpus.instances {
        let label = match field {
            LabelField::Mf => inst
                .gold_mf
                .map(|m| m.name().to_string())
                .ok_or_else(|| Error::Lexicon(format!("tweet `{}` has no gold MF label", inst.id)))?,
            LabelField::Topic => inst.topic.clone(),
            LabelField::Ideology => inst.ideology.name().to_string(),
        };
        docs.push((inst.tokens(), label));
    }
    let labels = match field {
        LabelField::Mf => MoralFoundation::ALL.iter().map(|m| m.name().to_string()).collect(),
        _ => {
            let mut l: Vec<String> = docs.iter().map(|d| d.1.clone()).collect();
            l.sort();
            l.dedup();
            l
        }
    };
    Ok((docs, labels))
}

pub fn build_pmi_lexicon_from_corpus(corpus: &Corpus, field: LabelField, cfg: &PmiConfig) -> Result<Lexicon> {
    let (docs, labels) = documents(corpus, field)?;
    build_pmi_lexicon(&docs, &labels, cfg)
}

/// Parse a dictionary: `[foundation]` section headers followed by one stem per line.
pub fn parse_mfd(source: &str) -> Result<Lexicon> {
    let mut labels: BTreeMap<String, Vec<LexiconEntry>> = BTreeMap::new();
    let mut current: Option<String> = None;
    let mut n_max = 1;
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let mf: MoralFoundation = name
                .parse()
                .map_err(|_| Error::Lexicon(format!("line {}: unknown foundation `{name}`", i + 1)))?;
            current = Some(mf.name().to_string());
            labels.entry(mf.name().to_string()).or_default();
            continue;
        }
        let label = current
            .clone()
            .ok_or_else(|| Error::Lexicon(format!("line {}: entry before any [foundation] header", i + 1)))?;
        let (stem, prefix) = match line.strip_suffix('*') {
            Some(s) => (s, true),
            None => (line, false),
        };
        let tokens = tokenize(stem);
        if tokens.is_empty() {
            continue;
        }
        n_max = n_max.max(tokens.len());
        let ngram = tokens.join(" ");
        let entries = labels.entry(label).or_default();
        if !entries.iter().any(|e| e.ngram == ngram && e.prefix == prefix) {
            entries.push(LexiconEntry {
                ngram,
                weight: 1.0,
                provenance: Provenance::Mfd,
                prefix: prefix && tokens.len() == 1,
            });
        }
    }
    for entries in labels.values_mut() {
        entries.sort_by(|a, b| a.ngram.cmp(&b.ngram));
    }
    Ok(Lexicon {
        labels,
        n_max,
        provenance: Provenance::Mfd,
    })
}

pub fn load_mfd(path: impl AsRef<Path>) -> Result<Lexicon> {
    let path = path.as_ref();
    parse_mfd(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

impl Lexicon {
    /// Union of a PMI lexicon and a dictionary; dictionary entries keep weight 1.
    pub fn merge(pmi: &Lexicon, mfd: &Lexicon) -> Lexicon {
        let mut labels = pmi.labels.clone();
        for (label, entries) in &mfd.labels {
            let row = labels.entry(label.clone()).or_default();
            for e in entries {
                match row.iter_mut().find(|x| x.ngram == e.ngram && !x.prefix && !e.prefix) {
                    Some(x) => {
                        x.weight = 1.0;
                        x.provenance = Provenance::Merged;
                    }
                    None => row.push(e.clone()),
                }
            }
            row.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.ngram.cmp(&b.ngram)));
        }
        Lexicon {
            labels,
            n_max: pmi.n_max.max(mfd.n_max),
            provenance: Provenance::Merged,
        }
    }

    pub fn label_names(&self) -> impl Iterator<Item = &str> {
        self.labels.keys().map(String::as_str)
    }

    /// Per-label sum of matched entry weights, longest match first, non-overlapping.
    pub fn score_tokens(&self, tokens: &[String]) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (label, entries) in &self.labels {
            let exact: HashMap<&str, f64> = entries
                .iter()
                .filter(|e| !e.prefix)
                .map(|e| (e.ngram.as_str(), e.weight))
                .collect();
            let stems: Vec<&LexiconEntry> = entries.iter().filter(|e| e.prefix).collect();
            let mut score = 0.0;
            let mut i = 0;
            while i < tokens.len() {
                let mut matched = None;
                for n in (1..=self.n_max.min(tokens.len() - i)).rev() {
                    let g = tokens[i..i + n].join(" ");
                    if let Some(&w) = exact.get(g.as_str()) {
                        matched = Some((n, w));
                        break;
                    }
                }
                if matched.is_none() {
                    if let Some(e) = stems.iter().find(|e| tokens[i].starts_with(e.ngram.as_str())) {
                        matched = Some((1, e.weight));
                    }
                }
                match matched {
                    Some((n, w)) => {
                        score += w;
                        i += n;
                    }
                    None => i += 1,
                }
            }
            out.insert(label.clone(), score);
        }
        out
    }

    pub fn score_text(&self, text: &str) -> BTreeMap<String, f64> {
        self.score_tokens(&tokenize(text))
    }

    /// Scores aligned to [`MoralFoundation::ALL`]; labels that are not foundations are ignored.
    pub fn mf_scores(&self, tokens: &[String]) -> [f64; 5] {
        let mut out = [0.0; 5];
        for (label, s) in self.score_tokens(tokens) {
            if let Ok(mf) = label.parse::<MoralFoundation>() {
                out[mf.index()] += s;
            }
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (label, entries) in &self.labels {
            for e in entries {
                let star = if e.prefix { "*" } else { "" };
                out.push_str(&format!("{label}\t{}{star}\t{}\t{}\n", e.ngram, e.weight, e.provenance));
            }
        }
        out
    }

    pub fn from_tsv(source: &str) -> Result<Lexicon> {
        let mut labels: BTreeMap<String, Vec<LexiconEntry>> = BTreeMap::new();
        let mut n_max = 1;
        let mut provs = Vec::new();
        for (i, raw) in source.lines().enumerate() {
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = raw.split('\t').collect();
            let [label, ngram, weight, prov] = cols.as_slice() else {
                return Err(Error::Lexicon(format!("line {}: expected 4 columns", i + 1)));
            };
            let weight: f64 = weight
                .parse()
                .map_err(|_| Error::Lexicon(format!("line {}: bad weight `{weight}`", i + 1)))?;
            if !(weight > 0.0 && weight <= 1.0) {
                return Err(Error::Lexicon(format!(
                    "line {}: weight {weight} outside (0, 1]",
                    i + 1
                )));
            }
            let provenance: Provenance = prov.parse()?;
            let (ngram, prefix) = match ngram.strip_suffix('*') {
                Some(s) => (s, true),
                None => (*ngram, false),
            };
            n_max = n_max.max(ngram.split(' ').count());
            provs.push(provenance);
            labels.entry(label.to_string()).or_default().push(LexiconEntry {
                ngram: ngram.to_string(),
                weight,
                provenance,
                prefix,
            });
        }
        provs.sort();
        provs.dedup();
        let provenance = match provs.as_slice() {
            [p] => *p,
            _ => Provenance::Merged,
        };
        Ok(Lexicon {
            labels,
            n_max,
            provenance,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutput {
    pub predictions: Vec<MoralFoundation>,
    /// Instances decided by a random draw (no match, or tied maximum).
    pub random_fallbacks: usize,
    pub random_fallback_fraction: f64,
}

/// Label each tweet with its highest-scoring foundation; ties and tweets with
/// no match are drawn uniformly with the given seed.
pub fn lexicon_baseline_predict(lexicon: &Lexicon, instances: &[TweetInstance], seed: u64) -> BaselineOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut predictions = Vec::with_capacity(instances.len());
    let mut fallbacks = 0;
    for inst in instances {
        let scores = lexicon.mf_scores(&inst.tokens());
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = if max > 0.0 {
            (0..5).filter(|&i| scores[i] == max).collect()
        } else {
            (0..5).collect()
        };
        let pick = if tied.len() == 1 {
            tied[0]
        } else {
            fallbacks += 1;
            tied[rng.random_range(0..tied.len())]
        };
        predictions.push(MoralFoundation::ALL[pick]);
    }
    let n = instances.len().max(1) as f64;
    BaselineOutput {
        predictions,
        random_fallbacks: fallbacks,
        random_fallback_fraction: fallbacks as f64 / n,
    }
}
