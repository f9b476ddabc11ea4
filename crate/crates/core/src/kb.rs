//! Relational schema, the immutable knowledge base, and corpus / prior ingestion.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{MoralFoundation, MoralRole, Polarity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ideology {
    Left,
    Right,
}

impl Ideology {
    pub const ALL: [Ideology; 2] = [Ideology::Left, Ideology::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Ideology::Left => "left",
            Ideology::Right => "right",
        }
    }

    pub fn other(self) -> Ideology {
        match self {
            Ideology::Left => Ideology::Right,
            Ideology::Right => Ideology::Left,
        }
    }
}

impl FromStr for Ideology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" => Ok(Ideology::Left),
            "right" => Ok(Ideology::Right),
            _ => Err(Error::UnknownLabel(s.to_string())),
        }
    }
}

impl fmt::Display for Ideology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Argument sorts of the relational schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sort {
    Tweet,
    Entity,
    MfLabel,
    RoleLabel,
    Ideology,
    Topic,
    Polarity,
}

impl Sort {
    /// Label sorts range over a fixed finite domain and may appear unbound in a rule head.
    pub fn is_label(self) -> bool {
        matches!(self, Sort::MfLabel | Sort::RoleLabel)
    }

    /// Object sorts: distinct variables of these sorts bind distinct constants.
    pub fn is_object(self) -> bool {
        matches!(self, Sort::Tweet | Sort::Entity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Predicate {
    Tweet,
    Ent,
    Ideo,
    Topic,
    Mf,
    Role,
    MfRole,
    SamePolarity,
    SameIdeo,
    SameTopic,
    PriorMf,
    PriorRole,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateSchema {
    pub predicate: Predicate,
    pub name: &'static str,
    pub sorts: &'static [Sort],
    pub closed: bool,
}

impl PredicateSchema {
    pub fn arity(&self) -> usize {
        self.sorts.len()
    }
}

const SCHEMA: &[PredicateSchema] = &[
    PredicateSchema {
        predicate: Predicate::Tweet,
        name: "Tweet",
        sorts: &[Sort::Tweet],
        closed: true,
    },
    PredicateSchema {
        predicate: Predicate::Ent,
        name: "Ent",
        sorts: &[Sort::Tweet, Sort::Entity],
        closed: true,
    },
    PredicateSchema {
        predicate: Predicate::Ideo,
        name: "Ideo",
        sorts: &[Sort::Tweet, Sort::Ideology],
        closed: true,
    },
    PredicateSchema {
        predicate: Predicate::Topic,
        name: "Topic",
        sorts: &[Sort::Tweet, Sort::Topic],
        closed: true,
    },
    PredicateSchema {
        predicate: Predicate::Mf,
        name: "MF",
        sorts: &[Sort::Tweet, Sort::MfLabel],
        closed: false,
    },
    PredicateSchema {
        predicate: Predicate::Role,
        name: "Role",
        sorts: &[Sort::Tweet, Sort::Entity, Sort::RoleLabel],
        closed: false,
    },
    PredicateSchema {
        predicate: Predicate::MfRole,
        name: "MF_Role",
        sorts: &[Sort::MfLabel, Sort::RoleLabel],
        closed: true,
    },
    PredicateSchema {
        predicate: Predicate::SamePolarity,
        name: "SamePolarity",
        sorts: &[Sort::RoleLabel, Sort::RoleLabel],
        closed: true,
    },
    PredicateSchema {
        predicate: Predicate::SameIdeo,
        name: "SameIdeo",
        sorts: &[Sort::Tweet, Sort::Tweet],
        closed: true,
    },
    PredicateSchema {
        predicate: Predicate::SameTopic,
        name: "SameTopic",
        sorts: &[Sort::Tweet, Sort::Tweet],
        closed: true,
    },
    PredicateSchema {
        predicate: Predicate::PriorMf,
        name: "PriorMF",
        sorts: &[Sort::Tweet, Sort::MfLabel],
        closed: true,
    },
    PredicateSchema {
        predicate: Predicate::PriorRole,
        name: "PriorRole",
        sorts: &[Sort::Tweet, Sort::Entity, Sort::RoleLabel],
        closed: true,
    },
];

impl Predicate {
    pub fn schema(self) -> &'static PredicateSchema {
        SCHEMA
            .iter()
            .find(|s| s.predicate == self)
            .expect("every predicate has a schema row")
    }

    pub fn name(self) -> &'static str {
        self.schema().name
    }

    pub fn is_open(self) -> bool {
        !self.schema().closed
    }

    pub fn by_name(name: &str) -> Option<Predicate> {
        SCHEMA.iter().find(|s| s.name == name).map(|s| s.predicate)
    }
}

/// The full relational schema shipped with the engine.
pub fn schema() -> &'static [PredicateSchema] {
    SCHEMA
}

/// A typed constant. Tweets, entities and topics are interned in the knowledge base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Const {
    Tweet(u32),
    Entity(u32),
    Mf(MoralFoundation),
    Role(MoralRole),
    Ideology(Ideology),
    Topic(u32),
    Polarity(Polarity),
}

impl Const {
    pub fn sort(self) -> Sort {
        match self {
            Const::Tweet(_) => Sort::Tweet,
            Const::Entity(_) => Sort::Entity,
            Const::Mf(_) => Sort::MfLabel,
            Const::Role(_) => Sort::RoleLabel,
            Const::Ideology(_) => Sort::Ideology,
            Const::Topic(_) => Sort::Topic,
            Const::Polarity(_) => Sort::Polarity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truth {
    Observed(f64),
    Open,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundAtom {
    pub predicate: Predicate,
    pub args: Vec<Const>,
    pub truth: Truth,
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Entity identity: case-folded surface with collapsed whitespace.
pub fn entity_key(surface: &str) -> String {
    surface.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMention {
    /// Case-folded identity key.
    pub id: String,
    /// Surface form of the first mention.
    pub surface: String,
    pub spans: Vec<(usize, usize)>,
    pub gold_role: Option<MoralRole>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TweetInstance {
    pub id: String,
    pub text: String,
    pub ideology: Ideology,
    pub topic: String,
    pub entities: Vec<EntityMention>,
    pub gold_mf: Option<MoralFoundation>,
}

impl TweetInstance {
    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.text)
    }

    /// Gold MF present and every entity carries a gold role.
    pub fn is_fully_labeled(&self) -> bool {
        self.gold_mf.is_some() && self.entities.iter().all(|e| e.gold_role.is_some())
    }
}

#[derive(Debug, Deserialize)]
struct RawEntity {
    surface: String,
    start: usize,
    end: usize,
    #[serde(default)]
    gold_role: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: String,
    text: String,
    ideology: String,
    topic: String,
    #[serde(default)]
    entities: Vec<RawEntity>,
    #[serde(default)]
    gold_mf: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// When set, topics outside this list are rejected.
    pub allowed_topics: Option<Vec<String>>,
}

/// Parse one corpus record; `line` is 1-based and only used for messages.
pub fn parse_record(raw: &str, line: usize, opts: &LoadOptions) -> Result<TweetInstance> {
    let err = |message: String| Error::Corpus { line, message };
    let rec: RawRecord = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
    if rec.id.is_empty() {
        return Err(err("empty tweet id".into()));
    }
    let ideology: Ideology = rec
        .ideology
        .parse()
        .map_err(|_| err(format!("unknown ideology `{}`", rec.ideology)))?;
    let topic = rec.topic.trim().to_lowercase();
    if topic.is_empty() {
        return Err(err("empty topic".into()));
    }
    if let Some(allowed) = &opts.allowed_topics {
        if !allowed.iter().any(|t| t.to_lowercase() == topic) {
            return Err(err(format!("unknown topic `{}`", rec.topic)));
        }
    }
    let gold_mf = rec
        .gold_mf
        .as_deref()
        .map(|s| s.parse::<MoralFoundation>())
        .transpose()
        .map_err(|e| err(e.to_string()))?;
    let n_chars = rec.text.chars().count();
    let mut entities: Vec<EntityMention> = Vec::new();
    for ent in rec.entities {
        if ent.start >= ent.end || ent.end > n_chars {
            return Err(err(format!(
                "entity `{}` span {}..{} outside text of length {}",
                ent.surface, ent.start, ent.end, n_chars
            )));
        }
        let key = entity_key(&ent.surface);
        if key.is_empty() {
            return Err(err("empty entity surface".into()));
        }
        let gold_role = ent
            .gold_role
            .as_deref()
            .map(|s| s.parse::<MoralRole>())
            .transpose()
            .map_err(|e| err(e.to_string()))?;
        match entities.iter_mut().find(|e| e.id == key) {
            Some(existing) => {
                existing.spans.push((ent.start, ent.end));
                match (existing.gold_role, gold_role) {
                    (None, g) => existing.gold_role = g,
                    (Some(a), Some(b)) if a != b => {
                        log::warn!("corpus line {line}: entity `{key}` has gold roles {a} and {b}; keeping {a}");
                    }
                    _ => {}
                }
            }
            None => entities.push(EntityMention {
                id: key,
                surface: ent.surface,
                spans: vec![(ent.start, ent.end)],
                gold_role,
            }),
        }
    }
    Ok(TweetInstance {
        id: rec.id,
        text: rec.text,
        ideology,
        topic,
        entities,
        gold_mf,
    })
}

pub fn parse_corpus(source: &str, opts: &LoadOptions) -> Result<Corpus> {
    let mut instances = Vec::new();
    for (i, line) in source.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        instances.push(parse_record(line, i + 1, opts)?);
    }
    Corpus::from_instances(instances)
}

/// Load a JSONL corpus and materialize its knowledge base.
pub fn load_corpus(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Corpus> {
    let path = path.as_ref();
    let source = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&source, opts)
}

/// Serialize instances in the JSONL corpus format, one record per entity span.
pub fn corpus_to_jsonl(instances: &[TweetInstance]) -> Result<String> {
    let mut out = String::new();
    for inst in instances {
        let mut entities = Vec::new();
        for e in &inst.entities {
            if e.spans.is_empty() {
                return Err(Error::Data(format!(
                    "tweet `{}`: entity `{}` has no span",
                    inst.id, e.id
                )));
            }
            for &(start, end) in &e.spans {
                let mut v = serde_json::json!({"surface": e.surface, "start": start, "end": end});
                if let Some(r) = e.gold_role {
                    v["gold_role"] = r.name().into();
                }
                entities.push(v);
            }
        }
        let mut rec = serde_json::json!({
            "id": inst.id,
            "text": inst.text,
            "ideology": inst.ideology.name(),
            "topic": inst.topic,
            "entities": entities,
        });
        if let Some(m) = inst.gold_mf {
            rec["gold_mf"] = m.name().into();
        }
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

/// Immutable relational store over the evidence predicates.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    tweets: Vec<String>,
    tweet_index: HashMap<String, u32>,
    entities: Vec<String>,
    entity_index: HashMap<String, u32>,
    topics: Vec<String>,
    topic_index: HashMap<String, u32>,
    ideology: Vec<Ideology>,
    topic: Vec<u32>,
    tweet_entities: Vec<Vec<u32>>,
    entity_tweets: Vec<Vec<u32>>,
    by_ideology: [Vec<u32>; 2],
    by_topic: Vec<Vec<u32>>,
    gold_mf: Vec<Option<MoralFoundation>>,
    gold_role: BTreeMap<(u32, u32), MoralRole>,
}

impl KnowledgeBase {
    fn intern(pool: &mut Vec<String>, index: &mut HashMap<String, u32>, key: &str) -> u32 {
        if let Some(&id) = index.get(key) {
            return id;
        }
        let id = pool.len() as u32;
        pool.push(key.to_string());
        index.insert(key.to_string(), id);
        id
    }

    pub fn from_instances(instances: &[TweetInstance]) -> Result<Self> {
        let mut kb = KnowledgeBase::default();
        for (n, inst) in instances.iter().enumerate() {
            if kb.tweet_index.contains_key(&inst.id) {
                return Err(Error::Corpus {
                    line: n + 1,
                    message: format!("duplicate tweet id `{}`", inst.id),
                });
            }
            let t = Self::intern(&mut kb.tweets, &mut kb.tweet_index, &inst.id);
            let k = Self::intern(&mut kb.topics, &mut kb.topic_index, &inst.topic);
            if k as usize == kb.by_topic.len() {
                kb.by_topic.push(Vec::new());
            }
            kb.ideology.push(inst.ideology);
            kb.topic.push(k);
            kb.by_ideology[inst.ideology.index()].push(t);
            kb.by_topic[k as usize].push(t);
            kb.gold_mf.push(inst.gold_mf);
            let mut ents = Vec::with_capacity(inst.entities.len());
            for m in &inst.entities {
                let e = Self::intern(&mut kb.entities, &mut kb.entity_index, &m.id);
                if e as usize == kb.entity_tweets.len() {
                    kb.entity_tweets.push(Vec::new());
                }
                if !ents.contains(&e) {
                    ents.push(e);
                    kb.entity_tweets[e as usize].push(t);
                }
                if let Some(r) = m.gold_role {
                    kb.gold_role.entry((t, e)).or_insert(r);
                }
            }
            kb.tweet_entities.push(ents);
        }
        Ok(kb)
    }

    pub fn num_tweets(&self) -> usize {
        self.tweets.len()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_topics(&self) -> usize {
        self.topics.len()
    }

    pub fn tweet_ids(&self) -> impl Iterator<Item = u32> + '_ {
        0..self.tweets.len() as u32
    }

    pub fn tweet_name(&self, t: u32) -> &str {
        &self.tweets[t as usize]
    }

    pub fn entity_name(&self, e: u32) -> &str {
        &self.entities[e as usize]
    }

    pub fn topic_name(&self, k: u32) -> &str {
        &self.topics[k as usize]
    }

    pub fn tweet_id(&self, name: &str) -> Option<u32> {
        self.tweet_index.get(name).copied()
    }

    pub fn entity_id(&self, name: &str) -> Option<u32> {
        self.entity_index.get(name).copied()
    }

    pub fn topic_id(&self, name: &str) -> Option<u32> {
        self.topic_index.get(name).copied()
    }

    pub fn ideology_of(&self, t: u32) -> Ideology {
        self.ideology[t as usize]
    }

    pub fn topic_of(&self, t: u32) -> u32 {
        self.topic[t as usize]
    }

    /// Entities of a tweet in first-mention order.
    pub fn entities_of(&self, t: u32) -> &[u32] {
        &self.tweet_entities[t as usize]
    }

    pub fn tweets_mentioning(&self, e: u32) -> &[u32] {
        &self.entity_tweets[e as usize]
    }

    pub fn tweets_with_ideology(&self, i: Ideology) -> &[u32] {
        &self.by_ideology[i.index()]
    }

    pub fn tweets_with_topic(&self, k: u32) -> &[u32] {
        &self.by_topic[k as usize]
    }

    pub fn has_ent(&self, t: u32, e: u32) -> bool {
        self.tweet_entities.get(t as usize).is_some_and(|es| es.contains(&e))
    }

    /// All (tweet, entity) pairs in tweet order, then mention order.
    pub fn tweet_entity_pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.tweet_entities
            .iter()
            .enumerate()
            .flat_map(|(t, es)| es.iter().map(move |&e| (t as u32, e)))
    }

    pub fn gold_mf(&self, t: u32) -> Option<MoralFoundation> {
        self.gold_mf[t as usize]
    }

    pub fn gold_role(&self, t: u32, e: u32) -> Option<MoralRole> {
        self.gold_role.get(&(t, e)).copied()
    }

    /// Materialized observed atoms of a base evidence predicate, in deterministic order.
    pub fn atoms(&self, predicate: Predicate) -> Vec<GroundAtom> {
        let obs = |args: Vec<Const>| GroundAtom {
            predicate,
            args,
            truth: Truth::Observed(1.0),
        };
        match predicate {
            Predicate::Tweet => self.tweet_ids().map(|t| obs(vec![Const::Tweet(t)])).collect(),
            Predicate::Ent => self
                .tweet_entity_pairs()
                .map(|(t, e)| obs(vec![Const::Tweet(t), Const::Entity(e)]))
                .collect(),
            Predicate::Ideo => self
                .tweet_ids()
                .map(|t| obs(vec![Const::Tweet(t), Const::Ideology(self.ideology_of(t))]))
                .collect(),
            Predicate::Topic => self
                .tweet_ids()
                .map(|t| obs(vec![Const::Tweet(t), Const::Topic(self.topic_of(t))]))
                .collect(),
            _ => Vec::new(),
        }
    }
}

/// Instances plus the knowledge base materialized from them.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub instances: Vec<TweetInstance>,
    pub kb: KnowledgeBase,
}

impl Corpus {
    pub fn from_instances(instances: Vec<TweetInstance>) -> Result<Self> {
        let kb = KnowledgeBase::from_instances(&instances)?;
        Ok(Corpus { instances, kb })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Instance backing knowledge-base tweet `t` (tweets are interned in instance order).
    pub fn instance(&self, t: u32) -> &TweetInstance {
        &self.instances[t as usize]
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Corpus> {
        Corpus::from_instances(indices.iter().map(|&i| self.instances[i].clone()).collect())
    }
}

/// External prior scores, keyed by tweet id and entity key strings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorScores {
    mf: BTreeMap<String, BTreeMap<MoralFoundation, f64>>,
    role: BTreeMap<(String, String), BTreeMap<MoralRole, f64>>,
    /// Number of scores clamped into [0, 1] at load time.
    pub clamped: usize,
}

impl PriorScores {
    pub fn is_empty(&self) -> bool {
        self.mf.is_empty() && self.role.is_empty()
    }

    pub fn len(&self) -> usize {
        self.mf.values().map(|m| m.len()).sum::<usize>() + self.role.values().map(|m| m.len()).sum::<usize>()
    }

    pub fn insert_mf(&mut self, tweet: &str, mf: MoralFoundation, score: f64) {
        self.mf.entry(tweet.to_string()).or_default().insert(mf, score);
    }

    pub fn insert_role(&mut self, tweet: &str, entity: &str, role: MoralRole, score: f64) {
        self.role
            .entry((tweet.to_string(), entity.to_string()))
            .or_default()
            .insert(role, score);
    }

    pub fn mf(&self, tweet: &str) -> Option<&BTreeMap<MoralFoundation, f64>> {
        self.mf.get(tweet)
    }

    pub fn role(&self, tweet: &str, entity: &str) -> Option<&BTreeMap<MoralRole, f64>> {
        self.role.get(&(tweet.to_string(), entity.to_string()))
    }

    pub fn mf_score(&self, tweet: &str, mf: MoralFoundation) -> Option<f64> {
        self.mf.get(tweet).and_then(|m| m.get(&mf)).copied()
    }

    pub fn role_score(&self, tweet: &str, entity: &str, role: MoralRole) -> Option<f64> {
        self.role(tweet, entity).and_then(|m| m.get(&role)).copied()
    }

    /// Write the TSV form read by [`parse_priors`].
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (t, row) in &self.mf {
            for (m, s) in row {
                out.push_str(&format!("{t}\t\t{m}\t{s}\n"));
            }
        }
        for ((t, e), row) in &self.role {
            for (r, s) in row {
                out.push_str(&format!("{t}\t{e}\t{r}\t{s}\n"));
            }
        }
        out
    }
}

/// Parse a priors TSV: `tweet_id \t [entity_id] \t label \t score`.
///
/// Three columns (or an empty entity column) give an MF prior, four a role prior.
pub fn parse_priors(source: &str, kb: &KnowledgeBase) -> Result<PriorScores> {
    let mut priors = PriorScores::default();
    for (i, raw) in source.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| Error::Priors { line, message };
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').map(str::trim).collect();
        if line == 1 && cols.first() == Some(&"tweet_id") {
            continue;
        }
        let (tweet, entity, label, score) = match cols.as_slice() {
            [t, l, s] => (*t, "", *l, *s),
            [t, e, l, s] => (*t, *e, *l, *s),
            _ => {
                return Err(err(format!(
                    "expected 3 or 4 tab-separated columns, got {}",
                    cols.len()
                )))
            }
        };
        let mut score: f64 = score.parse().map_err(|_| err(format!("bad score `{score}`")))?;
        if !score.is_finite() {
            return Err(err(format!("non-finite score `{score}`")));
        }
        if !(0.0..=1.0).contains(&score) {
            log::warn!("priors line {line}: score {score} clamped to [0, 1]");
            score = score.clamp(0.0, 1.0);
            priors.clamped += 1;
        }
        let t = kb
            .tweet_id(tweet)
            .ok_or_else(|| err(format!("unknown tweet id `{tweet}`")))?;
        if entity.is_empty() {
            let mf: MoralFoundation = label.parse().map_err(|e: Error| err(e.to_string()))?;
            priors.insert_mf(tweet, mf, score);
        } else {
            let key = entity_key(entity);
            let e = kb
                .entity_id(&key)
                .ok_or_else(|| err(format!("unknown entity `{entity}`")))?;
            if !kb.has_ent(t, e) {
                return Err(err(format!("entity `{entity}` is not mentioned in tweet `{tweet}`")));
            }
            let role: MoralRole = label.parse().map_err(|e: Error| err(e.to_string()))?;
            priors.insert_role(tweet, &key, role, score);
        }
    }
    Ok(priors)
}

pub fn load_priors(path: impl AsRef<Path>, kb: &KnowledgeBase) -> Result<PriorScores> {
    let path = path.as_ref();
    let source = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_priors(&source, kb)
}
