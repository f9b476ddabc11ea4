use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::Ideology;
use crate::learning::PredictionSet;
use crate::taxonomy::{MoralFoundation, MoralRole, RoleClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub targets: usize,
    /// Positive and negative actors kept per graph, each.
    pub actors: usize,
    /// Entities mentioned fewer times within the (MF, ideology) slice are dropped.
    pub min_count: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            targets: 2,
            actors: 3,
            min_count: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphNode {
    pub entity: String,
    pub role: MoralRole,
    pub class: RoleClass,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: String,
    pub to: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationGraph {
    pub mf: MoralFoundation,
    pub ideology: Ideology,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    /// Fewer candidates than requested for some node class.
    pub underfull: bool,
}

fn top_k(counts: &BTreeMap<String, usize>, k: usize, taken: &BTreeSet<String>) -> Vec<String> {
    let mut v: Vec<(&String, usize)> = counts
        .iter()
        .filter(|(e, _)| !taken.contains(*e))
        .map(|(e, c)| (e, *c))
        .collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    v.into_iter().take(k).map(|(e, _)| e.clone()).collect()
}

/// Targets most often mentioned in the slice, the actors most often
/// co-mentioned with them, and actor → target edges weighted by the number of
/// tweets where both appear in those classes. Run the alias map first.
pub fn build_relation_graph(
    preds: &PredictionSet,
    mf: MoralFoundation,
    ideology: Ideology,
    cfg: &GraphConfig,
) -> RelationGraph {
    // rows of the slice: (tweet index, entity, role)
    let mut rows: Vec<(usize, &str, MoralRole)> = Vec::new();
    for (i, t) in preds.tweets.iter().enumerate() {
        if t.ideology != ideology {
            continue;
        }
        for e in &t.entities {
            if e.role.foundation() == mf {
                rows.push((i, &e.entity, e.role));
            }
        }
    }
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    let mut role_counts: BTreeMap<&str, [usize; 16]> = BTreeMap::new();
    for &(_, e, r) in &rows {
        *freq.entry(e).or_default() += 1;
        role_counts.entry(e).or_insert([0; 16])[r.index()] += 1;
    }
    let frequent = |e: &str| freq.get(e).is_some_and(|&c| c >= cfg.min_count);
    let rows: Vec<(usize, &str, MoralRole)> = rows.into_iter().filter(|r| frequent(r.1)).collect();

    let mut target_counts: BTreeMap<String, usize> = BTreeMap::new();
    for &(_, e, r) in &rows {
        if r.class() == RoleClass::Target {
            *target_counts.entry(e.to_string()).or_default() += 1;
        }
    }
    let mut taken = BTreeSet::new();
    let targets = top_k(&target_counts, cfg.targets, &taken);
    taken.extend(targets.iter().cloned());

    let mut by_tweet: BTreeMap<usize, Vec<(&str, MoralRole)>> = BTreeMap::new();
    for &(i, e, r) in &rows {
        by_tweet.entry(i).or_default().push((e, r));
    }
    // (actor, class) → target → tweets
    let mut co: BTreeMap<(RoleClass, String), BTreeMap<String, usize>> = BTreeMap::new();
    for ents in by_tweet.values() {
        let present: BTreeSet<&str> = ents
            .iter()
            .filter(|(e, r)| r.class() == RoleClass::Target && targets.iter().any(|t| t == e))
            .map(|(e, _)| *e)
            .collect();
        let actors: BTreeSet<(RoleClass, &str)> = ents
            .iter()
            .filter(|(_, r)| r.class() != RoleClass::Target)
            .map(|(e, r)| (r.class(), *e))
            .collect();
        for (class, a) in actors {
            for &t in &present {
                if t != a {
                    *co.entry((class, a.to_string()))
                        .or_default()
                        .entry(t.to_string())
                        .or_default() += 1;
                }
            }
        }
    }
    let mut actors: Vec<(String, RoleClass)> = Vec::new();
    let mut underfull = targets.len() < cfg.targets;
    for class in [RoleClass::PositiveActor, RoleClass::NegativeActor] {
        let totals: BTreeMap<String, usize> = co
            .iter()
            .filter(|((c, _), _)| *c == class)
            .map(|((_, a), m)| (a.clone(), m.values().sum()))
            .collect();
        let picked = top_k(&totals, cfg.actors, &taken);
        underfull |= picked.len() < cfg.actors;
        taken.extend(picked.iter().cloned());
        actors.extend(picked.into_iter().map(|a| (a, class)));
    }

    let modal = |e: &str| {
        let c = &role_counts[e];
        let mut best = 0;
        for i in 1..16 {
            if c[i] > c[best] {
                best = i;
            }
        }
        MoralRole::ALL[best]
    };
    let mut nodes: Vec<GraphNode> = targets
        .iter()
        .map(|t| GraphNode {
            entity: t.clone(),
            role: modal(t),
            class: RoleClass::Target,
        })
        .collect();
    let mut edges = Vec::new();
    for (a, class) in actors {
        for (t, &count) in &co[&(class, a.clone())] {
            edges.push(GraphEdge {
                from: a.clone(),
                to: t.clone(),
                count,
            });
        }
        nodes.push(GraphNode {
            role: modal(&a),
            entity: a,
            class,
        });
    }
    RelationGraph {
        mf,
        ideology,
        nodes,
        edges,
        underfull,
    }
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn class_name(c: RoleClass) -> &'static str {
    match c {
        RoleClass::Target => "target",
        RoleClass::PositiveActor => "positive-actor",
        RoleClass::NegativeActor => "negative-actor",
    }
}

impl RelationGraph {
    pub fn to_dot(&self) -> String {
        let mut s = format!(
            "digraph {} {{\n",
            quote(&format!("{}_{}", self.mf.name(), self.ideology.name()))
        );
        for n in &self.nodes {
            s.push_str(&format!(
                "  {} [role={}, class={}];\n",
                quote(&n.entity),
                quote(n.role.name()),
                quote(class_name(n.class))
            ));
        }
        for e in &self.edges {
            s.push_str(&format!(
                "  {} -> {} [weight={}];\n",
                quote(&e.from),
                quote(&e.to),
                e.count
            ));
        }
        s.push_str("}\n");
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Tokens of the DOT subset written by [`RelationGraph::to_dot`].
fn dot_tokens(src: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut chars = src.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '/' => {
                chars.next();
                if chars.next() != Some('/') {
                    return Err(Error::Data("dot: expected `//` comment".into()));
                }
                for c in chars.by_ref() {
                    if c == '\n' {
                        break;
                    }
                }
            }
            '"' => {
                chars.next();
                let mut s = String::from("\"");
                loop {
                    match chars.next() {
                        Some('\\') => s.push(chars.next().ok_or_else(|| Error::Data("dot: dangling escape".into()))?),
                        Some('"') => break,
                        Some(c) => s.push(c),
                        None => return Err(Error::Data("dot: unterminated string".into())),
                    }
                }
                out.push(s);
            }
            '-' => {
                chars.next();
                if chars.next() != Some('>') {
                    return Err(Error::Data("dot: expected `->`".into()));
                }
                out.push("->".into());
            }
            '{' | '}' | '[' | ']' | '=' | ',' | ';' => {
                chars.next();
                out.push(c.to_string());
            }
            _ => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_alphanumeric() || c == '_' || c == '.' {
                        s.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                if s.is_empty() {
                    return Err(Error::Data(format!("dot: unexpected character `{c}`")));
                }
                out.push(s);
            }
        }
    }
    Ok(out)
}

fn unquote(t: &str) -> String {
    t.strip_prefix('"').unwrap_or(t).to_string()
}

/// Nodes and edges of a graph written by [`RelationGraph::to_dot`].
pub fn parse_dot(src: &str) -> Result<(Vec<GraphNode>, Vec<GraphEdge>)> {
    let toks = dot_tokens(src)?;
    let open = toks
        .iter()
        .position(|t| t == "{")
        .ok_or_else(|| Error::Data("dot: missing `{`".into()))?;
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut i = open + 1;
    let attrs = |i: &mut usize| -> Result<BTreeMap<String, String>> {
        let mut m = BTreeMap::new();
        if toks.get(*i).map(String::as_str) != Some("[") {
            return Ok(m);
        }
        *i += 1;
        while toks.get(*i).map(String::as_str) != Some("]") {
            let key = toks
                .get(*i)
                .ok_or_else(|| Error::Data("dot: unterminated attributes".into()))?;
            if toks.get(*i + 1).map(String::as_str) != Some("=") {
                return Err(Error::Data(format!("dot: expected `=` after `{key}`")));
            }
            let val = toks
                .get(*i + 2)
                .ok_or_else(|| Error::Data("dot: missing attribute value".into()))?;
            m.insert(unquote(key), unquote(val));
            *i += 3;
            if toks.get(*i).map(String::as_str) == Some(",") {
                *i += 1;
            }
        }
        *i += 1;
        Ok(m)
    };
    while i < toks.len() && toks[i] != "}" {
        let a = unquote(&toks[i]);
        i += 1;
        if toks.get(i).map(String::as_str) == Some("->") {
            let b = unquote(
                toks.get(i + 1)
                    .ok_or_else(|| Error::Data("dot: edge without head".into()))?,
            );
            i += 2;
            let m = attrs(&mut i)?;
            let count = m
                .get("weight")
                .ok_or_else(|| Error::Data("dot: edge without weight".into()))?
                .parse()
                .map_err(|_| Error::Data("dot: bad weight".into()))?;
            edges.push(GraphEdge { from: a, to: b, count });
        } else {
            let m = attrs(&mut i)?;
            let role: MoralRole = m
                .get("role")
                .ok_or_else(|| Error::Data("dot: node without role".into()))?
                .parse()?;
            let class = match m.get("class").map(String::as_str) {
                Some("target") => RoleClass::Target,
                Some("positive-actor") => RoleClass::PositiveActor,
                Some("negative-actor") => RoleClass::NegativeActor,
                other => return Err(Error::Data(format!("dot: bad node class {other:?}"))),
            };
            nodes.push(GraphNode { entity: a, role, class });
        }
        if toks.get(i).map(String::as_str) == Some(";") {
            i += 1;
        }
    }
    Ok((nodes, edges))
}
