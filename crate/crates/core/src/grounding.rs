//! Grounding: instantiate rule templates against the knowledge base.
//!
//! Every grounding of a horn clause `b_1 ∧ … ∧ b_n ⇒ h` has the distance to
//! satisfaction `l = Σ b_i − (n − 1) − h` (a negated head contributes
//! `−(1 − h)`), with observed atoms substituted by their values. Hard
//! templates become constraints `l ≤ 0`; weighted templates become hinge
//! potentials `w · max(l, 0)^ρ`. Scored templates whose body is fully observed
//! contribute their score linearly whenever the head atom is true.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dsl::{CLiteral, CTerm, CheckedProgram, PolarityCoupling, RuleKind, Template};
use crate::error::{Error, Result};
use crate::inference::{Hinge, LinearConstraint, Problem, Sense, FEAS_TOL};
use crate::kb::{Const, Corpus, Ideology, KnowledgeBase, Predicate, PriorScores, Sort};
use crate::params::{uses_linear_scorer, FeatureCache, ParameterStore, WeightSource};
use crate::taxonomy::{MoralFoundation, MoralRole, Polarity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundConfig {
    /// Upper bound on ground rules plus constraints.
    pub max_ground_rules: usize,
    /// Hinge exponent per template index; 1 when absent.
    pub hinge_power: BTreeMap<usize, u8>,
    /// Replace hard polarity-coupling equalities by hinge pairs of this weight.
    pub soft_coupling: Option<f64>,
    /// One MF per tweet and one role per (tweet, entity).
    pub exclusivity: bool,
    /// Pin each tweet's MF to its gold label (skyline mode).
    pub observe_gold_mf: bool,
}

impl Default for GroundConfig {
    fn default() -> Self {
        GroundConfig {
            max_ground_rules: 10_000_000,
            hinge_power: BTreeMap::new(),
            soft_coupling: None,
            exclusivity: true,
            observe_gold_mf: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Mf(MoralFoundation),
    Role(MoralRole),
}

/// An open (unobserved) atom: `MF(tweet, m)` or `Role(tweet, entity, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OpenAtom {
    pub tweet: u32,
    pub entity: Option<u32>,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    /// Adds `weight · body` to the objective when the atom is true.
    Reward { atom: usize, body: f64 },
    /// Subtracts `weight · max(Σ coeffs·y + constant, 0)^power`.
    Hinge {
        coeffs: Vec<(usize, f64)>,
        constant: f64,
        power: u8,
    },
}

impl Potential {
    /// Contribution per unit weight to the objective (rewards positive, hinges negative).
    pub fn score(&self, y: &[f64]) -> f64 {
        match self {
            Potential::Reward { atom, body } => body * y[*atom],
            Potential::Hinge {
                coeffs,
                constant,
                power,
            } => {
                let l = (constant + coeffs.iter().map(|&(i, a)| a * y[i]).sum::<f64>()).max(0.0);
                -if *power == 2 { l * l } else { l }
            }
        }
    }

    fn atoms(&self) -> Vec<usize> {
        match self {
            Potential::Reward { atom, .. } => vec![*atom],
            Potential::Hinge { coeffs, .. } => coeffs.iter().map(|c| c.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundRule {
    /// Index of the originating template; `usize::MAX` for coupling hinges.
    pub template: usize,
    pub binding: Vec<Const>,
    pub source: WeightSource,
    pub weight: f64,
    pub potential: Potential,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Component {
    pub atoms: Vec<usize>,
    pub rules: Vec<usize>,
    pub constraints: Vec<usize>,
    pub groups: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct GroundProgram {
    pub atoms: Vec<OpenAtom>,
    pub names: Vec<String>,
    index: HashMap<OpenAtom, usize>,
    pub rules: Vec<GroundRule>,
    pub constraints: Vec<LinearConstraint>,
    /// Exactly-one groups: MF groups in tweet order, then role groups.
    pub groups: Vec<Vec<usize>>,
    pub components: Vec<Component>,
    /// Groundings (rules and constraints) produced per template index.
    pub template_counts: BTreeMap<usize, usize>,
}

fn merge_coeffs(coeffs: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    let mut m: BTreeMap<usize, f64> = BTreeMap::new();
    for (i, a) in coeffs {
        *m.entry(i).or_default() += a;
    }
    m.into_iter().filter(|e| e.1 != 0.0).collect()
}

impl GroundProgram {
    fn with_atoms(kb: &KnowledgeBase) -> Self {
        let mut gp = GroundProgram::default();
        for t in kb.tweet_ids() {
            for m in MoralFoundation::ALL {
                gp.push_atom(
                    OpenAtom {
                        tweet: t,
                        entity: None,
                        label: Label::Mf(m),
                    },
                    format!("MF({},{})", kb.tweet_name(t), m.name()),
                );
            }
        }
        for (t, e) in kb.tweet_entity_pairs() {
            for r in MoralRole::ALL {
                gp.push_atom(
                    OpenAtom {
                        tweet: t,
                        entity: Some(e),
                        label: Label::Role(r),
                    },
                    format!("Role({},{},{})", kb.tweet_name(t), kb.entity_name(e), r.name()),
                );
            }
        }
        gp
    }

    fn push_atom(&mut self, a: OpenAtom, name: String) {
        self.index.insert(a, self.atoms.len());
        self.atoms.push(a);
        self.names.push(name);
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn atom_id(&self, a: &OpenAtom) -> Option<usize> {
        self.index.get(a).copied()
    }

    pub fn mf_atom(&self, t: u32, m: MoralFoundation) -> Option<usize> {
        self.atom_id(&OpenAtom {
            tweet: t,
            entity: None,
            label: Label::Mf(m),
        })
    }

    pub fn role_atom(&self, t: u32, e: u32, r: MoralRole) -> Option<usize> {
        self.atom_id(&OpenAtom {
            tweet: t,
            entity: Some(e),
            label: Label::Role(r),
        })
    }

    /// Exactly-one constraints: one MF per tweet, one role per (tweet, entity).
    pub fn add_label_exclusivity(&mut self, kb: &KnowledgeBase) {
        for t in kb.tweet_ids() {
            let vars: Vec<usize> = MoralFoundation::ALL
                .iter()
                .filter_map(|&m| self.mf_atom(t, m))
                .collect();
            self.add_group(vars, format!("one MF for {}", kb.tweet_name(t)));
        }
        for (t, e) in kb.tweet_entity_pairs() {
            let vars: Vec<usize> = MoralRole::ALL.iter().filter_map(|&r| self.role_atom(t, e, r)).collect();
            self.add_group(vars, format!("one role for {}/{}", kb.tweet_name(t), kb.entity_name(e)));
        }
    }

    fn add_group(&mut self, vars: Vec<usize>, origin: String) {
        if vars.is_empty() {
            return;
        }
        self.constraints.push(LinearConstraint {
            coeffs: vars.iter().map(|&v| (v, 1.0)).collect(),
            constant: -1.0,
            sense: Sense::Eq,
            origin,
        });
        self.groups.push(vars);
    }

    /// Recompute every rule weight from `params`.
    pub fn reweight(&mut self, params: &ParameterStore) -> Result<()> {
        for r in &mut self.rules {
            r.weight = params.value(&r.source)?;
        }
        Ok(())
    }

    /// Gold labels as an assignment, when every atom's tweet and entity is labeled.
    pub fn gold_assignment(&self, kb: &KnowledgeBase) -> Option<Vec<f64>> {
        self.atoms
            .iter()
            .map(|a| match (a.label, a.entity) {
                (Label::Mf(m), _) => kb.gold_mf(a.tweet).map(|g| f64::from(u8::from(g == m))),
                (Label::Role(r), Some(e)) => kb.gold_role(a.tweet, e).map(|g| f64::from(u8::from(g == r))),
                (Label::Role(_), None) => None,
            })
            .collect()
    }

    fn partition(&mut self) {
        let n = self.atoms.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let union = |vars: &[usize], parent: &mut Vec<usize>| {
            if let Some((&first, rest)) = vars.split_first() {
                for &v in rest {
                    let (a, b) = (find(parent, first), find(parent, v));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        };
        for r in &self.rules {
            union(&r.potential.atoms(), &mut parent);
        }
        for c in &self.constraints {
            let vars: Vec<usize> = c.coeffs.iter().map(|x| x.0).collect();
            union(&vars, &mut parent);
        }
        for g in &self.groups {
            union(g, &mut parent);
        }
        let mut comp_of_root: HashMap<usize, usize> = HashMap::new();
        let mut comps: Vec<Component> = Vec::new();
        let mut comp_of_atom = vec![0usize; n];
        for (a, slot) in comp_of_atom.iter_mut().enumerate() {
            let root = find(&mut parent, a);
            let c = *comp_of_root.entry(root).or_insert_with(|| {
                comps.push(Component::default());
                comps.len() - 1
            });
            comps[c].atoms.push(a);
            *slot = c;
        }
        for (i, r) in self.rules.iter().enumerate() {
            if let Some(&a) = r.potential.atoms().first() {
                comps[comp_of_atom[a]].rules.push(i);
            }
        }
        for (j, c) in self.constraints.iter().enumerate() {
            if let Some(&(a, _)) = c.coeffs.first() {
                comps[comp_of_atom[a]].constraints.push(j);
            }
        }
        for (g, vars) in self.groups.iter().enumerate() {
            comps[comp_of_atom[vars[0]]].groups.push(g);
        }
        self.components = comps;
    }

    /// Problem restricted to the listed atoms, rules, constraints and groups.
    fn build_problem(&self, atoms: &[usize], rules: &[usize], constraints: &[usize], groups: &[usize]) -> Problem {
        let local: HashMap<usize, usize> = atoms.iter().enumerate().map(|(k, &a)| (a, k)).collect();
        let mut p = Problem::new(atoms.len());
        p.names = atoms.iter().map(|&a| self.names[a].clone()).collect();
        for &i in rules {
            let r = &self.rules[i];
            match &r.potential {
                Potential::Reward { atom, body } => p.linear[local[atom]] += r.weight * body,
                Potential::Hinge {
                    coeffs,
                    constant,
                    power,
                } => p.hinges.push(Hinge {
                    weight: r.weight,
                    coeffs: coeffs.iter().map(|&(a, c)| (local[&a], c)).collect(),
                    constant: *constant,
                    power: *power,
                }),
            }
        }
        for &j in constraints {
            let c = &self.constraints[j];
            p.constraints.push(LinearConstraint {
                coeffs: c.coeffs.iter().map(|&(a, v)| (local[&a], v)).collect(),
                constant: c.constant,
                sense: c.sense,
                origin: c.origin.clone(),
            });
        }
        p.groups = groups
            .iter()
            .map(|&g| self.groups[g].iter().map(|a| local[a]).collect())
            .collect();
        p
    }

    pub fn problem(&self) -> Problem {
        let atoms: Vec<usize> = (0..self.atoms.len()).collect();
        let rules: Vec<usize> = (0..self.rules.len()).collect();
        let cons: Vec<usize> = (0..self.constraints.len()).collect();
        let groups: Vec<usize> = (0..self.groups.len()).collect();
        self.build_problem(&atoms, &rules, &cons, &groups)
    }

    pub fn component_problem(&self, c: usize) -> Problem {
        let comp = &self.components[c];
        self.build_problem(&comp.atoms, &comp.rules, &comp.constraints, &comp.groups)
    }

    /// Textual LP (CPLEX-style) for cross-checking with external solvers.
    pub fn to_lp(&self) -> String {
        let p = self.problem();
        let mut s = String::new();
        let _ = writeln!(
            s,
            "\\ {} atoms, {} ground rules, {} constraints",
            self.atoms.len(),
            self.rules.len(),
            self.constraints.len()
        );
        for (i, n) in self.names.iter().enumerate() {
            let _ = writeln!(s, "\\ x{i} = {n}");
        }
        let term = |c: f64, v: &str| format!(" {} {} {v}", if c < 0.0 { "-" } else { "+" }, c.abs());
        s.push_str("Maximize\n obj:");
        for (i, &c) in p.linear.iter().enumerate() {
            if c != 0.0 {
                s.push_str(&term(c, &format!("x{i}")));
            }
        }
        for (k, h) in p.hinges.iter().enumerate() {
            if h.weight != 0.0 {
                s.push_str(&term(-h.weight, &format!("h{k}")));
            }
        }
        s.push_str("\nSubject To\n");
        for (k, h) in p.hinges.iter().enumerate() {
            if h.power == 2 {
                let _ = writeln!(s, "\\ h{k} is squared in the objective");
            }
            let _ = write!(s, " d{k}: + 1 h{k}");
            for &(i, a) in &h.coeffs {
                s.push_str(&term(-a, &format!("x{i}")));
            }
            let _ = writeln!(s, " >= {}", h.constant);
        }
        for (j, c) in p.constraints.iter().enumerate() {
            let _ = write!(s, " c{j}:");
            for &(i, a) in &c.coeffs {
                s.push_str(&term(a, &format!("x{i}")));
            }
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Eq => "=",
            };
            let _ = writeln!(s, " {op} {}", -c.constant);
        }
        s.push_str("Bounds\n");
        for k in 0..p.hinges.len() {
            let _ = writeln!(s, " h{k} >= 0");
        }
        s.push_str("Binaries\n");
        for i in 0..p.num_vars {
            let _ = writeln!(s, " x{i}");
        }
        if p.constant != 0.0 {
            let _ = writeln!(s, "\\ objective constant {}", p.constant);
        }
        s.push_str("End\n");
        s
    }
}

/// Per-polarity equalities `Σ_{r∈P} y(t1,e,r) − Σ_{r∈P} y(t2,e,r) = 0` for every
/// pair of tweets sharing entity `e` (and ideology / topic when required).
pub fn ground_c3(
    gp: &GroundProgram,
    kb: &KnowledgeBase,
    coupling: &PolarityCoupling,
    origin: &str,
) -> Vec<LinearConstraint> {
    let mut out = Vec::new();
    for e in 0..kb.num_entities() as u32 {
        let mut buckets: BTreeMap<(Option<Ideology>, Option<u32>), Vec<u32>> = BTreeMap::new();
        for &t in kb.tweets_mentioning(e) {
            let key = (
                coupling.same_ideology.then(|| kb.ideology_of(t)),
                coupling.same_topic.then(|| kb.topic_of(t)),
            );
            buckets.entry(key).or_default().push(t);
        }
        for tweets in buckets.values() {
            for (i, &t1) in tweets.iter().enumerate() {
                for &t2 in &tweets[i + 1..] {
                    for pol in Polarity::ALL {
                        let mut coeffs = Vec::new();
                        for r in pol.roles() {
                            if let Some(a) = gp.role_atom(t1, e, r) {
                                coeffs.push((a, 1.0));
                            }
                            if let Some(b) = gp.role_atom(t2, e, r) {
                                coeffs.push((b, -1.0));
                            }
                        }
                        out.push(LinearConstraint {
                            coeffs,
                            constant: 0.0,
                            sense: Sense::Eq,
                            origin: format!(
                                "{origin}: {} {}/{} {}",
                                kb.entity_name(e),
                                kb.tweet_name(t1),
                                kb.tweet_name(t2),
                                pol.name()
                            ),
                        });
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
enum Arg {
    Var(usize),
    Val(Const),
    /// A symbol absent from the knowledge base.
    Missing,
}

struct Grounder<'a> {
    corpus: &'a Corpus,
    kb: &'a KnowledgeBase,
    priors: &'a PriorScores,
    params: Option<&'a ParameterStore>,
    cfg: &'a GroundConfig,
    gp: GroundProgram,
    cache: FeatureCache,
    count: usize,
}

fn resolve(kb: &KnowledgeBase, lit: &CLiteral) -> Vec<Arg> {
    lit.args
        .iter()
        .map(|a| match a {
            CTerm::Var(i) => Arg::Var(*i),
            CTerm::Fixed(c) => Arg::Val(*c),
            CTerm::Symbol(sort, s) => {
                let c = match sort {
                    Sort::Tweet => kb.tweet_id(s).map(Const::Tweet),
                    Sort::Entity => kb.entity_id(s).map(Const::Entity),
                    Sort::Topic => kb
                        .topic_id(s)
                        .or_else(|| kb.topic_id(&s.to_lowercase()))
                        .map(Const::Topic),
                    _ => None,
                };
                c.map_or(Arg::Missing, Arg::Val)
            }
        })
        .collect()
}

fn current(args: &[Arg], binding: &[Option<Const>]) -> Vec<Option<Const>> {
    args.iter()
        .map(|a| match a {
            Arg::Var(i) => binding[*i],
            Arg::Val(c) => Some(*c),
            Arg::Missing => None,
        })
        .collect()
}

impl Grounder<'_> {
    /// Observed tuples of a closed predicate consistent with the bound arguments.
    fn closed_tuples(&self, p: Predicate, b: &[Option<Const>]) -> Vec<(Vec<Const>, f64)> {
        let kb = self.kb;
        let all_tweets = || kb.tweet_ids().collect::<Vec<u32>>();
        let tweet = |c: Option<Const>| match c {
            Some(Const::Tweet(t)) => Some(t),
            _ => None,
        };
        let one = |v: Vec<Const>| (v, 1.0);
        let mut out: Vec<(Vec<Const>, f64)> = Vec::new();
        match p {
            Predicate::Tweet => {
                let ts = tweet(b[0]).map_or_else(all_tweets, |t| vec![t]);
                out.extend(ts.into_iter().map(|t| one(vec![Const::Tweet(t)])));
            }
            Predicate::Ent => match (tweet(b[0]), b[1]) {
                (Some(t), Some(Const::Entity(e))) => {
                    if kb.has_ent(t, e) {
                        out.push(one(vec![Const::Tweet(t), Const::Entity(e)]));
                    }
                }
                (Some(t), _) => out.extend(
                    kb.entities_of(t)
                        .iter()
                        .map(|&e| one(vec![Const::Tweet(t), Const::Entity(e)])),
                ),
                (None, Some(Const::Entity(e))) => out.extend(
                    kb.tweets_mentioning(e)
                        .iter()
                        .map(|&t| one(vec![Const::Tweet(t), Const::Entity(e)])),
                ),
                _ => out.extend(
                    kb.tweet_entity_pairs()
                        .map(|(t, e)| one(vec![Const::Tweet(t), Const::Entity(e)])),
                ),
            },
            Predicate::Ideo => {
                let ts = match (tweet(b[0]), b[1]) {
                    (Some(t), _) => vec![t],
                    (None, Some(Const::Ideology(i))) => kb.tweets_with_ideology(i).to_vec(),
                    _ => all_tweets(),
                };
                out.extend(
                    ts.into_iter()
                        .map(|t| one(vec![Const::Tweet(t), Const::Ideology(kb.ideology_of(t))])),
                );
            }
            Predicate::Topic => {
                let ts = match (tweet(b[0]), b[1]) {
                    (Some(t), _) => vec![t],
                    (None, Some(Const::Topic(k))) => kb.tweets_with_topic(k).to_vec(),
                    _ => all_tweets(),
                };
                out.extend(
                    ts.into_iter()
                        .map(|t| one(vec![Const::Tweet(t), Const::Topic(kb.topic_of(t))])),
                );
            }
            Predicate::MfRole => {
                for r in MoralRole::ALL {
                    out.push(one(vec![Const::Mf(r.foundation()), Const::Role(r)]));
                }
            }
            Predicate::SamePolarity => {
                for r1 in MoralRole::ALL {
                    for r2 in MoralRole::ALL {
                        if r1.polarity() == r2.polarity() {
                            out.push(one(vec![Const::Role(r1), Const::Role(r2)]));
                        }
                    }
                }
            }
            Predicate::SameIdeo | Predicate::SameTopic => {
                let peers = |t: u32| -> &[u32] {
                    if p == Predicate::SameIdeo {
                        kb.tweets_with_ideology(kb.ideology_of(t))
                    } else {
                        kb.tweets_with_topic(kb.topic_of(t))
                    }
                };
                match (tweet(b[0]), tweet(b[1])) {
                    (Some(t1), _) => out.extend(
                        peers(t1)
                            .iter()
                            .map(|&t2| one(vec![Const::Tweet(t1), Const::Tweet(t2)])),
                    ),
                    (None, Some(t2)) => out.extend(
                        peers(t2)
                            .iter()
                            .map(|&t1| one(vec![Const::Tweet(t1), Const::Tweet(t2)])),
                    ),
                    _ => {
                        for t1 in kb.tweet_ids() {
                            out.extend(
                                peers(t1)
                                    .iter()
                                    .map(|&t2| one(vec![Const::Tweet(t1), Const::Tweet(t2)])),
                            );
                        }
                    }
                }
            }
            Predicate::PriorMf => {
                let ts = tweet(b[0]).map_or_else(all_tweets, |t| vec![t]);
                for t in ts {
                    if let Some(row) = self.priors.mf(kb.tweet_name(t)) {
                        out.extend(row.iter().map(|(&m, &s)| (vec![Const::Tweet(t), Const::Mf(m)], s)));
                    }
                }
            }
            Predicate::PriorRole => {
                let pairs: Vec<(u32, u32)> = match (tweet(b[0]), b[1]) {
                    (Some(t), Some(Const::Entity(e))) => vec![(t, e)],
                    (Some(t), _) => kb.entities_of(t).iter().map(|&e| (t, e)).collect(),
                    (None, Some(Const::Entity(e))) => kb.tweets_mentioning(e).iter().map(|&t| (t, e)).collect(),
                    _ => kb.tweet_entity_pairs().collect(),
                };
                for (t, e) in pairs {
                    if let Some(row) = self.priors.role(kb.tweet_name(t), kb.entity_name(e)) {
                        out.extend(
                            row.iter()
                                .map(|(&r, &s)| (vec![Const::Tweet(t), Const::Entity(e), Const::Role(r)], s)),
                        );
                    }
                }
            }
            Predicate::Mf | Predicate::Role => {}
        }
        out.retain(|(args, _)| args.iter().zip(b).all(|(a, bound)| bound.is_none_or(|c| c == *a)));
        out
    }

    fn closed_value(&self, p: Predicate, args: &[Const]) -> f64 {
        let b: Vec<Option<Const>> = args.iter().map(|&c| Some(c)).collect();
        self.closed_tuples(p, &b).first().map_or(0.0, |t| t.1)
    }

    fn open_atom(&self, p: Predicate, args: &[Const]) -> Option<usize> {
        match (p, args) {
            (Predicate::Mf, [Const::Tweet(t), Const::Mf(m)]) => self.gp.mf_atom(*t, *m),
            (Predicate::Role, [Const::Tweet(t), Const::Entity(e), Const::Role(r)]) => self.gp.role_atom(*t, *e, *r),
            _ => None,
        }
    }

    fn grounding_error(t: &Template, message: String) -> Error {
        Error::Grounding {
            template: t.index,
            line: t.line,
            message,
        }
    }

    fn bump(&mut self, t: &Template) -> Result<()> {
        self.count += 1;
        *self.gp.template_counts.entry(t.index).or_default() += 1;
        if self.count > self.cfg.max_ground_rules {
            return Err(Self::grounding_error(
                t,
                format!(
                    "ground rule cap of {} exceeded while grounding `{}`",
                    self.cfg.max_ground_rules, t.text
                ),
            ));
        }
        Ok(())
    }

    fn ground_template(&mut self, t: &Template) -> Result<()> {
        if let Some(c) = &t.coupling {
            return self.ground_coupling(t, c);
        }
        let body: Vec<(Predicate, Vec<Arg>)> = t.body.iter().map(|l| (l.predicate, resolve(self.kb, l))).collect();
        let head = resolve(self.kb, &t.head);
        let closed: Vec<usize> = (0..body.len()).filter(|&i| !body[i].0.is_open()).collect();
        if closed
            .iter()
            .any(|&i| body[i].1.iter().any(|a| matches!(a, Arg::Missing)))
        {
            return Ok(());
        }
        // greedy join order: most bound arguments first
        let mut bound = vec![false; t.vars.len()];
        let mut plan = Vec::new();
        let mut left = closed.clone();
        while !left.is_empty() {
            let score = |i: usize| {
                body[i]
                    .1
                    .iter()
                    .filter(|a| match a {
                        Arg::Var(v) => bound[*v],
                        _ => true,
                    })
                    .count()
            };
            let (k, _) = left
                .iter()
                .enumerate()
                .max_by_key(|(k, &i)| (score(i), std::cmp::Reverse(*k)))
                .unwrap();
            let i = left.remove(k);
            for a in &body[i].1 {
                if let Arg::Var(v) = a {
                    bound[*v] = true;
                }
            }
            plan.push(i);
        }
        let free: Vec<usize> = (0..t.vars.len()).filter(|&v| !bound[v]).collect();
        let mut binding = vec![None; t.vars.len()];
        let mut truths = vec![1.0; body.len()];
        self.join(t, &body, &head, &plan, &free, 0, &mut binding, &mut truths)
    }

    #[allow(clippy::too_many_arguments)]
    fn join(
        &mut self,
        t: &Template,
        body: &[(Predicate, Vec<Arg>)],
        head: &[Arg],
        plan: &[usize],
        free: &[usize],
        step: usize,
        binding: &mut Vec<Option<Const>>,
        truths: &mut Vec<f64>,
    ) -> Result<()> {
        if step < plan.len() {
            let i = plan[step];
            let (pred, args) = &body[i];
            let b = current(args, binding);
            for (tuple, value) in self.closed_tuples(*pred, &b) {
                let saved = binding.clone();
                if self.bind(t, args, &tuple, binding) {
                    truths[i] = value;
                    self.join(t, body, head, plan, free, step + 1, binding, truths)?;
                }
                *binding = saved;
            }
            return Ok(());
        }
        let k = step - plan.len();
        if k < free.len() {
            let v = free[k];
            for c in self.domain(t.vars[v].1) {
                binding[v] = Some(c);
                if self.distinct_ok(t, v, binding) {
                    self.join(t, body, head, plan, free, step + 1, binding, truths)?;
                }
            }
            binding[v] = None;
            return Ok(());
        }
        let full: Vec<Const> = binding.iter().map(|c| c.expect("all variables bound")).collect();
        self.emit(t, body, head, &full, truths)
    }

    fn domain(&self, sort: Sort) -> Vec<Const> {
        match sort {
            Sort::MfLabel => MoralFoundation::ALL.iter().map(|&m| Const::Mf(m)).collect(),
            Sort::RoleLabel => MoralRole::ALL.iter().map(|&r| Const::Role(r)).collect(),
            Sort::Polarity => Polarity::ALL.iter().map(|&p| Const::Polarity(p)).collect(),
            Sort::Ideology => Ideology::ALL.iter().map(|&i| Const::Ideology(i)).collect(),
            Sort::Topic => (0..self.kb.num_topics()).map(|k| Const::Topic(k as u32)).collect(),
            Sort::Tweet => self.kb.tweet_ids().map(Const::Tweet).collect(),
            Sort::Entity => (0..self.kb.num_entities() as u32).map(Const::Entity).collect(),
        }
    }

    /// Distinct variables of object sorts bind distinct constants.
    fn distinct_ok(&self, t: &Template, v: usize, binding: &[Option<Const>]) -> bool {
        let Some(c) = binding[v] else { return true };
        if !t.vars[v].1.is_object() {
            return true;
        }
        binding
            .iter()
            .enumerate()
            .all(|(w, b)| w == v || t.vars[w].1 != t.vars[v].1 || *b != Some(c))
    }

    fn bind(&self, t: &Template, args: &[Arg], tuple: &[Const], binding: &mut [Option<Const>]) -> bool {
        for (a, &c) in args.iter().zip(tuple) {
            match a {
                Arg::Var(v) => match binding[*v] {
                    Some(b) if b != c => return false,
                    Some(_) => {}
                    None => {
                        binding[*v] = Some(c);
                        if !self.distinct_ok(t, *v, binding) {
                            return false;
                        }
                    }
                },
                Arg::Val(x) if *x != c => return false,
                _ => {}
            }
        }
        true
    }

    fn emit(
        &mut self,
        t: &Template,
        body: &[(Predicate, Vec<Arg>)],
        head: &[Arg],
        full: &[Const],
        truths: &[f64],
    ) -> Result<()> {
        let fix = |args: &[Arg]| -> Option<Vec<Const>> {
            args.iter()
                .map(|a| match a {
                    Arg::Var(v) => Some(full[*v]),
                    Arg::Val(c) => Some(*c),
                    Arg::Missing => None,
                })
                .collect()
        };
        let n = body.len() as f64;
        let mut constant = -(n - 1.0);
        let mut coeffs: Vec<(usize, f64)> = Vec::new();
        for (i, (pred, args)) in body.iter().enumerate() {
            if pred.is_open() {
                let Some(a) = fix(args).and_then(|c| self.open_atom(*pred, &c)) else {
                    return Ok(());
                };
                coeffs.push((a, 1.0));
            } else {
                if truths[i] <= 0.0 {
                    return Ok(());
                }
                constant += truths[i];
            }
        }
        let body_truth = constant;
        let head_args = fix(head);
        let mut head_atom = None;
        if t.head.predicate.is_open() {
            head_atom = head_args.as_ref().and_then(|c| self.open_atom(t.head.predicate, c));
            match (head_atom, t.head.negated) {
                (Some(a), false) => coeffs.push((a, -1.0)),
                (Some(a), true) => {
                    coeffs.push((a, 1.0));
                    constant -= 1.0;
                }
                (None, false) => {}
                (None, true) => constant -= 1.0,
            }
        } else {
            let v = head_args
                .as_ref()
                .map_or(0.0, |c| self.closed_value(t.head.predicate, c));
            constant -= if t.head.negated { 1.0 - v } else { v };
        }
        let coeffs = merge_coeffs(coeffs);
        let max_l = constant + coeffs.iter().map(|c| c.1.max(0.0)).sum::<f64>();
        if max_l <= 1e-12 {
            return Ok(());
        }
        if t.kind == RuleKind::Hard {
            if coeffs.is_empty() {
                return Err(Error::Infeasible {
                    violated: vec![format!("evidence violates hard rule at line {}: {}", t.line, t.text)],
                });
            }
            self.bump(t)?;
            self.gp.constraints.push(LinearConstraint {
                coeffs,
                constant,
                sense: Sense::Le,
                origin: format!("rule at line {}", t.line),
            });
            return Ok(());
        }
        if coeffs.is_empty() {
            return Ok(());
        }
        let head_args = head_args.unwrap_or_default();
        let source = match (self.params, &t.kind) {
            (Some(p), _) => p.weight_source(t, &head_args, self.corpus, &mut self.cache)?,
            (None, RuleKind::Scalar(_)) => WeightSource::Scalar { template: t.index },
            (None, _) => {
                return Err(Self::grounding_error(
                    t,
                    "scored template needs trained parameters".into(),
                ));
            }
        };
        let weight = match (self.params, &t.kind) {
            (Some(p), _) => p.value(&source)?,
            (None, RuleKind::Scalar(w)) => *w,
            _ => unreachable!(),
        };
        if !weight.is_finite() {
            return Err(Self::grounding_error(t, format!("non-finite weight {weight}")));
        }
        let potential = if uses_linear_scorer(t) && matches!(t.kind, RuleKind::Scored(_)) {
            match head_atom {
                Some(atom) => Potential::Reward { atom, body: body_truth },
                None => return Ok(()),
            }
        } else {
            Potential::Hinge {
                coeffs,
                constant,
                power: self.cfg.hinge_power.get(&t.index).copied().unwrap_or(1),
            }
        };
        self.bump(t)?;
        self.gp.rules.push(GroundRule {
            template: t.index,
            binding: full.to_vec(),
            source,
            weight,
            potential,
        });
        Ok(())
    }

    fn ground_coupling(&mut self, t: &Template, c: &PolarityCoupling) -> Result<()> {
        let origin = format!("polarity coupling (line {})", t.line);
        let cons = ground_c3(&self.gp, self.kb, c, &origin);
        let soft = match (&t.kind, self.cfg.soft_coupling) {
            (_, Some(w)) => Some(w),
            (RuleKind::Scalar(w), None) => Some(*w),
            _ => None,
        };
        for con in cons {
            self.bump(t)?;
            match soft {
                None => self.gp.constraints.push(con),
                Some(w) => {
                    let arc: Arc<str> = Arc::from("coupling");
                    let _ = arc;
                    for sign in [1.0, -1.0] {
                        self.gp.rules.push(GroundRule {
                            template: t.index,
                            binding: Vec::new(),
                            source: WeightSource::Fixed(w),
                            weight: w,
                            potential: Potential::Hinge {
                                coeffs: con.coeffs.iter().map(|&(a, v)| (a, sign * v)).collect(),
                                constant: 0.0,
                                power: self.cfg.hinge_power.get(&t.index).copied().unwrap_or(1),
                            },
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Ground every template of `program` over the whole corpus.
pub fn ground(
    program: &CheckedProgram,
    corpus: &Corpus,
    priors: &PriorScores,
    params: Option<&ParameterStore>,
    cfg: &GroundConfig,
) -> Result<GroundProgram> {
    let kb = &corpus.kb;
    let mut g = Grounder {
        corpus,
        kb,
        priors,
        params,
        cfg,
        gp: GroundProgram::with_atoms(kb),
        cache: FeatureCache::new(),
        count: 0,
    };
    for t in &program.templates {
        g.ground_template(t)?;
    }
    let mut gp = g.gp;
    if cfg.exclusivity {
        gp.add_label_exclusivity(kb);
    }
    if cfg.observe_gold_mf {
        for t in kb.tweet_ids() {
            if let Some(m) = kb.gold_mf(t) {
                let a = gp.mf_atom(t, m).expect("MF atoms exist for every tweet");
                gp.constraints.push(LinearConstraint {
                    coeffs: vec![(a, 1.0)],
                    constant: -1.0,
                    sense: Sense::Eq,
                    origin: format!("observed MF of {}", kb.tweet_name(t)),
                });
            }
        }
    }
    if let Some(bad) = gp
        .constraints
        .iter()
        .find(|c| c.coeffs.is_empty() && c.violation(&[]) > FEAS_TOL)
    {
        return Err(Error::Infeasible {
            violated: vec![bad.origin.clone()],
        });
    }
    gp.constraints.retain(|c| !c.coeffs.is_empty());
    gp.partition();
    Ok(gp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{compile, PRIOR_PROGRAM};
    use crate::inference::{map_enumerate, FEAS_TOL};
    use crate::kb::{EntityMention, TweetInstance};

    fn tweet(id: &str, ideology: Ideology, topic: &str, ents: &[&str]) -> TweetInstance {
        TweetInstance {
            id: id.into(),
            text: format!("{id} {}", ents.join(" ")),
            ideology,
            topic: topic.into(),
            entities: ents
                .iter()
                .map(|e| EntityMention {
                    id: e.to_string(),
                    surface: e.to_string(),
                    spans: vec![],
                    gold_role: None,
                })
                .collect(),
            gold_mf: None,
        }
    }

    const DECLS: &str = "pred Tweet/1 closed\npred Ent/2 closed\npred MF_Role/2 closed\npred SamePolarity/2 closed\npred SameIdeo/2 closed\npred SameTopic/2 closed\npred MF/2 open\npred Role/3 open\n";

    #[test]
    fn r1_grounds_tweets_times_labels() {
        let c = Corpus::from_instances(vec![
            tweet("a", Ideology::Left, "aca", &[]),
            tweet("b", Ideology::Left, "aca", &[]),
        ])
        .unwrap();
        let p = compile(&format!("{DECLS}0.5: Tweet(t) => MF(t, m).")).unwrap();
        let gp = ground(&p, &c, &PriorScores::default(), None, &GroundConfig::default()).unwrap();
        assert_eq!(gp.template_counts[&0], 10);
    }

    #[test]
    fn c1_becomes_role_minus_mf() {
        let c = Corpus::from_instances(vec![tweet("a", Ideology::Left, "aca", &["obama"])]).unwrap();
        let p = compile(&format!(
            "{DECLS}hard: Ent(t, e) & Role(t, e, r) & MF_Role(m, r) => MF(t, m)."
        ))
        .unwrap();
        let gp = ground(
            &p,
            &c,
            &PriorScores::default(),
            None,
            &GroundConfig {
                exclusivity: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(gp.constraints.len(), 16);
        let r = gp.role_atom(0, 0, MoralRole::EntityCausingHarm).unwrap();
        let m = gp.mf_atom(0, MoralFoundation::CareHarm).unwrap();
        let con = gp
            .constraints
            .iter()
            .find(|c| c.coeffs.iter().any(|x| x.0 == r))
            .unwrap();
        let mut coeffs = con.coeffs.clone();
        coeffs.sort_by_key(|x| x.0);
        assert_eq!(coeffs, vec![(m, -1.0), (r, 1.0)]);
        assert_eq!(con.constant, 0.0);
        // violated only by role=1, mf=0
        let mut y = vec![0.0; gp.num_atoms()];
        for (yr, ym, ok) in [(0.0, 0.0, true), (0.0, 1.0, true), (1.0, 1.0, true), (1.0, 0.0, false)] {
            y[r] = yr;
            y[m] = ym;
            assert_eq!(con.violation(&y) <= FEAS_TOL, ok);
        }
    }

    #[test]
    fn c2_three_entities_six_ordered_pairs() {
        let c = Corpus::from_instances(vec![tweet("a", Ideology::Left, "aca", &["x", "y", "z"])]).unwrap();
        let p = compile(&format!(
            "{DECLS}0.1: Ent(t, e1) & Ent(t, e2) & Role(t, e1, r) => ~Role(t, e2, r)."
        ))
        .unwrap();
        let gp = ground(&p, &c, &PriorScores::default(), None, &GroundConfig::default()).unwrap();
        let per_role = gp
            .rules
            .iter()
            .filter(|r| r.binding.contains(&Const::Role(MoralRole::EntityCausingHarm)))
            .count();
        assert_eq!(per_role, 6);
        // each is y1 + y2 − 1
        let r0 = &gp.rules[0];
        match &r0.potential {
            Potential::Hinge { coeffs, constant, .. } => {
                assert_eq!(coeffs.len(), 2);
                assert!(coeffs.iter().all(|c| c.1 == 1.0));
                assert_eq!(*constant, -1.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exclusivity_counts() {
        let c = Corpus::from_instances(vec![
            tweet("a", Ideology::Left, "aca", &["x"]),
            tweet("b", Ideology::Left, "aca", &[]),
        ])
        .unwrap();
        let p = compile(DECLS).unwrap();
        let gp = ground(&p, &c, &PriorScores::default(), None, &GroundConfig::default()).unwrap();
        assert_eq!(gp.groups.len(), 3);
        assert_eq!(gp.constraints.len(), 3);
    }

    fn c3_program() -> CheckedProgram {
        compile(&format!("{DECLS}hard: SameIdeo(t1, t2) & SameTopic(t1, t2) & Ent(t1, e) & Ent(t2, e) & Role(t1, e, r1) & Role(t2, e, r2) => SamePolarity(r1, r2).")).unwrap()
    }

    #[test]
    fn c3_pairs_and_topics() {
        let c = Corpus::from_instances(vec![
            tweet("a", Ideology::Left, "aca", &["aca"]),
            tweet("b", Ideology::Left, "aca", &["aca"]),
            tweet("c", Ideology::Left, "guns", &["aca"]),
        ])
        .unwrap();
        let gp = ground(
            &c3_program(),
            &c,
            &PriorScores::default(),
            None,
            &GroundConfig {
                exclusivity: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(gp.constraints.len(), 2);
        assert!(gp.constraints.iter().all(|c| c.sense == Sense::Eq));
    }

    #[test]
    fn c3_chain_forces_common_polarity() {
        let c = Corpus::from_instances(vec![
            tweet("a", Ideology::Right, "imm", &["wall"]),
            tweet("b", Ideology::Right, "imm", &["wall"]),
            tweet("d", Ideology::Right, "imm", &["wall"]),
        ])
        .unwrap();
        let gp = ground(
            &c3_program(),
            &c,
            &PriorScores::default(),
            None,
            &GroundConfig::default(),
        )
        .unwrap();
        let mut p = gp.problem();
        // drop MF groups to keep enumeration small; force tweet a negative, d positive
        p.linear = vec![0.0; p.num_vars];
        let neg = gp.role_atom(0, 0, MoralRole::EntityCausingHarm).unwrap();
        let pos = gp.role_atom(2, 0, MoralRole::EntityProvidingCare).unwrap();
        p.constraints.push(LinearConstraint {
            coeffs: vec![(neg, 1.0)],
            constant: -1.0,
            sense: Sense::Eq,
            origin: "a".into(),
        });
        p.constraints.push(LinearConstraint {
            coeffs: vec![(pos, 1.0)],
            constant: -1.0,
            sense: Sense::Eq,
            origin: "d".into(),
        });
        assert!(matches!(map_enumerate(&p, 1 << 26), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn components_partition() {
        let c = Corpus::from_instances(vec![
            tweet("a", Ideology::Right, "imm", &["wall"]),
            tweet("b", Ideology::Right, "imm", &["wall"]),
            tweet("d", Ideology::Left, "imm", &["wall"]),
        ])
        .unwrap();
        let gp = ground(
            &c3_program(),
            &c,
            &PriorScores::default(),
            None,
            &GroundConfig::default(),
        )
        .unwrap();
        // a+b coupled (role groups), MF groups separate: {a,b roles}, {d role}, 3 MF groups
        assert_eq!(gp.components.len(), 5);
        let total: usize = gp.components.iter().map(|c| c.atoms.len()).sum();
        assert_eq!(total, gp.num_atoms());
        for comp in &gp.components {
            for &j in &comp.constraints {
                assert!(gp.constraints[j]
                    .coeffs
                    .iter()
                    .all(|x| comp.atoms.binary_search(&x.0).is_ok()));
            }
        }
    }

    #[test]
    fn gold_never_violates_c1() {
        let mut inst = tweet("a", Ideology::Left, "aca", &["x", "y"]);
        inst.gold_mf = Some(MoralFoundation::FairnessCheating);
        inst.entities[0].gold_role = Some(MoralRole::EntityDoingCheating);
        inst.entities[1].gold_role = Some(MoralRole::TargetOfFairnessCheating);
        let c = Corpus::from_instances(vec![inst]).unwrap();
        let p = compile(PRIOR_PROGRAM).unwrap();
        let gp = ground(&p, &c, &PriorScores::default(), None, &GroundConfig::default()).unwrap();
        let gold = gp.gold_assignment(&c.kb).unwrap();
        assert!(gp.constraints.iter().all(|k| k.violation(&gold) <= FEAS_TOL));
    }

    #[test]
    fn cap_names_template() {
        let c = Corpus::from_instances(vec![
            tweet("a", Ideology::Left, "aca", &[]),
            tweet("b", Ideology::Left, "aca", &[]),
        ])
        .unwrap();
        let p = compile(&format!("{DECLS}0.5: Tweet(t) => MF(t, m).")).unwrap();
        let cfg = GroundConfig {
            max_ground_rules: 3,
            ..Default::default()
        };
        match ground(&p, &c, &PriorScores::default(), None, &cfg) {
            Err(Error::Grounding {
                template: 0, message, ..
            }) => assert!(message.contains("MF(t, m)")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lp_dump_mentions_every_constraint() {
        let c = Corpus::from_instances(vec![tweet("a", Ideology::Left, "aca", &["x"])]).unwrap();
        let gp = ground(
            &compile(PRIOR_PROGRAM).unwrap(),
            &c,
            &PriorScores::default(),
            None,
            &GroundConfig::default(),
        )
        .unwrap();
        let lp = gp.to_lp();
        assert!(lp.starts_with('\\'));
        assert!(lp.contains(&format!(" c{}:", gp.constraints.len() - 1)));
        assert!(lp.trim_end().ends_with("End"));
    }
}
