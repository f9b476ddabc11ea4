use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dsl::CheckedProgram;
use crate::error::{Error, Result};
use crate::exec;
use crate::grounding::{ground, GroundConfig, GroundProgram};
use crate::inference::{map_branch_and_bound, solve, LinearConstraint, Sense, SolveStats, SolverConfig};
use crate::kb::{Corpus, Ideology, PriorScores};
use crate::params::ParameterStore;
use crate::taxonomy::{MoralFoundation, MoralRole};

/// Grounding and solver settings used wherever MAP inference runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub ground: GroundConfig,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityPrediction {
    pub entity: String,
    pub surface: String,
    pub role: MoralRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_role: Option<MoralRole>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TweetPrediction {
    pub tweet: String,
    pub ideology: Ideology,
    pub topic: String,
    pub mf: MoralFoundation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_mf: Option<MoralFoundation>,
    pub entities: Vec<EntityPrediction>,
}

/// Predicted frames, one row per tweet in corpus order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub tweets: Vec<TweetPrediction>,
}

impl PredictionSet {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for t in &self.tweets {
            out.push_str(&serde_json::to_string(t)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(src: &str) -> Result<Self> {
        let tweets = src
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Data(format!("prediction line {}: {e}", i + 1))))
            .collect::<Result<Vec<TweetPrediction>>>()?;
        Ok(PredictionSet { tweets })
    }

    /// Fraction of tweets whose MF and every role are correct.
    pub fn structured_accuracy(&self) -> f64 {
        if self.tweets.is_empty() {
            return 0.0;
        }
        let ok = self
            .tweets
            .iter()
            .filter(|t| t.gold_mf == Some(t.mf) && t.entities.iter().all(|e| e.gold_role == Some(e.role)))
            .count();
        ok as f64 / self.tweets.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOutcome {
    pub predictions: PredictionSet,
    pub stats: SolveStats,
    pub components: usize,
    /// Components whose relaxed solver hit its iteration limit.
    pub nonconverged: usize,
    pub objective: f64,
}

/// Solve every connected component and stitch the values together.
pub fn solve_components(gp: &GroundProgram, solver: &SolverConfig) -> Result<(Vec<f64>, SolveStats, usize, f64)> {
    let ids: Vec<usize> = (0..gp.components.len()).collect();
    let results = exec::try_map(&ids, |&c| solve(&gp.component_problem(c), solver))?;
    let mut y = vec![0.0; gp.num_atoms()];
    let mut stats = SolveStats {
        converged: true,
        ..Default::default()
    };
    let mut nonconverged = 0;
    let mut objective = 0.0;
    for (c, a) in results.iter().enumerate() {
        for (k, &atom) in gp.components[c].atoms.iter().enumerate() {
            y[atom] = a.values[k];
        }
        if !a.stats.converged {
            nonconverged += 1;
        }
        stats.merge(&a.stats);
        objective += a.objective;
    }
    Ok((y, stats, nonconverged, objective))
}

/// Position of the chosen label: the first value above one half, otherwise the
/// largest value with the first label winning ties.
fn pick(values: &[f64]) -> usize {
    if let Some(i) = values.iter().position(|&v| v > 0.5) {
        return i;
    }
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Decode an assignment into exactly one MF per tweet and one role per entity.
pub fn decode(gp: &GroundProgram, corpus: &Corpus, y: &[f64]) -> PredictionSet {
    let kb = &corpus.kb;
    let tweets = kb
        .tweet_ids()
        .map(|t| {
            let inst = corpus.instance(t);
            let mf_vals: Vec<f64> = MoralFoundation::ALL
                .iter()
                .map(|&m| gp.mf_atom(t, m).map_or(0.0, |a| y[a]))
                .collect();
            let entities = kb
                .entities_of(t)
                .iter()
                .map(|&e| {
                    let vals: Vec<f64> = MoralRole::ALL
                        .iter()
                        .map(|&r| gp.role_atom(t, e, r).map_or(0.0, |a| y[a]))
                        .collect();
                    let id = kb.entity_name(e);
                    let mention = inst.entities.iter().find(|m| m.id == id);
                    EntityPrediction {
                        entity: id.to_string(),
                        surface: mention.map_or_else(|| id.to_string(), |m| m.surface.clone()),
                        role: MoralRole::ALL[pick(&vals)],
                        gold_role: kb.gold_role(t, e),
                    }
                })
                .collect();
            TweetPrediction {
                tweet: inst.id.clone(),
                ideology: inst.ideology,
                topic: inst.topic.clone(),
                mf: MoralFoundation::ALL[pick(&mf_vals)],
                gold_mf: inst.gold_mf,
                entities,
            }
        })
        .collect();
    PredictionSet { tweets }
}

/// Ground, solve and decode.
pub fn predict(
    program: &CheckedProgram,
    params: Option<&ParameterStore>,
    corpus: &Corpus,
    priors: &PriorScores,
    cfg: &InferenceConfig,
) -> Result<PredictOutcome> {
    let gp = ground(program, corpus, priors, params, &cfg.ground)?;
    predict_grounded(&gp, corpus, &cfg.solver)
}

pub fn predict_grounded(gp: &GroundProgram, corpus: &Corpus, solver: &SolverConfig) -> Result<PredictOutcome> {
    let (y, stats, nonconverged, objective) = solve_components(gp, solver)?;
    Ok(PredictOutcome {
        predictions: decode(gp, corpus, &y),
        stats,
        components: gp.components.len(),
        nonconverged,
        objective,
    })
}

/// Hard-constraint violations found in a prediction set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violations {
    /// Entity rows whose role belongs to a foundation other than the tweet's MF.
    pub role_mf: usize,
    /// Same-ideology, same-topic tweet pairs giving one entity roles of opposite polarity.
    pub polarity: usize,
}

pub fn count_violations(preds: &PredictionSet) -> Violations {
    let mut v = Violations::default();
    let mut by_key: BTreeMap<(&str, Ideology, &str), Vec<MoralRole>> = BTreeMap::new();
    for t in &preds.tweets {
        for e in &t.entities {
            if e.role.foundation() != t.mf {
                v.role_mf += 1;
            }
            by_key
                .entry((&e.entity, t.ideology, &t.topic))
                .or_default()
                .push(e.role);
        }
    }
    for roles in by_key.values() {
        for (i, a) in roles.iter().enumerate() {
            v.polarity += roles[i + 1..].iter().filter(|b| b.polarity() != a.polarity()).count();
        }
    }
    v
}

/// Roles each entity can still take once gold MFs are observed: a role is a
/// candidate when some assignment satisfying every hard constraint gives it
/// to the entity. Keys are `(tweet id, entity key)`.
pub fn candidate_roles(
    program: &CheckedProgram,
    corpus: &Corpus,
    priors: &PriorScores,
    params: Option<&ParameterStore>,
    ground_cfg: &GroundConfig,
) -> Result<BTreeMap<(String, String), Vec<MoralRole>>> {
    let cfg = GroundConfig {
        observe_gold_mf: true,
        ..ground_cfg.clone()
    };
    let gp = ground(program, corpus, priors, params, &cfg)?;
    let kb = &corpus.kb;
    let pairs: Vec<(u32, u32)> = kb.tweet_entity_pairs().collect();
    let rows = exec::try_map(&pairs, |&(t, e)| -> Result<((String, String), Vec<MoralRole>)> {
        let first = gp
            .role_atom(t, e, MoralRole::ALL[0])
            .expect("role atoms exist for every mention");
        let c = gp
            .components
            .iter()
            .position(|c| c.atoms.binary_search(&first).is_ok())
            .expect("every atom lies in a component");
        let mut base = gp.component_problem(c);
        base.linear.iter_mut().for_each(|x| *x = 0.0);
        base.hinges.clear();
        let mut out = Vec::new();
        for r in MoralRole::ALL {
            let atom = gp.role_atom(t, e, r).expect("role atom");
            let local = gp.components[c].atoms.binary_search(&atom).expect("same component");
            let mut p = base.clone();
            p.constraints.push(LinearConstraint {
                coeffs: vec![(local, 1.0)],
                constant: -1.0,
                sense: Sense::Eq,
                origin: format!("probe {}", r.name()),
            });
            match map_branch_and_bound(&p) {
                Ok(_) => out.push(r),
                Err(Error::Infeasible { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(((kb.tweet_name(t).to_string(), kb.entity_name(e).to_string()), out))
    })?;
    Ok(rows.into_iter().collect())
}
