//! Structured learning over connected components of the ground program.
//!
//! Each component is one example. Within a minibatch the MAP problems are
//! solved concurrently under the batch's starting parameters; updates are then
//! applied one example at a time in a fixed order, so results do not depend on
//! the worker count.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::predict::{predict_grounded, InferenceConfig};
use super::TrainConfig;
use crate::dsl::CheckedProgram;
use crate::error::{Error, Result};
use crate::exec;
use crate::features::FeatureVec;
use crate::grounding::{ground, GroundProgram};
use crate::inference::{solve, Assignment, FEAS_TOL};
use crate::kb::{Corpus, PriorScores};
use crate::params::{ParameterStore, Scorer, WeightSource};

/// Which parameter groups an update may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub scalars: bool,
    pub foundation: bool,
    pub linear: bool,
}

/// `∂ objective / ∂ θ` accumulated over ground rules.
#[derive(Debug, Default)]
pub struct Gradient {
    pub scalars: BTreeMap<usize, f64>,
    pub foundation: BTreeMap<Arc<str>, [f64; 5]>,
    pub linear: Vec<(Arc<str>, usize, Arc<FeatureVec>, f64)>,
}

impl Gradient {
    pub fn is_zero(&self) -> bool {
        self.scalars.values().all(|v| *v == 0.0)
            && self.foundation.values().all(|w| w.iter().all(|v| *v == 0.0))
            && self.linear.iter().all(|l| l.3 == 0.0)
    }

    /// Add `coef · φ_r(y) · ∂w_r/∂θ` for each listed rule.
    pub fn add(&mut self, gp: &GroundProgram, rules: &[usize], y: &[f64], coef: f64, which: Trainable) {
        for &i in rules {
            let r = &gp.rules[i];
            let phi = coef * r.potential.score(y);
            if phi == 0.0 {
                continue;
            }
            match &r.source {
                WeightSource::Scalar { template } if which.scalars => {
                    *self.scalars.entry(*template).or_default() += phi;
                }
                WeightSource::Foundation { scorer, foundation } if which.foundation => {
                    self.foundation.entry(scorer.clone()).or_insert([0.0; 5])[foundation.index()] += phi;
                }
                WeightSource::Linear {
                    scorer,
                    label,
                    features,
                } if which.linear => {
                    self.linear.push((scorer.clone(), *label, features.clone(), phi));
                }
                _ => {}
            }
        }
    }

    /// `θ ← θ + rate · g`, then project rule weights onto `w ≥ 0`.
    pub fn apply(&self, params: &mut ParameterStore, rate: f64) {
        for (t, g) in &self.scalars {
            if let Some(w) = params.scalars.get_mut(t) {
                *w += rate * g;
            }
        }
        for (name, g) in &self.foundation {
            if let Some(Scorer::PerFoundation { weights }) = params.scorers.get_mut(&**name) {
                for (w, d) in weights.iter_mut().zip(g) {
                    *w += rate * d;
                }
            }
        }
        for (name, label, x, g) in &self.linear {
            if let Some(s) = params.linear_mut(name) {
                s.add_scaled(x, *label, rate * g);
            }
        }
        params.project_nonnegative();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub updates: usize,
    /// Examples skipped because MAP failed or gold violates a hard constraint.
    pub skipped: usize,
    /// Fraction of examples whose MAP state equals gold.
    pub train_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StructuredReport {
    pub examples: usize,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

struct Example {
    component: usize,
    gold: Vec<f64>,
}

fn examples(gp: &GroundProgram, corpus: &Corpus) -> Result<(Vec<Example>, usize)> {
    let gold = gp
        .gold_assignment(&corpus.kb)
        .ok_or_else(|| Error::Learning("structured training needs gold MF and roles for every instance".into()))?;
    let mut out = Vec::new();
    let mut infeasible = 0;
    for (c, comp) in gp.components.iter().enumerate() {
        if comp.rules.is_empty() && comp.constraints.is_empty() {
            continue;
        }
        let local: Vec<f64> = comp.atoms.iter().map(|&a| gold[a]).collect();
        let p = gp.component_problem(c);
        if !p.is_feasible(&local) {
            infeasible += 1;
            continue;
        }
        out.push(Example {
            component: c,
            gold: local,
        });
    }
    if infeasible > 0 {
        log::warn!("{infeasible} training components skipped: gold labels violate a hard constraint");
    }
    Ok((out, infeasible))
}

fn scatter(gp: &GroundProgram, c: usize, local: &[f64], y: &mut [f64]) {
    for (k, &a) in gp.components[c].atoms.iter().enumerate() {
        y[a] = local[k];
    }
}

fn reweight(gp: &mut GroundProgram, comps: &[usize], params: &ParameterStore) -> Result<()> {
    for &c in comps {
        for k in 0..gp.components[c].rules.len() {
            let i = gp.components[c].rules[k];
            gp.rules[i].weight = params.value(&gp.rules[i].source)?;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Perceptron,
    Margin,
}

#[allow(clippy::too_many_arguments)]
fn train_structured(
    program: &CheckedProgram,
    train: &Corpus,
    val: Option<&Corpus>,
    priors: &PriorScores,
    params: &mut ParameterStore,
    cfg: &TrainConfig,
    inf: &InferenceConfig,
    mode: Mode,
) -> Result<StructuredReport> {
    let which = match mode {
        Mode::Perceptron => Trainable {
            scalars: true,
            foundation: true,
            linear: false,
        },
        Mode::Margin => Trainable {
            scalars: false,
            foundation: true,
            linear: true,
        },
    };
    let mut gp = ground(program, train, priors, Some(params), &inf.ground)?;
    let (exs, base_skipped) = examples(&gp, train)?;
    let mut val_gp = match val {
        Some(v) if !v.is_empty() => Some(ground(program, v, priors, Some(params), &inf.ground)?),
        _ => None,
    };
    let mut report = StructuredReport {
        examples: exs.len(),
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..exs.len()).collect();
    let mut y_gold = vec![0.0; gp.num_atoms()];
    for ex in &exs {
        scatter(&gp, ex.component, &ex.gold, &mut y_gold);
    }
    let mut y_map = y_gold.clone();
    let mut best: Option<(f64, ParameterStore, usize)> = None;
    let mut stale = 0;
    let decay = 1.0 - cfg.learning_rate * cfg.l2;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut rec = EpochRecord {
            epoch,
            updates: 0,
            skipped: base_skipped,
            train_accuracy: 0.0,
            validation_accuracy: None,
        };
        let mut exact = 0usize;
        for batch in order.chunks(cfg.minibatch.max(1)) {
            let comps: Vec<usize> = batch.iter().map(|&i| exs[i].component).collect();
            reweight(&mut gp, &comps, params)?;
            let solved: Vec<Result<Assignment>> = exec::map(batch, |&i| {
                let ex = &exs[i];
                let p = gp.component_problem(ex.component);
                match mode {
                    Mode::Perceptron => solve(&p, &inf.solver),
                    Mode::Margin => solve(&p.loss_augmented(&ex.gold), &inf.solver),
                }
            });
            for (&i, res) in batch.iter().zip(solved) {
                let ex = &exs[i];
                let a = match res {
                    Ok(a) => a,
                    Err(e) => {
                        log::warn!("skipping training component {}: {e}", ex.component);
                        rec.skipped += 1;
                        continue;
                    }
                };
                if a.values.iter().zip(&ex.gold).all(|(p, g)| (p - g).abs() <= FEAS_TOL) {
                    exact += 1;
                }
                scatter(&gp, ex.component, &a.values, &mut y_map);
                let rules = &gp.components[ex.component].rules;
                if mode == Mode::Margin {
                    let p = gp.component_problem(ex.component);
                    let aug = p.loss_augmented(&ex.gold);
                    let hinge = aug.objective(&a.values) - p.objective(&ex.gold);
                    if hinge <= 1e-9 * p.scale().max(1.0) {
                        continue;
                    }
                }
                let mut g = Gradient::default();
                g.add(&gp, rules, &y_gold, 1.0, which);
                g.add(&gp, rules, &y_map, -1.0, which);
                if g.is_zero() {
                    continue;
                }
                if mode == Mode::Margin {
                    for s in params.scorers.values_mut() {
                        if let Scorer::Linear(l) = s {
                            l.l2_shrink(decay);
                        }
                    }
                }
                g.apply(params, cfg.learning_rate);
                rec.updates += 1;
            }
        }
        rec.train_accuracy = if exs.is_empty() {
            1.0
        } else {
            exact as f64 / exs.len() as f64
        };
        if let (Some(vgp), Some(v)) = (val_gp.as_mut(), val) {
            vgp.reweight(params)?;
            let acc = predict_grounded(vgp, v, &inf.solver)?.predictions.structured_accuracy();
            rec.validation_accuracy = Some(acc);
            if best.as_ref().is_none_or(|b| acc > b.0) {
                best = Some((acc, params.clone(), epoch));
                stale = 0;
            } else {
                stale += 1;
            }
        }
        let converged = rec.updates == 0;
        log::info!(
            "epoch {epoch}: {} updates, train accuracy {:.4}",
            rec.updates,
            rec.train_accuracy
        );
        report.history.push(rec);
        if converged || stale >= cfg.patience {
            break;
        }
    }
    report.best_epoch = report.history.len();
    if let Some((_, kept, epoch)) = best {
        *params = kept;
        report.best_epoch = epoch;
    }
    Ok(report)
}

/// Structured perceptron on scalar and per-foundation rule weights:
/// `w ← w + η(ψ(MAP) − ψ(gold))` with `ψ` the distance to satisfaction,
/// projected onto `w ≥ 0`. Linear scorers and prior values stay fixed.
pub fn train_perceptron(
    program: &CheckedProgram,
    train: &Corpus,
    val: Option<&Corpus>,
    priors: &PriorScores,
    params: &mut ParameterStore,
    cfg: &TrainConfig,
    inf: &InferenceConfig,
) -> Result<StructuredReport> {
    train_structured(program, train, val, priors, params, cfg, inf, Mode::Perceptron)
}

/// Large-margin training with Hamming loss-augmented inference; updates linear
/// scorers and per-foundation weights, scalar weights stay fixed.
pub fn train_global_margin(
    program: &CheckedProgram,
    train: &Corpus,
    val: Option<&Corpus>,
    priors: &PriorScores,
    params: &mut ParameterStore,
    cfg: &TrainConfig,
    inf: &InferenceConfig,
) -> Result<StructuredReport> {
    train_structured(program, train, val, priors, params, cfg, inf, Mode::Margin)
}
