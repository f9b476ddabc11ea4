//! Parameter learning and end-to-end prediction.

mod local;
pub mod metrics;
mod predict;
mod structured;

pub use local::{fit_scorer, local_examples, predict_label, train_local, LocalExample, ScorerReport};
pub use metrics::{task_metrics, ClassReport, TaskMetrics};
pub use predict::{
    candidate_roles, count_violations, decode, predict, predict_grounded, solve_components, EntityPrediction,
    InferenceConfig, PredictOutcome, PredictionSet, TweetPrediction, Violations,
};
pub use structured::{train_global_margin, train_perceptron, EpochRecord, Gradient, StructuredReport, Trainable};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::CheckedProgram;
use crate::error::{Error, Result};
use crate::features::{FamilyToggles, Featurizer};
use crate::kb::{Corpus, PriorScores};
use crate::lexicon::Lexicon;
use crate::params::ParameterStore;
use crate::taxonomy::{MoralFoundation, MoralRole};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Independent local classifiers only.
    LocalOnly,
    /// Local classifiers, then perceptron updates of rule weights.
    PerceptronMle,
    /// Local warm start, then large-margin training through joint inference.
    GlobalMargin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    pub l2: f64,
    pub seed: u64,
    /// Share of training instances held out for early stopping, stratified by MF.
    pub validation_fraction: f64,
    /// Examples whose MAP problems are solved together between updates.
    pub minibatch: usize,
    /// Start global training from the local classifiers.
    pub warm_start: bool,
    pub feature_families: FamilyToggles,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::GlobalMargin,
            learning_rate: 0.1,
            epochs: 50,
            patience: 5,
            l2: 1e-4,
            seed: 13,
            validation_fraction: 0.1,
            minibatch: 16,
            warm_start: true,
            feature_families: FamilyToggles::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "train.learning_rate must be >= 0 (got {})",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "train.validation_fraction must lie in [0, 1) (got {})",
                self.validation_fraction
            )));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::Config(format!("train.l2 must be >= 0 (got {})", self.l2)));
        }
        if !self.feature_families.any() {
            return Err(Error::Config("train.feature_families disables every family".into()));
        }
        Ok(())
    }
}

/// Stratified hold-out: `floor(fraction · n_c)` instances per gold MF class.
pub fn split_validation(corpus: &Corpus, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<Option<MoralFoundation>, Vec<usize>> = BTreeMap::new();
    for (i, inst) in corpus.instances.iter().enumerate() {
        by_class.entry(inst.gold_mf).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut val = Vec::new();
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        let k = (fraction * idx.len() as f64).floor() as usize;
        val.extend_from_slice(&idx[..k]);
    }
    val.sort_unstable();
    let train = (0..corpus.len()).filter(|i| val.binary_search(i).is_err()).collect();
    (train, val)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub algorithm: Algorithm,
    pub train_instances: usize,
    pub validation_instances: usize,
    pub local: Vec<ScorerReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured: Option<StructuredReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParameterStore,
    pub report: TrainReport,
}

/// Fit the featurizer and every parameter of `program` on `corpus`.
pub fn fit(
    program: &CheckedProgram,
    corpus: &Corpus,
    priors: &PriorScores,
    lexicon: Option<Lexicon>,
    cfg: &TrainConfig,
    inf: &InferenceConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Learning("training set is empty".into()));
    }
    if let Some(inst) = corpus.instances.iter().find(|i| !i.is_fully_labeled()) {
        return Err(Error::Learning(format!(
            "training instance `{}` lacks gold MF or roles",
            inst.id
        )));
    }
    let featurizer = Featurizer::fit(&corpus.instances, lexicon, cfg.feature_families)?;
    let mut params = ParameterStore::init(program, featurizer)?;
    let (train_idx, val_idx) = split_validation(corpus, cfg.validation_fraction, cfg.seed);
    let train = corpus.subset(&train_idx)?;
    let val = if val_idx.is_empty() {
        None
    } else {
        Some(corpus.subset(&val_idx)?)
    };

    let mut report = TrainReport {
        algorithm: cfg.algorithm,
        train_instances: train.len(),
        validation_instances: val_idx.len(),
        local: Vec::new(),
        structured: None,
    };
    if cfg.algorithm != Algorithm::GlobalMargin || cfg.warm_start {
        report.local = train_local(program, &train, val.as_ref(), &mut params, cfg)?;
    }
    report.structured = match cfg.algorithm {
        Algorithm::LocalOnly => None,
        Algorithm::PerceptronMle => Some(train_perceptron(
            program,
            &train,
            val.as_ref(),
            priors,
            &mut params,
            cfg,
            inf,
        )?),
        Algorithm::GlobalMargin => Some(train_global_margin(
            program,
            &train,
            val.as_ref(),
            priors,
            &mut params,
            cfg,
            inf,
        )?),
    };
    Ok(TrainOutcome { params, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mf: TaskMetrics,
    pub role: TaskMetrics,
}

/// MF and role metrics over rows that carry gold labels.
pub fn evaluate(preds: &PredictionSet) -> Evaluation {
    let mf_order: Vec<&str> = MoralFoundation::ALL.iter().map(|m| m.name()).collect();
    let role_order: Vec<&str> = MoralRole::ALL.iter().map(|r| r.name()).collect();
    let mut mf = Vec::new();
    let mut role = Vec::new();
    for t in &preds.tweets {
        if let Some(g) = t.gold_mf {
            mf.push((g.name().to_string(), t.mf.name().to_string()));
        }
        for e in &t.entities {
            if let Some(g) = e.gold_role {
                role.push((g.name().to_string(), e.role.name().to_string()));
            }
        }
    }
    Evaluation {
        mf: task_metrics(&mf, &mf_order),
        role: task_metrics(&role, &role_order),
    }
}
