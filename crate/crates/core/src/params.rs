//! Scorer parameters: linear classifiers for observed-body templates, per-foundation
//! scalars for open-body scored templates, and scalar rule weights.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dsl::{CheckedProgram, RuleKind, Template, TemplateClass};
use crate::error::{Error, Result};
use crate::features::{family_mask, FeatureFamily, FeatureVec, Featurizer};
use crate::kb::{Const, Corpus, Predicate};
use crate::taxonomy::MoralFoundation;

pub const FORMAT_VERSION: u32 = 1;

/// Initial value of per-foundation weights.
pub const DEFAULT_FOUNDATION_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSpace {
    Mf,
    Role,
}

impl LabelSpace {
    pub fn size(self) -> usize {
        match self {
            LabelSpace::Mf => 5,
            LabelSpace::Role => 16,
        }
    }

    pub fn of(p: Predicate) -> Option<LabelSpace> {
        match p {
            Predicate::Mf => Some(LabelSpace::Mf),
            Predicate::Role => Some(LabelSpace::Role),
            _ => None,
        }
    }

    pub fn label_index(self, c: Const) -> Option<usize> {
        match (self, c) {
            (LabelSpace::Mf, Const::Mf(m)) => Some(m.index()),
            (LabelSpace::Role, Const::Role(r)) => Some(r.index()),
            _ => None,
        }
    }
}

/// Multinomial linear model: `score(x, l) = bias[l] + w[l] · x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScorer {
    pub space: LabelSpace,
    pub families: Vec<FeatureFamily>,
    pub dim: usize,
    /// Row-major `labels × dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Labels never seen in training; they keep zero parameters.
    pub absent: Vec<bool>,
}

impl LinearScorer {
    pub fn zeros(space: LabelSpace, families: Vec<FeatureFamily>, dim: usize) -> Self {
        let n = space.size();
        LinearScorer {
            space,
            families,
            dim,
            weights: vec![0.0; n * dim],
            bias: vec![0.0; n],
            absent: vec![false; n],
        }
    }

    pub fn row(&self, label: usize) -> &[f64] {
        &self.weights[label * self.dim..(label + 1) * self.dim]
    }

    pub fn row_mut(&mut self, label: usize) -> &mut [f64] {
        &mut self.weights[label * self.dim..(label + 1) * self.dim]
    }

    pub fn score(&self, x: &FeatureVec, label: usize) -> f64 {
        self.bias[label] + x.dot(self.row(label))
    }

    pub fn logits(&self, x: &FeatureVec) -> Vec<f64> {
        (0..self.space.size()).map(|l| self.score(x, l)).collect()
    }

    /// `θ[label] += scale · x`, bias included.
    pub fn add_scaled(&mut self, x: &FeatureVec, label: usize, scale: f64) {
        self.bias[label] += scale;
        let row = self.row_mut(label);
        for &(i, v) in &x.0 {
            row[i as usize] += scale * v;
        }
    }

    pub fn l2_shrink(&mut self, factor: f64) {
        for w in &mut self.weights {
            *w *= factor;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Scorer {
    Linear(LinearScorer),
    /// One weight per moral foundation, selected by the head label's foundation.
    PerFoundation {
        weights: [f64; 5],
    },
}

/// Where a ground rule's weight comes from; lets a ground program be reweighted
/// without regrounding.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSource {
    Linear {
        scorer: Arc<str>,
        label: usize,
        features: Arc<FeatureVec>,
    },
    Foundation {
        scorer: Arc<str>,
        foundation: MoralFoundation,
    },
    Scalar {
        template: usize,
    },
    /// A configured constant (softened coupling constraints).
    Fixed(f64),
}

/// Feature cache keyed by (family mask, tweet, entity).
pub type FeatureCache = HashMap<(u8, u32, Option<u32>), Arc<FeatureVec>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    pub format_version: u32,
    pub featurizer: Featurizer,
    pub scorers: BTreeMap<String, Scorer>,
    pub scalars: BTreeMap<usize, f64>,
}

/// Families a template's scorer sees, before global toggles.
pub fn template_families(t: &Template) -> Vec<FeatureFamily> {
    let mut f = vec![FeatureFamily::TextUnigrams];
    match t.head.predicate {
        Predicate::Role => f.push(FeatureFamily::EntityUnigrams),
        Predicate::Mf => f.push(FeatureFamily::Lexicon),
        _ => {}
    }
    if t.body_has(Predicate::Ideo) {
        f.push(FeatureFamily::Ideology);
    }
    if t.body_has(Predicate::Topic) {
        f.push(FeatureFamily::Topic);
    }
    f
}

/// The head label argument of an MF or Role head.
fn head_label(t: &Template, head_args: &[Const]) -> Option<Const> {
    match t.head.predicate {
        Predicate::Mf => head_args.get(1).copied(),
        Predicate::Role => head_args.get(2).copied(),
        _ => None,
    }
}

fn head_foundation(t: &Template, head_args: &[Const]) -> Option<MoralFoundation> {
    match head_label(t, head_args)? {
        Const::Mf(m) => Some(m),
        Const::Role(r) => Some(r.foundation()),
        _ => None,
    }
}

/// Linear scorers apply when the body is fully observed and the head is a
/// positive MF or Role literal.
pub fn uses_linear_scorer(t: &Template) -> bool {
    t.body_observed() && !t.head.negated && LabelSpace::of(t.head.predicate).is_some()
}

impl ParameterStore {
    /// Fresh parameters for every template of `program`.
    pub fn init(program: &CheckedProgram, featurizer: Featurizer) -> Result<Self> {
        let mut scorers: BTreeMap<String, Scorer> = BTreeMap::new();
        let mut scalars = BTreeMap::new();
        for t in &program.templates {
            match &t.kind {
                RuleKind::Hard => {}
                RuleKind::Scalar(w) => {
                    scalars.insert(t.index, *w);
                }
                RuleKind::Scored(name) => {
                    let fresh = if uses_linear_scorer(t) {
                        let space = LabelSpace::of(t.head.predicate).expect("checked");
                        let families = featurizer.active(&template_families(t));
                        if families.is_empty() {
                            return Err(Error::Learning(format!(
                                "scorer `{name}` (line {}) has no enabled feature family",
                                t.line
                            )));
                        }
                        Scorer::Linear(LinearScorer::zeros(space, families, featurizer.dim()))
                    } else {
                        Scorer::PerFoundation {
                            weights: [DEFAULT_FOUNDATION_WEIGHT; 5],
                        }
                    };
                    match scorers.get(name) {
                        None => {
                            scorers.insert(name.clone(), fresh);
                        }
                        Some(existing) if same_shape(existing, &fresh) => {}
                        Some(_) => {
                            return Err(Error::Validation {
                                line: t.line,
                                message: format!(
                                    "scorer `{name}` is shared by templates with different label spaces or features"
                                ),
                            })
                        }
                    }
                }
            }
        }
        Ok(ParameterStore {
            format_version: FORMAT_VERSION,
            featurizer,
            scorers,
            scalars,
        })
    }

    pub fn linear(&self, name: &str) -> Option<&LinearScorer> {
        match self.scorers.get(name) {
            Some(Scorer::Linear(s)) => Some(s),
            _ => None,
        }
    }

    pub fn linear_mut(&mut self, name: &str) -> Option<&mut LinearScorer> {
        match self.scorers.get_mut(name) {
            Some(Scorer::Linear(s)) => Some(s),
            _ => None,
        }
    }

    fn missing(t: &Template, what: &str) -> Error {
        Error::Learning(format!("missing parameters for template at line {}: {what}", t.line))
    }

    /// Feature vector for the `(tweet, entity)` of a grounding, with caching.
    pub fn grounding_features(
        &self,
        families: &[FeatureFamily],
        head_args: &[Const],
        corpus: &Corpus,
        cache: &mut FeatureCache,
    ) -> Result<Arc<FeatureVec>> {
        let tweet = match head_args.first() {
            Some(Const::Tweet(t)) => *t,
            _ => return Err(Error::Learning("scored head has no tweet argument".into())),
        };
        let entity = match head_args.get(1) {
            Some(Const::Entity(e)) => Some(*e),
            _ => None,
        };
        let key = (family_mask(families), tweet, entity);
        if let Some(v) = cache.get(&key) {
            return Ok(v.clone());
        }
        let inst = corpus.instance(tweet);
        let mention = entity.and_then(|e| {
            let name = corpus.kb.entity_name(e);
            inst.entities.iter().find(|m| m.id == name)
        });
        let v = Arc::new(self.featurizer.features(inst, mention, families));
        cache.insert(key, v.clone());
        Ok(v)
    }

    /// Weight source for one grounding of a scored or scalar template.
    pub fn weight_source(
        &self,
        t: &Template,
        head_args: &[Const],
        corpus: &Corpus,
        cache: &mut FeatureCache,
    ) -> Result<WeightSource> {
        match &t.kind {
            RuleKind::Hard => Err(Error::Learning("hard templates carry no weight".into())),
            RuleKind::Scalar(_) => {
                if !self.scalars.contains_key(&t.index) {
                    return Err(Self::missing(t, "scalar weight"));
                }
                Ok(WeightSource::Scalar { template: t.index })
            }
            RuleKind::Scored(name) => match self.scorers.get(name) {
                Some(Scorer::Linear(s)) => {
                    let label = head_label(t, head_args)
                        .and_then(|c| s.space.label_index(c))
                        .ok_or_else(|| Self::missing(t, "head label outside the scorer's label space"))?;
                    let features = self.grounding_features(&s.families, head_args, corpus, cache)?;
                    Ok(WeightSource::Linear {
                        scorer: Arc::from(name.as_str()),
                        label,
                        features,
                    })
                }
                Some(Scorer::PerFoundation { .. }) => {
                    let foundation =
                        head_foundation(t, head_args).ok_or_else(|| Self::missing(t, "head has no foundation"))?;
                    Ok(WeightSource::Foundation {
                        scorer: Arc::from(name.as_str()),
                        foundation,
                    })
                }
                None => Err(Self::missing(t, &format!("scorer `{name}`"))),
            },
        }
    }

    /// Current value of a weight source.
    pub fn value(&self, source: &WeightSource) -> Result<f64> {
        Ok(match source {
            WeightSource::Linear {
                scorer,
                label,
                features,
            } => self
                .linear(scorer)
                .ok_or_else(|| Error::Learning(format!("missing linear scorer `{scorer}`")))?
                .score(features, *label),
            WeightSource::Foundation { scorer, foundation } => match self.scorers.get(&**scorer) {
                Some(Scorer::PerFoundation { weights }) => weights[foundation.index()],
                _ => return Err(Error::Learning(format!("missing per-foundation scorer `{scorer}`"))),
            },
            WeightSource::Scalar { template } => *self
                .scalars
                .get(template)
                .ok_or_else(|| Error::Learning(format!("missing scalar weight for template #{template}")))?,
            WeightSource::Fixed(w) => *w,
        })
    }

    /// The effective weight `w_r` of one grounding. For prior rules this is the
    /// prior value scaled by the rule's scalar weight.
    pub fn score_template(&self, t: &Template, head_args: &[Const], body_truth: f64, corpus: &Corpus) -> Result<f64> {
        let src = self.weight_source(t, head_args, corpus, &mut FeatureCache::new())?;
        let w = self.value(&src)?;
        Ok(if t.class == TemplateClass::Prior {
            w * body_truth
        } else {
            w
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(src: &str) -> Result<Self> {
        let p: ParameterStore = serde_json::from_str(src)?;
        if p.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "parameter file format {} is not supported (expected {FORMAT_VERSION})",
                p.format_version
            )));
        }
        if let Some((i, w)) = p.scalars.iter().find(|(_, w)| !w.is_finite()) {
            return Err(Error::Config(format!(
                "scalar weight for template #{i} is not finite ({w})"
            )));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Project scalar and per-foundation weights onto `w >= 0`.
    pub fn project_nonnegative(&mut self) {
        for w in self.scalars.values_mut() {
            *w = w.max(0.0);
        }
        for s in self.scorers.values_mut() {
            if let Scorer::PerFoundation { weights } = s {
                for w in weights.iter_mut() {
                    *w = w.max(0.0);
                }
            }
        }
    }
}

fn same_shape(a: &Scorer, b: &Scorer) -> bool {
    match (a, b) {
        (Scorer::Linear(x), Scorer::Linear(y)) => x.space == y.space && x.families == y.families,
        (Scorer::PerFoundation { .. }, Scorer::PerFoundation { .. }) => true,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{compile, DEFAULT_PROGRAM, PRIOR_PROGRAM};
    use crate::features::FamilyToggles;
    use crate::kb::{EntityMention, Ideology, TweetInstance};
    use crate::taxonomy::MoralRole;

    fn corpus() -> Corpus {
        Corpus::from_instances(vec![TweetInstance {
            id: "t1".into(),
            text: "protect our kids".into(),
            ideology: Ideology::Left,
            topic: "guns".into(),
            entities: vec![EntityMention {
                id: "kids".into(),
                surface: "kids".into(),
                spans: vec![(12, 16)],
                gold_role: Some(MoralRole::TargetOfCareHarm),
            }],
            gold_mf: Some(MoralFoundation::CareHarm),
        }])
        .unwrap()
    }

    #[test]
    fn init_builds_one_scorer_per_name() {
        let c = corpus();
        let p = compile(DEFAULT_PROGRAM).unwrap();
        let f = Featurizer::fit(&c.instances, None, FamilyToggles::default()).unwrap();
        let s = ParameterStore::init(&p, f).unwrap();
        assert_eq!(s.scorers.len(), 5);
        assert!(matches!(s.scorers["exclusion"], Scorer::PerFoundation { .. }));
        assert_eq!(s.linear("mf_context").unwrap().families.len(), 4);
    }

    #[test]
    fn zero_features_score_is_bias() {
        let mut s = LinearScorer::zeros(LabelSpace::Mf, vec![FeatureFamily::TextUnigrams], 4);
        s.bias[2] = 0.25;
        assert_eq!(s.score(&FeatureVec::default(), 2), 0.25);
    }

    #[test]
    fn prior_rule_passes_prior_through() {
        let c = corpus();
        let p = compile(PRIOR_PROGRAM).unwrap();
        let f = Featurizer::fit(&c.instances, None, FamilyToggles::default()).unwrap();
        let s = ParameterStore::init(&p, f).unwrap();
        let t = &p.templates[0];
        let args = [Const::Tweet(0), Const::Mf(MoralFoundation::CareHarm)];
        assert_eq!(s.score_template(t, &args, 0.7, &c).unwrap(), 0.7);
        // exclusion: scalar weight as written
        assert_eq!(p.templates[3].class, TemplateClass::Exclusion);
        let a3 = [
            Const::Tweet(0),
            Const::Entity(0),
            Const::Role(MoralRole::TargetOfCareHarm),
        ];
        assert_eq!(s.score_template(&p.templates[3], &a3, 1.0, &c).unwrap(), 0.1);
    }

    #[test]
    fn identical_groundings_identical_weights() {
        let c = corpus();
        let p = compile(DEFAULT_PROGRAM).unwrap();
        let f = Featurizer::fit(&c.instances, None, FamilyToggles::default()).unwrap();
        let mut s = ParameterStore::init(&p, f).unwrap();
        s.linear_mut("role_text")
            .unwrap()
            .weights
            .iter_mut()
            .enumerate()
            .for_each(|(i, w)| *w = (i % 7) as f64 * 0.1);
        let args = [
            Const::Tweet(0),
            Const::Entity(0),
            Const::Role(MoralRole::EntityCausingHarm),
        ];
        let a = s.score_template(&p.templates[1], &args, 1.0, &c).unwrap();
        let b = s.score_template(&p.templates[1], &args, 1.0, &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trip_and_version_check() {
        let c = corpus();
        let p = compile(DEFAULT_PROGRAM).unwrap();
        let f = Featurizer::fit(&c.instances, None, FamilyToggles::default()).unwrap();
        let s = ParameterStore::init(&p, f).unwrap();
        let json = s.to_json().unwrap();
        assert_eq!(ParameterStore::from_json(&json).unwrap(), s);
        let bad = json.replacen("\"format_version\": 1", "\"format_version\": 99", 1);
        assert!(ParameterStore::from_json(&bad).is_err());
    }
}
