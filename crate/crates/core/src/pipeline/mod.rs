//! Config-driven runs: cross-validated training, prediction, ablation,
//! analysis and lexicon building. Every artifact carries the config hash,
//! seed and tool version, and reruns of one config reproduce them byte for byte.

mod artifacts;
mod config;

pub use artifacts::{read_predictions, strip_json_provenance, strip_jsonl_header, ArtifactWriter, Stamp, VERSION};
pub use config::{
    AblationSpec, AnalysisSettings, ConstraintToggle, LexiconSettings, Paths, PipelineConfig, RuleToggle,
};

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{
    build_relation_graph, entity_frequencies, error_taxonomy, fmt_f64, partisanship_rows, partisanship_table,
    polarity_rank, role_distribution, top_entities_per_role, top_entities_rows, EntityAliasMap, ErrorCounts, Table,
};
use crate::dsl::{compile, CheckedProgram, DEFAULT_PROGRAM};
use crate::error::{Error, Result};
use crate::grounding::{ground, GroundProgram};
use crate::kb::{entity_key, load_corpus, load_priors, Corpus, Ideology, LoadOptions, PriorScores};
use crate::learning::{
    count_violations, evaluate, fit, predict, Evaluation, PredictionSet, TaskMetrics, TrainReport, Violations,
};
use crate::lexicon::{build_pmi_lexicon_from_corpus, lexicon_baseline_predict, load_mfd, Lexicon};
use crate::params::ParameterStore;
use crate::taxonomy::MoralFoundation;

/// What a command wrote and whether some solve failed to converge.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub command: &'static str,
    pub artifacts: Vec<PathBuf>,
    /// Components whose relaxed solver stopped at its iteration limit.
    pub nonconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train: usize,
    pub test: usize,
    pub mf: TaskMetrics,
    pub role: TaskMetrics,
    pub errors: ErrorCounts,
    pub violations: Violations,
    pub nonconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanF1 {
    pub mf_macro_f1: f64,
    pub mf_weighted_f1: f64,
    pub role_macro_f1: f64,
    pub role_weighted_f1: f64,
}

/// Cross-validation result; `pooled` scores the out-of-fold predictions of
/// every instance together.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub mean: MeanF1,
    pub pooled: Evaluation,
    pub pooled_errors: ErrorCounts,
    #[serde(skip)]
    pub predictions: PredictionSet,
}

impl CvReport {
    pub fn nonconverged(&self) -> usize {
        self.folds.iter().map(|f| f.nonconverged).sum()
    }
}

/// Seeded shuffle, then instance `i` of the shuffled order goes to fold `i mod k`.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!(
            "folds: cross-validation needs at least 2 (got {k})"
        )));
    }
    if k > n {
        return Err(Error::Data(format!(
            "{k} folds requested but the corpus has {n} instances"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, x) in idx.into_iter().enumerate() {
        folds[i % k].push(x);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Train on k-1 folds and predict the held-out one, for every fold.
pub fn cross_validate(
    program: &CheckedProgram,
    corpus: &Corpus,
    priors: &PriorScores,
    lexicon: Option<&Lexicon>,
    cfg: &PipelineConfig,
) -> Result<CvReport> {
    let folds = fold_assignment(corpus.len(), cfg.folds, cfg.seed)?;
    let mut reports = Vec::new();
    let mut pooled: Vec<(usize, crate::learning::TweetPrediction)> = Vec::new();
    for (k, test_idx) in folds.iter().enumerate() {
        let train_idx: Vec<usize> = (0..corpus.len())
            .filter(|i| test_idx.binary_search(i).is_err())
            .collect();
        let train = corpus.subset(&train_idx)?;
        let test = corpus.subset(test_idx)?;
        let model = fit(program, &train, priors, lexicon.cloned(), &cfg.train, &cfg.inference)?;
        let out = predict(program, Some(&model.params), &test, priors, &cfg.inference)?;
        let ev = evaluate(&out.predictions);
        reports.push(FoldReport {
            fold: k,
            train: train.len(),
            test: test.len(),
            mf: ev.mf,
            role: ev.role,
            errors: error_taxonomy(&out.predictions),
            violations: count_violations(&out.predictions),
            nonconverged: out.nonconverged,
        });
        pooled.extend(test_idx.iter().copied().zip(out.predictions.tweets));
    }
    pooled.sort_by_key(|(i, _)| *i);
    let predictions = PredictionSet {
        tweets: pooled.into_iter().map(|(_, t)| t).collect(),
    };
    let n = reports.len() as f64;
    let avg = |f: &dyn Fn(&FoldReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mean = MeanF1 {
        mf_macro_f1: avg(&|r| r.mf.macro_f1),
        mf_weighted_f1: avg(&|r| r.mf.weighted_f1),
        role_macro_f1: avg(&|r| r.role.macro_f1),
        role_weighted_f1: avg(&|r| r.role.weighted_f1),
    };
    Ok(CvReport {
        mean,
        pooled: evaluate(&predictions),
        pooled_errors: error_taxonomy(&predictions),
        folds: reports,
        predictions,
    })
}

fn metrics_table(cv: &CvReport) -> Table {
    let mut t = Table::new([
        "fold",
        "mf_macro_f1",
        "mf_weighted_f1",
        "role_macro_f1",
        "role_weighted_f1",
        "E1",
        "E2",
        "E3",
    ]);
    for f in &cv.folds {
        t.push([
            f.fold.to_string(),
            fmt_f64(f.mf.macro_f1),
            fmt_f64(f.mf.weighted_f1),
            fmt_f64(f.role.macro_f1),
            fmt_f64(f.role.weighted_f1),
            f.errors.e1.to_string(),
            f.errors.e2.to_string(),
            f.errors.e3.to_string(),
        ]);
    }
    let m = &cv.mean;
    t.push([
        "mean".to_string(),
        fmt_f64(m.mf_macro_f1),
        fmt_f64(m.mf_weighted_f1),
        fmt_f64(m.role_macro_f1),
        fmt_f64(m.role_weighted_f1),
        String::new(),
        String::new(),
        String::new(),
    ]);
    let (p, e) = (&cv.pooled, &cv.pooled_errors);
    t.push([
        "pooled".to_string(),
        fmt_f64(p.mf.macro_f1),
        fmt_f64(p.mf.weighted_f1),
        fmt_f64(p.role.macro_f1),
        fmt_f64(p.role.weighted_f1),
        e.e1.to_string(),
        e.e2.to_string(),
        e.e3.to_string(),
    ]);
    t
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub rules: Vec<RuleToggle>,
    pub constraints: Vec<ConstraintToggle>,
    pub role_weighted_f1: f64,
    pub mf_weighted_f1: f64,
    pub errors: ErrorCounts,
    pub nonconverged: usize,
}

pub fn ablation_table(rows: &[AblationRow]) -> Table {
    let mut t = Table::new(["variant", "role_weighted_f1", "mf_weighted_f1", "E1", "E2", "E3"]);
    for r in rows {
        t.push([
            r.variant.clone(),
            fmt_f64(r.role_weighted_f1),
            fmt_f64(r.mf_weighted_f1),
            r.errors.e1.to_string(),
            r.errors.e2.to_string(),
            r.errors.e3.to_string(),
        ]);
    }
    t
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// A configured pipeline; each command reads its inputs and writes artifacts
/// under `paths.output`.
pub struct Pipeline {
    pub cfg: PipelineConfig,
    stamp: Stamp,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let stamp = Stamp::new(cfg.hash(), cfg.seed);
        Ok(Pipeline { cfg, stamp })
    }

    pub fn stamp(&self) -> &Stamp {
        &self.stamp
    }

    fn out(&self) -> &Path {
        &self.cfg.paths.output
    }

    fn writer(&self) -> Result<ArtifactWriter> {
        ArtifactWriter::new(self.out(), self.stamp.clone())
    }

    fn required<'a>(&self, p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        p.as_deref()
            .ok_or_else(|| Error::Config(format!("paths.{key} is not set")))
    }

    pub fn corpus(&self) -> Result<Corpus> {
        load_corpus(
            self.required(&self.cfg.paths.corpus, "corpus")?,
            &LoadOptions::default(),
        )
    }

    pub fn priors(&self, corpus: &Corpus) -> Result<PriorScores> {
        match &self.cfg.paths.priors {
            Some(p) => load_priors(p, &corpus.kb),
            None => Ok(PriorScores::default()),
        }
    }

    pub fn program(&self) -> Result<CheckedProgram> {
        match &self.cfg.paths.program {
            Some(p) => compile(&read(p)?),
            None => compile(DEFAULT_PROGRAM),
        }
    }

    pub fn feature_lexicon(&self) -> Result<Option<Lexicon>> {
        match &self.cfg.paths.lexicon {
            Some(p) => Ok(Some(Lexicon::from_tsv(&read(p)?)?)),
            None => Ok(None),
        }
    }

    fn params_path(&self) -> PathBuf {
        self.cfg
            .paths
            .params
            .clone()
            .unwrap_or_else(|| self.out().join("params.json"))
    }

    pub fn load_params(&self) -> Result<ParameterStore> {
        let path = self.params_path();
        if !path.exists() {
            return Err(Error::Data(format!(
                "{} not found; run `moralframe train` with this config first",
                path.display()
            )));
        }
        ParameterStore::from_json(&strip_json_provenance(&read(&path)?)?)
    }

    /// Cross-validate, then refit on the whole corpus.
    pub fn train(&self) -> Result<RunSummary> {
        let corpus = self.corpus()?;
        let priors = self.priors(&corpus)?;
        let program = self.program()?;
        let lexicon = self.feature_lexicon()?;
        let cv = cross_validate(&program, &corpus, &priors, lexicon.as_ref(), &self.cfg)?;
        let final_fit = fit(
            &program,
            &corpus,
            &priors,
            lexicon,
            &self.cfg.train,
            &self.cfg.inference,
        )?;

        #[derive(Serialize)]
        struct Metrics<'a> {
            algorithm: crate::learning::Algorithm,
            instances: usize,
            cross_validation: &'a CvReport,
            final_fit: &'a TrainReport,
        }
        let mut w = self.writer()?;
        w.json(
            "metrics.json",
            &Metrics {
                algorithm: self.cfg.train.algorithm,
                instances: corpus.len(),
                cross_validation: &cv,
                final_fit: &final_fit.report,
            },
        )?;
        w.text("metrics.md", &metrics_table(&cv).to_markdown())?;
        w.text("cv_predictions.jsonl", &cv.predictions.to_jsonl()?)?;
        w.json("params.json", &final_fit.params)?;
        Ok(RunSummary {
            command: "train",
            nonconverged: cv.nonconverged(),
            artifacts: w.finish("train")?,
        })
    }

    pub fn predict(&self) -> Result<RunSummary> {
        let corpus = self.corpus()?;
        let priors = self.priors(&corpus)?;
        let program = self.program()?;
        let params = self.load_params()?;
        let out = predict(&program, Some(&params), &corpus, &priors, &self.cfg.inference)?;

        #[derive(Serialize)]
        struct Summary {
            tweets: usize,
            entities: usize,
            components: usize,
            nonconverged: usize,
            objective: f64,
            violations: Violations,
            #[serde(skip_serializing_if = "Option::is_none")]
            evaluation: Option<Evaluation>,
            #[serde(skip_serializing_if = "Option::is_none")]
            errors: Option<ErrorCounts>,
        }
        let preds = &out.predictions;
        let labeled = corpus.instances.iter().any(|i| i.gold_mf.is_some());
        let summary = Summary {
            tweets: preds.tweets.len(),
            entities: preds.tweets.iter().map(|t| t.entities.len()).sum(),
            components: out.components,
            nonconverged: out.nonconverged,
            objective: out.objective,
            violations: count_violations(preds),
            evaluation: labeled.then(|| evaluate(preds)),
            errors: labeled.then(|| error_taxonomy(preds)),
        };
        let mut w = self.writer()?;
        w.text("predictions.jsonl", &preds.to_jsonl()?)?;
        w.json("predict_summary.json", &summary)?;
        Ok(RunSummary {
            command: "predict",
            nonconverged: out.nonconverged,
            artifacts: w.finish("predict")?,
        })
    }

    /// Cross-validated metrics for every ablation variant.
    pub fn ablate(&self) -> Result<RunSummary> {
        let program = self.program()?;
        let specs = self.cfg.ablation_specs();
        let variants = specs.iter().map(|s| s.apply(&program)).collect::<Result<Vec<_>>>()?;
        let corpus = self.corpus()?;
        let priors = self.priors(&corpus)?;
        let lexicon = self.feature_lexicon()?;
        let mut rows = Vec::new();
        for (spec, p) in specs.iter().zip(&variants) {
            log::info!("ablation variant `{}`: {} templates", spec.name, p.templates.len());
            let cv = cross_validate(p, &corpus, &priors, lexicon.as_ref(), &self.cfg)?;
            rows.push(AblationRow {
                variant: spec.name.clone(),
                rules: spec.rules.clone(),
                constraints: spec.constraints.clone(),
                role_weighted_f1: cv.pooled.role.weighted_f1,
                mf_weighted_f1: cv.pooled.mf.weighted_f1,
                errors: cv.pooled_errors,
                nonconverged: cv.nonconverged(),
            });
        }
        let table = ablation_table(&rows);
        let mut w = self.writer()?;
        w.json("ablation.json", &serde_json::json!({ "rows": rows }))?;
        w.text("ablation.tsv", &table.to_tsv()?)?;
        w.text("ablation.md", &table.to_markdown())?;
        Ok(RunSummary {
            command: "ablate",
            nonconverged: rows.iter().map(|r| r.nonconverged).sum(),
            artifacts: w.finish("ablate")?,
        })
    }

    /// Aggregate analyses over `predictions.jsonl` in the output directory.
    pub fn analyze(&self) -> Result<RunSummary> {
        let path = self.out().join("predictions.jsonl");
        if !path.exists() {
            return Err(Error::Data(format!(
                "{} not found; run `moralframe predict` with this config first",
                path.display()
            )));
        }
        let mut preds = read_predictions(&path)?;
        if let Some(a) = &self.cfg.paths.aliases {
            preds = EntityAliasMap::load(a)?.apply(&preds);
        }
        let a = &self.cfg.analysis;
        let mut w = self.writer()?;

        let part = partisanship_table(&preds, &a.partisan);
        let t = partisanship_rows(&part);
        w.text("analysis/partisanship.tsv", &t.to_tsv()?)?;
        w.text("analysis/partisanship.md", &t.to_markdown())?;
        w.json("analysis/partisanship.json", &serde_json::json!({ "topics": part }))?;

        if preds
            .tweets
            .iter()
            .any(|t| t.gold_mf.is_some() || t.entities.iter().any(|e| e.gold_role.is_some()))
        {
            w.json("analysis/errors.json", &error_taxonomy(&preds))?;
        }

        let top = top_entities_per_role(&preds, &a.top_entities);
        let t = top_entities_rows(&top);
        w.text("analysis/top_entities.tsv", &t.to_tsv()?)?;
        w.text("analysis/top_entities.md", &t.to_markdown())?;
        w.json("analysis/top_entities.json", &serde_json::json!({ "roles": top }))?;

        for mf in MoralFoundation::ALL {
            for ideo in [Ideology::Left, Ideology::Right] {
                let g = build_relation_graph(&preds, mf, ideo, &a.graph);
                let stem = format!("analysis/graphs/{}_{}", mf.name(), ideo.name());
                w.text(&format!("{stem}.dot"), &g.to_dot())?;
                w.json(&format!("{stem}.json"), &g)?;
            }
        }

        let freqs = entity_frequencies(&preds);
        let mut t = Table::new(["entity", "mentions"]);
        for (e, c) in &freqs {
            t.push([e.clone(), c.to_string()]);
        }
        w.text("analysis/entity_frequencies.tsv", &t.to_tsv()?)?;

        let entities: Vec<String> = if a.entities.is_empty() {
            freqs.iter().take(a.frequent_entities).map(|(e, _)| e.clone()).collect()
        } else {
            a.entities.iter().map(|e| entity_key(e)).collect()
        };
        let mut dist = Table::new(["entity", "ideology", "role", "fraction"]);
        let mut pol = Table::new(["entity", "ideology", "role", "polarity", "count", "score"]);
        for e in &entities {
            for ideo in [Ideology::Left, Ideology::Right] {
                for (r, f) in role_distribution(&preds, e, ideo) {
                    dist.push([e.clone(), ideo.name().to_string(), r.label().to_string(), fmt_f64(f)]);
                }
            }
            pol.rows
                .extend(crate::analysis::polarity_rows(e, &polarity_rank(&preds, e, a.polarity_min_count)).rows);
        }
        w.text("analysis/distributions.tsv", &dist.to_tsv()?)?;
        w.text("analysis/polarity.csv", &pol.to_csv()?)?;
        Ok(RunSummary {
            command: "analyze",
            nonconverged: 0,
            artifacts: w.finish("analyze")?,
        })
    }

    /// PMI lexicon (merged with the MFD when given) and the lexicon-matching baseline.
    pub fn lexicon(&self) -> Result<RunSummary> {
        let corpus = self.corpus()?;
        let ls = &self.cfg.lexicon;
        let mut lex = build_pmi_lexicon_from_corpus(&corpus, ls.field, &ls.pmi)?;
        if let Some(m) = &self.cfg.paths.mfd {
            lex = Lexicon::merge(&lex, &load_mfd(m)?);
        }
        let base = lexicon_baseline_predict(&lex, &corpus.instances, self.cfg.seed);

        #[derive(Serialize)]
        struct Row<'a> {
            tweet: &'a str,
            mf: MoralFoundation,
            #[serde(skip_serializing_if = "Option::is_none")]
            gold_mf: Option<MoralFoundation>,
        }
        let mut lines = String::new();
        let mut pairs = Vec::new();
        for (inst, &mf) in corpus.instances.iter().zip(&base.predictions) {
            lines.push_str(&serde_json::to_string(&Row {
                tweet: &inst.id,
                mf,
                gold_mf: inst.gold_mf,
            })?);
            lines.push('\n');
            if let Some(g) = inst.gold_mf {
                pairs.push((g.name().to_string(), mf.name().to_string()));
            }
        }
        let order: Vec<&str> = MoralFoundation::ALL.iter().map(|m| m.name()).collect();
        let mut w = self.writer()?;
        w.text("lexicon.tsv", &lex.to_tsv())?;
        w.text("baseline_predictions.jsonl", &lines)?;
        w.json(
            "baseline_summary.json",
            &serde_json::json!({
                "tweets": corpus.len(),
                "random_fallbacks": base.random_fallbacks,
                "random_fallback_fraction": base.random_fallback_fraction,
                "mf": (!pairs.is_empty()).then(|| crate::learning::task_metrics(&pairs, &order)),
            }),
        )?;
        Ok(RunSummary {
            command: "lexicon",
            nonconverged: 0,
            artifacts: w.finish("lexicon")?,
        })
    }

    /// The ground program in LP format, weighted by the trained parameters
    /// when they exist.
    pub fn ground_program(&self) -> Result<GroundProgram> {
        let corpus = self.corpus()?;
        let priors = self.priors(&corpus)?;
        let program = self.program()?;
        let params = if self.params_path().exists() {
            Some(self.load_params()?)
        } else {
            None
        };
        ground(&program, &corpus, &priors, params.as_ref(), &self.cfg.inference.ground)
    }

    pub fn ground_lp(&self) -> Result<String> {
        let gp = self.ground_program()?;
        let mut s = self.stamp.header(Path::new("ground.lp"))?;
        s.push_str(&gp.to_lp());
        Ok(s)
    }
}

/// Write a synthetic corpus, matching priors and a config that points at
/// them into `dir`. Returns the config path.
pub fn write_demo(dir: &Path, synth: &crate::synthetic::SyntheticConfig, prior_noise: f64) -> Result<PathBuf> {
    let synth = crate::synthetic::SyntheticConfig {
        mention_entities: true,
        ..synth.clone()
    };
    let corpus = crate::synthetic::generate(&synth)?;
    let priors = crate::synthetic::synthetic_priors(&corpus, prior_noise, synth.seed);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let put = |name: &str, body: &str| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    put("corpus.jsonl", &crate::kb::corpus_to_jsonl(&corpus.instances)?)?;
    put("priors.tsv", &priors.to_tsv())?;
    let config = format!(
        "seed = {seed}\nfolds = 3\n\n[paths]\ncorpus = \"corpus.jsonl\"\npriors = \"priors.tsv\"\noutput = \"out\"\n\n\
         [train]\nalgorithm = \"local_only\"\nepochs = 10\n\n[train.feature_families]\nlexicon = false\n\n\
         [analysis]\npolarity_min_count = 2\n\n[analysis.graph]\nmin_count = 2\n",
        seed = synth.seed
    );
    put("config.toml", &config)?;
    Ok(dir.join("config.toml"))
}
