use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{GraphConfig, PartisanConfig, TopEntitiesConfig};
use crate::dsl::{CheckedProgram, Template, TemplateClass};
use crate::error::{Error, Result};
use crate::learning::{InferenceConfig, TrainConfig};
use crate::lexicon::{LabelField, PmiConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub priors: Option<PathBuf>,
    /// Lexicon TSV used for the lexicon feature family.
    pub lexicon: Option<PathBuf>,
    pub mfd: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    /// Rule program source; the built-in joint program when absent.
    pub program: Option<PathBuf>,
    /// Parameter store read by `predict`; `<output>/params.json` when absent.
    pub params: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: None,
            priors: None,
            lexicon: None,
            mfd: None,
            aliases: None,
            program: None,
            params: None,
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconSettings {
    pub field: LabelField,
    pub pmi: PmiConfig,
}

impl Default for LexiconSettings {
    fn default() -> Self {
        LexiconSettings {
            field: LabelField::Mf,
            pmi: PmiConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    pub graph: GraphConfig,
    pub partisan: PartisanConfig,
    pub top_entities: TopEntitiesConfig,
    /// Roles seen fewer times than this are left out of polarity ranks.
    pub polarity_min_count: usize,
    /// Entities for distributions and polarity ranks; the most frequent ones when empty.
    pub entities: Vec<String>,
    pub frequent_entities: usize,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            graph: GraphConfig::default(),
            partisan: PartisanConfig::default(),
            top_entities: TopEntitiesConfig::default(),
            polarity_min_count: 10,
            entities: Vec::new(),
            frequent_entities: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleToggle {
    R1,
    R2,
    R3,
    R4,
    Priors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintToggle {
    C1,
    C2,
    C3,
}

/// One ablation row: which rule families and constraints stay in the program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub name: String,
    #[serde(default = "all_rules")]
    pub rules: Vec<RuleToggle>,
    #[serde(default)]
    pub constraints: Vec<ConstraintToggle>,
}

fn all_rules() -> Vec<RuleToggle> {
    vec![
        RuleToggle::R1,
        RuleToggle::R2,
        RuleToggle::R3,
        RuleToggle::R4,
        RuleToggle::Priors,
    ]
}

impl AblationSpec {
    pub fn new(name: &str, constraints: &[ConstraintToggle]) -> Self {
        AblationSpec {
            name: name.to_string(),
            rules: all_rules(),
            constraints: constraints.to_vec(),
        }
    }

    /// The five rows of the standard ablation table.
    pub fn defaults() -> Vec<AblationSpec> {
        use ConstraintToggle::*;
        vec![
            AblationSpec::new("All rules", &[]),
            AblationSpec::new("+c1", &[C1]),
            AblationSpec::new("+c1+c2", &[C1, C2]),
            AblationSpec::new("+c1+c3", &[C1, C3]),
            AblationSpec::new("+All constr", &[C1, C2, C3]),
        ]
    }

    fn keeps(&self, t: &Template) -> bool {
        let rule = |r| self.rules.contains(&r);
        let constraint = |c| self.constraints.contains(&c);
        match t.class {
            TemplateClass::MfText => rule(RuleToggle::R1),
            TemplateClass::RoleText => rule(RuleToggle::R2),
            TemplateClass::MfContext => rule(RuleToggle::R3),
            TemplateClass::RoleContext => rule(RuleToggle::R4),
            TemplateClass::Prior => rule(RuleToggle::Priors),
            TemplateClass::Consistency => constraint(ConstraintToggle::C1),
            TemplateClass::Exclusion => constraint(ConstraintToggle::C2),
            TemplateClass::PolarityCoupling => constraint(ConstraintToggle::C3),
            TemplateClass::Other => true,
        }
    }

    /// The program restricted to this variant. Errors when no scored rule survives.
    pub fn apply(&self, program: &CheckedProgram) -> Result<CheckedProgram> {
        let p = program.filtered(|t| self.keeps(t));
        let scored = p.templates.iter().any(|t| {
            matches!(
                t.class,
                TemplateClass::MfText
                    | TemplateClass::RoleText
                    | TemplateClass::MfContext
                    | TemplateClass::RoleContext
                    | TemplateClass::Prior
            )
        });
        if !scored {
            return Err(Error::Config(format!(
                "ablation `{}` leaves no scored rule enabled",
                self.name
            )));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Drives fold assignment, training and every random fallback.
    pub seed: u64,
    pub folds: usize,
    pub paths: Paths,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub lexicon: LexiconSettings,
    pub analysis: AnalysisSettings,
    /// Ablation rows; the standard five when empty.
    pub ablation: Vec<AblationSpec>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let seed = 13;
        PipelineConfig {
            seed,
            folds: 3,
            paths: Paths::default(),
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            inference: InferenceConfig::default(),
            lexicon: LexiconSettings::default(),
            analysis: AnalysisSettings::default(),
            ablation: Vec::new(),
        }
    }
}

/// Set `dotted.key = value` in a TOML table. The value is parsed as a TOML
/// literal and taken as a bare string when that fails.
fn set_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` has an empty segment")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut table = root;
    for (i, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{}` is not a table", parts[..=i].join("."))))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl PipelineConfig {
    /// Parse TOML, apply `key=value` overrides and validate. Relative paths
    /// stay as written; see [`PipelineConfig::resolve_paths`].
    pub fn from_toml(source: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(source).map_err(|e| Error::Config(format!("config: {e}")))?;
        for o in overrides {
            set_override(&mut table, o)?;
        }
        if table.get("train").and_then(|t| t.get("seed")).is_some() {
            return Err(Error::Config("train.seed: set the top-level `seed` instead".into()));
        }
        let mut cfg: PipelineConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner().message().trim()))
        })?;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&src, overrides)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!(
                "folds: cross-validation needs at least 2 (got {})",
                self.folds
            )));
        }
        self.train.validate()?;
        self.inference.solver.validate()?;
        let mut names = std::collections::BTreeSet::new();
        for a in &self.ablation {
            if !names.insert(a.name.as_str()) {
                return Err(Error::Config(format!("ablation: duplicate variant name `{}`", a.name)));
            }
        }
        Ok(())
    }

    /// Make relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        for q in [
            &mut p.corpus,
            &mut p.priors,
            &mut p.lexicon,
            &mut p.mfd,
            &mut p.aliases,
            &mut p.program,
            &mut p.params,
        ]
        .into_iter()
        .flatten()
        {
            fix(q);
        }
        fix(&mut p.output);
    }

    pub fn ablation_specs(&self) -> Vec<AblationSpec> {
        if self.ablation.is_empty() {
            AblationSpec::defaults()
        } else {
            self.ablation.clone()
        }
    }

    /// SHA-256 over the JSON form of the effective settings. Paths enter as
    /// file names only and the output directory not at all, so moving a run
    /// does not change its hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        let name = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                *q = q.file_name().map(PathBuf::from).unwrap_or_default();
            }
        };
        let p = &mut c.paths;
        for q in [
            &mut p.corpus,
            &mut p.priors,
            &mut p.lexicon,
            &mut p.mfd,
            &mut p.aliases,
            &mut p.program,
            &mut p.params,
        ] {
            name(q);
        }
        p.output = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
