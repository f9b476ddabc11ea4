//! MAP inference over ground programs.
//!
//! A [`Problem`] is the objective
//!
//! ```text
//! maximize  constant + Σ_i c_i y_i − Σ_k w_k · max(a_k·y + b_k, 0)^ρ_k
//! subject to a_j·y + b_j ≤ 0  or  = 0,   y ∈ {0,1}ⁿ (exact) or [0,1]ⁿ (relaxed)
//! ```
//!
//! Exact solvers break ties by preferring, in order, the earliest label of each
//! exactly-one group and then 0 for every atom outside a group.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod admm;
mod bnb;
mod enumerate;
mod round;

pub use admm::{map_admm, AdmmConfig};
pub use bnb::{lp_relaxation, map_branch_and_bound};
pub use enumerate::map_enumerate;
pub use round::round_assignment;

/// Feasibility tolerance for hard constraints.
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Le,
    Eq,
}

/// `Σ coeffs·y + constant (≤ | =) 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
    pub sense: Sense,
    /// Human-readable origin, used in infeasibility reports.
    pub origin: String,
}

impl LinearConstraint {
    pub fn lhs(&self, y: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().map(|&(i, a)| a * y[i]).sum::<f64>()
    }

    /// Amount by which `y` violates the constraint (0 when satisfied).
    pub fn violation(&self, y: &[f64]) -> f64 {
        let v = self.lhs(y);
        match self.sense {
            Sense::Le => v.max(0.0),
            Sense::Eq => v.abs(),
        }
    }
}

/// Weighted hinge `w · max(a·y + b, 0)^power`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hinge {
    pub weight: f64,
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
    pub power: u8,
}

impl Hinge {
    pub fn distance(&self, y: &[f64]) -> f64 {
        (self.constant + self.coeffs.iter().map(|&(i, a)| a * y[i]).sum::<f64>()).max(0.0)
    }

    pub fn potential(&self, y: &[f64]) -> f64 {
        let d = self.distance(y);
        if self.power == 2 {
            d * d
        } else {
            d
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub num_vars: usize,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub hinges: Vec<Hinge>,
    pub constraints: Vec<LinearConstraint>,
    /// Disjoint exactly-one groups, in tie-break order. Their equalities must
    /// also be present in `constraints`.
    pub groups: Vec<Vec<usize>>,
    pub names: Vec<String>,
}

impl Problem {
    pub fn new(num_vars: usize) -> Self {
        Problem {
            num_vars,
            linear: vec![0.0; num_vars],
            ..Default::default()
        }
    }

    /// Add an exactly-one group together with its equality constraint.
    pub fn add_group(&mut self, vars: Vec<usize>, origin: &str) {
        self.constraints.push(LinearConstraint {
            coeffs: vars.iter().map(|&v| (v, 1.0)).collect(),
            constant: -1.0,
            sense: Sense::Eq,
            origin: origin.to_string(),
        });
        self.groups.push(vars);
    }

    pub fn validate(&self) -> Result<()> {
        if self.linear.len() != self.num_vars {
            return Err(Error::Solver("linear term length differs from variable count".into()));
        }
        let mut seen = vec![false; self.num_vars];
        for g in &self.groups {
            if g.is_empty() {
                return Err(Error::Solver("empty exactly-one group".into()));
            }
            for &v in g {
                if v >= self.num_vars || seen[v] {
                    return Err(Error::Solver(format!("variable {v} is out of range or in two groups")));
                }
                seen[v] = true;
            }
        }
        let in_range = |c: &[(usize, f64)]| c.iter().all(|&(i, a)| i < self.num_vars && a.is_finite());
        for (k, h) in self.hinges.iter().enumerate() {
            if !in_range(&h.coeffs) || !h.constant.is_finite() || !h.weight.is_finite() {
                return Err(Error::Solver(format!("hinge {k} is malformed")));
            }
            if h.power != 1 && h.power != 2 {
                return Err(Error::Solver(format!(
                    "hinge {k} has exponent {} (expected 1 or 2)",
                    h.power
                )));
            }
        }
        for c in &self.constraints {
            if !in_range(&c.coeffs) || !c.constant.is_finite() {
                return Err(Error::Solver(format!("constraint `{}` is malformed", c.origin)));
            }
        }
        if self.linear.iter().any(|c| !c.is_finite()) || !self.constant.is_finite() {
            return Err(Error::Solver("non-finite objective coefficient".into()));
        }
        Ok(())
    }

    pub fn check_hinge_weights(&self) -> Result<()> {
        match self.hinges.iter().position(|h| h.weight < 0.0) {
            Some(index) => Err(Error::NegativeWeight {
                index,
                weight: self.hinges[index].weight,
            }),
            None => Ok(()),
        }
    }

    pub fn objective(&self, y: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(y).map(|(c, v)| c * v).sum();
        let pen: f64 = self.hinges.iter().map(|h| h.weight * h.potential(y)).sum();
        self.constant + lin - pen
    }

    /// Indices of constraints violated beyond `tol`.
    pub fn violated(&self, y: &[f64], tol: f64) -> Vec<usize> {
        (0..self.constraints.len())
            .filter(|&j| self.constraints[j].violation(y) > tol)
            .collect()
    }

    pub fn is_feasible(&self, y: &[f64]) -> bool {
        self.constraints.iter().all(|c| c.violation(y) <= FEAS_TOL)
    }

    /// Magnitude of the objective; tie tolerances are relative to it so the
    /// argmax is invariant under positive rescaling of all weights.
    pub fn scale(&self) -> f64 {
        let lin: f64 = self.linear.iter().map(|c| c.abs()).sum::<f64>() + self.constant.abs();
        let hin: f64 = self
            .hinges
            .iter()
            .map(|h| {
                let span = h.constant.abs() + h.coeffs.iter().map(|c| c.1.abs()).sum::<f64>();
                h.weight.abs() * if h.power == 2 { span * span } else { span }
            })
            .sum();
        lin + hin
    }

    pub fn tie_eps(&self) -> f64 {
        1e-12 * self.scale()
    }

    /// Group index of each variable.
    pub fn group_of(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.num_vars];
        for (g, vars) in self.groups.iter().enumerate() {
            for &v in vars {
                out[v] = Some(g);
            }
        }
        out
    }

    /// Variables outside every group, ascending.
    pub fn free_vars(&self) -> Vec<usize> {
        let g = self.group_of();
        (0..self.num_vars).filter(|&v| g[v].is_none()).collect()
    }

    pub fn constraint_names(&self, idx: &[usize]) -> Vec<String> {
        idx.iter()
            .map(|&j| format!("#{j} {}", self.constraints[j].origin))
            .collect()
    }

    /// Hamming loss augmentation: `+1` for each atom that differs from `gold`.
    pub fn loss_augmented(&self, gold: &[f64]) -> Problem {
        let mut p = self.clone();
        for (i, &g) in gold.iter().enumerate() {
            if g > 0.5 {
                p.linear[i] -= 1.0;
                p.constant += 1.0;
            } else {
                p.linear[i] += 1.0;
            }
        }
        p
    }

    /// Objective with every weight multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Problem {
        let mut p = self.clone();
        p.constant *= alpha;
        p.linear.iter_mut().for_each(|c| *c *= alpha);
        p.hinges.iter_mut().for_each(|h| h.weight *= alpha);
        p
    }
}

/// Hamming distance between two integral assignments.
pub fn hamming(a: &[f64], b: &[f64]) -> usize {
    a.iter().zip(b).filter(|(x, y)| (**x > 0.5) != (**y > 0.5)).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    Enumerate,
    BranchAndBound,
    Admm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundingPolicy {
    /// Argmax per exactly-one group with constrained repair.
    GroupArgmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Earliest label per group, then 0 for ungrouped atoms.
    FirstLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub mode: SolverMode,
    pub enumeration_cap: u64,
    pub admm: AdmmConfig,
    pub rounding: RoundingPolicy,
    pub tie_break: TieBreak,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mode: SolverMode::BranchAndBound,
            enumeration_cap: 1 << 20,
            admm: AdmmConfig::default(),
            rounding: RoundingPolicy::GroupArgmax,
            tie_break: TieBreak::FirstLabel,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.admm;
        if !(a.step > 0.0 && a.eps_primal > 0.0 && a.eps_dual > 0.0) || a.max_iter == 0 {
            return Err(Error::Config(
                "solver.admm: step and tolerances must be > 0, max_iter >= 1".into(),
            ));
        }
        if self.enumeration_cap == 0 {
            return Err(Error::Config("solver.enumeration_cap must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub nodes: usize,
    pub lp_solves: usize,
    pub converged: bool,
}

impl SolveStats {
    pub fn merge(&mut self, o: &SolveStats) {
        self.iterations = self.iterations.max(o.iterations);
        self.nodes += o.nodes;
        self.lp_solves += o.lp_solves;
        self.converged &= o.converged;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub values: Vec<f64>,
    pub objective: f64,
    pub integral: bool,
    pub stats: SolveStats,
    /// Per-iteration objective of the relaxed solver (empty for exact solvers).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

impl Assignment {
    pub fn exact(p: &Problem, values: Vec<f64>, stats: SolveStats) -> Self {
        Assignment {
            objective: p.objective(&values),
            values,
            integral: true,
            stats,
            trace: Vec::new(),
        }
    }

    /// JSON object mapping atom name to value.
    pub fn to_json(&self, names: &[String]) -> serde_json::Value {
        let map = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let k = names.get(i).cloned().unwrap_or_else(|| format!("x{i}"));
                (k, serde_json::json!(v))
            })
            .collect();
        serde_json::Value::Object(map)
    }
}

/// Exact integral MAP with the configured exact solver.
pub fn map_exact(p: &Problem, cfg: &SolverConfig) -> Result<Assignment> {
    match cfg.mode {
        SolverMode::Enumerate => map_enumerate(p, cfg.enumeration_cap),
        _ => map_branch_and_bound(p),
    }
}

/// Integral MAP in the configured mode; ADMM results are rounded.
pub fn solve(p: &Problem, cfg: &SolverConfig) -> Result<Assignment> {
    match cfg.mode {
        SolverMode::Admm => {
            let relaxed = map_admm(p, &cfg.admm)?;
            let mut out = round_assignment(&relaxed, p)?;
            out.stats = relaxed.stats;
            Ok(out)
        }
        _ => map_exact(p, cfg),
    }
}

/// MAP of the Hamming-loss-augmented objective.
pub fn loss_augmented_map(p: &Problem, gold: &[f64], cfg: &SolverConfig) -> Result<Assignment> {
    if !p.is_feasible(gold) {
        return Err(Error::Solver("gold assignment violates a hard constraint".into()));
    }
    let aug = p.loss_augmented(gold);
    let mut a = solve(&aug, cfg)?;
    a.objective = aug.objective(&a.values);
    Ok(a)
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hinge_and_objective() {
        let mut p = Problem::new(2);
        p.linear = vec![0.5, 0.0];
        p.hinges.push(Hinge {
            weight: 2.0,
            coeffs: vec![(0, 1.0), (1, -1.0)],
            constant: 0.0,
            power: 1,
        });
        assert_eq!(p.objective(&[1.0, 0.0]), 0.5 - 2.0);
        assert_eq!(p.objective(&[1.0, 1.0]), 0.5);
        p.hinges[0].power = 2;
        assert_eq!(p.objective(&[0.5, 0.0]), 0.25 - 2.0 * 0.25);
    }

    #[test]
    fn loss_augmentation_is_hamming() {
        let mut p = Problem::new(3);
        p.linear = vec![0.3, -0.2, 0.1];
        let gold = [1.0, 0.0, 1.0];
        let aug = p.loss_augmented(&gold);
        for bits in 0..8u32 {
            let y: Vec<f64> = (0..3).map(|i| f64::from((bits >> i) & 1)).collect();
            let diff = aug.objective(&y) - p.objective(&y);
            assert!((diff - hamming(&y, &gold) as f64).abs() < 1e-12);
        }
        assert_eq!(hamming(&gold, &gold), 0);
    }

    #[test]
    fn negative_hinge_weight_rejected() {
        let mut p = Problem::new(1);
        p.hinges.push(Hinge {
            weight: -1.0,
            coeffs: vec![(0, 1.0)],
            constant: 0.0,
            power: 1,
        });
        assert!(matches!(
            p.check_hinge_weights(),
            Err(Error::NegativeWeight { index: 0, .. })
        ));
    }
}
