//! Branch-and-bound MAP with LP relaxation bounds.
//!
//! Phase one finds the optimal value `M`. Phase two walks the tie-break order,
//! fixing each decision to its most preferred value for which some completion
//! still reaches `M − ε`, so the result matches exhaustive enumeration.

use std::collections::BTreeMap;

use microlp::{ComparisonOp, OptimizationDirection, Solution, Variable};

use super::{Assignment, Problem, Sense, SolveStats};
use crate::error::{Error, Result};

/// Tangent points for the lower envelope of squared hinges.
const SQUARE_CUTS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
const INT_TOL: f64 = 1e-7;

fn merged(coeffs: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut m: BTreeMap<usize, f64> = BTreeMap::new();
    for &(i, a) in coeffs {
        *m.entry(i).or_default() += a;
    }
    m.into_iter().filter(|e| e.1 != 0.0).collect()
}

struct Lp {
    xs: Vec<Variable>,
}

impl Lp {
    /// Build the relaxation with only the first `limit` constraints.
    fn build(p: &Problem, limit: usize) -> (microlp::Problem, Lp) {
        Self::build_fixed(p, limit, &vec![None; p.num_vars])
    }

    fn build_fixed(p: &Problem, limit: usize, fixed: &[Option<bool>]) -> (microlp::Problem, Lp) {
        let mut lp = microlp::Problem::new(OptimizationDirection::Maximize);
        let xs: Vec<Variable> = p
            .linear
            .iter()
            .zip(fixed)
            .map(|(&c, f)| {
                let b = match f {
                    Some(v) => (f64::from(u8::from(*v)), f64::from(u8::from(*v))),
                    None => (0.0, 1.0),
                };
                lp.add_var(c, b)
            })
            .collect();
        for h in &p.hinges {
            let terms = merged(&h.coeffs);
            if h.weight == 0.0 {
                continue;
            }
            let z = lp.add_var(-h.weight, (0.0, f64::INFINITY));
            let cuts: &[f64] = if h.power == 2 { &SQUARE_CUTS } else { &[0.5] };
            for &alpha in cuts {
                // power 1: z >= l; power 2: z >= 2αl − α²
                let (slope, offset) = if h.power == 2 {
                    (2.0 * alpha, alpha * alpha)
                } else {
                    (1.0, 0.0)
                };
                let mut row: Vec<(Variable, f64)> = vec![(z, 1.0)];
                row.extend(terms.iter().map(|&(i, a)| (xs[i], -slope * a)));
                lp.add_constraint(row.as_slice(), ComparisonOp::Ge, slope * h.constant - offset);
            }
        }
        for c in p.constraints.iter().take(limit) {
            let terms: Vec<(Variable, f64)> = merged(&c.coeffs).into_iter().map(|(i, a)| (xs[i], a)).collect();
            let op = match c.sense {
                Sense::Le => ComparisonOp::Le,
                Sense::Eq => ComparisonOp::Eq,
            };
            if terms.is_empty() {
                continue;
            }
            lp.add_constraint(terms.as_slice(), op, -c.constant);
        }
        (lp, Lp { xs })
    }
}

fn solve_lp(lp: &microlp::Problem) -> Result<Option<Solution>> {
    match lp.solve() {
        Ok(out) => out
            .into_solution()
            .map(Some)
            .map_err(|_| Error::Solver("LP solve interrupted".into())),
        Err(microlp::Error::Infeasible) => Ok(None),
        Err(e) => Err(Error::Solver(format!("LP relaxation: {e}"))),
    }
}

fn warm_fix(sol: &Solution, x: Variable, v: f64) -> Result<Option<Solution>> {
    match sol.clone().fix_var(x, v) {
        Ok(out) => out
            .into_solution()
            .map(Some)
            .map_err(|_| Error::Solver("LP solve interrupted".into())),
        Err(microlp::Error::Infeasible) => Ok(None),
        Err(e) => Err(Error::Solver(format!("LP relaxation: {e}"))),
    }
}

/// Fix `x_v = val` on top of `fixed`. A warm-start infeasibility verdict is
/// confirmed by a cold solve, since the dual simplex can report degenerate
/// fixings as infeasible.
fn fix(
    p: &Problem,
    sol: &Solution,
    xs: &[Variable],
    fixed: &[Option<bool>],
    v: usize,
    val: bool,
) -> Result<Option<Solution>> {
    if let Some(s) = warm_fix(sol, xs[v], f64::from(u8::from(val)))? {
        return Ok(Some(s));
    }
    let mut all = fixed.to_vec();
    all[v] = Some(val);
    let (lp, cold) = Lp::build_fixed(p, p.constraints.len(), &all);
    // variable handles are positional, so the cold solution lines up with `xs`
    debug_assert_eq!(cold.xs.len(), xs.len());
    solve_lp(&lp)
}

struct Search<'a> {
    p: &'a Problem,
    lp: Lp,
    group_of: Vec<Option<usize>>,
    stats: SolveStats,
}

struct Node {
    sol: Solution,
    fixed: Vec<Option<bool>>,
}

impl<'a> Search<'a> {
    fn values(&self, sol: &Solution) -> Vec<f64> {
        self.lp.xs.iter().map(|&x| sol.var_value(x).clamp(0.0, 1.0)).collect()
    }

    fn bound(&self, sol: &Solution) -> f64 {
        sol.objective() + self.p.constant
    }

    /// Integral point nearest to `x` that respects the fixings and groups.
    fn round(&self, x: &[f64], fixed: &[Option<bool>]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for g in &self.p.groups {
            let pick = g
                .iter()
                .copied()
                .find(|&v| fixed[v] == Some(true))
                .or_else(|| {
                    let mut best: Option<usize> = None;
                    for &v in g {
                        if fixed[v] == Some(false) {
                            continue;
                        }
                        if best.is_none_or(|b| x[v] > x[b]) {
                            best = Some(v);
                        }
                    }
                    best
                })
                .unwrap_or(g[0]);
            y[pick] = 1.0;
        }
        for v in 0..x.len() {
            if self.group_of[v].is_none() {
                y[v] = match fixed[v] {
                    Some(b) => f64::from(u8::from(b)),
                    None => f64::from(u8::from(x[v] >= 0.5)),
                };
            }
        }
        y
    }

    fn branch_var(&self, x: &[f64], fixed: &[Option<bool>]) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for v in 0..x.len() {
            if fixed[v].is_some() {
                continue;
            }
            let frac = (x[v] - x[v].round()).abs();
            if frac > INT_TOL && best.is_none_or(|(f, _)| frac > f + 1e-12) {
                best = Some((frac, v));
            }
        }
        best.map(|b| b.1)
    }

    fn children(&mut self, node: &Node, v: usize) -> Result<Vec<Node>> {
        let mut out = Vec::with_capacity(2);
        // pushed 0 first so the 1-branch is explored first
        for val in [false, true] {
            self.stats.lp_solves += 1;
            if let Some(sol) = fix(self.p, &node.sol, &self.lp.xs, &node.fixed, v, val)? {
                let mut fixed = node.fixed.clone();
                fixed[v] = Some(val);
                out.push(Node { sol, fixed });
            }
        }
        Ok(out)
    }

    /// Maximum objective over integral feasible points under the node's fixings.
    fn maximize(&mut self, root: Node, tol: f64) -> Result<Option<(f64, Vec<f64>)>> {
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut stack = vec![root];
        while let Some(node) = stack.pop() {
            self.stats.nodes += 1;
            let bound = self.bound(&node.sol);
            if best.as_ref().is_some_and(|b| bound <= b.0 + tol) {
                continue;
            }
            let x = self.values(&node.sol);
            let y = self.round(&x, &node.fixed);
            let fy = if self.p.is_feasible(&y) {
                Some(self.p.objective(&y))
            } else {
                None
            };
            if let Some(f) = fy {
                if best.as_ref().is_none_or(|b| f > b.0) {
                    best = Some((f, y.clone()));
                }
            }
            let v = match self.branch_var(&x, &node.fixed) {
                Some(v) => v,
                None => {
                    // integral relaxation: done unless the squared-hinge envelope is loose
                    if fy.is_some_and(|f| f >= bound - tol) {
                        continue;
                    }
                    match node.fixed.iter().position(Option::is_none) {
                        Some(v) => v,
                        None => continue,
                    }
                }
            };
            stack.extend(self.children(&node, v)?);
        }
        Ok(best)
    }

    /// Some integral feasible point with objective `>= threshold` under the fixings.
    fn reach(&mut self, root: Node, threshold: f64, slack: f64) -> Result<Option<Vec<f64>>> {
        let mut stack = vec![root];
        while let Some(node) = stack.pop() {
            self.stats.nodes += 1;
            if self.bound(&node.sol) < threshold - slack {
                continue;
            }
            let x = self.values(&node.sol);
            let y = self.round(&x, &node.fixed);
            if self.p.is_feasible(&y) && self.p.objective(&y) >= threshold {
                return Ok(Some(y));
            }
            let v = match self
                .branch_var(&x, &node.fixed)
                .or_else(|| node.fixed.iter().position(Option::is_none))
            {
                Some(v) => v,
                None => continue,
            };
            stack.extend(self.children(&node, v)?);
        }
        Ok(None)
    }
}

fn infeasible_core(p: &Problem) -> Result<Vec<usize>> {
    // smallest prefix of constraints whose relaxation is infeasible
    let (mut lo, mut hi) = (0usize, p.constraints.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        let (lp, _) = Lp::build(p, mid + 1);
        if solve_lp(&lp)?.is_none() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(vec![lo.min(p.constraints.len().saturating_sub(1))])
}

/// Exact integral MAP by LP-based branch and bound.
pub fn map_branch_and_bound(p: &Problem) -> Result<Assignment> {
    p.validate()?;
    p.check_hinge_weights()?;
    let constant_bad: Vec<usize> = (0..p.constraints.len())
        .filter(|&j| {
            p.constraints[j].coeffs.iter().all(|c| c.1 == 0.0)
                && p.constraints[j].violation(&vec![0.0; p.num_vars]) > super::FEAS_TOL
        })
        .collect();
    if !constant_bad.is_empty() {
        return Err(Error::Infeasible {
            violated: p.constraint_names(&constant_bad),
        });
    }
    let (lp, handles) = Lp::build(p, p.constraints.len());
    let mut s = Search {
        p,
        lp: handles,
        group_of: p.group_of(),
        stats: SolveStats {
            converged: true,
            lp_solves: 1,
            ..Default::default()
        },
    };
    let Some(root) = solve_lp(&lp)? else {
        return Err(Error::Infeasible {
            violated: p.constraint_names(&infeasible_core(p)?),
        });
    };
    let scale = p.scale();
    let n = p.num_vars;
    let root_node = || Node {
        sol: root.clone(),
        fixed: vec![None; n],
    };
    let Some((best, mut incumbent)) = s.maximize(root_node(), 1e-9 * scale)? else {
        let x = s.values(&root);
        let y = s.round(&x, &vec![None; n]);
        return Err(Error::Infeasible {
            violated: p.constraint_names(&p.violated(&y, super::FEAS_TOL)),
        });
    };

    // Phase two: lexicographic preference under the optimal value.
    let threshold = best - p.tie_eps();
    let slack = 1e-7 * scale + 1e-9;
    let mut committed = root_node();
    let commit = |s: &mut Search, node: &mut Node, v: usize, val: bool| -> Result<()> {
        s.stats.lp_solves += 1;
        let sol = fix(s.p, &node.sol, &s.lp.xs, &node.fixed, v, val)?
            .ok_or_else(|| Error::Solver("branch-and-bound lost feasibility while fixing the tie-break".into()))?;
        node.sol = sol;
        node.fixed[v] = Some(val);
        Ok(())
    };
    for g in 0..p.groups.len() {
        let vars = p.groups[g].clone();
        let current = vars
            .iter()
            .position(|&v| incumbent[v] > 0.5)
            .expect("one label per group");
        let mut chosen = current;
        for (j, &v) in vars.iter().enumerate().take(current) {
            s.stats.lp_solves += 1;
            let Some(sol) = fix(p, &committed.sol, &s.lp.xs, &committed.fixed, v, true)? else {
                continue;
            };
            let mut fixed = committed.fixed.clone();
            fixed[v] = Some(true);
            if let Some(y) = s.reach(Node { sol, fixed }, threshold, slack)? {
                incumbent = y;
                chosen = j;
                break;
            }
        }
        commit(&mut s, &mut committed, vars[chosen], true)?;
    }
    for v in p.free_vars() {
        if incumbent[v] > 0.5 {
            s.stats.lp_solves += 1;
            if let Some(sol) = fix(p, &committed.sol, &s.lp.xs, &committed.fixed, v, false)? {
                let mut fixed = committed.fixed.clone();
                fixed[v] = Some(false);
                if let Some(y) = s.reach(Node { sol, fixed }, threshold, slack)? {
                    incumbent = y;
                }
            }
        }
        let val = incumbent[v] > 0.5;
        commit(&mut s, &mut committed, v, val)?;
    }
    Ok(Assignment::exact(p, incumbent, s.stats))
}

/// Optimum of the LP relaxation (exact for linear hinges).
pub fn lp_relaxation(p: &Problem) -> Result<Assignment> {
    p.validate()?;
    p.check_hinge_weights()?;
    let (lp, h) = Lp::build(p, p.constraints.len());
    let sol = solve_lp(&lp)?.ok_or_else(|| Error::Infeasible {
        violated: vec!["LP relaxation infeasible".into()],
    })?;
    let x: Vec<f64> = h.xs.iter().map(|&v| sol.var_value(v).clamp(0.0, 1.0)).collect();
    Ok(Assignment {
        objective: p.objective(&x),
        values: x,
        integral: false,
        stats: SolveStats {
            lp_solves: 1,
            converged: true,
            ..Default::default()
        },
        trace: Vec::new(),
    })
}
