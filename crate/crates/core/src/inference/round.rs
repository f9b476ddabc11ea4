use super::{map_branch_and_bound, Assignment, Problem, Sense, FEAS_TOL};
use crate::error::{Error, Result};

const REPAIR_NODE_CAP: usize = 200_000;

/// Group argmax (first label on ties), ungrouped atoms thresholded at 0.5.
fn argmax(p: &Problem, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; p.num_vars];
    for v in p.free_vars() {
        y[v] = f64::from(u8::from(x[v] >= 0.5));
    }
    for g in &p.groups {
        y[g[best_first(g, x)[0]]] = 1.0;
    }
    y
}

/// Positions in `g` ordered by relaxed value, descending; ties by position.
fn best_first(g: &[usize], x: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| x[g[b]].total_cmp(&x[g[a]]).then(a.cmp(&b)));
    order
}

/// Discretize a relaxed assignment.
///
/// Each exactly-one group takes its largest relaxed value. If that breaks a
/// hard constraint the groups are re-decided in order (MF groups come first
/// in ground programs) with backtracking, trying labels by relaxed value and
/// checking every constraint as soon as all of its atoms are decided.
pub fn round_assignment(relaxed: &Assignment, p: &Problem) -> Result<Assignment> {
    let x = &relaxed.values;
    let y = argmax(p, x);
    if p.is_feasible(&y) {
        return Ok(Assignment::exact(p, y, relaxed.stats));
    }
    if let Some(y) = repair(p, x) {
        return Ok(Assignment::exact(p, y, relaxed.stats));
    }
    // Fall back to the exact constrained argmax of the relaxed values.
    let mut q = p.clone();
    q.linear = x.clone();
    q.constant = 0.0;
    q.hinges.clear();
    match map_branch_and_bound(&q) {
        Ok(a) => Ok(Assignment::exact(p, a.values, relaxed.stats)),
        Err(Error::Infeasible { violated }) => Err(Error::Solver(format!(
            "rounding could not restore feasibility (violated: {})",
            violated.join(", ")
        ))),
        Err(e) => Err(e),
    }
}

fn repair(p: &Problem, x: &[f64]) -> Option<Vec<f64>> {
    let free = p.free_vars();
    // decision order: groups, then free atoms
    let decisions: Vec<Vec<usize>> = p.groups.iter().cloned().chain(free.iter().map(|&v| vec![v])).collect();
    let mut decided_at = vec![usize::MAX; p.num_vars];
    for (d, vars) in decisions.iter().enumerate() {
        for &v in vars {
            decided_at[v] = d;
        }
    }
    // constraints become checkable once their last atom is decided
    let mut checks: Vec<Vec<usize>> = vec![Vec::new(); decisions.len()];
    for (j, c) in p.constraints.iter().enumerate() {
        if let Some(last) = c.coeffs.iter().map(|&(v, _)| decided_at[v]).max() {
            checks[last].push(j);
        }
    }
    let options: Vec<Vec<Vec<f64>>> = decisions
        .iter()
        .enumerate()
        .map(|(d, vars)| {
            if d < p.groups.len() {
                best_first(vars, x)
                    .into_iter()
                    .map(|k| (0..vars.len()).map(|i| f64::from(u8::from(i == k))).collect())
                    .collect()
            } else {
                let one = x[vars[0]] >= 0.5;
                vec![vec![f64::from(u8::from(one))], vec![f64::from(u8::from(!one))]]
            }
        })
        .collect();
    let mut y = vec![0.0; p.num_vars];
    let mut choice = vec![0usize; decisions.len()];
    let mut d = 0usize;
    let mut nodes = 0usize;
    let ok = |y: &[f64], d: usize| {
        checks[d].iter().all(|&j| {
            let c = &p.constraints[j];
            match c.sense {
                Sense::Le => c.lhs(y) <= FEAS_TOL,
                Sense::Eq => c.lhs(y).abs() <= FEAS_TOL,
            }
        })
    };
    while d < decisions.len() {
        nodes += 1;
        if nodes > REPAIR_NODE_CAP {
            return None;
        }
        if choice[d] >= options[d].len() {
            choice[d] = 0;
            if d == 0 {
                return None;
            }
            d -= 1;
            choice[d] += 1;
            continue;
        }
        for (&v, &val) in decisions[d].iter().zip(&options[d][choice[d]]) {
            y[v] = val;
        }
        if ok(&y, d) {
            d += 1;
        } else {
            choice[d] += 1;
        }
    }
    Some(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{LinearConstraint, SolveStats};

    fn relaxed(values: Vec<f64>) -> Assignment {
        Assignment {
            values,
            objective: 0.0,
            integral: false,
            stats: SolveStats::default(),
            trace: Vec::new(),
        }
    }

    #[test]
    fn argmax_and_ties() {
        let mut p = Problem::new(5);
        p.add_group((0..5).collect(), "mf");
        let a = round_assignment(&relaxed(vec![0.6, 0.4, 0.0, 0.0, 0.0]), &p).unwrap();
        assert_eq!(a.values[0], 1.0);
        let mut q = Problem::new(2);
        q.add_group(vec![0, 1], "g");
        let b = round_assignment(&relaxed(vec![0.5, 0.5]), &q).unwrap();
        assert_eq!(b.values, vec![1.0, 0.0]);
    }

    #[test]
    fn repairs_broken_implication() {
        // mf group {0,1}, role group {2,3}; role 2 requires mf 1
        let mut p = Problem::new(4);
        p.add_group(vec![0, 1], "mf");
        p.add_group(vec![2, 3], "role");
        p.constraints.push(LinearConstraint {
            coeffs: vec![(2, 1.0), (1, -1.0)],
            constant: 0.0,
            sense: Sense::Le,
            origin: "c1".into(),
        });
        p.constraints.push(LinearConstraint {
            coeffs: vec![(3, 1.0), (0, -1.0)],
            constant: 0.0,
            sense: Sense::Le,
            origin: "c1".into(),
        });
        let a = round_assignment(&relaxed(vec![0.6, 0.4, 0.9, 0.1]), &p).unwrap();
        assert!(p.is_feasible(&a.values));
        // MF decided first keeps its argmax; role adapts
        assert_eq!(a.values, vec![1.0, 0.0, 0.0, 1.0]);
    }
}
