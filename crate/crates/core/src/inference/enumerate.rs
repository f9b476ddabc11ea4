use super::{Assignment, Problem, SolveStats, FEAS_TOL};
use crate::error::{Error, Result};

/// Exhaustive MAP over exactly-one group choices and free atoms.
///
/// Assignments are visited in tie-break order, so the first optimum found
/// (within the tie tolerance) is the one returned.
pub fn map_enumerate(p: &Problem, cap: u64) -> Result<Assignment> {
    p.validate()?;
    let free = p.free_vars();
    let radices: Vec<usize> = p.groups.iter().map(Vec::len).chain(free.iter().map(|_| 2)).collect();
    let needed: f64 = radices.iter().map(|&r| r as f64).product();
    if needed > cap as f64 {
        return Err(Error::EnumerationCap { needed, cap });
    }
    let total = needed as u64;
    let mut digits = vec![0usize; radices.len()];
    let mut y = vec![0.0; p.num_vars];
    let mut scores: Vec<f64> = Vec::with_capacity(total as usize);
    let mut best = f64::NEG_INFINITY;
    let mut least_bad: Option<(usize, f64, Vec<usize>)> = None;

    let fill = |digits: &[usize], y: &mut [f64]| {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (g, vars) in p.groups.iter().enumerate() {
            y[vars[digits[g]]] = 1.0;
        }
        for (k, &v) in free.iter().enumerate() {
            y[v] = digits[p.groups.len() + k] as f64;
        }
    };

    for n in 0..total {
        if n > 0 {
            // odometer: last digit fastest
            let mut pos = radices.len();
            loop {
                pos -= 1;
                digits[pos] += 1;
                if digits[pos] < radices[pos] {
                    break;
                }
                digits[pos] = 0;
            }
        }
        fill(&digits, &mut y);
        let bad = p.violated(&y, FEAS_TOL);
        if bad.is_empty() {
            let f = p.objective(&y);
            best = best.max(f);
            scores.push(f);
        } else {
            scores.push(f64::NAN);
            let total_v: f64 = bad.iter().map(|&j| p.constraints[j].violation(&y)).sum();
            if least_bad
                .as_ref()
                .is_none_or(|(c, t, _)| (bad.len(), total_v) < (*c, *t))
            {
                least_bad = Some((bad.len(), total_v, bad));
            }
        }
    }
    let stats = SolveStats {
        nodes: total as usize,
        converged: true,
        ..Default::default()
    };
    if best == f64::NEG_INFINITY {
        let bad = least_bad.map(|b| b.2).unwrap_or_default();
        return Err(Error::Infeasible {
            violated: p.constraint_names(&bad),
        });
    }
    let threshold = best - p.tie_eps();
    let winner = scores
        .iter()
        .position(|&f| f >= threshold)
        .expect("maximum is attained");
    // decode winner index into digits
    let mut rem = winner as u64;
    for pos in (0..radices.len()).rev() {
        digits[pos] = (rem % radices[pos] as u64) as usize;
        rem /= radices[pos] as u64;
    }
    fill(&digits, &mut y);
    Ok(Assignment::exact(p, y, stats))
}
