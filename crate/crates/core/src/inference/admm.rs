//! Consensus ADMM for the continuous relaxation.
//!
//! Minimizes the energy `Σ_k w_k ψ_k(y) − Σ_i c_i y_i` over `y ∈ [0,1]ⁿ`
//! subject to the hard constraints. Every hinge and constraint keeps a local
//! copy of its variables; the consensus step averages copies and applies the
//! linear terms and box bounds.

use serde::{Deserialize, Serialize};

use super::{Assignment, Problem, Sense, SolveStats};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    /// Penalty parameter η.
    pub step: f64,
    pub max_iter: usize,
    pub eps_primal: f64,
    pub eps_dual: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            step: 1.0,
            max_iter: 20_000,
            eps_primal: 1e-7,
            eps_dual: 1e-7,
        }
    }
}

enum Kind {
    Hinge { weight: f64, power: u8 },
    Le,
    Eq,
}

struct Block {
    kind: Kind,
    vars: Vec<usize>,
    coef: Vec<f64>,
    constant: f64,
    norm2: f64,
    x: Vec<f64>,
    u: Vec<f64>,
}

impl Block {
    /// Proximal step on `v = z − u`.
    fn update(&mut self, z: &[f64], eta: f64) {
        let v: Vec<f64> = self.vars.iter().zip(&self.u).map(|(&i, u)| z[i] - u).collect();
        let lin = |x: &[f64]| self.constant + self.coef.iter().zip(x).map(|(a, x)| a * x).sum::<f64>();
        let l = lin(&v);
        let project = |x: &mut Vec<f64>, l: f64, norm2: f64, coef: &[f64]| {
            let t = l / norm2;
            for (xi, a) in x.iter_mut().zip(coef) {
                *xi -= t * a;
            }
        };
        let mut x = v.clone();
        match self.kind {
            Kind::Le => {
                if l > 0.0 && self.norm2 > 0.0 {
                    project(&mut x, l, self.norm2, &self.coef);
                }
            }
            Kind::Eq => {
                if self.norm2 > 0.0 {
                    project(&mut x, l, self.norm2, &self.coef);
                }
            }
            Kind::Hinge { weight, power } => {
                if l > 0.0 && weight > 0.0 && self.norm2 > 0.0 {
                    if power == 2 {
                        let t = 2.0 * weight * l / (eta + 2.0 * weight * self.norm2);
                        for (xi, a) in x.iter_mut().zip(&self.coef) {
                            *xi -= t * a;
                        }
                    } else {
                        let step = weight / eta;
                        for (xi, a) in x.iter_mut().zip(&self.coef) {
                            *xi -= step * a;
                        }
                        if lin(&x) < 0.0 {
                            x = v.clone();
                            project(&mut x, l, self.norm2, &self.coef);
                        }
                    }
                }
            }
        }
        self.x = x;
    }
}

/// Energy minimized by ADMM: the negated MAP objective.
pub fn energy(p: &Problem, y: &[f64]) -> f64 {
    -p.objective(y)
}

/// Relaxed MAP by consensus ADMM. Returns the final iterate; `stats.converged`
/// is false when the iteration limit was hit first.
pub fn map_admm(p: &Problem, cfg: &AdmmConfig) -> Result<Assignment> {
    p.validate()?;
    p.check_hinge_weights()?;
    let n = p.num_vars;
    let eta = cfg.step;
    let mut blocks: Vec<Block> = Vec::new();
    let mut push = |kind: Kind, coeffs: &[(usize, f64)], constant: f64| {
        let mut m: std::collections::BTreeMap<usize, f64> = Default::default();
        for &(i, a) in coeffs {
            *m.entry(i).or_default() += a;
        }
        let (vars, coef): (Vec<usize>, Vec<f64>) = m.into_iter().filter(|e| e.1 != 0.0).unzip();
        if vars.is_empty() {
            return;
        }
        let norm2 = coef.iter().map(|a| a * a).sum();
        let k = vars.len();
        blocks.push(Block {
            kind,
            vars,
            coef,
            constant,
            norm2,
            x: vec![0.0; k],
            u: vec![0.0; k],
        });
    };
    for h in &p.hinges {
        if h.weight > 0.0 {
            push(
                Kind::Hinge {
                    weight: h.weight,
                    power: h.power,
                },
                &h.coeffs,
                h.constant,
            );
        }
    }
    for c in &p.constraints {
        let kind = match c.sense {
            Sense::Le => Kind::Le,
            Sense::Eq => Kind::Eq,
        };
        push(kind, &c.coeffs, c.constant);
    }
    let mut copies = vec![0usize; n];
    for b in &blocks {
        for &i in &b.vars {
            copies[i] += 1;
        }
    }
    let total_copies: usize = copies.iter().sum();
    let consensus = |blocks: &[Block], out: &mut [f64]| {
        let mut acc = vec![0.0; n];
        for b in blocks {
            for ((&i, x), u) in b.vars.iter().zip(&b.x).zip(&b.u) {
                acc[i] += x + u;
            }
        }
        for i in 0..n {
            out[i] = if copies[i] == 0 {
                if p.linear[i] > 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                ((acc[i] + p.linear[i] / eta) / copies[i] as f64).clamp(0.0, 1.0)
            };
        }
    };

    let mut z = vec![0.0; n];
    for b in &mut blocks {
        b.x = b.vars.iter().map(|&i| z[i]).collect();
    }
    consensus(&blocks, &mut z);
    let mut trace = vec![energy(p, &z)];
    let mut z_new = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;
    let tol_scale = (total_copies.max(1) as f64).sqrt();
    while iterations < cfg.max_iter {
        iterations += 1;
        for b in &mut blocks {
            b.update(&z, eta);
        }
        consensus(&blocks, &mut z_new);
        let mut primal = 0.0;
        for b in &mut blocks {
            for ((&i, x), u) in b.vars.iter().zip(&b.x).zip(b.u.iter_mut()) {
                let r = x - z_new[i];
                *u += r;
                primal += r * r;
            }
        }
        let dual: f64 = (0..n)
            .map(|i| copies[i] as f64 * (z_new[i] - z[i]).powi(2))
            .sum::<f64>()
            .sqrt()
            * eta;
        std::mem::swap(&mut z, &mut z_new);
        trace.push(energy(p, &z));
        if primal.sqrt() < cfg.eps_primal * tol_scale && dual < cfg.eps_dual * tol_scale {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("ADMM stopped after {iterations} iterations without converging");
    }
    Ok(Assignment {
        objective: p.objective(&z),
        values: z,
        integral: false,
        stats: SolveStats {
            iterations,
            converged,
            ..Default::default()
        },
        trace,
    })
}
