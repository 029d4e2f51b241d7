//! Projected limited-memory BFGS with Armijo backtracking.
//!
//! Every trial point is `P(x + t d)` where `P` projects onto the feasible set,
//! and a step is accepted only if it satisfies the sufficient-decrease test
//! `f(x⁺) ≤ f(x) + c₁ ∇f(x)·(x⁺ − x)`. The objective sequence is therefore
//! nonincreasing.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// A smooth objective returning its value and writing its gradient.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    /// Stop when the projected gradient has sup-norm at most this.
    pub grad_tol: f64,
    /// Stop when `(f_k − f_{k+1}) ≤ ftol · max(|f_k|, |f_{k+1}|, 1)`.
    pub ftol: f64,
    pub memory: usize,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-6,
            ftol: 1e-10,
            memory: 10,
            armijo: 1e-4,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value at the start and after every accepted step.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

fn projected_grad_norm(x: &[f64], g: &[f64], project: &impl Fn(&mut [f64])) -> f64 {
    let mut trial: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    project(&mut trial);
    x.iter()
        .zip(&trial)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Two-loop recursion: returns `−H g` for the current curvature pairs.
fn lbfgs_direction(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

pub fn minimize_projected<O: Objective + ?Sized>(
    objective: &O,
    x0: &[f64],
    project: impl Fn(&mut [f64]),
    cfg: &LbfgsConfig,
) -> Result<OptimResult> {
    let n = objective.dim();
    if x0.len() != n {
        return Err(Error::Param(format!(
            "starting point has length {}, objective expects {n}",
            x0.len()
        )));
    }
    let mut x = x0.to_vec();
    project(&mut x);
    let mut g = vec![0.0; n];
    let mut f = objective.value_grad(&x, &mut g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training(format!(
            "objective is not finite at the starting point (value {f})"
        )));
    }
    let mut trace = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut converged = false;
    let mut iterations = 0;
    let mut g_new = vec![0.0; n];

    while iterations < cfg.max_iters {
        if projected_grad_norm(&x, &g, &project) <= cfg.grad_tol {
            converged = true;
            break;
        }
        let mut accepted = None;
        // First try the quasi-Newton direction, then plain steepest descent.
        for attempt in 0..2 {
            let steepest = attempt == 1 || pairs.is_empty();
            let mut d = if steepest {
                g.iter().map(|v| -v).collect()
            } else {
                lbfgs_direction(&g, &pairs)
            };
            if dot(&d, &g) >= 0.0 {
                d = g.iter().map(|v| -v).collect();
            }
            let mut t = if steepest {
                let gnorm = dot(&g, &g).sqrt();
                (1.0 / gnorm).min(1.0)
            } else {
                1.0
            };
            for _ in 0..cfg.max_backtracks {
                let mut trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                project(&mut trial);
                let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                let decrease = dot(&g, &step);
                if decrease >= 0.0 {
                    t *= 0.5;
                    continue;
                }
                let f_trial = objective.value_grad(&trial, &mut g_new);
                if !f_trial.is_finite() || g_new.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Training(format!(
                        "objective became non-finite at iteration {iterations} (step {t:e}, last value {f})"
                    )));
                }
                if f_trial <= f + cfg.armijo * decrease {
                    accepted = Some((trial, step, f_trial));
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() || steepest {
                break;
            }
            pairs.clear();
        }
        let Some((trial, step, f_trial)) = accepted else {
            // No descent step could be found: x is stationary to working precision.
            converged = true;
            break;
        };
        iterations += 1;
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&step, &y);
        if sy > 1e-12 * dot(&step, &step).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((step, y, 1.0 / sy));
        }
        let reduction = f - f_trial;
        x = trial;
        std::mem::swap(&mut g, &mut g_new);
        let scale = f.abs().max(f_trial.abs()).max(1.0);
        f = f_trial;
        trace.push(f);
        if reduction <= cfg.ftol * scale {
            converged = true;
            break;
        }
    }
    Ok(OptimResult {
        x,
        value: f,
        iterations,
        converged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splines::project_ball_in_place;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }
        fn value_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        }
    }

    struct Quadratic(Vec<f64>);

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn value_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
            let mut f = 0.0;
            for (i, (xi, ci)) in x.iter().zip(&self.0).enumerate() {
                g[i] = 2.0 * (xi - ci);
                f += (xi - ci).powi(2);
            }
            f
        }
    }

    #[test]
    fn unconstrained_rosenbrock() {
        let cfg = LbfgsConfig {
            max_iters: 1000,
            grad_tol: 1e-9,
            ftol: 0.0,
            ..Default::default()
        };
        let r = minimize_projected(&Rosenbrock, &[-1.2, 1.0], |_| {}, &cfg).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn ball_constrained_quadratic() {
        // Minimizer of ‖x − c‖² over the unit ball is c/‖c‖.
        let c = vec![3.0, 4.0];
        let r = minimize_projected(
            &Quadratic(c),
            &[0.0, 0.0],
            |x| {
                project_ball_in_place(x, 1.0);
            },
            &LbfgsConfig::default(),
        )
        .unwrap();
        assert!((r.x[0] - 0.6).abs() < 1e-6 && (r.x[1] - 0.8).abs() < 1e-6, "{:?}", r.x);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn dimension_mismatch() {
        assert!(minimize_projected(&Rosenbrock, &[0.0], |_| {}, &LbfgsConfig::default()).is_err());
    }
}
