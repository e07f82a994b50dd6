//! Projected limited-memory BFGS for `min f(x)` subject to `x_k >= 0` on a
//! leading block of coordinates.
//!
//! Two-metric projection: coordinates sitting at their bound with a gradient
//! pushing outward form the active set and take a plain gradient step, the
//! rest take the quasi-Newton step restricted to the free subspace. The step is
//! projected back onto the feasible box and accepted by Armijo backtracking
//! along the projection arc.

use std::collections::VecDeque;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once the projected gradient's inf-norm is at most this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub memory: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_iterations: 500, memory: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub x: Vec<f64>,
    pub value: f64,
    pub projected_gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

fn project(x: &mut [f64], bounded: usize) {
    for v in &mut x[..bounded] {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn projected_gradient(x: &[f64], g: &[f64], bounded: usize) -> Vec<f64> {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(k, (&xk, &gk))| if k < bounded { xk - (xk - gk).max(0.0) } else { gk })
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `f` returns the value and the gradient at its argument and must be convex.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, bounded: usize, options: &SolverOptions) -> Result<SolverReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0;
    project(&mut x, bounded);
    let (mut fx, mut g) = f(&x)?;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(options.memory);
    let mut pg_norm = inf_norm(&projected_gradient(&x, &g, bounded));
    let mut iterations = 0;

    while pg_norm > options.tolerance && iterations < options.max_iterations {
        iterations += 1;
        let eps = pg_norm.min(1e-3);
        let active: Vec<bool> = (0..x.len()).map(|k| k < bounded && x[k] <= eps && g[k] > 0.0).collect();

        let mut d = quasi_newton_direction(&g, &active, &history);
        for (k, dk) in d.iter_mut().enumerate() {
            if active[k] {
                *dk = -g[k];
            }
        }
        if dot(&d, &g) >= 0.0 {
            history.clear();
            d = g.iter().map(|v| -v).collect();
        }
        if history.is_empty() {
            // Without curvature information, take a unit-length first trial.
            let scale = 1.0 / inf_norm(&d).max(1.0);
            d.iter_mut().for_each(|v| *v *= scale);
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xk, dk)| xk + t * dk).collect();
            project(&mut trial, bounded);
            let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &step);
            if step.iter().all(|&v| v == 0.0) {
                break;
            }
            let (ft, gt) = f(&trial)?;
            // Near the optimum the decrease drops below the resolution of `f`.
            // For convex `f`, `f(x + s) <= f(x) + grad f(x + s) . s`, so the
            // gradient at the trial point certifies the decrease instead.
            let sufficient = ARMIJO * decrease.min(0.0);
            if ft.is_finite() && (ft <= fx + sufficient || (decrease < 0.0 && dot(&gt, &step) <= sufficient)) {
                accepted = Some((trial, step, ft, gt));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, s, ft, gt)) = accepted else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if history.len() == options.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = trial;
        fx = ft;
        g = gt;
        pg_norm = inf_norm(&projected_gradient(&x, &g, bounded));
    }

    Ok(SolverReport {
        x,
        value: fx,
        projected_gradient_norm: pg_norm,
        iterations,
        converged: pg_norm <= options.tolerance,
    })
}

/// Two-loop recursion with every pair restricted to the free coordinates.
fn quasi_newton_direction(g: &[f64], active: &[bool], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let masked = |v: &[f64]| -> Vec<f64> { v.iter().zip(active).map(|(x, &a)| if a { 0.0 } else { *x }).collect() };
    let mut q = masked(g);
    if history.is_empty() {
        return q.iter().map(|v| -v).collect();
    }
    let pairs: Vec<(Vec<f64>, Vec<f64>, f64)> = history
        .iter()
        .filter_map(|(s, y, _)| {
            let (s, y) = (masked(s), masked(y));
            let sy = dot(&s, &y);
            (sy > 1e-16).then(|| (s, y, 1.0 / sy))
        })
        .collect();
    let mut alphas = vec![0.0; pairs.len()];
    for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
        alphas[k] = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= alphas[k] * yi);
    }
    if let Some((s, y, _)) = pairs.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (k, (s, y, rho)) in pairs.iter().enumerate() {
        let beta = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (alphas[k] - beta) * si);
    }
    q.iter().map(|v| -v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_quadratic() {
        // f = sum_k (k+1)(x_k - k)^2
        let f = |x: &[f64]| {
            let v = x.iter().enumerate().map(|(k, xk)| (k as f64 + 1.0) * (xk - k as f64).powi(2)).sum();
            let g = x.iter().enumerate().map(|(k, xk)| 2.0 * (k as f64 + 1.0) * (xk - k as f64)).collect();
            Ok((v, g))
        };
        let r = minimize(f, vec![10.0; 6], 0, &SolverOptions { tolerance: 1e-10, ..Default::default() }).unwrap();
        assert!(r.converged);
        for (k, xk) in r.x.iter().enumerate() {
            assert!((xk - k as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn converges_below_the_resolution_of_f() {
        // A large offset leaves f unable to register the final decreases.
        let f = |x: &[f64]| {
            let v = 1e8 + x.iter().enumerate().map(|(k, xk)| (k as f64 + 1.0) * (xk - 1.0).powi(2)).sum::<f64>();
            let g = x.iter().enumerate().map(|(k, xk)| 2.0 * (k as f64 + 1.0) * (xk - 1.0)).collect();
            Ok((v, g))
        };
        let r = minimize(f, vec![3.0; 8], 0, &SolverOptions { tolerance: 1e-10, ..Default::default() }).unwrap();
        assert!(r.converged, "stopped at {}", r.projected_gradient_norm);
    }

    #[test]
    fn bound_becomes_active() {
        // min (x0 + 1)^2 + (x1 - 2)^2 + (x0 - x1)^2 / 2, x0 >= 0, x1 free.
        // At x0 = 0: d/dx1 = 2(x1 - 2) + (x1) = 0 -> x1 = 4/3.
        let f = |x: &[f64]| {
            let v = (x[0] + 1.0).powi(2) + (x[1] - 2.0).powi(2) + 0.5 * (x[0] - x[1]).powi(2);
            let g = vec![2.0 * (x[0] + 1.0) + (x[0] - x[1]), 2.0 * (x[1] - 2.0) - (x[0] - x[1])];
            Ok((v, g))
        };
        let r = minimize(f, vec![5.0, -3.0], 1, &SolverOptions { tolerance: 1e-10, ..Default::default() }).unwrap();
        assert!(r.converged);
        assert_eq!(r.x[0], 0.0);
        assert!((r.x[1] - 4.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn iteration_cap_reported() {
        let f = |x: &[f64]| Ok((x[0].powi(4) + 1e3 * (x[1] - x[0].powi(2)).powi(2), vec![
            4.0 * x[0].powi(3) - 4e3 * x[0] * (x[1] - x[0].powi(2)),
            2e3 * (x[1] - x[0].powi(2)),
        ]));
        let r = minimize(f, vec![3.0, -2.0], 0, &SolverOptions { tolerance: 1e-14, max_iterations: 3, memory: 5 }).unwrap();
        assert_eq!(r.iterations, 3);
        assert!(!r.converged);
    }
}
