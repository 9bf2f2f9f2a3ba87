//! Optimizers: derivative-free Nelder–Mead for the likelihood fits and Adam
//! for network training.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Initial simplex edge length per coordinate.
    pub initial_step: Vec<f64>,
    pub max_iterations: usize,
    /// Stop when the spread of objective values over the simplex falls below this.
    pub f_tol: f64,
    /// ... and the simplex diameter falls below this.
    pub x_tol: f64,
}

impl NelderMeadOptions {
    pub fn new(initial_step: Vec<f64>) -> Self {
        Self {
            initial_step,
            max_iterations: 5000,
            f_tol: 1e-12,
            x_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Minimizes `f` starting from `x0`. Non-finite objective values are treated
/// as +∞, so infeasible regions can be signalled by returning `f64::INFINITY`.
///
/// The method restarts once from the converged point to guard against
/// premature simplex collapse.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> f64,
{
    if x0.len() != opts.initial_step.len() || x0.is_empty() {
        return Err(Error::Config(format!(
            "nelder_mead: start point has {} coordinates, step has {}",
            x0.len(),
            opts.initial_step.len()
        )));
    }
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let first = run(&mut eval, x0, opts, opts.max_iterations)?;
    let remaining = opts.max_iterations.saturating_sub(first.iterations).max(50);
    let second = run(&mut eval, &first.x, opts, remaining)?;
    let best = if second.value <= first.value { second } else { first.clone() };
    Ok(Minimum {
        iterations: first.iterations + best.iterations,
        ..best
    })
}

fn run<F>(f: &mut F, x0: &[f64], opts: &NelderMeadOptions, max_iter: usize) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> f64,
{
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;

    let dim = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), f(x0)));
    if !simplex[0].1.is_finite() {
        return Err(Error::InvalidParameters(
            "nelder_mead: objective is infeasible at the starting point".into(),
        ));
    }
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step[i];
        let v = f(&x);
        simplex.push((x, v));
    }

    let mut iterations = 0;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let spread = (worst - best).abs();
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0_f64, f64::max);
        let flat = spread <= opts.f_tol * (1.0 + best.abs());
        if (flat && diameter <= opts.x_tol) || diameter <= opts.x_tol * 1e-3 {
            return Ok(Minimum {
                x: simplex[0].0.clone(),
                value: best,
                iterations,
            });
        }
        if iterations >= max_iter {
            return Err(Error::Convergence {
                iterations,
                best_value: best,
                spread,
            });
        }
        iterations += 1;

        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / dim as f64;
            }
        }
        let along = |t: f64, from: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(from)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let worst_x = simplex[dim].0.clone();
        let reflected = along(REFLECT, &worst_x);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(EXPAND, &worst_x);
            let fe = f(&expanded);
            simplex[dim] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < worst {
            let x = along(CONTRACT, &worst_x);
            let v = f(&x);
            (x, v)
        } else {
            let x = along(-CONTRACT, &worst_x);
            let v = f(&x);
            (x, v)
        };
        if fc < worst.min(fr) {
            simplex[dim] = (contracted, fc);
            continue;
        }
        let best_x = simplex[0].0.clone();
        for (x, v) in simplex.iter_mut().skip(1) {
            for (xi, bi) in x.iter_mut().zip(&best_x) {
                *xi = bi + SHRINK * (*xi - bi);
            }
            *v = f(x);
        }
    }
}

/// Adaptive-moment gradient descent over a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(learning_rate: f64, shapes: &[[usize; 2]]) -> Self {
        let zeros = || shapes.iter().map(|s| Tensor::zeros(s[0], s[1])).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update; `params` and `grads` must follow the order given to [`Adam::new`].
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (self.m[k].data_mut(), self.v[k].data_mut(), grads[k].data());
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *x -= self.learning_rate * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
