//! Central finite-difference oracle for reverse-mode gradients.
//!
//! The oracle only evaluates forward passes. A random projection `R` turns
//! any output into the scalar `L = sum(out * R)`; the analytic gradient of
//! `L` from [`Graph::backward`] is compared against
//! `(L(x + eps) - L(x - eps)) / (2 eps)` coordinate by coordinate.
//!
//! The reported error for a tensor is norm-wise:
//! `|a - n|_2 / max(|a|_2, |n|_2)` over the checked coordinates.
//!
//! A central difference is only meaningful when `x - eps`, `x` and
//! `x + eps` lie on the same linear piece of every relu/clamp/minimum in the
//! graph. Coordinates whose perturbation crosses a kink (detected through
//! [`Graph::kink_signature`]) are skipped and counted in `skipped`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct FdConfig {
    pub eps: f64,
    /// Coordinates checked per tensor; larger tensors are subsampled.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { eps: 1e-3, max_coords: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub name: String,
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub checked: usize,
    pub skipped: usize,
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

fn projection(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn project(g: &mut Graph<f64>, out: Var, r: &Tensor<f64>) -> Result<Var> {
    let rv = g.constant(r.clone());
    let prod = g.mul(out, rv)?;
    Ok(g.sum(prod))
}

fn coords(n: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        let mut v = sample(rng, n, max).into_vec();
        v.sort_unstable();
        v
    }
}

/// Check gradients with respect to free input tensors.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], cfg: FdConfig, f: F) -> Result<Vec<FdReport>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let r = projection(g.shape(out), &mut rng);
    let loss = project(&mut g, out, &r)?;
    let grads = g.backward(loss)?;

    let base_sig = g.kink_signature();
    let eval = |xs: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut g = Graph::inference();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let l = project(&mut g, out, &r)?;
        Ok((g.value(l).item(), g.kink_signature()))
    };

    let mut reports = Vec::new();
    for (i, input) in inputs.iter().enumerate() {
        let analytic_full = grads.get(vars[i]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.numel()]);
        let idx = coords(input.numel(), cfg.max_coords, &mut rng);
        let mut analytic = Vec::with_capacity(idx.len());
        let mut numeric = Vec::with_capacity(idx.len());
        let mut xs = inputs.to_vec();
        let mut skipped = 0;
        for &j in &idx {
            let orig = input.data()[j];
            xs[i].data_mut()[j] = orig + cfg.eps;
            let (up, s_up) = eval(&xs)?;
            xs[i].data_mut()[j] = orig - cfg.eps;
            let (down, s_down) = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            if s_up != base_sig || s_down != base_sig {
                skipped += 1;
                continue;
            }
            numeric.push((up - down) / (2.0 * cfg.eps));
            analytic.push(analytic_full[j]);
        }
        reports.push(FdReport {
            name: format!("input{i}"),
            rel_error: relative_error(&analytic, &numeric),
            analytic_norm: analytic.iter().map(|a| a * a).sum::<f64>().sqrt(),
            checked: analytic.len(),
            skipped,
        });
    }
    Ok(reports)
}

/// Check gradients with respect to every parameter of a set.
pub fn check_params<F>(params: &ParameterSet<f64>, cfg: FdConfig, f: F) -> Result<Vec<FdReport>>
where
    F: Fn(&mut Graph<f64>, &ParameterSet<f64>) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.clone();
    work.zero_grad();
    let mut g = Graph::new();
    let out = f(&mut g, &work)?;
    let r = projection(g.shape(out), &mut rng);
    let loss = project(&mut g, out, &r)?;
    let grads = g.backward(loss)?;
    work.accumulate_grads(&g, &grads);
    let base_sig = g.kink_signature();
    drop(g);

    let eval = |ps: &ParameterSet<f64>| -> Result<(f64, u64)> {
        let mut g = Graph::inference();
        let out = f(&mut g, ps)?;
        let l = project(&mut g, out, &r)?;
        Ok((g.value(l).item(), g.kink_signature()))
    };

    let names: Vec<String> = params.names().filter(|n| !params.is_frozen(n)).map(str::to_string).collect();
    let mut reports = Vec::new();
    for name in names {
        let analytic_full = work.param(&name).expect("listed").grad().to_vec();
        let idx = coords(analytic_full.len(), cfg.max_coords, &mut rng);
        let mut probe = params.clone();
        let mut analytic = Vec::with_capacity(idx.len());
        let mut numeric = Vec::with_capacity(idx.len());
        let mut skipped = 0;
        for &j in &idx {
            let orig = params.get(&name).expect("listed").data()[j];
            probe.value_mut(&name)?.data_mut()[j] = orig + cfg.eps;
            let (up, s_up) = eval(&probe)?;
            probe.value_mut(&name)?.data_mut()[j] = orig - cfg.eps;
            let (down, s_down) = eval(&probe)?;
            probe.value_mut(&name)?.data_mut()[j] = orig;
            if s_up != base_sig || s_down != base_sig {
                skipped += 1;
                continue;
            }
            numeric.push((up - down) / (2.0 * cfg.eps));
            analytic.push(analytic_full[j]);
        }
        reports.push(FdReport {
            rel_error: relative_error(&analytic, &numeric),
            analytic_norm: analytic.iter().map(|a| a * a).sum::<f64>().sqrt(),
            checked: analytic.len(),
            skipped,
            name,
        });
    }
    Ok(reports)
}
