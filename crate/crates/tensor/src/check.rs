use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::params::{Gradients, ParamStore};

#[derive(Debug, Error, PartialEq)]
pub enum CheckError {
    #[error("objective is not finite at {name}[{index}] (value {value})")]
    NonFinite { name: String, index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Coordinates sampled per parameter tensor; `None` checks all of them.
    pub coords_per_param: Option<usize>,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true gradient is ~0 are compared absolutely.
    pub floor: f64,
    /// When sampling, draw up to half of each tensor's coordinates from those
    /// with a nonzero analytic gradient. Sparse tensors such as embedding
    /// tables are otherwise mostly checked at rows the batch never reads.
    pub prefer_touched: bool,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { h: 1e-5, coords_per_param: None, floor: 1e-6, prefer_touched: false, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub per_param: Vec<ParamCheck>,
}

/// Compare `analytic` against central differences of `f` around `params`.
/// Relative error is `|a − n| / max(|a|, |n|, floor)`. Parameters with no
/// analytic gradient are compared against zero.
pub fn finite_diff_check(
    params: &ParamStore,
    analytic: &Gradients,
    f: impl Fn(&ParamStore) -> f64,
    opts: &CheckOptions,
) -> Result<CheckReport, CheckError> {
    let mut work = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut per_param = Vec::new();
    for id in params.ids() {
        let len = params.get(id).len();
        let coords: Vec<usize> = match opts.coords_per_param {
            Some(k) if k < len => {
                let grad = analytic.get(id);
                let (touched, rest): (Vec<usize>, Vec<usize>) = match grad {
                    Some(g) if opts.prefer_touched => (0..len).partition(|&i| g.data[i] != 0.0),
                    _ => (Vec::new(), (0..len).collect()),
                };
                let from_touched = touched.len().min(k / 2);
                let from_rest = (k - from_touched).min(rest.len());
                let mut c: Vec<usize> = sample(&mut rng, touched.len(), from_touched).into_iter().map(|i| touched[i]).collect();
                c.extend(sample(&mut rng, rest.len(), from_rest).into_iter().map(|i| rest[i]));
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };
        let mut worst: f64 = 0.0;
        for &k in &coords {
            let orig = params.get(id).data[k];
            let eval = |work: &mut ParamStore, x: f64| {
                work.get_mut(id).data[k] = x;
                let v = f(work);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(CheckError::NonFinite { name: params.name(id).to_string(), index: k, value: v })
                }
            };
            let plus = eval(&mut work, orig + opts.h)?;
            let minus = eval(&mut work, orig - opts.h)?;
            work.get_mut(id).data[k] = orig;
            let numeric = (plus - minus) / (2.0 * opts.h);
            let a = analytic.get(id).map_or(0.0, |g| g.data[k]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            worst = worst.max(rel);
        }
        per_param.push(ParamCheck { name: params.name(id).to_string(), checked: coords.len(), max_rel_err: worst });
    }
    Ok(CheckReport {
        max_rel_err: per_param.iter().map(|p| p.max_rel_err).fold(0.0, f64::max),
        checked: per_param.iter().map(|p| p.checked).sum(),
        per_param,
    })
}
