//! Per-step decoding cost as the input grows.

use std::time::Instant;

use serde::Serialize;

use crate::model::{Model, ModelError};

#[derive(Debug, Clone, Serialize)]
pub struct BenchPoint {
    pub n: usize,
    /// Mean seconds per incremental decoding step (best of the repeats).
    pub step_secs: f64,
    /// Bytes of one output score vector, `8·(l_p + n·m)`.
    pub score_bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub points: Vec<BenchPoint>,
    /// Least-squares slope of log time against log n.
    pub time_exponent: f64,
    pub memory_exponent: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Time `steps` decoding steps at each input length in `ns`.
pub fn bench(model: &Model, ns: &[usize], steps: usize, repeats: usize) -> Result<BenchReport, ModelError> {
    let v = &model.types;
    let l_p = v.l_p();
    let pattern = [l_p, v.type_edge(), v.null_node() + 1, v.sep()];
    let mut points = Vec::new();
    for &n in ns {
        let ids: Vec<usize> = (0..n).map(|j| 2 + j % (model.tokens.len() - 2).max(1)).collect();
        let src = model.prepare(&ids)?;
        let mut best = f64::INFINITY;
        let mut width = 0;
        for _ in 0..repeats.max(1) {
            let mut state = model.start(&src)?;
            let t0 = Instant::now();
            for s in 0..steps {
                state = model.step(&src, &state, pattern[s % pattern.len()])?;
            }
            best = best.min(t0.elapsed().as_secs_f64() / steps.max(1) as f64);
            width = state.logits.len();
        }
        points.push(BenchPoint { n, step_secs: best, score_bytes: width * std::mem::size_of::<f64>() });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
    let ts: Vec<f64> = points.iter().map(|p| p.step_secs).collect();
    let ms: Vec<f64> = points.iter().map(|p| p.score_bytes as f64).collect();
    Ok(BenchReport { time_exponent: loglog_slope(&xs, &ts), memory_exponent: loglog_slope(&xs, &ms), points })
}
