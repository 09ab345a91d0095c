//! Wall-clock scaling of one refinement iteration against the number of
//! proposals, next to a dense one-query-per-cell cross-attention baseline.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{dense_grid_sca, init_queries, proformer_step, FeatureGrid, KernelConfig, KernelError, KernelWeights, Tensor};
use crate::scene::VehicleDims;
use crate::synth::standard_camera_rig;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("repetitions must be at least 1")]
    NoReps,
    #[error("sweep `{0}` is empty or contains zero")]
    BadSweep(&'static str),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchKind {
    ProformerIteration,
    DenseGridSca,
}

impl BenchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ProformerIteration => "proformer_iteration",
            Self::DenseGridSca => "dense_grid_sca",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub kind: BenchKind,
    pub size_param: usize,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub reps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchSpec {
    /// Proposal counts for the iteration sweep.
    pub n_sweep: Vec<usize>,
    /// Grid side lengths for the dense baseline.
    pub grid_sweep: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub kernel: KernelConfig,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self { n_sweep: vec![16, 32, 64, 128, 256], grid_sweep: vec![32, 64, 128], reps: 20, seed: 0, kernel: bench_kernel_config() }
    }
}

/// A reduced-width kernel so the sweep finishes in seconds.
pub fn bench_kernel_config() -> KernelConfig {
    KernelConfig { c: 32, hidden: 32, heads: 4, keys: 4, n_ref: 4, k: 1, ..KernelConfig::default() }
}

/// Random feature maps for the standard four-camera rig at the config stride.
pub fn random_features(cfg: &KernelConfig, seed: u64) -> FeatureGrid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cameras = standard_camera_rig();
    let views = cameras
        .iter()
        .map(|cam| {
            let w = (cam.image_size.0 as f64 / cfg.feature_stride).ceil().max(2.0) as usize;
            let h = (cam.image_size.1 as f64 / cfg.feature_stride).ceil().max(2.0) as usize;
            let data = (0..cfg.c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::from_vec(&[cfg.c, h, w], data).expect("sized above")
        })
        .collect();
    FeatureGrid::new(views, cameras).expect("one view per camera")
}

/// Linear-interpolated quantile of sorted samples.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

type Job<'a> = Box<dyn Fn() -> Result<(), KernelError> + 'a>;

/// Times every job `reps` times, round-robin, so slow spells of the machine
/// spread over all sweep points instead of skewing one. Each job runs once
/// untimed first. Returns (median, p10, p90) in ms per job.
fn time_interleaved(reps: usize, jobs: &[Job<'_>]) -> Result<Vec<(f64, f64, f64)>, KernelError> {
    for f in jobs {
        f()?;
    }
    let mut ms = vec![Vec::with_capacity(reps); jobs.len()];
    for _ in 0..reps {
        for (f, out) in jobs.iter().zip(&mut ms) {
            let start = Instant::now();
            f()?;
            out.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(ms
        .into_iter()
        .map(|mut v| {
            v.sort_by(f64::total_cmp);
            (quantile(&v, 0.5), quantile(&v, 0.1), quantile(&v, 0.9))
        })
        .collect())
}

pub fn bench_attention(spec: &BenchSpec) -> Result<Vec<BenchRow>, BenchError> {
    if spec.reps < 1 {
        return Err(BenchError::NoReps);
    }
    if spec.n_sweep.is_empty() || spec.n_sweep.contains(&0) {
        return Err(BenchError::BadSweep("n_sweep"));
    }
    if spec.grid_sweep.contains(&0) {
        return Err(BenchError::BadSweep("grid_sweep"));
    }
    let features = random_features(&spec.kernel, spec.seed);
    let dims = VehicleDims::default();
    let status = [8.0, 0.0];
    let (t, c) = (spec.kernel.t, spec.kernel.c);
    // Every sweep point shares one weight set; smaller N use a prefix of the
    // positional embedding so their queries are a prefix of the largest run.
    let n_max = *spec.n_sweep.iter().max().expect("checked non-empty");
    let base = KernelWeights::<f64>::seeded(&KernelConfig { n: n_max, ..spec.kernel.clone() }, spec.seed)?;
    let mut iter_inputs = Vec::with_capacity(spec.n_sweep.len());
    for &n in &spec.n_sweep {
        let mut w = base.clone();
        w.config.n = n;
        w.positional_embedding = Tensor::from_vec(&[n, t, c], base.positional_embedding.data()[..n * t * c].to_vec())?;
        let q = init_queries(&status, &w)?;
        iter_inputs.push((q, w));
    }
    let dense_w = KernelWeights::<f64>::seeded(&spec.kernel, spec.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);
    let mut dense_inputs = Vec::with_capacity(spec.grid_sweep.len());
    for &side in &spec.grid_sweep {
        let data = (0..side * side * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        dense_inputs.push((side, Tensor::from_vec(&[side * side, c], data)?));
    }

    let (features, dims, dense_w) = (&features, &dims, &dense_w);
    let mut jobs: Vec<Job<'_>> = Vec::new();
    for (q, w) in &iter_inputs {
        jobs.push(Box::new(move || proformer_step(q, features, dims, w).map(drop)));
    }
    for (side, q) in &dense_inputs {
        jobs.push(Box::new(move || dense_grid_sca(*side, q, features, dense_w).map(drop)));
    }
    let timings = time_interleaved(spec.reps, &jobs)?;

    let sizes = spec
        .n_sweep
        .iter()
        .map(|&n| (BenchKind::ProformerIteration, n))
        .chain(spec.grid_sweep.iter().map(|&s| (BenchKind::DenseGridSca, s)));
    Ok(sizes
        .zip(timings)
        .map(|((kind, size_param), (median_ms, p10_ms, p90_ms))| BenchRow { kind, size_param, median_ms, p10_ms, p90_ms, reps: spec.reps })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r2: f64,
}

/// Least-squares `y = a + b x` with its coefficient of determination.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit { intercept, slope, r2 })
}

/// Fit of median time against `transform(size_param)` for one kind.
pub fn fit_kind(rows: &[BenchRow], kind: BenchKind, transform: impl Fn(f64) -> f64) -> Option<LinearFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        rows.iter().filter(|r| r.kind == kind).map(|r| (transform(r.size_param as f64), r.median_ms)).unzip();
    linear_fit(&xs, &ys)
}
