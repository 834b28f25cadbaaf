//! Synthetic finite-sum problems with exact gradient oracles.
//!
//! A problem instance is a K-worker objective f(x) = (1/K) Σ_k f^(k)(x) where
//! each worker's distribution is the uniform empirical distribution over its
//! finite dataset. That makes the per-worker mean gradient, the intra-node
//! variance and the inter-node deviation exactly computable by enumeration,
//! which is what the oracle tests in this crate lean on.
//!
//! Three families are provided:
//!
//! * `LeastSquaresSharedDesign` — quadratics with one design matrix shared by
//!   all workers; heterogeneity enters only through targets, so the pairwise
//!   gradient deviation is constant in x and the heterogeneity bound ζ is a
//!   closed-form quantity.
//! * `LogisticNonconvex` — binary logistic loss plus the bounded nonconvex
//!   penalty λ·Σ xᵢ²/(1+xᵢ²); heterogeneity by per-worker label skew.
//! * `TwoLayerTanh` — regression through a small tanh network against a fixed
//!   teacher; genuinely nonconvex in the packed parameters.

use crate::error::{Error, Result};
use crate::rng::{DetRng, STREAM_PROBLEM_GEN};
use crate::vecops::{dist_sq, dot, mean_of, norm_sq, solve_spd};
use serde::{Deserialize, Serialize};

/// Objective family of a [`ProblemInstance`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    LeastSquaresSharedDesign,
    LogisticNonconvex,
    TwoLayerTanh,
}

/// One training sample: a feature vector and a scalar target.
///
/// For the logistic family the target is the ±1 label; for the tanh family
/// the features are the network input.
#[derive(Clone, Debug)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: f64,
}

/// Immutable K-worker finite-sum problem with exact oracles.
///
/// All gradient functions are pure in `(instance, point, batch)` and safe to
/// call concurrently. IFO counters are owned by the caller.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    dim: usize,
    family: Family,
    reg_lambda: f64,
    datasets: Vec<Vec<Sample>>,
    /// (input_dim, hidden) for the tanh network family.
    net_shape: Option<(usize, usize)>,
    /// Per-worker gradient offsets the least-squares constructor was asked
    /// to realize; kept so tests can compare measured against constructed.
    offsets: Option<Vec<Vec<f64>>>,
}

/// Measured smoothness and variance constants of an instance.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SmoothnessProfile {
    /// Intra-node deviation bound: sqrt of the largest per-worker variance
    /// of single-sample gradients seen over the probe points.
    pub sigma: f64,
    /// Largest pairwise inter-worker gradient deviation over the probes.
    pub zeta: f64,
    /// Largest sample-gradient difference quotient over the probe pairs.
    pub l_hat: f64,
    /// Best (lowest) objective value observed; lower-bound surrogate for f*.
    pub f_star_hat: f64,
}

impl ProblemInstance {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn workers(&self) -> usize {
        self.datasets.len()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn reg_lambda(&self) -> f64 {
        self.reg_lambda
    }

    pub fn n_samples(&self, worker: usize) -> usize {
        self.datasets[worker].len()
    }

    /// Offsets the least-squares constructor realized, if any.
    pub fn constructed_offsets(&self) -> Option<&[Vec<f64>]> {
        self.offsets.as_deref()
    }

    fn check_worker(&self, worker: usize) -> Result<()> {
        if worker >= self.datasets.len() {
            return Err(Error::Usage(format!(
                "worker {worker} out of range (K = {})",
                self.datasets.len()
            )));
        }
        Ok(())
    }

    /// Data-term loss of sample `i` of `worker` at `x` (regularizer excluded).
    fn data_value(&self, worker: usize, i: usize, x: &[f64]) -> f64 {
        let s = &self.datasets[worker][i];
        match self.family {
            Family::LeastSquaresSharedDesign => {
                let r = dot(&s.features, x) - s.target;
                0.5 * r * r
            }
            Family::LogisticNonconvex => {
                // ln(1 + exp(-y·z)) evaluated stably.
                let m = -s.target * dot(&s.features, x);
                m.max(0.0) + (-m.abs()).exp().ln_1p()
            }
            Family::TwoLayerTanh => {
                let (pred, _) = self.tanh_forward(x, &s.features);
                let r = pred - s.target;
                0.5 * r * r
            }
        }
    }

    /// Adds the data-term gradient of sample `i` of `worker` at `x` into `out`.
    fn accumulate_data_grad(&self, worker: usize, i: usize, x: &[f64], out: &mut [f64]) {
        let s = &self.datasets[worker][i];
        match self.family {
            Family::LeastSquaresSharedDesign => {
                let r = dot(&s.features, x) - s.target;
                for (o, &a) in out.iter_mut().zip(&s.features) {
                    *o += r * a;
                }
            }
            Family::LogisticNonconvex => {
                // dL/dz = -y·sigmoid(-y·z), computed without overflow.
                let yz = s.target * dot(&s.features, x);
                let sig = if yz >= 0.0 {
                    let e = (-yz).exp();
                    e / (1.0 + e)
                } else {
                    1.0 / (1.0 + yz.exp())
                };
                let coef = -s.target * sig;
                for (o, &a) in out.iter_mut().zip(&s.features) {
                    *o += coef * a;
                }
            }
            Family::TwoLayerTanh => {
                let (input_dim, hidden) = self.net_shape.expect("tanh family has a net shape");
                let (pred, h) = self.tanh_forward(x, &s.features);
                let r = pred - s.target;
                let w2 = &x[hidden * input_dim..];
                for j in 0..hidden {
                    let gz = r * w2[j] * (1.0 - h[j] * h[j]);
                    let row = &mut out[j * input_dim..(j + 1) * input_dim];
                    for (o, &a) in row.iter_mut().zip(&s.features) {
                        *o += gz * a;
                    }
                }
                let gw2 = &mut out[hidden * input_dim..];
                for j in 0..hidden {
                    gw2[j] += r * h[j];
                }
            }
        }
    }

    fn tanh_forward(&self, x: &[f64], input: &[f64]) -> (f64, Vec<f64>) {
        let (input_dim, hidden) = self.net_shape.expect("tanh family has a net shape");
        let w2 = &x[hidden * input_dim..];
        let mut h = vec![0.0; hidden];
        let mut pred = 0.0;
        for j in 0..hidden {
            let z = dot(&x[j * input_dim..(j + 1) * input_dim], input);
            h[j] = z.tanh();
            pred += w2[j] * h[j];
        }
        (pred, h)
    }

    fn reg_value(&self, x: &[f64]) -> f64 {
        if self.reg_lambda == 0.0 {
            return 0.0;
        }
        let mut s = 0.0;
        for &xi in x {
            s += xi * xi / (1.0 + xi * xi);
        }
        self.reg_lambda * s
    }

    fn add_reg_grad(&self, x: &[f64], out: &mut [f64]) {
        if self.reg_lambda == 0.0 {
            return;
        }
        for (o, &xi) in out.iter_mut().zip(x) {
            let den = 1.0 + xi * xi;
            *o += self.reg_lambda * 2.0 * xi / (den * den);
        }
    }

    /// Mean data-term gradient over `batch` plus the regularizer gradient.
    /// Shared by the minibatch and the full-batch oracles so that a batch
    /// equal to the whole dataset reproduces `full_gradient` bit for bit.
    fn batch_mean_gradient<I>(&self, worker: usize, x: &[f64], batch: I, count: usize) -> Vec<f64>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut g = vec![0.0; self.dim];
        for i in batch {
            self.accumulate_data_grad(worker, i, x, &mut g);
        }
        let inv = 1.0 / count as f64;
        for v in g.iter_mut() {
            *v *= inv;
        }
        self.add_reg_grad(x, &mut g);
        g
    }

    /// Minibatch stochastic gradient `(1/|batch|)·Σ ∇f^(k)(x; ξᵢ)`.
    ///
    /// Charges one IFO unit per (sample, point) evaluation, i.e. `|batch|`
    /// units, to the caller-supplied counter.
    pub fn sample_gradient(
        &self,
        worker: usize,
        x: &[f64],
        batch: &[usize],
        ifo: &mut u64,
    ) -> Result<Vec<f64>> {
        self.check_worker(worker)?;
        if batch.is_empty() {
            return Err(Error::Usage("empty minibatch".into()));
        }
        let n = self.datasets[worker].len();
        if let Some(&bad) = batch.iter().find(|&&i| i >= n) {
            return Err(Error::Usage(format!(
                "sample index {bad} out of range (n = {n}) for worker {worker}"
            )));
        }
        *ifo += batch.len() as u64;
        Ok(self.batch_mean_gradient(worker, x, batch.iter().copied(), batch.len()))
    }

    /// Gradient of a single sample; diagnostic only, no IFO charge.
    pub fn per_sample_gradient(&self, worker: usize, i: usize, x: &[f64]) -> Vec<f64> {
        self.batch_mean_gradient(worker, x, std::iter::once(i), 1)
    }

    /// Loss of a single sample (regularizer included); diagnostic only.
    pub fn per_sample_value(&self, worker: usize, i: usize, x: &[f64]) -> f64 {
        self.data_value(worker, i, x) + self.reg_value(x)
    }

    /// Exact worker gradient `∇f^(k)(x)`; diagnostic oracle, no IFO charge.
    pub fn full_gradient(&self, worker: usize, x: &[f64]) -> Vec<f64> {
        let n = self.datasets[worker].len();
        self.batch_mean_gradient(worker, x, 0..n, n)
    }

    /// Exact global gradient `∇f(x) = (1/K) Σ_k ∇f^(k)(x)`; no IFO charge.
    pub fn global_gradient(&self, x: &[f64]) -> Vec<f64> {
        let grads: Vec<Vec<f64>> = (0..self.workers())
            .map(|k| self.full_gradient(k, x))
            .collect();
        let refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
        mean_of(&refs)
    }

    /// Exact worker objective value `f^(k)(x)`.
    pub fn full_value(&self, worker: usize, x: &[f64]) -> f64 {
        let n = self.datasets[worker].len();
        let mut s = 0.0;
        for i in 0..n {
            s += self.data_value(worker, i, x);
        }
        s / n as f64 + self.reg_value(x)
    }

    /// Exact global objective value `f(x)`.
    pub fn global_value(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in 0..self.workers() {
            s += self.full_value(k, x);
        }
        s / self.workers() as f64
    }

    /// Exact variance of single-sample gradients of `worker` at `x`,
    /// enumerated over the whole dataset.
    pub fn worker_variance_at(&self, worker: usize, x: &[f64]) -> f64 {
        let mean = self.full_gradient(worker, x);
        let n = self.datasets[worker].len();
        let mut v = 0.0;
        for i in 0..n {
            let g = self.per_sample_gradient(worker, i, x);
            v += dist_sq(&g, &mean);
        }
        v / n as f64
    }
}

fn check_sizes(dim: usize, workers: usize, n_per_worker: usize) -> Result<()> {
    if dim == 0 || workers == 0 || n_per_worker == 0 {
        return Err(Error::Config(format!(
            "dim, workers and n_per_worker must be positive (got {dim}, {workers}, {n_per_worker})"
        )));
    }
    Ok(())
}

/// Shared-design least squares with per-worker mean-gradient offsets taken
/// from `hetero_shift` times a seeded unit direction (worker 0 gets the zero
/// offset). Per-sample targets are jittered by `noise` to induce σ > 0; the
/// jitter is shared across workers so that the offsets stay exact.
pub fn make_least_squares(
    dim: usize,
    workers: usize,
    n_per_worker: usize,
    hetero_shift: f64,
    noise: f64,
    seed: u64,
) -> Result<ProblemInstance> {
    check_sizes(dim, workers, n_per_worker)?;
    if hetero_shift < 0.0 || noise < 0.0 {
        return Err(Error::Config(
            "hetero_shift and noise must be nonnegative".into(),
        ));
    }
    let mut rng = DetRng::from_key(seed, STREAM_PROBLEM_GEN, 0x6f66_6673, 0);
    let offsets: Vec<Vec<f64>> = (0..workers)
        .map(|k| {
            if k == 0 || hetero_shift == 0.0 {
                vec![0.0; dim]
            } else {
                let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                let n = norm_sq(&v).sqrt();
                for vi in v.iter_mut() {
                    *vi *= hetero_shift / n;
                }
                v
            }
        })
        .collect();
    make_least_squares_with_offsets(dim, workers, n_per_worker, &offsets, noise, seed)
}

/// Shared-design least squares realizing the requested per-worker gradient
/// offsets exactly: worker k's mean gradient is `A·x − c − o_k` with `A` and
/// `c` common to all workers.
///
/// Nonzero offsets require `n_per_worker ≥ dim` (the shared design then
/// contains an identity block, which keeps the Gram matrix invertible).
pub fn make_least_squares_with_offsets(
    dim: usize,
    workers: usize,
    n_per_worker: usize,
    offsets: &[Vec<f64>],
    noise: f64,
    seed: u64,
) -> Result<ProblemInstance> {
    check_sizes(dim, workers, n_per_worker)?;
    if offsets.len() != workers {
        return Err(Error::Config(format!(
            "expected {workers} offset vectors, got {}",
            offsets.len()
        )));
    }
    if offsets.iter().any(|o| o.len() != dim) {
        return Err(Error::Config("offset dimension mismatch".into()));
    }
    let any_offset = offsets.iter().flatten().any(|&v| v != 0.0);
    if any_offset && n_per_worker < dim {
        return Err(Error::Config(
            "nonzero offsets need n_per_worker >= dim for an invertible shared design".into(),
        ));
    }

    let mut rng = DetRng::from_key(seed, STREAM_PROBLEM_GEN, 0x6c73, 0);
    // Shared design rows: an identity block (when it fits) plus Gaussian rows.
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_per_worker);
    let ident_rows = if n_per_worker >= dim { dim } else { 0 };
    for j in 0..ident_rows {
        let mut e = vec![0.0; dim];
        e[j] = 1.0;
        rows.push(e);
    }
    for _ in ident_rows..n_per_worker {
        rows.push((0..dim).map(|_| rng.normal()).collect());
    }

    // Base targets from a random ground-truth point plus shared jitter.
    let x_nat: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let jitter: Vec<f64> = (0..n_per_worker).map(|_| noise * rng.normal()).collect();
    let base: Vec<f64> = rows
        .iter()
        .zip(&jitter)
        .map(|(a, e)| dot(a, &x_nat) + e)
        .collect();

    // Gram matrix A = (1/n) Σ a aᵀ, needed to translate a gradient offset
    // into a target shift: targets y_k = base + D·(A⁻¹ o_k) give mean
    // gradient A·x − c_base − o_k.
    let n = n_per_worker as f64;
    let mut gram = vec![0.0; dim * dim];
    for a in &rows {
        for i in 0..dim {
            for j in 0..dim {
                gram[i * dim + j] += a[i] * a[j] / n;
            }
        }
    }

    let mut datasets = Vec::with_capacity(workers);
    for off in offsets {
        let shift: Vec<f64> = if off.iter().all(|&v| v == 0.0) {
            vec![0.0; dim]
        } else {
            solve_spd(&gram, off, dim)
                .ok_or_else(|| Error::Config("shared design is not positive definite".into()))?
        };
        let ds: Vec<Sample> = rows
            .iter()
            .zip(&base)
            .map(|(a, &y0)| Sample {
                features: a.clone(),
                target: y0 + dot(a, &shift),
            })
            .collect();
        datasets.push(ds);
    }

    Ok(ProblemInstance {
        dim,
        family: Family::LeastSquaresSharedDesign,
        reg_lambda: 0.0,
        datasets,
        net_shape: None,
        offsets: Some(offsets.to_vec()),
    })
}

/// Binary logistic loss plus the nonconvex penalty λ·Σ xᵢ²/(1+xᵢ²).
///
/// `class_skew` = 0 gives i.i.d. label splits across workers; 1 gives each
/// worker samples only from its home class (first half of the workers own
/// label +1, the rest label −1).
pub fn make_logistic_nonconvex(
    dim: usize,
    workers: usize,
    n_per_worker: usize,
    class_skew: f64,
    reg_lambda: f64,
    seed: u64,
) -> Result<ProblemInstance> {
    check_sizes(dim, workers, n_per_worker)?;
    if !(0.0..=1.0).contains(&class_skew) {
        return Err(Error::Config(format!(
            "class_skew must lie in [0, 1], got {class_skew}"
        )));
    }
    if reg_lambda < 0.0 {
        return Err(Error::Config("reg_lambda must be nonnegative".into()));
    }

    let mut rng = DetRng::from_key(seed, STREAM_PROBLEM_GEN, 0x6c67, 0);
    // Class separation direction; margin sized so ‖∇f(0)‖ is O(1).
    let mut dir: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let dn = norm_sq(&dir).sqrt();
    for v in dir.iter_mut() {
        *v /= dn;
    }
    const MARGIN: f64 = 3.0;

    let mut datasets = Vec::with_capacity(workers);
    for k in 0..workers {
        let home = if 2 * k < workers { 1.0 } else { -1.0 };
        let ds: Vec<Sample> = (0..n_per_worker)
            .map(|_| {
                let label = if rng.bool_with_prob(class_skew) {
                    home
                } else if rng.bool_with_prob(0.5) {
                    1.0
                } else {
                    -1.0
                };
                let features: Vec<f64> = dir
                    .iter()
                    .map(|&dv| label * MARGIN * dv + rng.normal())
                    .collect();
                Sample {
                    features,
                    target: label,
                }
            })
            .collect();
        datasets.push(ds);
    }

    Ok(ProblemInstance {
        dim,
        family: Family::LogisticNonconvex,
        reg_lambda,
        datasets,
        net_shape: None,
        offsets: None,
    })
}

/// Regression through a two-layer tanh network against a fixed random
/// teacher. Parameters pack the first-layer rows then the output weights;
/// `hetero_shift` shifts each worker's input distribution mean.
pub fn make_two_layer_tanh(
    input_dim: usize,
    hidden: usize,
    workers: usize,
    n_per_worker: usize,
    hetero_shift: f64,
    noise: f64,
    seed: u64,
) -> Result<ProblemInstance> {
    check_sizes(input_dim, workers, n_per_worker)?;
    if hidden == 0 {
        return Err(Error::Config("hidden width must be positive".into()));
    }
    if hetero_shift < 0.0 || noise < 0.0 {
        return Err(Error::Config(
            "hetero_shift and noise must be nonnegative".into(),
        ));
    }
    let dim = hidden * input_dim + hidden;
    let mut rng = DetRng::from_key(seed, STREAM_PROBLEM_GEN, 0x6e6e, 0);

    let teacher: Vec<f64> = {
        let s1 = 1.0 / (input_dim as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        let mut t: Vec<f64> = (0..hidden * input_dim).map(|_| s1 * rng.normal()).collect();
        t.extend((0..hidden).map(|_| s2 * rng.normal()));
        t
    };
    let shell = ProblemInstance {
        dim,
        family: Family::TwoLayerTanh,
        reg_lambda: 0.0,
        datasets: Vec::new(),
        net_shape: Some((input_dim, hidden)),
        offsets: None,
    };

    let mut datasets = Vec::with_capacity(workers);
    for _ in 0..workers {
        let mut mean: Vec<f64> = (0..input_dim).map(|_| rng.normal()).collect();
        let mn = norm_sq(&mean).sqrt();
        for v in mean.iter_mut() {
            *v *= hetero_shift / mn.max(1e-12);
        }
        let ds: Vec<Sample> = (0..n_per_worker)
            .map(|_| {
                let features: Vec<f64> = mean.iter().map(|&m| m + rng.normal()).collect();
                let (pred, _) = shell.tanh_forward(&teacher, &features);
                Sample {
                    features,
                    target: pred + noise * rng.normal(),
                }
            })
            .collect();
        datasets.push(ds);
    }

    Ok(ProblemInstance { datasets, ..shell })
}

/// Shared-design least squares from explicit rows and per-worker targets;
/// for small hand-constructed cases where every constant must be exact.
pub fn least_squares_from_data(
    rows: Vec<Vec<f64>>,
    targets_per_worker: Vec<Vec<f64>>,
) -> Result<ProblemInstance> {
    if rows.is_empty() || targets_per_worker.is_empty() {
        return Err(Error::Config("need at least one row and one worker".into()));
    }
    let dim = rows[0].len();
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Config(
            "design rows must share a positive dimension".into(),
        ));
    }
    if targets_per_worker.iter().any(|t| t.len() != rows.len()) {
        return Err(Error::Config(
            "each worker needs one target per design row".into(),
        ));
    }
    let datasets = targets_per_worker
        .into_iter()
        .map(|ts| {
            rows.iter()
                .zip(ts)
                .map(|(a, y)| Sample {
                    features: a.clone(),
                    target: y,
                })
                .collect()
        })
        .collect();
    Ok(ProblemInstance {
        dim,
        family: Family::LeastSquaresSharedDesign,
        reg_lambda: 0.0,
        datasets,
        net_shape: None,
        offsets: None,
    })
}

/// Measure σ, ζ and L over the given probe points.
///
/// * `sigma`: sqrt of the largest exact per-worker single-sample gradient
///   variance over the probes (exhaustive over each finite dataset).
/// * `zeta`: largest `‖∇f^(k)(x) − ∇f^(ℓ)(x)‖` over probes and worker pairs.
/// * `l_hat`: largest `‖∇f(x;ξ) − ∇f(y;ξ)‖ / ‖x − y‖` over the probe pairs
///   (indices into `probe_points`) and all samples; coincident pairs are
///   skipped.
pub fn measure_profile(
    p: &ProblemInstance,
    probe_points: &[Vec<f64>],
    probe_pairs: &[(usize, usize)],
) -> Result<SmoothnessProfile> {
    if probe_points.len() < 2 {
        return Err(Error::Usage(
            "measure_profile needs at least 2 probe points".into(),
        ));
    }
    if probe_points.iter().any(|x| x.len() != p.dim()) {
        return Err(Error::Usage("probe point dimension mismatch".into()));
    }

    let mut sigma_sq: f64 = 0.0;
    let mut zeta: f64 = 0.0;
    let mut f_star_hat = f64::INFINITY;
    for x in probe_points {
        f_star_hat = f_star_hat.min(p.global_value(x));
        let grads: Vec<Vec<f64>> = (0..p.workers()).map(|k| p.full_gradient(k, x)).collect();
        for k in 0..p.workers() {
            sigma_sq = sigma_sq.max(p.worker_variance_at(k, x));
            for l in (k + 1)..p.workers() {
                zeta = zeta.max(dist_sq(&grads[k], &grads[l]).sqrt());
            }
        }
    }

    let mut l_hat: f64 = 0.0;
    let mut usable_pair = false;
    for &(i, j) in probe_pairs {
        if i >= probe_points.len() || j >= probe_points.len() {
            return Err(Error::Usage(format!("probe pair ({i}, {j}) out of range")));
        }
        let (x, y) = (&probe_points[i], &probe_points[j]);
        let sep = dist_sq(x, y).sqrt();
        if sep == 0.0 {
            continue; // coincident pair carries no slope information
        }
        usable_pair = true;
        for k in 0..p.workers() {
            for s in 0..p.n_samples(k) {
                let gx = p.per_sample_gradient(k, s, x);
                let gy = p.per_sample_gradient(k, s, y);
                l_hat = l_hat.max(dist_sq(&gx, &gy).sqrt() / sep);
            }
        }
    }
    if !usable_pair {
        return Err(Error::Estimation(
            "all probe pairs coincident; cannot estimate a smoothness constant".into(),
        ));
    }
    if l_hat == 0.0 {
        return Err(Error::Estimation(
            "no gradient variation across probe pairs".into(),
        ));
    }

    Ok(SmoothnessProfile {
        sigma: sigma_sq.sqrt(),
        zeta,
        l_hat,
        f_star_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecops::dist_sq;

    fn probes(p: &ProblemInstance, seed: u64, count: usize, scale: f64) -> Vec<Vec<f64>> {
        let mut rng = DetRng::from_key(seed, STREAM_PROBLEM_GEN, 0x7072, 1);
        (0..count)
            .map(|_| (0..p.dim()).map(|_| scale * rng.normal()).collect())
            .collect()
    }

    #[test]
    fn homogeneous_least_squares_has_zero_zeta_and_sigma_when_degenerate() {
        // Single sample per worker, no noise, no shift: every worker's sample
        // equals its mean, and all workers are identical.
        let p = make_least_squares(1, 3, 1, 0.0, 0.0, 42).unwrap();
        let pts = probes(&p, 1, 3, 2.0);
        let prof = measure_profile(&p, &pts, &[(0, 1), (0, 2)]).unwrap();
        assert_eq!(prof.zeta, 0.0);
        assert_eq!(prof.sigma, 0.0);
    }

    #[test]
    fn homogeneous_multisample_least_squares_has_zero_zeta() {
        let p = make_least_squares(4, 3, 10, 0.0, 0.3, 7).unwrap();
        let pts = probes(&p, 2, 4, 1.5);
        let prof = measure_profile(&p, &pts, &[(0, 1)]).unwrap();
        assert_eq!(prof.zeta, 0.0);
        assert!(prof.sigma > 0.0);
    }

    #[test]
    fn constructed_offsets_give_exact_zeta() {
        let offsets = vec![vec![0.0, 0.0], vec![3.0, 4.0]];
        let p = make_least_squares_with_offsets(2, 2, 6, &offsets, 0.1, 9).unwrap();
        let pts = probes(&p, 3, 5, 3.0);
        for x in &pts {
            let g0 = p.full_gradient(0, x);
            let g1 = p.full_gradient(1, x);
            let z = dist_sq(&g0, &g1).sqrt();
            assert!((z - 5.0).abs() < 1e-10, "zeta = {z} at probe");
        }
    }

    #[test]
    fn shared_design_zeta_is_x_independent() {
        let p = make_least_squares(3, 4, 8, 2.5, 0.2, 11).unwrap();
        let pts = probes(&p, 4, 6, 4.0);
        let mut zetas = Vec::new();
        for x in &pts {
            let mut worst: f64 = 0.0;
            for k in 0..p.workers() {
                for l in (k + 1)..p.workers() {
                    let gk = p.full_gradient(k, x);
                    let gl = p.full_gradient(l, x);
                    worst = worst.max(dist_sq(&gk, &gl).sqrt());
                }
            }
            zetas.push(worst);
        }
        let lo = zetas.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = zetas.iter().cloned().fold(0.0_f64, f64::max);
        assert!(hi - lo <= 1e-10, "zeta spread {} too large", hi - lo);
    }

    #[test]
    fn least_squares_l_hat_matches_row_norms() {
        let p = make_least_squares(3, 2, 7, 1.0, 0.1, 13).unwrap();
        // per-sample Hessian is a·aᵀ, so the sample smoothness constant is
        // max_i ‖aᵢ‖²; realize it with probe pairs along each row direction.
        let mut expected: f64 = 0.0;
        let mut pts = vec![vec![0.0; 3]];
        let mut pairs = Vec::new();
        for i in 0..p.n_samples(0) {
            let a = p.datasets[0][i].features.clone();
            expected = expected.max(norm_sq(&a));
            pts.push(a);
            pairs.push((0, pts.len() - 1));
        }
        let prof = measure_profile(&p, &pts, &pairs).unwrap();
        assert!(
            (prof.l_hat - expected).abs() < 1e-8,
            "l_hat {} vs max row norm {}",
            prof.l_hat,
            expected
        );
    }

    #[test]
    fn batch_equal_to_dataset_matches_full_gradient_bitwise() {
        let p = make_logistic_nonconvex(5, 3, 9, 0.6, 0.05, 17).unwrap();
        let x: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.7).collect();
        let batch: Vec<usize> = (0..p.n_samples(1)).collect();
        let mut ifo = 0u64;
        let g = p.sample_gradient(1, &x, &batch, &mut ifo).unwrap();
        let f = p.full_gradient(1, &x);
        assert_eq!(g, f);
        assert_eq!(ifo, 9);
    }

    #[test]
    fn repeated_single_sample_batch_averages_to_itself() {
        let p = make_logistic_nonconvex(4, 2, 6, 0.0, 0.1, 19).unwrap();
        let x = vec![0.2, -0.4, 0.9, 0.0];
        let mut ifo = 0u64;
        let single = p.sample_gradient(0, &x, &[3], &mut ifo).unwrap();
        let repeated = p.sample_gradient(0, &x, &[3; 5], &mut ifo).unwrap();
        for (a, b) in single.iter().zip(&repeated) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(ifo, 6);
    }

    #[test]
    fn size_one_batches_average_to_full_gradient() {
        // Unbiasedness by exhaustive enumeration on a small dataset.
        for seed in [3, 4] {
            let p = make_logistic_nonconvex(3, 2, 8, 0.5, 0.02, seed).unwrap();
            let x = vec![0.1, -0.2, 0.3];
            for k in 0..p.workers() {
                let n = p.n_samples(k);
                let mut acc = vec![0.0; 3];
                for i in 0..n {
                    let g = p.per_sample_gradient(k, i, &x);
                    for (a, b) in acc.iter_mut().zip(&g) {
                        *a += b / n as f64;
                    }
                }
                let full = p.full_gradient(k, &x);
                assert!(dist_sq(&acc, &full).sqrt() < 1e-12);
            }
        }
    }

    #[test]
    fn global_gradient_is_mean_of_worker_gradients() {
        let p = make_least_squares(4, 5, 6, 1.0, 0.2, 23).unwrap();
        let x = vec![0.5, -1.0, 0.25, 2.0];
        let g = p.global_gradient(&x);
        let mut acc = vec![0.0; 4];
        for k in 0..5 {
            let gk = p.full_gradient(k, &x);
            for (a, b) in acc.iter_mut().zip(&gk) {
                *a += b;
            }
        }
        for v in acc.iter_mut() {
            *v /= 5.0;
        }
        assert!(dist_sq(&acc, &g).sqrt() < 1e-15);
    }

    #[test]
    fn single_worker_global_equals_full() {
        let p = make_logistic_nonconvex(3, 1, 5, 0.0, 0.1, 29).unwrap();
        let x = vec![1.0, 0.0, -1.0];
        assert_eq!(p.global_gradient(&x), p.full_gradient(0, &x));
    }

    #[test]
    fn least_squares_gradient_vanishes_at_consistent_point() {
        // With no noise and no offsets, targets satisfy y = a·x♮ exactly, so
        // the gradient at x♮ is zero; recover x♮ by solving A x = c.
        let p = make_least_squares(3, 2, 8, 0.0, 0.0, 31).unwrap();
        let dim = 3;
        let n = p.n_samples(0) as f64;
        let mut gram = vec![0.0; dim * dim];
        let mut rhs = vec![0.0; dim];
        for s in &p.datasets[0] {
            for i in 0..dim {
                rhs[i] += s.features[i] * s.target / n;
                for j in 0..dim {
                    gram[i * dim + j] += s.features[i] * s.features[j] / n;
                }
            }
        }
        let x_star = solve_spd(&gram, &rhs, dim).unwrap();
        let g = p.full_gradient(0, &x_star);
        assert!(norm_sq(&g).sqrt() < 1e-10);
    }

    #[test]
    fn regularizer_gradient_is_zero_at_origin() {
        let p = make_logistic_nonconvex(4, 2, 4, 0.0, 0.7, 37).unwrap();
        // Isolate the regularizer: the analytic component at coordinate i is
        // λ·2xᵢ/(1+xᵢ²)²; at x = 0 it vanishes.
        let x = vec![0.0; 4];
        let mut reg = vec![0.0; 4];
        p.add_reg_grad(&x, &mut reg);
        assert_eq!(reg, vec![0.0; 4]);
        let x2 = vec![0.5, -1.0, 2.0, 0.0];
        let mut reg2 = vec![0.0; 4];
        p.add_reg_grad(&x2, &mut reg2);
        for (i, &xi) in x2.iter().enumerate() {
            let expect = 0.7 * 2.0 * xi / (1.0 + xi * xi).powi(2);
            assert!((reg2[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn sigma_zero_iff_per_sample_gradients_identical() {
        // Degenerate dataset: one sample per worker.
        let degen = make_least_squares(2, 2, 1, 0.0, 0.0, 41).unwrap();
        let x = vec![0.7, -0.3];
        assert_eq!(degen.worker_variance_at(0, &x), 0.0);
        // Non-degenerate dataset with noise has strictly positive variance.
        let p = make_least_squares(2, 2, 5, 0.0, 0.5, 41).unwrap();
        assert!(p.worker_variance_at(0, &x) > 0.0);
    }

    #[test]
    fn out_of_range_batch_index_is_a_usage_error() {
        let p = make_least_squares(2, 2, 3, 0.0, 0.0, 43).unwrap();
        let mut ifo = 0u64;
        let err = p
            .sample_gradient(0, &[0.0, 0.0], &[3], &mut ifo)
            .unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
        assert_eq!(ifo, 0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(matches!(
            make_least_squares(0, 1, 1, 0.0, 0.0, 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            make_logistic_nonconvex(2, 2, 2, 1.5, 0.0, 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            make_logistic_nonconvex(2, 2, 2, 0.5, -0.1, 1),
            Err(Error::Config(_))
        ));
        // Nonzero offsets with n < dim cannot be realized exactly.
        let offsets = vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]];
        assert!(matches!(
            make_least_squares_with_offsets(3, 2, 2, &offsets, 0.0, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn measure_profile_preconditions() {
        let p = make_least_squares(2, 2, 4, 0.5, 0.1, 47).unwrap();
        let one = vec![vec![0.0, 0.0]];
        assert!(matches!(
            measure_profile(&p, &one, &[]),
            Err(Error::Usage(_))
        ));
        let same = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(matches!(
            measure_profile(&p, &same, &[(0, 1)]),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn sample_gradients_match_finite_differences_per_family() {
        let problems: Vec<ProblemInstance> = vec![
            make_least_squares(4, 2, 6, 1.0, 0.2, 61).unwrap(),
            make_logistic_nonconvex(4, 2, 6, 0.6, 0.03, 61).unwrap(),
            make_two_layer_tanh(3, 2, 2, 6, 0.4, 0.05, 61).unwrap(),
        ];
        let h = 1e-5;
        for p in &problems {
            let mut rng = DetRng::from_key(9, STREAM_PROBLEM_GEN, 0x6664, 2);
            for probe in 0..10 {
                let x: Vec<f64> = (0..p.dim()).map(|_| 0.6 * rng.normal()).collect();
                let k = rng.index(p.workers());
                let i = rng.index(p.n_samples(k));
                let g = p.per_sample_gradient(k, i, &x);
                let mut fd = vec![0.0; p.dim()];
                let mut xp = x.clone();
                for j in 0..p.dim() {
                    xp[j] = x[j] + h;
                    let up = p.per_sample_value(k, i, &xp);
                    xp[j] = x[j] - h;
                    let down = p.per_sample_value(k, i, &xp);
                    xp[j] = x[j];
                    fd[j] = (up - down) / (2.0 * h);
                }
                let err = dist_sq(&fd, &g).sqrt() / norm_sq(&g).sqrt().max(1.0);
                assert!(
                    err <= 1e-5,
                    "{:?} probe {probe}: sample-gradient fd error {err}",
                    p.family()
                );
            }
        }
    }

    #[test]
    fn datasets_regenerate_identically_from_seed() {
        let a = make_logistic_nonconvex(5, 3, 8, 0.7, 0.02, 99).unwrap();
        let b = make_logistic_nonconvex(5, 3, 8, 0.7, 0.02, 99).unwrap();
        let x = vec![0.3; 5];
        for k in 0..3 {
            assert_eq!(a.full_gradient(k, &x), b.full_gradient(k, &x));
        }
    }

    #[test]
    fn tanh_family_forward_and_gradient_shapes() {
        let p = make_two_layer_tanh(3, 4, 2, 5, 0.5, 0.01, 53).unwrap();
        assert_eq!(p.dim(), 4 * 3 + 4);
        let x: Vec<f64> = (0..p.dim()).map(|i| 0.05 * (i as f64 + 1.0)).collect();
        let g = p.global_gradient(&x);
        assert_eq!(g.len(), p.dim());
        assert!(g.iter().all(|v| v.is_finite()));
        assert!(p.global_value(&x).is_finite());
    }
}
