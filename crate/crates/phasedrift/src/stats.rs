//! Ensemble statistics with deterministic, order-insensitive reduction.
//!
//! All reductions run over arrays held in path-index order and use pairwise
//! summation, so results are bit-identical for any worker count.

use nalgebra::{Matrix3, Vector3};

/// Pairwise (cascade) summation; deterministic and O(eps log n) accurate.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        n if n <= 32 => {
            let mut acc = 0.0;
            for x in xs {
                acc += x;
            }
            acc
        }
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Central moments 2..4 about the sample mean.
pub fn central_moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    let d2: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    let d3: Vec<f64> = xs.iter().map(|x| (x - m).powi(3)).collect();
    let d4: Vec<f64> = xs.iter().map(|x| (x - m).powi(4)).collect();
    (
        pairwise_sum(&d2) / n,
        pairwise_sum(&d3) / n,
        pairwise_sum(&d4) / n,
    )
}

/// Standard error of the sample skewness under normality.
pub fn skewness_se(n: usize) -> f64 {
    let n = n as f64;
    (6.0 * n * (n - 1.0) / ((n - 2.0) * (n + 1.0) * (n + 3.0))).sqrt()
}

/// Standard error of the sample excess kurtosis under normality.
pub fn kurtosis_se(n: usize) -> f64 {
    let n = n as f64;
    let s2 = 6.0 * n * (n - 1.0) / ((n - 2.0) * (n + 1.0) * (n + 3.0));
    (4.0 * (n * n - 1.0) * s2 / ((n - 3.0) * (n + 5.0))).sqrt()
}

/// Scalar moment summary of one observable across paths.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MomentStats {
    pub mean: f64,
    pub mean_se: f64,
    pub var: f64,
    pub var_se: f64,
    pub skew: f64,
    pub skew_se: f64,
    pub kurt_excess: f64,
    pub kurt_se: f64,
}

pub fn moment_stats(xs: &[f64]) -> MomentStats {
    let n = xs.len() as f64;
    let (m, m_se) = mean_se(xs);
    let (m2, m3, m4) = central_moments(xs);
    let var = m2 * n / (n - 1.0);
    // Large-sample standard error of the sample variance.
    let var_se = ((m4 - m2 * m2).max(0.0) / n).sqrt();
    let skew = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    let kurt = if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { 0.0 };
    MomentStats {
        mean: m,
        mean_se: m_se,
        var,
        var_se,
        skew,
        skew_se: skewness_se(xs.len()),
        kurt_excess: kurt,
        kurt_se: kurtosis_se(xs.len()),
    }
}

/// Statistics of one ensemble checkpoint.
#[derive(Debug, Clone)]
pub struct CheckpointStats {
    pub t: f64,
    pub z: MomentStats,
    /// Complex mean of exp(iZ) and a standard error for its modulus.
    pub decoherence_re: f64,
    pub decoherence_im: f64,
    pub decoherence_se: f64,
    /// E[(K - k0) (K - k0)^T] with componentwise standard errors.
    pub k_cov: Matrix3<f64>,
    pub k_cov_se: Matrix3<f64>,
    pub mean_k: Vector3<f64>,
}

impl CheckpointStats {
    pub fn decoherence_modulus(&self) -> f64 {
        (self.decoherence_re * self.decoherence_re + self.decoherence_im * self.decoherence_im)
            .sqrt()
    }
}

/// Stopping-time event frequencies over an ensemble.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct TauFrequencies {
    pub violent_turn: f64,
    pub tube_return: f64,
    pub any: f64,
    /// Binomial standard error for `any`.
    pub se: f64,
}

/// Ensemble summaries of one run.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub delta: f64,
    pub checkpoints: Vec<CheckpointStats>,
    /// max over paths of max_t | |K(t)| - |k0| |.
    pub shell_drift_max: f64,
    /// max over paths of max_t |H_delta(t) - H_delta(0)|.
    pub energy_drift_max: f64,
    /// max over paths of max_t |V| along the path (shell-bound certificate).
    pub v_max: f64,
    pub tau_freq: TauFrequencies,
    pub n_effective: usize,
}

/// Per-checkpoint raw columns, filled in path order.
pub(crate) struct CheckpointColumns {
    pub t: f64,
    pub z: Vec<f64>,
    pub cos_z: Vec<f64>,
    pub sin_z: Vec<f64>,
    pub dk: Vec<Vector3<f64>>,
}

impl CheckpointColumns {
    pub fn new(t: f64, capacity: usize) -> Self {
        CheckpointColumns {
            t,
            z: Vec::with_capacity(capacity),
            cos_z: Vec::with_capacity(capacity),
            sin_z: Vec::with_capacity(capacity),
            dk: Vec::with_capacity(capacity),
        }
    }

    pub fn reduce(&self) -> CheckpointStats {
        let n = self.z.len() as f64;
        let (dec_re, se_re) = mean_se(&self.cos_z);
        let (dec_im, se_im) = mean_se(&self.sin_z);
        let mut k_cov = Matrix3::zeros();
        let mut k_cov_se = Matrix3::zeros();
        for m in 0..3 {
            for nn in 0..3 {
                let prods: Vec<f64> = self.dk.iter().map(|d| d[m] * d[nn]).collect();
                let (mu, se) = mean_se(&prods);
                k_cov[(m, nn)] = mu;
                k_cov_se[(m, nn)] = se;
            }
        }
        let mean_k = Vector3::from_fn(|m, _| {
            let col: Vec<f64> = self.dk.iter().map(|d| d[m]).collect();
            mean(&col)
        });
        let _ = n;
        CheckpointStats {
            t: self.t,
            z: moment_stats(&self.z),
            decoherence_re: dec_re,
            decoherence_im: dec_im,
            decoherence_se: (se_re * se_re + se_im * se_im).sqrt(),
            k_cov,
            k_cov_se,
            mean_k,
        }
    }
}

impl EnsembleStats {
    /// JSON value with a stable field order for artifact emission.
    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::json;
        json!({
            "delta": self.delta,
            "n_effective": self.n_effective,
            "shell_drift_max": self.shell_drift_max,
            "energy_drift_max": self.energy_drift_max,
            "v_max": self.v_max,
            "tau_freq": self.tau_freq,
            "checkpoints": self.checkpoints.iter().map(|c| json!({
                "t": c.t,
                "z": c.z,
                "decoherence_re": c.decoherence_re,
                "decoherence_im": c.decoherence_im,
                "decoherence_abs": c.decoherence_modulus(),
                "decoherence_se": c.decoherence_se,
                "mean_k": [c.mean_k.x, c.mean_k.y, c.mean_k.z],
                "k_cov": (0..3).map(|m| (0..3).map(|n| c.k_cov[(m, n)]).collect::<Vec<_>>()).collect::<Vec<_>>(),
                "k_cov_se": (0..3).map(|m| (0..3).map(|n| c.k_cov_se[(m, n)]).collect::<Vec<_>>()).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        })
    }
}
