//! Gridless synthesis of the joint stationary Gaussian field `F = (V, S)`.
//!
//! A realization is a randomized spectral (random Fourier) expansion
//!
//! ```text
//! V(y) = sum_j a_V,j cos(xi_j . y + phi_j)
//! S(y) = sum_j a_S,j cos(xi_j . (y + b) + phi_j)
//! ```
//!
//! with wavevectors drawn from the normalized trace spectrum, amplitude
//! pairs drawn through the matrix square root of the 2x2 spectral matrix,
//! and uniform phases. The ensemble covariance of `(V, S)` equals the model
//! correlation tensor exactly in expectation for any mode count; a single
//! realization approaches it at rate `n_modes^{-1/2}`. Trajectories wander
//! over an unbounded domain in the fast variable, so evaluation is gridless
//! and exact derivatives come from differentiating the mode sum.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};

use crate::corr::{CorrelationModel, KernelFamily};
use crate::error::{Error, Result};

/// Sampler controls beyond the mode count.
#[derive(Debug, Clone, Copy, Default)]
pub struct FieldOptions {
    /// Hard-clip the Gaussian amplitude draws at this many standard
    /// deviations to restore the almost-sure bound on the fields; perturbs
    /// the covariance by O(exp(-c^2/2)). Off by default.
    pub clip_sigmas: Option<f64>,
}

/// One sampled realization of the joint field, immutable and freely
/// shareable across concurrent path integrations.
#[derive(Debug, Clone)]
pub struct FieldRealization {
    xi: Vec<[f64; 3]>,
    amp_v: Vec<f64>,
    amp_s: Vec<f64>,
    phase_v: Vec<f64>,
    /// Phase offset of the S component relative to V (zero unless the model
    /// carries a cross-correlation shift), stored as (cos, sin).
    dphase: Option<Vec<[f64; 2]>>,
    pub n_modes: usize,
    pub seed: u64,
}

/// Draw a realization of `(V, S)` with the prescribed correlation tensor.
pub fn sample_field(
    model: &CorrelationModel,
    n_modes: usize,
    seed: u64,
) -> Result<FieldRealization> {
    sample_field_with(model, n_modes, seed, &FieldOptions::default())
}

pub fn sample_field_with(
    model: &CorrelationModel,
    n_modes: usize,
    seed: u64,
    opts: &FieldOptions,
) -> Result<FieldRealization> {
    if n_modes == 0 {
        return Err(Error::InvalidModel("n_modes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = model.rho_cross;
    let cross_rem = (1.0 - rho * rho).max(0.0).sqrt();
    let scale = (2.0 / n_modes as f64).sqrt();
    let shift = model.cross_shift;
    let shifted = shift != Vector3::zeros() && rho != 0.0;

    let mut xi = Vec::with_capacity(n_modes);
    let mut amp_v = Vec::with_capacity(n_modes);
    let mut amp_s = Vec::with_capacity(n_modes);
    let mut phase_v = Vec::with_capacity(n_modes);
    let mut dphase = if shifted {
        Some(Vec::with_capacity(n_modes))
    } else {
        None
    };

    for _ in 0..n_modes {
        let w = draw_wavevector(model, &mut rng);
        if model.kernel_spectrum(w.norm()) < 0.0 {
            return Err(Error::SpectrumNotPsd {
                xi: [w.x, w.y, w.z],
                min_eig: model.kernel_spectrum(w.norm()),
            });
        }
        let mut gv: f64 = StandardNormal.sample(&mut rng);
        let mut gs: f64 = StandardNormal.sample(&mut rng);
        if let Some(c) = opts.clip_sigmas {
            gv = gv.clamp(-c, c);
            gs = gs.clamp(-c, c);
        }
        // Per-mode 2x2 square root of the spectral matrix; both families
        // share the kernel shape, so the matrix is the constant
        // [[sv^2, rho sv ss], [rho sv ss, ss^2]] with Cholesky factor
        // [[sv, 0], [rho ss, sqrt(1-rho^2) ss]].
        amp_v.push(scale * model.sigma_v * gv);
        amp_s.push(scale * model.sigma_s * (rho * gv + cross_rem * gs));
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        phase_v.push(phi);
        if let Some(d) = dphase.as_mut() {
            let (s, c) = w.dot(&shift).sin_cos();
            d.push([c, s]);
        }
        xi.push([w.x, w.y, w.z]);
    }

    Ok(FieldRealization {
        xi,
        amp_v,
        amp_s,
        phase_v,
        dphase,
        n_modes,
        seed,
    })
}

fn draw_wavevector(model: &CorrelationModel, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    match model.family {
        KernelFamily::GaussianIsotropic => {
            let inv_ell = 1.0 / model.ell;
            let gx: f64 = StandardNormal.sample(rng);
            let gy: f64 = StandardNormal.sample(rng);
            let gz: f64 = StandardNormal.sample(rng);
            Vector3::new(gx, gy, gz) * inv_ell
        }
        KernelFamily::BumpSpectrum => {
            // Radial density ~ ghat(rho) rho^2 on [0, 1/ell]; rejection from
            // the uniform envelope, then a uniform direction.
            let density_max = model.kernel().bump_density_max();
            let x = loop {
                let x: f64 = rng.gen::<f64>();
                let u: f64 = rng.gen::<f64>() * density_max;
                let b = if x >= 1.0 {
                    0.0
                } else {
                    (-1.0 / (1.0 - x * x)).exp()
                };
                if u <= b * x * x {
                    break x;
                }
            };
            let dir: [f64; 3] = UnitSphere.sample(rng);
            Vector3::new(dir[0], dir[1], dir[2]) * (x / model.ell)
        }
    }
}

impl FieldRealization {
    /// `V(y)` for this realization.
    pub fn eval_v(&self, y: Vector3<f64>) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n_modes {
            let th = self.theta(i, y);
            acc += self.amp_v[i] * th.cos();
        }
        acc
    }

    /// `S(y)` for this realization.
    pub fn eval_s(&self, y: Vector3<f64>) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n_modes {
            let (_, c) = self.sincos_s(i, y);
            acc += self.amp_s[i] * c;
        }
        acc
    }

    /// Exact analytic gradient of `V` (sum of mode gradients).
    pub fn eval_grad_v(&self, y: Vector3<f64>) -> Vector3<f64> {
        let mut acc = Vector3::zeros();
        for i in 0..self.n_modes {
            let th = self.theta(i, y);
            let w = -self.amp_v[i] * th.sin();
            let xi = self.xi[i];
            acc.x += w * xi[0];
            acc.y += w * xi[1];
            acc.z += w * xi[2];
        }
        acc
    }

    /// Exact analytic Hessian of `V`.
    pub fn eval_hess_v(&self, y: Vector3<f64>) -> Matrix3<f64> {
        let mut acc = Matrix3::zeros();
        for i in 0..self.n_modes {
            let th = self.theta(i, y);
            let w = -self.amp_v[i] * th.cos();
            let xi = Vector3::new(self.xi[i][0], self.xi[i][1], self.xi[i][2]);
            acc += (xi * xi.transpose()) * w;
        }
        acc
    }

    /// Fused `(grad V(y), S(y), V(y))` in a single pass over the modes: the
    /// characteristic dynamics consume all three each stage and the sincos
    /// is shared.
    pub fn eval_force(&self, y: Vector3<f64>) -> (Vector3<f64>, f64, f64) {
        let mut grad = [0.0_f64; 3];
        let mut s_val = 0.0;
        let mut v_val = 0.0;
        match &self.dphase {
            None => {
                for i in 0..self.n_modes {
                    let xi = self.xi[i];
                    let th = xi[0] * y.x + xi[1] * y.y + xi[2] * y.z + self.phase_v[i];
                    let (sin, cos) = th.sin_cos();
                    let w = -self.amp_v[i] * sin;
                    grad[0] += w * xi[0];
                    grad[1] += w * xi[1];
                    grad[2] += w * xi[2];
                    s_val += self.amp_s[i] * cos;
                    v_val += self.amp_v[i] * cos;
                }
            }
            Some(d) => {
                for i in 0..self.n_modes {
                    let xi = self.xi[i];
                    let th = xi[0] * y.x + xi[1] * y.y + xi[2] * y.z + self.phase_v[i];
                    let (sin, cos) = th.sin_cos();
                    let w = -self.amp_v[i] * sin;
                    grad[0] += w * xi[0];
                    grad[1] += w * xi[1];
                    grad[2] += w * xi[2];
                    // cos(theta + dphi) via the angle-addition identity.
                    s_val += self.amp_s[i] * (cos * d[i][0] - sin * d[i][1]);
                    v_val += self.amp_v[i] * cos;
                }
            }
        }
        (Vector3::new(grad[0], grad[1], grad[2]), s_val, v_val)
    }

    #[inline]
    fn theta(&self, i: usize, y: Vector3<f64>) -> f64 {
        let xi = self.xi[i];
        xi[0] * y.x + xi[1] * y.y + xi[2] * y.z + self.phase_v[i]
    }

    #[inline]
    fn sincos_s(&self, i: usize, y: Vector3<f64>) -> (f64, f64) {
        let (sin, cos) = self.theta(i, y).sin_cos();
        match &self.dphase {
            None => (sin, cos),
            Some(d) => (
                sin * d[i][0] + cos * d[i][1],
                cos * d[i][0] - sin * d[i][1],
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corr::Component;
    use approx::assert_relative_eq;

    fn model() -> CorrelationModel {
        CorrelationModel::new(KernelFamily::GaussianIsotropic, 1.0, 1.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = model();
        let f1 = sample_field(&m, 64, 9).unwrap();
        let f2 = sample_field(&m, 64, 9).unwrap();
        assert_eq!(f1.xi, f2.xi);
        assert_eq!(f1.amp_v, f2.amp_v);
        assert_eq!(f1.phase_v, f2.phase_v);
        let y = Vector3::new(0.3, -0.7, 1.1);
        assert_eq!(f1.eval_v(y), f2.eval_v(y));
        assert_eq!(f1.eval_s(y), f2.eval_s(y));
    }

    #[test]
    fn zero_amplitudes_give_zero_fields() {
        let m = CorrelationModel::new(KernelFamily::GaussianIsotropic, 0.0, 0.0, 1.0, 0.0)
            .unwrap();
        let f = sample_field(&m, 32, 1).unwrap();
        for y in [Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0)] {
            assert_eq!(f.eval_v(y), 0.0);
            assert_eq!(f.eval_s(y), 0.0);
            assert_eq!(f.eval_grad_v(y), Vector3::zeros());
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = model();
        let f = sample_field(&m, 128, 3).unwrap();
        let h = 1e-5;
        for y in [Vector3::new(0.2, 0.4, -0.3), Vector3::new(-1.5, 2.2, 0.7)] {
            let g = f.eval_grad_v(y);
            for axis in 0..3 {
                let mut yp = y;
                let mut ym = y;
                yp[axis] += h;
                ym[axis] -= h;
                let fd = (f.eval_v(yp) - f.eval_v(ym)) / (2.0 * h);
                assert_relative_eq!(g[axis], fd, max_relative = 1e-8, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        let m = model();
        let f = sample_field(&m, 64, 5).unwrap();
        let y = Vector3::new(0.4, -0.1, 0.9);
        let h = 1e-5;
        let hess = f.eval_hess_v(y);
        for axis in 0..3 {
            let mut yp = y;
            let mut ym = y;
            yp[axis] += h;
            ym[axis] -= h;
            let fd = (f.eval_grad_v(yp) - f.eval_grad_v(ym)) / (2.0 * h);
            for row in 0..3 {
                assert_relative_eq!(hess[(row, axis)], fd[row], max_relative = 1e-7, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn fused_force_agrees_with_individual_evaluations() {
        for shift in [Vector3::zeros(), Vector3::new(0.3, -0.2, 0.5)] {
            let m = CorrelationModel::with_cross_shift(
                KernelFamily::GaussianIsotropic,
                1.0,
                0.8,
                1.0,
                0.6,
                shift,
            )
            .unwrap();
            let f = sample_field(&m, 96, 11).unwrap();
            let y = Vector3::new(1.2, 0.1, -0.8);
            let (grad, s, v) = f.eval_force(y);
            assert_relative_eq!((grad - f.eval_grad_v(y)).norm(), 0.0, epsilon = 1e-12);
            assert_relative_eq!(s, f.eval_s(y), epsilon = 1e-12);
            assert_relative_eq!(v, f.eval_v(y), epsilon = 1e-12);
        }
    }

    #[test]
    fn perfect_correlation_makes_fields_identical() {
        let m = CorrelationModel::new(KernelFamily::GaussianIsotropic, 0.9, 0.9, 1.0, 1.0)
            .unwrap();
        let f = sample_field(&m, 64, 2).unwrap();
        for y in [Vector3::zeros(), Vector3::new(0.5, -1.0, 2.0)] {
            assert_relative_eq!(f.eval_v(y), f.eval_s(y), epsilon = 1e-13);
        }
    }

    #[test]
    fn clipping_bounds_the_amplitudes() {
        let m = model();
        let opts = FieldOptions {
            clip_sigmas: Some(2.0),
        };
        let f = sample_field_with(&m, 256, 4, &opts).unwrap();
        let bound = (2.0 / 256.0_f64).sqrt() * 2.0 + 1e-15;
        assert!(f.amp_v.iter().all(|a| a.abs() <= bound));
    }

    /// Monte Carlo check of the covariance contract: variance at the origin
    /// and cross covariance at a set of lags, against the model tensor.
    #[test]
    fn ensemble_covariance_matches_model() {
        let m = CorrelationModel::new(KernelFamily::GaussianIsotropic, 1.0, 0.8, 1.0, 0.6)
            .unwrap();
        let n_real = 3000;
        let lags: Vec<Vector3<f64>> = (0..10)
            .map(|i| Vector3::new(0.25 * i as f64, 0.1 * i as f64, -0.15 * i as f64))
            .collect();
        let mut var_v = Vec::with_capacity(n_real);
        let mut cross: Vec<Vec<f64>> = vec![Vec::with_capacity(n_real); lags.len()];
        for seed in 0..n_real {
            let f = sample_field(&m, 128, seed as u64).unwrap();
            let v0 = f.eval_v(Vector3::zeros());
            var_v.push(v0 * v0);
            for (j, lag) in lags.iter().enumerate() {
                cross[j].push(v0 * f.eval_s(*lag));
            }
        }
        let (mean_var, se_var) = mean_se(&var_v);
        assert!(
            (mean_var - 1.0).abs() <= 3.0 * se_var,
            "Var V(0) = {mean_var:.4} +- {se_var:.4}"
        );
        for (j, lag) in lags.iter().enumerate() {
            let (mean_c, se_c) = mean_se(&cross[j]);
            // E[V(0) S(y)] = R^VS(y)
            let expect = m.eval(Component::VS, *lag);
            assert!(
                (mean_c - expect).abs() <= 4.0 * se_c.max(1e-4),
                "lag {j}: E[V(0)S(y)] = {mean_c:.4} +- {se_c:.4}, expected {expect:.4}"
            );
        }
    }

    #[test]
    fn law_is_stationary_and_isotropic() {
        let m = model();
        let y1 = Vector3::new(0.3, 0.0, 0.0);
        let shift_h = Vector3::new(5.0, -3.0, 2.0);
        let rot = nalgebra::Rotation3::from_euler_angles(0.7, -0.3, 1.9);
        let n_real = 2500;
        let (mut c_base, mut c_shift, mut c_rot) = (Vec::new(), Vec::new(), Vec::new());
        for seed in 0..n_real {
            let f = sample_field(&m, 128, 70_000 + seed as u64).unwrap();
            c_base.push(f.eval_v(Vector3::zeros()) * f.eval_v(y1));
            c_shift.push(f.eval_v(shift_h) * f.eval_v(y1 + shift_h));
            c_rot.push(f.eval_v(Vector3::zeros()) * f.eval_v(rot * y1));
        }
        let (m0, s0) = mean_se(&c_base);
        let (m1, s1) = mean_se(&c_shift);
        let (m2, s2) = mean_se(&c_rot);
        assert!(
            (m0 - m1).abs() <= 4.0 * (s0 + s1),
            "stationarity: {m0:.4}+-{s0:.4} vs {m1:.4}+-{s1:.4}"
        );
        assert!(
            (m0 - m2).abs() <= 4.0 * (s0 + s2),
            "isotropy: {m0:.4}+-{s0:.4} vs {m2:.4}+-{s2:.4}"
        );
    }

    #[test]
    fn realizations_stay_bounded_across_seeds() {
        let m = model();
        let mut maxima = Vec::new();
        for seed in [1u64, 2, 3] {
            let f = sample_field(&m, 512, seed).unwrap();
            let mut mx: f64 = 0.0;
            for ix in 0..10 {
                for iy in 0..10 {
                    for iz in 0..10 {
                        let y = Vector3::new(ix as f64, iy as f64, iz as f64) * 0.5;
                        let v = f.eval_v(y).abs();
                        let g = f.eval_grad_v(y).norm();
                        let h = f.eval_hess_v(y).norm();
                        assert!(v.is_finite() && g.is_finite() && h.is_finite());
                        mx = mx.max(v).max(g).max(h);
                    }
                }
            }
            maxima.push(mx);
        }
        let lo = maxima.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = maxima.iter().cloned().fold(0.0_f64, f64::max);
        assert!(hi / lo < 3.0, "grid maxima unstable across seeds: {maxima:?}");
    }

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }
}
