//! Euler-Maruyama simulation of the limit diffusion with sphere projection.

use nalgebra::{Vector3, Vector4};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::coeffs::{compute_coefficients_with, CoeffOptions, TransportCoefficients};
use crate::corr::CorrelationModel;
use crate::error::{Error, Result};
use crate::seeding;
use crate::stats::{CheckpointColumns, EnsembleStats, TauFrequencies};

/// State of the limit process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitState {
    pub x: Vector3<f64>,
    pub k: Vector3<f64>,
    pub z: f64,
}

/// One Euler-Maruyama step of the `(k, z)` block plus transport of `x`.
///
/// The diffusion factor is `B` with `B B^T = 2A` (the generator carries
/// un-halved second-order coefficients); after the step `k` is rescaled to
/// its previous magnitude, which removes only the O(dt) scheme-induced
/// normal drift since the exact process conserves `|k|`.
pub fn step_limit_sde(
    state: &LimitState,
    coeffs: &TransportCoefficients,
    dt: f64,
    noise: [f64; 4],
) -> Result<LimitState> {
    let b = coeffs.diffusion_factor()?;
    let drift = coeffs.drift();
    let xi = Vector4::new(noise[0], noise[1], noise[2], noise[3]);
    let dw = b * xi * dt.sqrt();
    let knorm = state.k.norm();

    let mut k = state.k;
    for m in 0..3 {
        k[m] += drift[m] * dt + dw[m];
    }
    let z = state.z + drift[3] * dt + dw[3];
    let x = state.x - state.k * dt;

    let kn = k.norm();
    if kn == 0.0 {
        return Err(Error::NonFinite("limit momentum collapsed to zero"));
    }
    Ok(LimitState {
        x,
        k: k * (knorm / kn),
        z,
    })
}

/// Scalar reduction of the coefficient set for isotropic media: at every
/// `k` on the sphere of radius `a`,
/// `D_mn = beta (I - khat khat^T)`, `D_m(+-k) = +-gamma khat`,
/// `E_m = e_par khat`, with constant `beta, gamma, e_par, E, D`.
#[derive(Debug, Clone, Copy)]
pub struct IsotropicCoeffs {
    pub radius: f64,
    pub beta: f64,
    pub gamma: f64,
    pub e_par: f64,
    pub e: f64,
    pub d: f64,
}

impl IsotropicCoeffs {
    pub fn from_model(model: &CorrelationModel, radius: f64) -> Result<Self> {
        if !model.is_isotropic() {
            return Err(Error::Config(
                "isotropic coefficient reduction requires an isotropic model".into(),
            ));
        }
        let opts = CoeffOptions::default();
        let k_ref = Vector3::new(0.0, 0.0, radius);
        let c = compute_coefficients_with(model, k_ref, &opts)?;
        let beta = 0.5 * c.d_mn.trace();
        let out = IsotropicCoeffs {
            radius,
            beta,
            gamma: c.d_m_plus.z,
            e_par: c.e_m.z,
            e: c.e,
            d: c.d,
        };
        // Sphere identity tr D + E . k = 0 must hold for the projection
        // step to be exact in law.
        let resid = (2.0 * beta + out.e_par * radius).abs();
        if resid > 1e-6 * beta.abs().max(1e-12) {
            return Err(Error::Config(format!(
                "sphere-trace identity violated: residual {resid:.3e}"
            )));
        }
        Ok(out)
    }

    /// Full coefficient set at momentum `k` (any point of the sphere).
    pub fn at(&self, k: Vector3<f64>) -> TransportCoefficients {
        let khat = k / k.norm();
        let tangent = nalgebra::Matrix3::identity() - khat * khat.transpose();
        TransportCoefficients {
            k,
            d_mn: tangent * self.beta,
            d: self.d,
            d_m_plus: khat * self.gamma,
            d_m_minus: -khat * self.gamma,
            e_m: khat * self.e_par,
            e: self.e,
            e_formal: Vector3::zeros(),
            f_formal: self.e,
            kappa: self.d,
        }
    }
}

/// Coefficient source for the limit simulation: a precomputed isotropic
/// reduction (exact for isotropic media, one quadrature total), or fresh
/// quadrature at every visited momentum for anisotropic cross models.
pub enum CoeffProvider<'a> {
    Isotropic(IsotropicCoeffs),
    General {
        model: &'a CorrelationModel,
        opts: CoeffOptions,
        radius: f64,
    },
}

impl<'a> CoeffProvider<'a> {
    pub fn new(model: &'a CorrelationModel, radius: f64) -> Result<Self> {
        if model.is_isotropic() {
            Ok(CoeffProvider::Isotropic(IsotropicCoeffs::from_model(
                model, radius,
            )?))
        } else {
            Ok(CoeffProvider::General {
                model,
                opts: CoeffOptions::default(),
                radius,
            })
        }
    }

    pub fn at(&self, k: Vector3<f64>) -> Result<TransportCoefficients> {
        match self {
            CoeffProvider::Isotropic(iso) => Ok(iso.at(k)),
            CoeffProvider::General { model, opts, .. } => {
                compute_coefficients_with(model, k, opts)
            }
        }
    }

    fn step(
        &self,
        state: &LimitState,
        dt: f64,
        noise: [f64; 4],
    ) -> Result<LimitState> {
        match self {
            // Closed-form tangent square root: for isotropic media the
            // cross column vanishes, so B = sqrt(2 beta)(I - khat khat^T)
            // on the k block and sqrt(2 D) on z. Projection anchors to the
            // fixed sphere radius, so round-off cannot accumulate.
            CoeffProvider::Isotropic(iso) => {
                let khat = state.k / state.k.norm();
                let xi = Vector3::new(noise[0], noise[1], noise[2]);
                let xi_t = xi - khat * khat.dot(&xi);
                let sdt = dt.sqrt();
                let mut k = state.k
                    + khat * (iso.e_par * dt)
                    + xi_t * ((2.0 * iso.beta).max(0.0).sqrt() * sdt);
                let z = state.z + iso.e * dt + (2.0 * iso.d).max(0.0).sqrt() * sdt * noise[3];
                let x = state.x - state.k * dt;
                let kn = k.norm();
                k *= iso.radius / kn;
                Ok(LimitState { x, k, z })
            }
            CoeffProvider::General { radius, .. } => {
                let coeffs = self.at(state.k)?;
                let mut next = step_limit_sde(state, &coeffs, dt, noise)?;
                next.k *= radius / next.k.norm();
                Ok(next)
            }
        }
    }
}

/// Parameters of a limit-SDE ensemble run.
#[derive(Debug, Clone)]
pub struct LimitEnsembleParams {
    pub x0: Vector3<f64>,
    pub k0: Vector3<f64>,
    pub t_end: f64,
    /// Time step; `<= 0` selects `1e-3 min(1, 1/beta)` automatically.
    pub dt: f64,
    pub n_paths: usize,
    pub base_seed: u64,
    pub checkpoints: Vec<f64>,
}

impl LimitEnsembleParams {
    pub fn new(k0: Vector3<f64>, t_end: f64, n_paths: usize, base_seed: u64) -> Self {
        LimitEnsembleParams {
            x0: Vector3::zeros(),
            k0,
            t_end,
            dt: 0.0,
            n_paths,
            base_seed,
            checkpoints: Vec::new(),
        }
    }
}

/// Run an ensemble of limit-SDE paths; seeding and reduction contracts
/// match the delta-dynamics ensemble.
pub fn run_limit_ensemble(
    model: &CorrelationModel,
    params: &LimitEnsembleParams,
) -> Result<EnsembleStats> {
    if params.n_paths < 2 {
        return Err(Error::Config("n_paths must be >= 2".into()));
    }
    let radius = params.k0.norm();
    let provider = CoeffProvider::new(model, radius)?;
    let dt = if params.dt > 0.0 {
        params.dt
    } else {
        let beta = match &provider {
            CoeffProvider::Isotropic(iso) => iso.beta,
            CoeffProvider::General { .. } => provider.at(params.k0)?.d_mn.trace() * 0.5,
        };
        1e-3 * 1.0_f64.min(1.0 / beta.max(1e-12))
    };
    let n_steps = (params.t_end / dt).ceil().max(1.0) as usize;
    let h = params.t_end / n_steps as f64;
    let mut cp_indices: Vec<usize> = params
        .checkpoints
        .iter()
        .map(|&t| ((t / h).round() as usize).clamp(1, n_steps))
        .collect();
    cp_indices.push(n_steps);
    cp_indices.sort_unstable();
    cp_indices.dedup();

    type Row = (f64, f64, f64, Vector3<f64>);
    let results: Vec<Result<Vec<Row>>> = (0..params.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeding::rng_for(params.base_seed, i as u64, "limit");
            let mut state = LimitState {
                x: params.x0,
                k: params.k0,
                z: 0.0,
            };
            let mut rows = Vec::with_capacity(cp_indices.len());
            let mut next_cp = 0usize;
            for step in 1..=n_steps {
                let noise = [
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                ];
                state = provider.step(&state, h, noise).map_err(|e| {
                    Error::PathFailed {
                        index: i,
                        source: Box::new(e),
                    }
                })?;
                if next_cp < cp_indices.len() && step == cp_indices[next_cp] {
                    let (sin, cos) = state.z.sin_cos();
                    rows.push((state.z, cos, sin, state.k - params.k0));
                    next_cp += 1;
                }
            }
            Ok(rows)
        })
        .collect();

    let total = results.len();
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed > 0 && failed * 100 > total {
        let first = results
            .iter()
            .find_map(|r| r.as_ref().err())
            .map(|e| e.to_string())
            .unwrap_or_default();
        return Err(Error::EnsembleAborted {
            failed,
            total,
            first,
        });
    }

    let ok_rows: Vec<&Vec<Row>> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let mut columns: Vec<CheckpointColumns> = cp_indices
        .iter()
        .map(|&idx| CheckpointColumns::new(idx as f64 * h, ok_rows.len()))
        .collect();
    for rows in &ok_rows {
        for (col, row) in columns.iter_mut().zip(rows.iter()) {
            col.z.push(row.0);
            col.cos_z.push(row.1);
            col.sin_z.push(row.2);
            col.dk.push(row.3);
        }
    }
    Ok(EnsembleStats {
        delta: 0.0,
        checkpoints: columns.iter().map(|c| c.reduce()).collect(),
        shell_drift_max: 0.0,
        energy_drift_max: 0.0,
        v_max: 0.0,
        tau_freq: TauFrequencies::default(),
        n_effective: ok_rows.len(),
    })
}

/// Feynman-Kac Monte Carlo estimate of
/// `W(t, x0, k0) = E[ exp(i Z(t)) W0(X(t), K(t)) ]` under the limit
/// diffusion, with its standard error.
pub fn estimate_limit_observable<F>(
    model: &CorrelationModel,
    x0: Vector3<f64>,
    k0: Vector3<f64>,
    t: f64,
    n_paths: usize,
    seed: u64,
    w0: F,
    se_tol: Option<f64>,
) -> Result<(Complex64, f64)>
where
    F: Fn(Vector3<f64>, Vector3<f64>) -> f64 + Sync,
{
    if t == 0.0 {
        return Ok((Complex64::new(w0(x0, k0), 0.0), 0.0));
    }
    let provider = CoeffProvider::new(model, k0.norm())?;
    let dt = {
        let beta = provider.at(k0)?.d_mn.trace() * 0.5;
        (1e-3 * 1.0_f64.min(1.0 / beta.max(1e-12))).min(t)
    };
    let n_steps = (t / dt).ceil().max(1.0) as usize;
    let h = t / n_steps as f64;

    let samples: Vec<Result<Complex64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeding::rng_for(seed, i as u64, "limit-fk");
            let mut state = LimitState {
                x: x0,
                k: k0,
                z: 0.0,
            };
            for _ in 0..n_steps {
                let noise = [
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                ];
                state = provider.step(&state, h, noise)?;
            }
            Ok(Complex64::from_polar(1.0, state.z) * w0(state.x, state.k))
        })
        .collect();

    let mut re = Vec::with_capacity(n_paths);
    let mut im = Vec::with_capacity(n_paths);
    for s in samples {
        let v = s?;
        re.push(v.re);
        im.push(v.im);
    }
    let (mre, se_re) = crate::stats::mean_se(&re);
    let (mim, se_im) = crate::stats::mean_se(&im);
    let se = (se_re * se_re + se_im * se_im).sqrt();
    if let Some(tol) = se_tol {
        if se > tol {
            return Err(Error::SeTolerance { se, tol });
        }
    }
    Ok((Complex64::new(mre, mim), se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::compute_coefficients;
    use crate::corr::KernelFamily;
    use approx::assert_relative_eq;

    #[test]
    fn zero_fields_give_pure_transport() {
        let m = CorrelationModel::new(KernelFamily::GaussianIsotropic, 0.0, 0.0, 1.0, 0.0)
            .unwrap();
        let k0 = Vector3::new(0.0, 0.0, 2.0);
        let provider = CoeffProvider::new(&m, 2.0).unwrap();
        let mut state = LimitState {
            x: Vector3::new(1.0, 0.0, 0.0),
            k: k0,
            z: 0.0,
        };
        for _ in 0..100 {
            state = provider.step(&state, 0.01, [0.3, -0.2, 0.8, 1.5]).unwrap();
        }
        assert_relative_eq!(
            (state.x - (Vector3::new(1.0, 0.0, 0.0) - k0 * 1.0)).norm(),
            0.0,
            epsilon = 1e-12
        );
        assert_eq!(state.k, k0);
        assert_eq!(state.z, 0.0);
    }

    #[test]
    fn momentum_magnitude_is_projected_every_step() {
        let m = CorrelationModel::default_gaussian();
        let k0 = Vector3::new(0.0, 0.0, 2.0);
        let c = compute_coefficients(&m, k0).unwrap();
        let mut state = LimitState {
            x: Vector3::zeros(),
            k: k0,
            z: 0.0,
        };
        let mut rng = seeding::rng_for(1, 0, "test");
        for _ in 0..200 {
            let noise = [
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ];
            let before = state.k.norm();
            let coeffs = compute_coefficients(&m, state.k).unwrap();
            state = step_limit_sde(&state, &coeffs, 1e-3, noise).unwrap();
            // Per-step projection contract, plus a loose accumulated bound.
            assert!((state.k.norm() - before).abs() < 1e-14);
            assert!((state.k.norm() - 2.0).abs() < 1e-12);
        }
        let _ = c;
    }

    #[test]
    fn isotropic_reduction_matches_quadrature_at_rotated_momenta() {
        let m = CorrelationModel::new(KernelFamily::GaussianIsotropic, 1.0, 0.8, 1.0, 0.5)
            .unwrap();
        let iso = IsotropicCoeffs::from_model(&m, 2.0).unwrap();
        for dir in [
            Vector3::new(1.0, 1.0, 0.3).normalize(),
            Vector3::new(-0.2, 0.9, -1.4).normalize(),
        ] {
            let k = dir * 2.0;
            let fast = iso.at(k);
            let slow = compute_coefficients(&m, k).unwrap();
            assert!((fast.d_mn - slow.d_mn).amax() < 1e-9);
            assert!((fast.d_m_plus - slow.d_m_plus).amax() < 1e-9);
            assert!((fast.e_m - slow.e_m).amax() < 1e-9);
            assert_relative_eq!(fast.d, slow.d, epsilon = 1e-10);
            assert_relative_eq!(fast.e, slow.e, epsilon = 1e-10);
        }
    }

    #[test]
    fn closed_form_factor_matches_eigen_factor_in_law() {
        // B B^T must equal 2A for both the closed-form isotropic path and
        // the eigendecomposition route.
        let m = CorrelationModel::new(KernelFamily::GaussianIsotropic, 1.0, 0.7, 1.0, 0.4)
            .unwrap();
        let k = Vector3::new(0.0, 0.0, 2.0);
        let c = compute_coefficients(&m, k).unwrap();
        let b = c.diffusion_factor().unwrap();
        let bbt = b * b.transpose();
        let a2 = c.a_block() * 2.0;
        assert!((bbt - a2).amax() < 1e-12);
    }

    #[test]
    fn phase_variance_grows_like_twice_kappa_t() {
        let m = CorrelationModel::default_gaussian();
        let k0 = Vector3::new(0.0, 0.0, 2.0);
        let kappa = compute_coefficients(&m, k0).unwrap().kappa;
        let t = 0.5;
        let mut p = LimitEnsembleParams::new(k0, t, 4000, 31);
        p.dt = 1e-3;
        let stats = run_limit_ensemble(&m, &p).unwrap();
        let last = stats.checkpoints.last().unwrap();
        let expect = 2.0 * kappa * t;
        assert!(
            (last.z.var - expect).abs() <= 3.0 * last.z.var_se,
            "Var Z = {} +- {}, expected {}",
            last.z.var,
            last.z.var_se,
            expect
        );
        assert!(last.z.skew.abs() <= 3.0 * last.z.skew_se);
    }

    #[test]
    fn constant_observable_decays_at_rate_kappa() {
        let m = CorrelationModel::default_gaussian();
        let k0 = Vector3::new(0.0, 0.0, 2.0);
        let kappa = compute_coefficients(&m, k0).unwrap().kappa;
        let t = 0.4;
        let (est, se) = estimate_limit_observable(
            &m,
            Vector3::zeros(),
            k0,
            t,
            4000,
            17,
            |_, _| 1.0,
            None,
        )
        .unwrap();
        let expect = (-kappa * t).exp();
        assert!(
            (est.norm() - expect).abs() <= 3.0 * se.max(1e-4),
            "|E exp(iZ)| = {} +- {se}, expected {expect}",
            est.norm()
        );
    }

    #[test]
    fn no_mismatch_keeps_mass_exactly() {
        let m = CorrelationModel::new(KernelFamily::GaussianIsotropic, 1.0, 0.0, 1.0, 0.0)
            .unwrap();
        let (est, se) = estimate_limit_observable(
            &m,
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 2.0),
            0.3,
            256,
            5,
            |_, _| 1.0,
            None,
        )
        .unwrap();
        assert_eq!(est, Complex64::new(1.0, 0.0));
        assert_eq!(se, 0.0);
    }

    #[test]
    fn time_zero_returns_initial_data() {
        let m = CorrelationModel::default_gaussian();
        let (est, se) = estimate_limit_observable(
            &m,
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(0.0, 0.0, 2.0),
            0.0,
            16,
            5,
            |x, k| x.norm() + k.norm(),
            None,
        )
        .unwrap();
        let expect = Vector3::new(1.0, 2.0, 3.0).norm() + 2.0;
        assert_eq!(est, Complex64::new(expect, 0.0));
        assert_eq!(se, 0.0);
    }

    #[test]
    fn se_tolerance_is_reported() {
        let m = CorrelationModel::default_gaussian();
        let err = estimate_limit_observable(
            &m,
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 2.0),
            0.3,
            64,
            5,
            |_, _| 1.0,
            Some(1e-9),
        )
        .unwrap_err();
        assert!(matches!(err, Error::SeTolerance { .. }));
    }

    #[test]
    fn shifted_cross_model_drifts_the_phase_mean() {
        // Anisotropic cross correlation: the general provider recomputes
        // coefficients along the path; over a short horizon the phase mean
        // grows like E(k0) t.
        let m = CorrelationModel::with_cross_shift(
            KernelFamily::GaussianIsotropic,
            1.0,
            1.0,
            1.0,
            0.8,
            Vector3::new(0.5, 0.0, 0.3),
        )
        .unwrap();
        let k0 = Vector3::new(0.0, 0.0, 2.0);
        let e_drift = compute_coefficients(&m, k0).unwrap().e;
        let t = 0.04;
        let mut p = LimitEnsembleParams::new(k0, t, 256, 13);
        p.dt = 2e-3;
        let stats = run_limit_ensemble(&m, &p).unwrap();
        let last = stats.checkpoints.last().unwrap();
        assert!(
            (last.z.mean - e_drift * t).abs() <= 3.0 * last.z.mean_se.max(1e-4),
            "mean Z = {} +- {}, expected {}",
            last.z.mean,
            last.z.mean_se,
            e_drift * t
        );
    }

    #[test]
    fn determinism_across_thread_counts() {
        let m = CorrelationModel::default_gaussian();
        let mut p = LimitEnsembleParams::new(Vector3::new(0.0, 0.0, 2.0), 0.2, 64, 3);
        p.dt = 2e-3;
        let run_with = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_limit_ensemble(&m, &p).unwrap())
        };
        let a = run_with(1);
        let b = run_with(3);
        assert_eq!(
            serde_json::to_string(&a.to_json()).unwrap(),
            serde_json::to_string(&b.to_json()).unwrap()
        );
    }
}
