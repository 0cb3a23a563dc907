//! Macroscopic transport coefficients of the limiting phase-space diffusion.
//!
//! All coefficients are line integrals of correlation-tensor derivatives
//! along the ray `{s k : s >= 0}`:
//!
//! * momentum diffusion `D_mn(k) = -int_0^inf d2R^VV/dy_m dy_n (s k) ds`
//! * phase diffusion    `D(k)    =  int_0^inf R^SS(s k) ds`
//! * cross diffusion    `D_m(k)  =  int_0^inf dR^SV/dy_m (s k) ds`
//! * momentum drift     `E_m(k)  = -int_0^inf s grad(Lap R^VV)_m (s k) ds`
//! * phase drift        `E(k)    =  int_0^inf s Lap R^SV (s k) ds`
//!
//! together with the formally derived aliases `E_j` (two-sided cross
//! integral), `F`, and the absorption coefficient `kappa`. The defining
//! integrals are evaluated by adaptive Gauss-Kronrod quadrature truncated
//! where the kernel envelope falls below `1e-14` of its peak.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::corr::{Component, CorrelationModel};
use crate::error::{Error, Result};
use crate::quad::adaptive_gk;

/// Quadrature and domain controls for coefficient evaluation.
#[derive(Debug, Clone, Copy)]
pub struct CoeffOptions {
    /// Momenta with `|k| < k_min` are rejected (singular point of the ray
    /// parametrization).
    pub k_min: f64,
    /// Absolute quadrature tolerance per coefficient.
    pub abs_tol: f64,
    /// Envelope level (relative to the kernel peak) at which the improper
    /// integrals are truncated.
    pub envelope_tol: f64,
    /// Integrand-evaluation budget per quadrature pass.
    pub max_evals: usize,
}

impl Default for CoeffOptions {
    fn default() -> Self {
        CoeffOptions {
            k_min: 1e-3,
            abs_tol: 1e-10,
            envelope_tol: 1e-14,
            max_evals: 400_000,
        }
    }
}

/// The evaluated coefficient set at one momentum.
#[derive(Debug, Clone)]
pub struct TransportCoefficients {
    pub k: Vector3<f64>,
    /// Momentum diffusion matrix; symmetric, PSD, annihilates `k_hat`.
    pub d_mn: Matrix3<f64>,
    /// Phase diffusion (equals `kappa`).
    pub d: f64,
    /// Momentum-phase cross diffusion at `+k`.
    pub d_m_plus: Vector3<f64>,
    /// Momentum-phase cross diffusion at `-k`.
    pub d_m_minus: Vector3<f64>,
    /// Momentum drift.
    pub e_m: Vector3<f64>,
    /// Phase drift.
    pub e: f64,
    /// Two-sided cross integral `E_j` from the formal expansion.
    pub e_formal: Vector3<f64>,
    /// `F` from the formal expansion (same integral as `e`).
    pub f_formal: f64,
    /// Absorption coefficient `kappa` (same integral as `d`).
    pub kappa: f64,
}

impl TransportCoefficients {
    /// Second-order coefficient block of the `(k, z)` diffusion:
    /// `A = [[D_mn, (D_m(k)+D_m(-k))/2], [., D]]`.
    pub fn a_block(&self) -> Matrix4<f64> {
        let c = (self.d_m_plus + self.d_m_minus) * 0.5;
        let mut a = Matrix4::zeros();
        for m in 0..3 {
            for n in 0..3 {
                a[(m, n)] = self.d_mn[(m, n)];
            }
            a[(m, 3)] = c[m];
            a[(3, m)] = c[m];
        }
        a[(3, 3)] = self.d;
        a
    }

    /// Coefficient set of the reduced Wigner-function equation implied by
    /// the generator acting on `e^{iz} r(k)`:
    /// `(E_vec, F, kappa) = (D_m(k) + D_m(-k), E, D)`.
    pub fn reduce_generator_to_wigner(&self) -> (Vector3<f64>, f64, f64) {
        (self.d_m_plus + self.d_m_minus, self.e, self.d)
    }

    /// Drift vector `(E_m, E)` of the `(k, z)` block.
    pub fn drift(&self) -> Vector4<f64> {
        Vector4::new(self.e_m.x, self.e_m.y, self.e_m.z, self.e)
    }

    /// `B` with `B B^T = 2 A`, by symmetric eigendecomposition. Eigenvalues
    /// in `[-1e-9, 0)` are clamped to zero (quadrature round-off); smaller
    /// ones mean the coefficients are inconsistent.
    pub fn diffusion_factor(&self) -> Result<Matrix4<f64>> {
        let a2 = self.a_block() * 2.0;
        let eig = nalgebra::SymmetricEigen::new(a2);
        let mut vals = eig.eigenvalues;
        for v in vals.iter_mut() {
            if *v < -2e-9 {
                // threshold on 2A corresponds to -1e-9 on A
                return Err(Error::IndefiniteDiffusion { min_eig: *v / 2.0 });
            }
            *v = v.max(0.0).sqrt();
        }
        let mut b = eig.eigenvectors;
        for (j, s) in vals.iter().enumerate() {
            b.column_mut(j).scale_mut(*s);
        }
        Ok(b * eig.eigenvectors.transpose())
    }
}

/// Evaluate all transport coefficients at momentum `k` with default options.
pub fn compute_coefficients(
    model: &CorrelationModel,
    k: Vector3<f64>,
) -> Result<TransportCoefficients> {
    compute_coefficients_with(model, k, &CoeffOptions::default())
}

pub fn compute_coefficients_with(
    model: &CorrelationModel,
    k: Vector3<f64>,
    opts: &CoeffOptions,
) -> Result<TransportCoefficients> {
    let a = k.norm();
    if !(a >= opts.k_min) {
        return Err(Error::MomentumTooSmall {
            knorm: a,
            k_min: opts.k_min,
        });
    }
    let khat = k / a;
    let kernel = model.kernel();
    let sv_amp = model.rho_cross * model.sigma_v * model.sigma_s;
    let sig_v2 = model.sigma_v * model.sigma_v;
    let sig_s2 = model.sigma_s * model.sigma_s;
    let shift = model.cross_shift;

    let r_decay = model.decay_radius(opts.envelope_tol);
    let s_max = r_decay / a;
    let s_max_sv = (r_decay + shift.norm()) / a;
    // Per-pass tolerance: several quadratures add into some outputs, keep
    // each pass a notch tighter than the contract tolerance.
    let tol = opts.abs_tol * 0.1;

    // Centered components (R^VV, R^SS share the radial profile):
    //   [ g, g'/r, g'', s^2 * (d/dr Lap g)/r ] at r = s|k|.
    let centered = if sig_v2 > 0.0 || sig_s2 > 0.0 {
        let f = |s: f64| {
            let r = s * a;
            [
                kernel.g(r),
                kernel.g1_over_r(r),
                kernel.g2(r),
                s * s * kernel.lap_grad_over_r(r),
            ]
        };
        adaptive_gk(&f, 0.0, s_max, tol, opts.max_evals)?.value
    } else {
        [0.0; 4]
    };
    let [i_g, i_perp, i_par, i_lap] = centered;

    // D_mn = -sigma_v^2 [ (I_par - I_perp) khat khat^T + I_perp Id ].
    let d_mn = if sig_v2 > 0.0 {
        (khat * khat.transpose()) * (-(i_par - i_perp) * sig_v2)
            + Matrix3::identity() * (-i_perp * sig_v2)
    } else {
        Matrix3::zeros()
    };
    let e_m = khat * (-sig_v2 * a * i_lap);
    let d_phase = sig_s2 * i_g;

    // kappa by its own quadrature of the defining integral.
    let kappa = if sig_s2 > 0.0 {
        let f = |s: f64| [model.eval(Component::SS, k * s)];
        adaptive_gk(&f, 0.0, s_max, tol, opts.max_evals)?.value[0]
    } else {
        0.0
    };

    // Cross terms; the shifted radius makes these genuinely 3-vector
    // integrands, so they are integrated componentwise in one pass.
    let (d_m_plus, d_m_minus, e, e_formal, f_formal) = if sv_amp != 0.0 {
        let plus = |s: f64| {
            let n = k * s - shift;
            let r = n.norm();
            let g1r = kernel.g1_over_r(r);
            let lap = kernel.g2_minus_g1r_over_r2(r) * r * r + 3.0 * g1r;
            [g1r * n.x, g1r * n.y, g1r * n.z, s * lap]
        };
        let qp = adaptive_gk(&plus, 0.0, s_max_sv, tol, opts.max_evals)?.value;

        let minus = |s: f64| {
            let n = -k * s - shift;
            let r = n.norm();
            let g1r = kernel.g1_over_r(r);
            [g1r * n.x, g1r * n.y, g1r * n.z]
        };
        let qm = adaptive_gk(&minus, 0.0, s_max_sv, tol, opts.max_evals)?.value;

        // E_j: one two-sided pass along the full line.
        let line = |s: f64| {
            let n = k * s - shift;
            let r = n.norm();
            let g1r = kernel.g1_over_r(r);
            [g1r * n.x, g1r * n.y, g1r * n.z]
        };
        let ql = adaptive_gk(&line, -s_max_sv, s_max_sv, tol, opts.max_evals)?.value;

        let f_form = {
            let f = |s: f64| {
                let n = k * s - shift;
                let r = n.norm();
                [s * (kernel.g2_minus_g1r_over_r2(r) * r * r + 3.0 * kernel.g1_over_r(r))]
            };
            adaptive_gk(&f, 0.0, s_max_sv, tol, opts.max_evals)?.value[0]
        };

        (
            Vector3::new(qp[0], qp[1], qp[2]) * sv_amp,
            Vector3::new(qm[0], qm[1], qm[2]) * sv_amp,
            qp[3] * sv_amp,
            Vector3::new(ql[0], ql[1], ql[2]) * sv_amp,
            f_form * sv_amp,
        )
    } else {
        (
            Vector3::zeros(),
            Vector3::zeros(),
            0.0,
            Vector3::zeros(),
            0.0,
        )
    };

    Ok(TransportCoefficients {
        k,
        d_mn,
        d: d_phase,
        d_m_plus,
        d_m_minus,
        e_m,
        e,
        e_formal,
        f_formal,
        kappa,
    })
}

/// Residuals of the identities that make the two generator forms agree.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DivergenceReport {
    /// `max_n | sum_m dD_mn/dk_m - E_n |`
    pub residual_dmn_divergence: f64,
    /// `| sum_m dD_m/dk_m - E |`
    pub residual_dm_divergence: f64,
    /// `| tr D + E . k |` (the generator annihilates functions of `|k|`).
    pub residual_sphere_trace: f64,
    pub fd_step: f64,
}

/// Verify by central finite differences in `k` that
/// `sum_m dD_mn/dk_m = E_n` and `sum_m dD_m/dk_m = E`, and report the
/// sphere-trace residual `tr D + E . k`.
pub fn check_divergence_identities(
    model: &CorrelationModel,
    k: Vector3<f64>,
    fd_step: f64,
) -> Result<DivergenceReport> {
    let opts = CoeffOptions::default();
    let base = compute_coefficients_with(model, k, &opts)?;

    let mut div_dmn = Vector3::zeros();
    let mut div_dm = 0.0;
    for m in 0..3 {
        let mut kp = k;
        let mut km = k;
        kp[m] += fd_step;
        km[m] -= fd_step;
        let cp = compute_coefficients_with(model, kp, &opts)?;
        let cm = compute_coefficients_with(model, km, &opts)?;
        for n in 0..3 {
            div_dmn[n] += (cp.d_mn[(m, n)] - cm.d_mn[(m, n)]) / (2.0 * fd_step);
        }
        div_dm += (cp.d_m_plus[m] - cm.d_m_plus[m]) / (2.0 * fd_step);
    }

    Ok(DivergenceReport {
        residual_dmn_divergence: (div_dmn - base.e_m).amax(),
        residual_dm_divergence: (div_dm - base.e).abs(),
        residual_sphere_trace: (base.d_mn.trace() + base.e_m.dot(&k)).abs(),
        fd_step,
    })
}
