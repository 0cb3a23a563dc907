//! Axisymmetric Kolmogorov equation on the momentum sphere.
//!
//! For isotropic media the momentum block reduces to a Laplace-Beltrami
//! diffusion on the sphere `|k| = k0` with constant diffusivity, and the
//! reduced observable `q(t, theta)` (polar angle only) satisfies
//!
//! ```text
//! dq/dt = c_eff (1/sin th) d/dth (sin th dq/dth) - kappa q
//! ```
//!
//! with `c_eff = tr D_mn / (2 |k0|^2)` the unit-sphere diffusivity. The
//! solver is an explicit finite-volume scheme on cell-centered polar
//! angles; the face fluxes carry `sin theta`, which vanishes at both poles,
//! so the reflecting boundary is built in and the scheme telescopes mass
//! exactly.

use crate::corr::CorrelationModel;
use crate::error::{Error, Result};
use crate::limit::sde::IsotropicCoeffs;

/// Solution record of the sphere solver.
#[derive(Debug, Clone)]
pub struct SphereSolution {
    /// Cell-center polar angles.
    pub theta: Vec<f64>,
    /// Snapshot times (always includes 0 and t_end).
    pub times: Vec<f64>,
    /// `q[snapshot][cell]`.
    pub q: Vec<Vec<f64>>,
    /// Unit-sphere diffusivity actually used.
    pub c_eff: f64,
    pub kappa: f64,
}

impl SphereSolution {
    /// Linear interpolation of the final snapshot at angle `theta`.
    pub fn value_at(&self, theta: f64) -> f64 {
        let q = self.q.last().expect("at least the initial snapshot");
        let n = self.theta.len();
        let dth = std::f64::consts::PI / n as f64;
        let pos = (theta / dth - 0.5).clamp(0.0, (n - 1) as f64);
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 < n {
            q[i] * (1.0 - frac) + q[i + 1] * frac
        } else {
            q[n - 1]
        }
    }

    /// Amplitude of the degree-1 axisymmetric harmonic in the final
    /// snapshot: `int q cos sin dth / int cos^2 sin dth`.
    pub fn cos_mode_amplitude(&self) -> f64 {
        let q = self.q.last().unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (th, qi) in self.theta.iter().zip(q.iter()) {
            let s = th.sin();
            let c = th.cos();
            num += qi * c * s;
            den += c * c * s;
        }
        num / den
    }

    /// Total mass `int q sin dth` of the final snapshot.
    pub fn mass(&self) -> f64 {
        let dth = std::f64::consts::PI / self.theta.len() as f64;
        self.q
            .last()
            .unwrap()
            .iter()
            .zip(self.theta.iter())
            .map(|(q, th)| q * th.sin() * dth)
            .sum()
    }
}

/// Explicit finite-volume solution of the reduced sphere equation for
/// axisymmetric initial data `q0(theta)`.
pub fn solve_sphere_kolmogorov<F: Fn(f64) -> f64>(
    model: &CorrelationModel,
    k_norm: f64,
    n_theta: usize,
    t_end: f64,
    dt: f64,
    q0: F,
) -> Result<SphereSolution> {
    if n_theta < 4 {
        return Err(Error::Config("n_theta must be >= 4".into()));
    }
    let iso = IsotropicCoeffs::from_model(model, k_norm)?;
    let c_eff = iso.beta / (k_norm * k_norm);
    let kappa = iso.d;

    let dth = std::f64::consts::PI / n_theta as f64;
    // Explicit-scheme stability bound dt <= dth^2/(2 c) * safety.
    let safety = 0.9;
    let bound = if c_eff > 0.0 {
        safety * dth * dth / (2.0 * c_eff)
    } else {
        f64::INFINITY
    };
    if dt > bound {
        return Err(Error::UnstableTimeStep { dt, bound });
    }

    let n_steps = (t_end / dt).ceil().max(1.0) as usize;
    let h = t_end / n_steps as f64;

    let theta: Vec<f64> = (0..n_theta).map(|i| (i as f64 + 0.5) * dth).collect();
    let sin_center: Vec<f64> = theta.iter().map(|t| t.sin()).collect();
    // Face angles i*dth, i = 0..n; sin vanishes at both poles.
    let sin_face: Vec<f64> = (0..=n_theta).map(|i| (i as f64 * dth).sin()).collect();

    let mut q: Vec<f64> = theta.iter().map(|&t| q0(t)).collect();
    let mut snapshots = vec![q.clone()];
    let mut times = vec![0.0];
    let snap_every = (n_steps / 8).max(1);

    let mut next = vec![0.0; n_theta];
    for step in 1..=n_steps {
        for i in 0..n_theta {
            let flux_hi = if i + 1 < n_theta {
                sin_face[i + 1] * (q[i + 1] - q[i])
            } else {
                0.0
            };
            let flux_lo = if i > 0 {
                sin_face[i] * (q[i] - q[i - 1])
            } else {
                0.0
            };
            let lap = (flux_hi - flux_lo) / (sin_center[i] * dth * dth);
            next[i] = q[i] + h * (c_eff * lap - kappa * q[i]);
        }
        std::mem::swap(&mut q, &mut next);
        if step % snap_every == 0 || step == n_steps {
            snapshots.push(q.clone());
            times.push(step as f64 * h);
        }
    }

    Ok(SphereSolution {
        theta,
        times,
        q: snapshots,
        c_eff,
        kappa,
    })
}
