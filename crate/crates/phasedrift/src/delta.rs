//! The scaled characteristic system at finite correlation length `delta`.
//!
//! Along the random characteristics of the phase-space transport equation,
//!
//! ```text
//! dX/dt = -K
//! dK/dt = delta^{-1/2} grad V(X / delta)
//! dZ/dt = delta^{-1/2} S(X / delta)
//! ```
//!
//! with `X(0) = x0`, `K(0) = k0`, `Z(0) = 0`. The system is Hamiltonian in
//! `(X, K)` with `H = |K|^2/2 + sqrt(delta) V(X/delta)`; `H` is tracked as
//! the integration-error gauge. A fixed-step RK4 advances all seven
//! components with shared stage weights, so the phase quadrature sees the
//! same order as the momentum.

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{sample_field_with, FieldOptions, FieldRealization};
use crate::seeding;
use crate::stats::{CheckpointColumns, EnsembleStats, TauFrequencies};
use crate::corr::CorrelationModel;

/// Fast-scale resolution bound: `dt <= FAST_SCALE_DT_FACTOR * delta / |k0|`.
pub const FAST_SCALE_DT_FACTOR: f64 = 0.1;

/// First-hit times of the trajectory diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct TauEvents {
    /// First time the momentum direction turns by more than `1/N` within a
    /// mesh cell ("violent turn").
    pub violent_turn: Option<f64>,
    /// First time the position re-enters the `1/q`-tube around its past.
    pub tube_return: Option<f64>,
}

impl TauEvents {
    pub fn tau(&self) -> Option<f64> {
        match (self.violent_turn, self.tube_return) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b),
            (None, None) => None,
        }
    }
}

/// Exponents defining the stopping-time mesh scales.
///
/// `N = floor(delta^-eps1)`, `p = floor(delta^-eps2)`,
/// `q = p floor(delta^-eps3)`, `N1 = N p floor(delta^-eps4)`, subject to
/// `0 < eps1 < eps2 < 1/2`, `eps3 in (0, 1/2 - eps2)`,
/// `eps4 in (1/2, 1 - eps1 - eps2)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StoppingConfig {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub eps4: f64,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        StoppingConfig {
            eps1: 0.1,
            eps2: 0.2,
            eps3: 0.15,
            eps4: 0.6,
        }
    }
}

impl StoppingConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.eps1
            && self.eps1 < self.eps2
            && self.eps2 < 0.5
            && self.eps3 > 0.0
            && self.eps3 < 0.5 - self.eps2
            && self.eps4 > 0.5
            && self.eps4 < 1.0 - self.eps1 - self.eps2;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "stopping exponents violate the required inequalities: {self:?}"
            )))
        }
    }

    /// Mesh counts `(N, p, q, N1)` at a given `delta`.
    pub fn mesh(&self, delta: f64) -> (u64, u64, u64, u64) {
        let n = delta.powf(-self.eps1).floor().max(1.0) as u64;
        let p = delta.powf(-self.eps2).floor().max(1.0) as u64;
        let q = p * delta.powf(-self.eps3).floor().max(1.0) as u64;
        let n1 = n * p * delta.powf(-self.eps4).floor().max(1.0) as u64;
        (n, p, q, n1)
    }
}

/// One trajectory of the delta-dynamics with diagnostics.
#[derive(Debug, Clone)]
pub struct PhasePath {
    pub times: Vec<f64>,
    pub x: Vec<Vector3<f64>>,
    pub k: Vec<Vector3<f64>>,
    pub z: Vec<f64>,
    pub delta: f64,
    /// `max_t |H(t) - H(0)|` with `H = |K|^2/2 + sqrt(delta) V(X/delta)`.
    pub energy_drift: f64,
    /// `max_t | |K(t)| - |k0| |`.
    pub shell_drift: f64,
    /// `max_t |V(X(t)/delta)|` along the path.
    pub v_max: f64,
    pub tau_events: Option<TauEvents>,
}

/// Integrate one path through a fixed realization.
///
/// `dt` is a request; the actual step is `t_end / ceil(t_end/dt)` and must
/// satisfy the fast-scale bound `dt <= 0.1 delta / |k0|`.
pub fn integrate_path(
    field: &FieldRealization,
    x0: Vector3<f64>,
    k0: Vector3<f64>,
    delta: f64,
    t_end: f64,
    dt: f64,
) -> Result<PhasePath> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Config(format!("delta = {delta} outside (0, 1]")));
    }
    let bound = FAST_SCALE_DT_FACTOR * delta / k0.norm().max(1e-300);
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::TimeStepTooLarge { dt, bound });
    }
    let n_steps = (t_end / dt).ceil().max(1.0) as usize;
    let h = t_end / n_steps as f64;
    let inv_sqrt_delta = 1.0 / delta.sqrt();
    let inv_delta = 1.0 / delta;

    let mut times = Vec::with_capacity(n_steps + 1);
    let mut xs = Vec::with_capacity(n_steps + 1);
    let mut ks = Vec::with_capacity(n_steps + 1);
    let mut zs = Vec::with_capacity(n_steps + 1);

    let mut x = x0;
    let mut k = k0;
    let mut z = 0.0_f64;
    let k0n = k0.norm();

    // One force call returns (grad V, S, V) at the fast-scale point.
    let force = |x: Vector3<f64>| field.eval_force(x * inv_delta);

    let (_, _, v0) = force(x0);
    let h0 = 0.5 * k0.norm_squared() + delta.sqrt() * v0;
    let mut energy_drift = 0.0_f64;
    let mut shell_drift = 0.0_f64;
    let mut v_max = v0.abs();

    times.push(0.0);
    xs.push(x);
    ks.push(k);
    zs.push(z);

    for step in 0..n_steps {
        // RK4 stages; Z advances with the same stage weights as K.
        let (g1, s1, v_here) = force(x);
        let dx1 = -k;
        let dk1 = g1 * inv_sqrt_delta;
        let dz1 = s1 * inv_sqrt_delta;

        let (g2, s2, _) = force(x + dx1 * (0.5 * h));
        let dx2 = -(k + dk1 * (0.5 * h));
        let dk2 = g2 * inv_sqrt_delta;
        let dz2 = s2 * inv_sqrt_delta;

        let (g3, s3, _) = force(x + dx2 * (0.5 * h));
        let dx3 = -(k + dk2 * (0.5 * h));
        let dk3 = g3 * inv_sqrt_delta;
        let dz3 = s3 * inv_sqrt_delta;

        let (g4, s4, _) = force(x + dx3 * h);
        let dx4 = -(k + dk3 * h);
        let dk4 = g4 * inv_sqrt_delta;
        let dz4 = s4 * inv_sqrt_delta;

        x += (dx1 + dx2 * 2.0 + dx3 * 2.0 + dx4) * (h / 6.0);
        k += (dk1 + dk2 * 2.0 + dk3 * 2.0 + dk4) * (h / 6.0);
        z += (dz1 + dz2 * 2.0 + dz3 * 2.0 + dz4) * (h / 6.0);

        if !(x.x.is_finite() && k.x.is_finite() && z.is_finite()) {
            return Err(Error::NonFinite("delta-dynamics state"));
        }

        v_max = v_max.max(v_here.abs());
        let t = (step + 1) as f64 * h;
        times.push(t);
        xs.push(x);
        ks.push(k);
        zs.push(z);
        shell_drift = shell_drift.max((k.norm() - k0n).abs());
    }

    // Energy drift from the stored samples (stage-1 V values are at the
    // previous sample; re-evaluate V at the recorded states).
    for (xi, ki) in xs.iter().zip(ks.iter()) {
        let (_, _, v) = force(*xi);
        let hh = 0.5 * ki.norm_squared() + delta.sqrt() * v;
        energy_drift = energy_drift.max((hh - h0).abs());
        v_max = v_max.max(v.abs());
    }

    Ok(PhasePath {
        times,
        x: xs,
        k: ks,
        z: zs,
        delta,
        energy_drift,
        shell_drift,
        v_max,
        tau_events: None,
    })
}

/// Scan a sampled path for the "violent turn" and tube-return events.
///
/// The mesh times are `t_k = k/p`; a violent turn at `t in [t_k, t_{k+1})`
/// means `khat(t_{k-1}) . khat(t) <= 1 - 1/N` or
/// `khat(t_k - 1/N1) . khat(t) <= 1 - 1/N` (with `khat(-1/p) := khat(0)`).
/// A tube return at such `t` means `X(t)` lies within `1/q` of the trace
/// `X([0, t_{k-1}])`.
pub fn detect_stopping_times(path: &PhasePath, cfg: &StoppingConfig) -> Result<TauEvents> {
    cfg.validate()?;
    let (n_turn, p, q, n1) = cfg.mesh(path.delta);
    let n_samples = path.times.len();
    if n_samples < 2 {
        return Ok(TauEvents::default());
    }
    let dt = path.times[1] - path.times[0];
    let required = 1.0 / n1 as f64;
    if dt > required * (1.0 + 1e-9) {
        return Err(Error::PathTooCoarse {
            spacing: dt,
            required,
        });
    }

    let khat: Vec<Vector3<f64>> = path
        .k
        .iter()
        .map(|k| {
            let n = k.norm();
            if n > 0.0 {
                k / n
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    let index_of = |t: f64| -> usize { ((t / dt).round() as usize).min(n_samples - 1) };
    let turn_threshold = 1.0 - 1.0 / n_turn as f64;
    let mesh_dt = 1.0 / p as f64;
    let tube_radius = 1.0 / q as f64;
    let pullback = 1.0 / n1 as f64;

    let mut violent = None;
    let mut tube = None;

    for (i, &t) in path.times.iter().enumerate().skip(1) {
        let cell = (t * p as f64).floor() as i64;
        let t_cell = cell as f64 * mesh_dt;

        if violent.is_none() {
            // Reference directions: previous mesh time, and the pullback
            // point just before the current mesh time.
            let ref_prev = if cell >= 1 {
                khat[index_of(t_cell - mesh_dt)]
            } else {
                khat[0]
            };
            let ref_pullback = khat[index_of((t_cell - pullback).max(0.0))];
            let kh = khat[i];
            if ref_prev.dot(&kh) <= turn_threshold || ref_pullback.dot(&kh) <= turn_threshold {
                violent = Some(t);
            }
        }

        if tube.is_none() && cell >= 1 {
            let horizon = index_of(t_cell - mesh_dt);
            let xi = path.x[i];
            for j in 0..=horizon {
                if (xi - path.x[j]).norm() <= tube_radius {
                    tube = Some(t);
                    break;
                }
            }
        }

        if violent.is_some() && tube.is_some() {
            break;
        }
    }

    Ok(TauEvents {
        violent_turn: violent,
        tube_return: tube,
    })
}

/// Parameters of a delta-dynamics ensemble run.
#[derive(Debug, Clone)]
pub struct EnsembleParams {
    pub delta: f64,
    pub x0: Vector3<f64>,
    pub k0: Vector3<f64>,
    pub t_end: f64,
    /// Time step; must satisfy the fast-scale bound.
    pub dt: f64,
    pub n_paths: usize,
    pub base_seed: u64,
    pub n_modes: usize,
    pub clip_sigmas: Option<f64>,
    /// Fixed medium: one shared realization, paths started from shifted
    /// initial positions (spatial self-averaging) instead of fresh media.
    pub quenched: bool,
    /// Checkpoint times at which ensemble statistics are recorded; always
    /// augmented with `t_end`.
    pub checkpoints: Vec<f64>,
    pub stopping: StoppingConfig,
}

impl EnsembleParams {
    pub fn new(delta: f64, k0: Vector3<f64>, t_end: f64, n_paths: usize, base_seed: u64) -> Self {
        EnsembleParams {
            delta,
            x0: Vector3::zeros(),
            k0,
            t_end,
            dt: FAST_SCALE_DT_FACTOR * delta / k0.norm(),
            n_paths,
            base_seed,
            n_modes: 4096,
            clip_sigmas: None,
            quenched: false,
            checkpoints: Vec::new(),
            stopping: StoppingConfig::default(),
        }
    }
}

struct PathSummary {
    /// Per checkpoint: (z, cos z, sin z, k - k0).
    rows: Vec<(f64, f64, f64, Vector3<f64>)>,
    energy_drift: f64,
    shell_drift: f64,
    v_max: f64,
    events: TauEvents,
}

/// Run an annealed (or quenched) ensemble of delta-dynamics paths.
///
/// Each path gets an independent field realization and a deterministic seed
/// derived from `(base_seed, path_index)`; statistics reduction is
/// order-insensitive, so the result does not depend on the worker count.
pub fn run_ensemble(model: &CorrelationModel, params: &EnsembleParams) -> Result<EnsembleStats> {
    if params.n_paths < 2 {
        return Err(Error::Config("n_paths must be >= 2".into()));
    }
    params.stopping.validate()?;
    let field_opts = FieldOptions {
        clip_sigmas: params.clip_sigmas,
    };

    // Snap checkpoints onto the step grid.
    let n_steps = (params.t_end / params.dt).ceil().max(1.0) as usize;
    let h = params.t_end / n_steps as f64;
    let mut cp_indices: Vec<usize> = params
        .checkpoints
        .iter()
        .map(|&t| ((t / h).round() as usize).clamp(1, n_steps))
        .collect();
    cp_indices.push(n_steps);
    cp_indices.sort_unstable();
    cp_indices.dedup();

    let shared_field = if params.quenched {
        let seed = seeding::derive_u64(params.base_seed, 0, "field");
        Some(Arc::new(sample_field_with(
            model,
            params.n_modes,
            seed,
            &field_opts,
        )?))
    } else {
        None
    };
    // Spatial spread of quenched starting points: enough correlation cells
    // to decorrelate paths inside the single medium.
    let quench_side = 64.0 * params.delta * model.ell;

    let results: Vec<std::result::Result<PathSummary, Error>> = (0..params.n_paths)
        .into_par_iter()
        .map(|i| {
            let field = match &shared_field {
                Some(f) => Arc::clone(f),
                None => {
                    let seed = seeding::derive_u64(params.base_seed, i as u64, "field");
                    Arc::new(
                        sample_field_with(model, params.n_modes, seed, &field_opts).map_err(
                            |e| Error::PathFailed {
                                index: i,
                                source: Box::new(e),
                            },
                        )?,
                    )
                }
            };
            let x0 = if params.quenched {
                let mut rng = seeding::rng_for(params.base_seed, i as u64, "quench-x0");
                params.x0
                    + Vector3::new(
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                    ) * quench_side
            } else {
                params.x0
            };
            let run = || -> Result<PathSummary> {
                let mut path = integrate_path(
                    &field,
                    x0,
                    params.k0,
                    params.delta,
                    params.t_end,
                    params.dt,
                )?;
                let events = detect_stopping_times(&path, &params.stopping)?;
                path.tau_events = Some(events);
                let rows = cp_indices
                    .iter()
                    .map(|&idx| {
                        let z = path.z[idx];
                        let (sin, cos) = z.sin_cos();
                        (z, cos, sin, path.k[idx] - params.k0)
                    })
                    .collect();
                Ok(PathSummary {
                    rows,
                    energy_drift: path.energy_drift,
                    shell_drift: path.shell_drift,
                    v_max: path.v_max,
                    events,
                })
            };
            run().map_err(|e| match e {
                Error::PathFailed { .. } => e,
                other => Error::PathFailed {
                    index: i,
                    source: Box::new(other),
                },
            })
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
    let summaries: Vec<&PathSummary> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    if summaries.len() < 2 {
        return Err(Error::Config(
            "fewer than two successful paths; cannot form statistics".into(),
        ));
    }

    let mut columns: Vec<CheckpointColumns> = cp_indices
        .iter()
        .map(|&idx| CheckpointColumns::new(idx as f64 * h, summaries.len()))
        .collect();
    let mut energy_drift_max = 0.0_f64;
    let mut shell_drift_max = 0.0_f64;
    let mut v_max = 0.0_f64;
    let mut n_violent = 0usize;
    let mut n_tube = 0usize;
    let mut n_any = 0usize;
    for s in &summaries {
        for (col, row) in columns.iter_mut().zip(s.rows.iter()) {
            col.z.push(row.0);
            col.cos_z.push(row.1);
            col.sin_z.push(row.2);
            col.dk.push(row.3);
        }
        energy_drift_max = energy_drift_max.max(s.energy_drift);
        shell_drift_max = shell_drift_max.max(s.shell_drift);
        v_max = v_max.max(s.v_max);
        n_violent += s.events.violent_turn.is_some() as usize;
        n_tube += s.events.tube_return.is_some() as usize;
        n_any += s.events.tau().is_some() as usize;
    }

    let n_eff = summaries.len() as f64;
    let f_any = n_any as f64 / n_eff;
    Ok(EnsembleStats {
        delta: params.delta,
        checkpoints: columns.iter().map(|c| c.reduce()).collect(),
        shell_drift_max,
        energy_drift_max,
        v_max,
        tau_freq: TauFrequencies {
            violent_turn: n_violent as f64 / n_eff,
            tube_return: n_tube as f64 / n_eff,
            any: f_any,
            se: (f_any * (1.0 - f_any) / n_eff).sqrt(),
        },
        n_effective: summaries.len(),
    })
}
