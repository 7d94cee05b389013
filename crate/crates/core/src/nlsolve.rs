//! Nonlinear polarizations on exponentially weighted time grids and the
//! Picard iteration `u ← S(f(u) + g)` with the simulator as linear solver.

use crate::tdsim::{Pulse, SimConfig, Simulator, TdsimError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NlError {
    #[error("kernel sampled at dt = {kernel:.6e}, signal at dt = {signal:.6e}")]
    KernelResolutionMismatch { kernel: f64, signal: f64 },
    #[error("no contraction: update ratio >= 1 for {0} consecutive iterations")]
    NoContraction(usize),
    #[error("no convergence after {iterations} iterations (last update {last_update:.3e})")]
    MaxIter { iterations: usize, last_update: f64 },
    #[error("invalid nonlinearity: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] TdsimError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NlError>;

/// Samples `values[n][cell]` at `t_n = t0 + n dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSignal {
    pub dt: f64,
    pub nu: f64,
    #[serde(default)]
    pub t0: f64,
    /// Spatial quadrature weight applied to every cell (dx).
    pub cell_weight: f64,
    pub values: Vec<Vec<f64>>,
}

impl WeightedSignal {
    pub fn zeros(dt: f64, nu: f64, cell_weight: f64, samples: usize, cells: usize) -> Self {
        Self {
            dt,
            nu,
            t0: 0.0,
            cell_weight,
            values: vec![vec![0.0; cells]; samples],
        }
    }

    /// Single-cell signal from a scalar function.
    pub fn from_fn(dt: f64, nu: f64, samples: usize, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dt,
            nu,
            t0: 0.0,
            cell_weight: 1.0,
            values: (0..samples).map(|n| vec![f(n as f64 * dt)]).collect(),
        }
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn cells(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    pub fn with_nu(&self, nu: f64) -> Self {
        Self { nu, ..self.clone() }
    }

    pub fn column(&self, cell: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[cell]).collect()
    }

    fn from_columns(&self, cols: Vec<Vec<f64>>) -> Self {
        let n = self.values.len();
        Self {
            values: (0..n).map(|k| cols.iter().map(|c| c[k]).collect()).collect(),
            ..self.clone()
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
            ..self.clone()
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect(),
            ..self.clone()
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            values: self.values.iter().map(|a| a.iter().map(|x| s * x).collect()).collect(),
            ..self.clone()
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// ‖u‖_ν = sqrt(Σ_n ‖u_n‖² e^{−2ν t_n} dt).
pub fn weighted_norm(u: &WeightedSignal) -> f64 {
    u.values
        .iter()
        .enumerate()
        .map(|(n, v)| {
            let sq: f64 = v.iter().map(|x| x * x).sum::<f64>() * u.cell_weight;
            sq * (-2.0 * u.nu * u.time(n)).exp() * u.dt
        })
        .sum::<f64>()
        .sqrt()
}

/// `V(|ξ|) ξ` with `V(s) = s^{k−1}/(1 + τ s^{k−1})`.
pub fn saturable_q(xi: f64, k: u32, tau: f64) -> f64 {
    let a = xi.abs().powi(k as i32 - 1);
    a * xi / (1.0 + tau * a)
}

pub fn saturable_q_field(u: &[f64], k: u32, tau: f64) -> Vec<f64> {
    u.iter().map(|&x| saturable_q(x, k, tau)).collect()
}

/// Derivative of the scalar envelope, `w (k + w) / (τ (1 + w)²)` with `w = τ ξ^{k−1}`.
fn saturable_slope(xi: f64, k: u32, tau: f64) -> f64 {
    let w = tau * xi.abs().powi(k as i32 - 1);
    (k as f64 + w) * xi.abs().powi(k as i32 - 1) / (1.0 + w).powi(2)
}

/// Lipschitz constant of `saturable_q` by dense sampling of its slope.
pub fn saturable_lipschitz(k: u32, tau: f64) -> f64 {
    // The slope depends on ξ only through w = τ ξ^{k−1}; sample w on a log grid.
    let n = 200_000;
    (0..=n)
        .map(|i| {
            let w = 10f64.powf(-8.0 + 16.0 * i as f64 / n as f64);
            let xi = (w / tau).powf(1.0 / (k as f64 - 1.0));
            saturable_slope(xi, k, tau)
        })
        .fold(0.0, f64::max)
}

/// Kernel samples `K(n dt)`, n = 0, 1, ...
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel1 {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl Kernel1 {
    pub fn from_fn(dt: f64, samples: usize, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dt,
            values: (0..samples).map(|n| f(n as f64 * dt)).collect(),
        }
    }

    /// Single sample at 0 with unit trapezoid mass.
    pub fn delta(dt: f64) -> Self {
        Self {
            dt,
            values: vec![2.0 / dt],
        }
    }

    pub fn is_instantaneous(&self) -> bool {
        self.values.first().is_some_and(|v| *v != 0.0) && self.values[1..].iter().all(|v| *v == 0.0)
    }

    /// `|K(0)| + ∫|K'(t)| e^{−νt} dt` from first differences.
    pub fn derivative_bound(&self, nu: f64) -> f64 {
        let k0 = self.values.first().map_or(0.0, |v| v.abs());
        let tail: f64 = self
            .values
            .windows(2)
            .enumerate()
            .map(|(n, w)| (w[1] - w[0]).abs() * (-nu * (n as f64 + 0.5) * self.dt).exp())
            .sum();
        // The kernel is zero past its last sample.
        let last = self.values.last().map_or(0.0, |v| v.abs()) * (-nu * self.values.len() as f64 * self.dt).exp();
        k0 + tail + last
    }
}

/// Kernel samples `K(i dt, j dt)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel2 {
    pub dt: f64,
    pub values: Vec<Vec<f64>>,
}

impl Kernel2 {
    pub fn from_fn(dt: f64, samples: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            dt,
            values: (0..samples)
                .map(|i| (0..samples).map(|j| f(i as f64 * dt, j as f64 * dt)).collect())
                .collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.values.len()
    }

    fn touches_axes(&self) -> bool {
        self.values.first().is_some_and(|r| r.iter().any(|v| *v != 0.0))
            || self.values.iter().any(|r| r.first().is_some_and(|v| *v != 0.0))
    }

    /// `(∂1 + ∂2) K` by central differences along the diagonal direction.
    pub fn diagonal_derivative(&self) -> Kernel2 {
        let n = self.size();
        let at = |i: isize, j: isize| -> f64 {
            if i < 0 || j < 0 || i as usize >= n || j as usize >= n {
                0.0
            } else {
                self.values[i as usize][j as usize]
            }
        };
        let values = (0..n as isize)
            .map(|i| {
                (0..n as isize)
                    .map(|j| (at(i + 1, j + 1) - at(i - 1, j - 1)) / (2.0 * self.dt))
                    .collect()
            })
            .collect();
        Kernel2 { dt: self.dt, values }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NlKind {
    SaturableConvolved,
    QuadraticNonlocal,
}

fn default_k() -> u32 {
    3
}

fn default_tau() -> f64 {
    1.0
}

fn default_cq() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearPolarization {
    pub kind: NlKind,
    #[serde(default = "default_k")]
    pub k: u32,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Kernel1>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel2: Option<Kernel2>,
    /// Temporal cutoff T of the quadratic law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_t: Option<f64>,
    /// Bound of the bilinear map `q(a, b) = C_q a b`.
    #[serde(default = "default_cq")]
    pub c_q: f64,
}

impl NonlinearPolarization {
    pub fn saturable(k: u32, tau: f64, kernel: Kernel1) -> Self {
        Self {
            kind: NlKind::SaturableConvolved,
            k,
            tau,
            kernel: Some(kernel),
            kernel2: None,
            cutoff_t: None,
            c_q: 1.0,
        }
    }

    pub fn quadratic(kernel2: Kernel2, c_q: f64, cutoff_t: Option<f64>) -> Self {
        Self {
            kind: NlKind::QuadraticNonlocal,
            k: 2,
            tau: 1.0,
            kernel: None,
            kernel2: Some(kernel2),
            cutoff_t,
            c_q,
        }
    }

    /// Parse-time checks. Zero-delay laws are rejected: their time derivative
    /// needs `∂t q(u(t))`, which is outside the weighted-L² fixed-point setting.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NlError::Invalid(m.into()));
        match self.kind {
            NlKind::SaturableConvolved => {
                if self.k < 2 || !(self.tau > 0.0) {
                    return bad("saturable law needs k >= 2 and tau > 0");
                }
                let Some(k) = &self.kernel else {
                    return bad("saturable law needs a kernel");
                };
                if k.values.is_empty() || !(k.dt > 0.0) {
                    return bad("kernel needs dt > 0 and at least one sample");
                }
                if k.is_instantaneous() {
                    return bad("instantaneous (zero-delay) kernels are not supported; a delayed, causal kernel is required");
                }
            }
            NlKind::QuadraticNonlocal => {
                let Some(k) = &self.kernel2 else {
                    return bad("quadratic law needs kernel2");
                };
                if k.size() == 0 || !(k.dt > 0.0) || k.values.iter().any(|r| r.len() != k.size()) {
                    return bad("kernel2 must be a square grid with dt > 0");
                }
                if k.touches_axes() {
                    return bad("kernel2 must vanish on the axes (no instantaneous part)");
                }
                if self.cutoff_t.is_some_and(|t| t < 0.0) || self.c_q < 0.0 {
                    return bad("cutoff and C_q must be >= 0");
                }
            }
        }
        Ok(())
    }
}

fn check_dt(kernel: f64, signal: f64) -> Result<()> {
    if (kernel - signal).abs() > 1e-9 * signal {
        return Err(NlError::KernelResolutionMismatch { kernel, signal });
    }
    Ok(())
}

/// Trapezoid sum of `K(t_n − s) w(s)` over `[0, t_n]`.
fn causal_convolution(k: &[f64], w: &[f64], dt: f64) -> Vec<f64> {
    (0..w.len())
        .map(|n| {
            if n == 0 {
                return 0.0;
            }
            let lo = n.saturating_sub(k.len() - 1);
            let mut s = 0.0;
            for m in lo..=n {
                let wt = if m == 0 || m == n { 0.5 } else { 1.0 };
                s += wt * k[n - m] * w[m];
            }
            s * dt
        })
        .collect()
}

/// `P = ∫ K(t − s) q(e(s)) ds` per cell.
pub fn convolve_polarization(e: &WeightedSignal, nl: &NonlinearPolarization) -> Result<WeightedSignal> {
    let kernel = nl
        .kernel
        .as_ref()
        .ok_or_else(|| NlError::Invalid("saturable law needs a kernel".into()))?;
    check_dt(kernel.dt, e.dt)?;
    if kernel.values.is_empty() {
        return Ok(e.scale(0.0));
    }
    let cols: Vec<Vec<f64>> = (0..e.cells())
        .into_par_iter()
        .map(|c| {
            let q: Vec<f64> = e.values.iter().map(|v| saturable_q(v[c], nl.k, nl.tau)).collect();
            causal_convolution(&kernel.values, &q, e.dt)
        })
        .collect();
    Ok(e.from_columns(cols))
}

/// `∫∫ K(t − τ1, t − τ2) C_q e1(τ1) e2(τ2) dτ1 dτ2`, zero for `t > cutoff`.
pub fn quadratic_polarization_bilinear(
    e1: &WeightedSignal,
    e2: &WeightedSignal,
    kernel: &Kernel2,
    c_q: f64,
    cutoff_t: Option<f64>,
) -> Result<WeightedSignal> {
    check_dt(kernel.dt, e1.dt)?;
    check_dt(e2.dt, e1.dt)?;
    let dt = e1.dt;
    let nk = kernel.size();
    let cols: Vec<Vec<f64>> = (0..e1.cells())
        .into_par_iter()
        .map(|c| {
            let a = e1.column(c);
            let b = e2.column(c);
            (0..a.len())
                .map(|n| {
                    if n == 0 || cutoff_t.is_some_and(|ct| e1.time(n) > ct) {
                        return 0.0;
                    }
                    let w = |m: usize| if m == 0 || m == n { 0.5 } else { 1.0 };
                    let mut s = 0.0;
                    for i in 0..nk.min(n + 1) {
                        let row = &kernel.values[i];
                        let ai = w(n - i) * a[n - i];
                        if ai == 0.0 {
                            continue;
                        }
                        let mut inner = 0.0;
                        for j in 0..nk.min(n + 1) {
                            inner += row[j] * w(n - j) * b[n - j];
                        }
                        s += ai * inner;
                    }
                    c_q * s * dt * dt
                })
                .collect()
        })
        .collect();
    Ok(e1.from_columns(cols))
}

pub fn quadratic_polarization(e: &WeightedSignal, nl: &NonlinearPolarization) -> Result<WeightedSignal> {
    let kernel = nl
        .kernel2
        .as_ref()
        .ok_or_else(|| NlError::Invalid("quadratic law needs kernel2".into()))?;
    quadratic_polarization_bilinear(e, e, kernel, nl.c_q, nl.cutoff_t)
}

/// The polarization of `nl` applied to `e`.
pub fn polarization(e: &WeightedSignal, nl: &NonlinearPolarization) -> Result<WeightedSignal> {
    match nl.kind {
        NlKind::SaturableConvolved => convolve_polarization(e, nl),
        NlKind::QuadraticNonlocal => quadratic_polarization(e, nl),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    /// `∫∫ |K(τ1, τ2)| e^{−ν_K(τ1+τ2)}` (the quantity written L²_K).
    pub l_k: f64,
    /// Largest weighted integral of |K| along a diagonal line.
    pub ell_k: f64,
    pub nu_k: f64,
}

/// Composite Simpson quadratures of the integrability constants, with a
/// 3/8 panel absorbing an odd interval count. Row sums are computed in
/// parallel and reduced in row order, so the result does not depend on the
/// thread count.
pub fn kernel_constants(kernel: &Kernel2, nu_k: f64) -> KernelConstants {
    kernel_constants_with(kernel, nu_k, true)
}

pub fn kernel_constants_with(kernel: &Kernel2, nu_k: f64, parallel: bool) -> KernelConstants {
    let n = kernel.size();
    let dt = kernel.dt;
    let w = simpson_weights(n);
    let row = |i: usize| -> f64 {
        (0..n)
            .map(|j| w[i] * w[j] * kernel.values[i][j].abs() * (-nu_k * (i + j) as f64 * dt).exp())
            .sum::<f64>()
    };
    let rows: Vec<f64> = if parallel {
        (0..n).into_par_iter().map(row).collect()
    } else {
        (0..n).map(row).collect()
    };
    let l_k = rows.iter().sum::<f64>() * dt * dt;
    // Diagonal j − i = off, parametrised by t with step dt.
    let diag = |off: isize| -> f64 {
        let pts: Vec<f64> = (0..n as isize)
            .filter_map(|i| {
                let j = i + off;
                (j >= 0 && (j as usize) < n)
                    .then(|| kernel.values[i as usize][j as usize].abs() * (-nu_k * (i + j) as f64 * dt).exp())
            })
            .collect();
        let wd = simpson_weights(pts.len());
        pts.iter().zip(&wd).map(|(p, w)| p * w).sum::<f64>() * dt
    };
    let offs: Vec<isize> = (-(n as isize) + 1..n as isize).collect();
    let diags: Vec<f64> = if parallel {
        offs.par_iter().map(|&o| diag(o)).collect()
    } else {
        offs.iter().map(|&o| diag(o)).collect()
    };
    KernelConstants {
        l_k,
        ell_k: diags.iter().fold(0.0, |m: f64, v| m.max(*v)),
        nu_k,
    }
}

/// Unit-step quadrature weights for `m` equally spaced samples.
pub fn simpson_weights(m: usize) -> Vec<f64> {
    let mut w = vec![0.0; m];
    match m {
        0 | 1 => return w,
        2 => return vec![0.5, 0.5],
        3 => return vec![1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0],
        _ => {}
    }
    let mut start = 0;
    if m % 2 == 0 {
        for (k, c) in [3.0, 9.0, 9.0, 3.0].iter().enumerate() {
            w[k] += c / 8.0;
        }
        start = 3;
    }
    for a in (start..m - 1).step_by(2) {
        w[a] += 1.0 / 3.0;
        w[a + 1] += 4.0 / 3.0;
        w[a + 2] += 1.0 / 3.0;
    }
    w
}

/// Right side of the growth inequality for the truncated quadratic law,
/// `√T e^{νT} C_q √(L_K ℓ_K) (‖u‖ + ‖v‖) ‖u − v‖`.
pub fn quadratic_growth_bound(kc: &KernelConstants, c_q: f64, cutoff_t: f64, nu: f64, norm_u: f64, norm_v: f64, norm_diff: f64) -> f64 {
    cutoff_t.sqrt() * (nu * cutoff_t).exp() * c_q * (kc.l_k * kc.ell_k).sqrt() * (norm_u + norm_v) * norm_diff
}

/// Loads `(tau, value)` rows with uniform spacing from 0.
pub fn load_kernel_csv<R: Read>(r: R) -> Result<Kernel1> {
    let mut rd = csv::Reader::from_reader(r);
    let mut taus = Vec::new();
    let mut values = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| NlError::Invalid(format!("bad kernel row {rec:?}")))
        };
        taus.push(parse(0)?);
        values.push(parse(1)?);
    }
    let dt = uniform_step(&taus)?;
    Ok(Kernel1 { dt, values })
}

/// Loads `(tau1, tau2, value)` rows covering a square grid from 0.
pub fn load_kernel2_csv<R: Read>(r: R) -> Result<Kernel2> {
    let mut rd = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let v: Vec<f64> = (0..3)
            .map(|i| rec.get(i).and_then(|s| s.trim().parse().ok()))
            .collect::<Option<_>>()
            .ok_or_else(|| NlError::Invalid(format!("bad kernel2 row {rec:?}")))?;
        rows.push((v[0], v[1], v[2]));
    }
    let mut t1: Vec<f64> = rows.iter().map(|r| r.0).collect();
    t1.sort_by(|a, b| a.total_cmp(b));
    t1.dedup();
    let dt = uniform_step(&t1)?;
    let n = t1.len();
    if rows.len() != n * n {
        return Err(NlError::Invalid("kernel2 grid is not square".into()));
    }
    let mut values = vec![vec![0.0; n]; n];
    for (a, b, v) in rows {
        let (i, j) = ((a / dt).round() as usize, (b / dt).round() as usize);
        if i >= n || j >= n {
            return Err(NlError::Invalid("kernel2 index outside the grid".into()));
        }
        values[i][j] = v;
    }
    Ok(Kernel2 { dt, values })
}

fn uniform_step(t: &[f64]) -> Result<f64> {
    if t.len() < 2 || t[0].abs() > 1e-12 {
        return Err(NlError::Invalid("kernel grid must start at 0 with at least two samples".into()));
    }
    let dt = t[1] - t[0];
    if !(dt > 0.0) || t.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt) {
        return Err(NlError::Invalid("kernel grid is not uniform".into()));
    }
    Ok(dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    pub nu: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Slope bound of the linear part, ‖S_ν‖ ≤ d/ν.
    pub slope_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub update_norm: f64,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardResult {
    /// E on nodes then H on half nodes, at `t_n` (H lagging by dt/2).
    pub solution: WeightedSignal,
    pub n_e: usize,
    pub log: Vec<IterationRecord>,
    pub iterations: usize,
    pub lipschitz: f64,
    pub predicted_ratio: f64,
    pub predicted_contraction: bool,
    /// ‖S(f(u) + g) − u‖_ν.
    pub residual: f64,
    /// 2 ‖S g‖_ν.
    pub ball_radius: f64,
}

impl PicardResult {
    pub fn max_ratio(&self) -> f64 {
        self.log.iter().filter_map(|r| r.ratio).fold(0.0, f64::max)
    }

    pub fn e_signal(&self) -> WeightedSignal {
        WeightedSignal {
            values: self.solution.values.iter().map(|v| v[..self.n_e].to_vec()).collect(),
            ..self.solution.clone()
        }
    }
}

/// One simulator run with E-row forcing `extra[n]` applied on step `n → n+1`.
/// Returns states at t_0..t_N.
pub fn linear_solve(cfg: &SimConfig, nu: f64, extra: Option<&[Vec<f64>]>) -> Result<WeightedSignal> {
    let mut sim = Simulator::new(cfg)?;
    let n = cfg.grid.n_cells;
    let mut out = WeightedSignal::zeros(sim.dt(), nu, cfg.grid.dx, cfg.n_steps + 1, 2 * n + 1);
    for step in 0..cfg.n_steps {
        sim.step(extra.map(|x| x[step].as_slice()))?;
        let st = sim.state();
        let row = &mut out.values[step + 1];
        row[..=n].copy_from_slice(&st.e());
        row[n + 1..].copy_from_slice(&st.h());
    }
    Ok(out)
}

/// Forcing `−∂t P(E)` sampled on the half steps.
fn nonlinear_forcing(u: &WeightedSignal, n_e: usize, nl: &NonlinearPolarization) -> Result<Vec<Vec<f64>>> {
    let e = WeightedSignal {
        values: u.values.iter().map(|v| v[..n_e].to_vec()).collect(),
        ..u.clone()
    };
    let p = polarization(&e, nl)?;
    Ok(p.values
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| -(a - b) / u.dt).collect())
        .collect())
}

/// Lipschitz estimate of `u ↦ −∂t P(u)` in the ν-weighted norm; for the
/// quadratic law it holds on the ball of the given radius.
pub fn forcing_lipschitz(nl: &NonlinearPolarization, nu: f64, ball_radius: f64) -> Result<f64> {
    nl.validate()?;
    match nl.kind {
        NlKind::SaturableConvolved => {
            let k = nl.kernel.as_ref().expect("validated");
            Ok(saturable_lipschitz(nl.k, nl.tau) * k.derivative_bound(nu))
        }
        NlKind::QuadraticNonlocal => {
            let k = nl.kernel2.as_ref().expect("validated");
            let t = nl.cutoff_t.unwrap_or(k.size() as f64 * k.dt);
            let kc = kernel_constants(&k.diagonal_derivative(), nu / 2.0);
            Ok(quadratic_growth_bound(&kc, nl.c_q, t, nu, ball_radius, ball_radius, 1.0))
        }
    }
}

/// Picard iteration for `(∂t M + A) u = −∂t P(E) + g` with `g = sources`.
pub fn picard_solve(cfg: &SimConfig, nl: &NonlinearPolarization, g: &[Pulse], opts: PicardOptions) -> Result<PicardResult> {
    nl.validate()?;
    if !(opts.nu > 0.0) || !(opts.tol > 0.0) {
        return Err(NlError::Invalid("Picard needs nu > 0 and tol > 0".into()));
    }
    let mut cfg = cfg.clone();
    cfg.sources = g.to_vec();
    cfg.record.clear();
    let n_e = cfg.grid.n_cells + 1;
    let linear = linear_solve(&cfg, opts.nu, None)?;
    let ball_radius = 2.0 * weighted_norm(&linear);
    let lipschitz = forcing_lipschitz(nl, opts.nu, ball_radius)?;
    let predicted_ratio = opts.slope_d * lipschitz / opts.nu;
    if predicted_ratio >= 1.0 {
        log::warn!("predicted contraction ratio d*L/nu = {predicted_ratio:.3} >= 1");
    }
    let mut u = linear;
    let mut log_rows = Vec::new();
    let mut last: Option<f64> = None;
    let mut stalled = 0;
    for it in 1..=opts.max_iter {
        let f = nonlinear_forcing(&u, n_e, nl)?;
        let next = linear_solve(&cfg, opts.nu, Some(&f))?;
        let upd = weighted_norm(&next.sub(&u));
        let ratio = last.map(|l| if l > 0.0 { upd / l } else { 0.0 });
        log_rows.push(IterationRecord {
            iteration: it,
            update_norm: upd,
            ratio,
        });
        u = next;
        if upd <= opts.tol {
            let f = nonlinear_forcing(&u, n_e, nl)?;
            let check = linear_solve(&cfg, opts.nu, Some(&f))?;
            let residual = weighted_norm(&check.sub(&u));
            return Ok(PicardResult {
                solution: u,
                n_e,
                log: log_rows,
                iterations: it,
                lipschitz,
                predicted_ratio,
                predicted_contraction: predicted_ratio < 1.0,
                residual,
                ball_radius,
            });
        }
        if ratio.is_some_and(|r| r >= 1.0) {
            stalled += 1;
            if stalled >= 5 {
                return Err(NlError::NoContraction(stalled));
            }
        } else {
            stalled = 0;
        }
        last = Some(upd);
    }
    Err(NlError::MaxIter {
        iterations: opts.max_iter,
        last_update: last.unwrap_or(f64::NAN),
    })
}

pub fn write_iteration_log<W: Write>(log: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "update_norm", "ratio"])?;
    for r in log {
        w.write_record([
            r.iteration.to_string(),
            format!("{:.17e}", r.update_norm),
            r.ratio.map_or(String::new(), |x| format!("{x:.17e}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the E part as `time,node,value`.
pub fn write_solution_csv<W: Write>(res: &PicardResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "node", "value"])?;
    let s = &res.solution;
    for (n, v) in s.values.iter().enumerate() {
        for (i, x) in v[..res.n_e].iter().enumerate() {
            w.write_record([format!("{:.17e}", s.time(n)), i.to_string(), format!("{x:.17e}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_vanishes_at_zero_and_saturates() {
        assert_eq!(saturable_q(0.0, 3, 1.0), 0.0);
        let big = 1e8;
        assert!((saturable_q(big, 3, 1.0) / big - 1.0).abs() < 1e-6);
        assert!(saturable_q(-big, 3, 1.0) < 0.0);
    }

    #[test]
    fn q_is_bounded_by_both_regimes() {
        for i in 0..1000 {
            let x = -50.0 + 0.1 * i as f64;
            let q = saturable_q(x, 3, 2.0).abs();
            assert!(q <= x.abs().powi(3).min(x.abs() / 2.0) * (1.0 + 1e-15));
        }
    }

    #[test]
    fn lipschitz_sample_matches_closed_form() {
        for (k, tau) in [(2u32, 1.0), (3, 1.0), (4, 0.5), (5, 2.0)] {
            let closed = (k * k) as f64 / (4.0 * (k - 1) as f64 * tau);
            let s = saturable_lipschitz(k, tau);
            assert!((s / closed - 1.0).abs() < 1e-6, "{k} {tau} {s} {closed}");
        }
    }

    #[test]
    fn delta_kernel_is_instantaneous() {
        let nl = NonlinearPolarization::saturable(3, 1.0, Kernel1::delta(0.01));
        assert!(matches!(nl.validate(), Err(NlError::Invalid(_))));
    }

    #[test]
    fn dt_mismatch_is_reported() {
        let nl = NonlinearPolarization::saturable(3, 1.0, Kernel1::from_fn(0.02, 10, |t| t));
        let e = WeightedSignal::from_fn(0.01, 0.0, 10, |t| t);
        assert!(matches!(
            convolve_polarization(&e, &nl),
            Err(NlError::KernelResolutionMismatch { .. })
        ));
    }

    #[test]
    fn kernel_csv_roundtrip() {
        let text = "tau,value\n0,0\n0.5,1\n1.0,0.25\n";
        let k = load_kernel_csv(text.as_bytes()).unwrap();
        assert_eq!(k.dt, 0.5);
        assert_eq!(k.values, vec![0.0, 1.0, 0.25]);
        let text2 = "tau1,tau2,value\n0,0,0\n0,1,0\n1,0,0\n1,1,3\n";
        let k2 = load_kernel2_csv(text2.as_bytes()).unwrap();
        assert_eq!(k2.values, vec![vec![0.0, 0.0], vec![0.0, 3.0]]);
        assert!(load_kernel_csv("tau,value\n0,1\n0.5,1\n1.5,1\n".as_bytes()).is_err());
    }
}
