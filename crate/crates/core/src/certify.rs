//! Numeric accretivity certificates on half-planes.
//!
//! A law is sampled on a `(ν, t)` grid right of an edge, complemented by the
//! closed-form limits along `t → ±∞`. Results are numeric certificates: a
//! finite search backed by asymptotics, not a proof.

use crate::blocksys::BlockSystem;
use crate::linalg::{lambda_min, DenseMatrix};
use crate::matlaw::{self, ComplexFreq, DispersionParams, MatlawError, PmlStretch};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TOL_GAMMA: f64 = 1e-8;
/// Distance left of the axis probed for a negative witness.
pub const LEFT_PROBE: f64 = 1e-3;
pub const BISECTION_TOL: f64 = 1e-6;
pub const JACOBI_TOL: f64 = 1e-12;
pub const CERTIFICATE_METHOD: &str = "numeric certificate: finite grid plus closed-form t -> infinity limits";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("pole {pole} lies in the scanned region Re z >= {edge}")]
    PoleInRegion { pole: Complex64, edge: f64 },
    #[error("M0 is not symmetric positive definite (lambda_min = {0:.3e})")]
    M0NotSpd(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Matlaw(#[from] MatlawError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Electric,
    Magnetic,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialLaw {
    pub params: DispersionParams,
    #[serde(default)]
    pub stretch: PmlStretch,
    #[serde(default)]
    pub component: Component,
}

impl MaterialLaw {
    pub fn new(params: DispersionParams, stretch: PmlStretch, component: Component) -> Self {
        Self {
            params,
            stretch,
            component,
        }
    }

    /// Re zM(z) of the selected component(s); the smaller one for `Both`.
    pub fn real_part(&self, z: ComplexFreq) -> Result<f64, MatlawError> {
        let (e, h) = matlaw::eval_zm(&self.params, &self.stretch, z)?;
        Ok(match self.component {
            Component::Electric => e.re,
            Component::Magnetic => h.re,
            Component::Both => e.re.min(h.re),
        })
    }

    /// Limit of Re zM along t → ±∞ at abscissa ν.
    pub fn asymptote(&self, nu: f64) -> f64 {
        let (se, oe) = matlaw::electric_asymptote(&self.params, &self.stretch);
        let (sh, oh) = matlaw::magnetic_asymptote(&self.params, &self.stretch);
        let e = se * nu + oe;
        let h = sh * nu + oh;
        match self.component {
            Component::Electric => e,
            Component::Magnetic => h,
            Component::Both => e.min(h),
        }
    }

    pub fn poles(&self) -> Vec<Complex64> {
        let mut p = matlaw::poles(&self.params, &self.stretch);
        if self.component == Component::Magnetic {
            // zμ s(z) only sees the poles of the stretch.
            p = match self.stretch.kind {
                matlaw::StretchKind::Cfs if self.stretch.sigma != 0.0 => vec![Complex64::new(-self.stretch.alpha, 0.0)],
                _ => Vec::new(),
            };
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfPlaneGrid {
    /// Abscissae relative to the edge (all ≥ 0, the first one 0).
    pub nu_offsets: Vec<f64>,
    pub t_max: f64,
    pub t_count: usize,
    pub log_spaced: bool,
    /// Radius δ of the ball around the origin excluded from the scan.
    #[serde(default)]
    pub origin_radius: f64,
}

impl HalfPlaneGrid {
    /// 33 abscissae, 4097 log-spaced |t| values up to max(10³, 10 × pole radius).
    pub fn default_for(law: &MaterialLaw) -> Self {
        let radius = matlaw::pole_radius(&law.params, &law.stretch);
        let mut offs = vec![0.0];
        offs.extend(log_space(1e-3, 10.0f64.max(10.0 * radius), 32));
        Self {
            nu_offsets: offs,
            t_max: 1e3f64.max(10.0 * radius),
            t_count: 4097,
            log_spaced: true,
            origin_radius: 0.0,
        }
    }

    pub fn with_origin_radius(mut self, delta: f64) -> Self {
        self.origin_radius = delta;
        self
    }

    pub fn validate(&self) -> Result<(), CertifyError> {
        let bad = |m: &str| Err(CertifyError::InvalidGrid(m.into()));
        if self.nu_offsets.is_empty() || self.nu_offsets.iter().any(|&o| !(o >= 0.0 && o.is_finite())) {
            return bad("nu_offsets must be nonempty, finite and >= 0");
        }
        if self.t_count < 64 {
            return bad("t_count must be >= 64");
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return bad("t_max must be positive");
        }
        if !(self.origin_radius >= 0.0 && self.origin_radius.is_finite()) {
            return bad("origin_radius must be >= 0");
        }
        Ok(())
    }

    /// Symmetric t samples including 0.
    pub fn t_samples(&self) -> Vec<f64> {
        let pos = if self.log_spaced {
            log_space(self.t_max * 1e-7, self.t_max, self.t_count)
        } else {
            (1..=self.t_count)
                .map(|k| self.t_max * k as f64 / self.t_count as f64)
                .collect()
        };
        let mut ts: Vec<f64> = pos.iter().rev().map(|t| -t).collect();
        ts.push(0.0);
        ts.extend(pos);
        ts
    }

    pub fn nu_values(&self, edge: f64) -> Vec<f64> {
        self.nu_offsets.iter().map(|o| edge + o).collect()
    }

    fn summary(&self, edge: f64) -> GridSummary {
        GridSummary {
            nu_values: self.nu_values(edge),
            t_max: self.t_max,
            t_count: self.t_count,
            log_spaced: self.log_spaced,
            origin_radius: self.origin_radius,
        }
    }
}

pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    /// Smallest sampled value.
    pub inf: f64,
    pub argmin: ComplexFreq,
    /// Smallest closed-form t → ±∞ limit over the sampled abscissae.
    pub asymptote_min: f64,
    pub asymptote_nu: f64,
    /// True when no asymptote undercuts the sampled minimum.
    pub asymptote_checked: bool,
    pub points: usize,
}

impl ScanResult {
    /// Combined lower estimate of the infimum.
    pub fn lower(&self) -> f64 {
        self.inf.min(self.asymptote_min)
    }
}

fn sample_points(grid: &HalfPlaneGrid, edge: f64) -> Vec<ComplexFreq> {
    let delta = grid.origin_radius;
    let ts = grid.t_samples();
    let mut pts = Vec::with_capacity(grid.nu_offsets.len() * ts.len());
    for nu in grid.nu_values(edge) {
        for &t in &ts {
            if nu.hypot(t) >= delta {
                pts.push(ComplexFreq::new(nu, t));
            }
        }
    }
    if delta > 0.0 {
        let n = 1024;
        for k in 0..n {
            let th = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let z = ComplexFreq::new(delta * th.cos(), delta * th.sin());
            if z.nu >= edge {
                pts.push(z);
            }
        }
        if edge.abs() < delta {
            let h = (delta * delta - edge * edge).sqrt();
            pts.push(ComplexFreq::new(edge, h));
            pts.push(ComplexFreq::new(edge, -h));
        }
    }
    pts
}

/// Poles strictly right of the edge and outside the origin ball.
fn pole_in_region(law: &MaterialLaw, edge: f64, delta: f64) -> Option<Complex64> {
    law.poles()
        .into_iter()
        .filter(|p| p.re > edge && p.norm() >= delta)
        .max_by(|a, b| a.re.total_cmp(&b.re))
}

pub fn scan_halfplane(law: &MaterialLaw, nu_edge: f64, grid: &HalfPlaneGrid) -> Result<ScanResult, CertifyError> {
    grid.validate()?;
    if let Some(pole) = pole_in_region(law, nu_edge, grid.origin_radius) {
        return Err(CertifyError::PoleInRegion { pole, edge: nu_edge });
    }
    let pts = sample_points(grid, nu_edge);
    let vals: Vec<(usize, f64)> = pts
        .par_iter()
        .enumerate()
        .map(|(i, z)| law.real_part(*z).map(|v| (i, v)))
        .collect::<Result<_, _>>()
        .map_err(|e| match e {
            MatlawError::Pole { z, .. } => CertifyError::PoleInRegion { pole: z, edge: nu_edge },
            other => other.into(),
        })?;
    // Sequential reduction with index tie-break keeps the argmin schedule independent.
    let (imin, vmin) = vals
        .iter()
        .copied()
        .fold((usize::MAX, f64::INFINITY), |acc, (i, v)| {
            if v < acc.1 || (v == acc.1 && i < acc.0) {
                (i, v)
            } else {
                acc
            }
        });
    let (anu, amin) = grid
        .nu_values(nu_edge)
        .into_iter()
        .map(|nu| (nu, law.asymptote(nu)))
        .fold((nu_edge, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    let slack = 1e-12 * vmin.abs().max(1.0);
    Ok(ScanResult {
        inf: vmin,
        argmin: pts[imin],
        asymptote_min: amin,
        asymptote_nu: anu,
        asymptote_checked: amin >= vmin - slack,
        points: pts.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Accretive,
    NotAccretive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub nu: f64,
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub nu_values: Vec<f64>,
    pub t_max: f64,
    pub t_count: usize,
    pub log_spaced: bool,
    pub origin_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub verdict: Verdict,
    /// Positive values certify the half-plane Re z > −nu0.
    pub nu0: f64,
    pub gamma: f64,
    pub slope_d: Option<f64>,
    pub counterexample: Option<Counterexample>,
    pub grid: Option<GridSummary>,
    pub asymptote_checked: bool,
    pub method: String,
    pub notes: Vec<String>,
}

impl Certificate {
    pub fn is_accretive(&self) -> bool {
        self.verdict == Verdict::Accretive
    }
}

/// Walks outward along Re z = ν until the value drops below `bound`.
fn ray_witness(law: &MaterialLaw, nu: f64, t0: f64, bound: f64) -> Option<Counterexample> {
    let mut t = t0;
    let mut last = None;
    for _ in 0..200 {
        let z = ComplexFreq::new(nu, t);
        if let Ok(v) = law.real_part(z) {
            last = Some(Counterexample { nu, t, value: v });
            if v < bound {
                return last;
            }
        }
        t *= 2.0;
    }
    last
}

/// Most negative value on a small circle around a pole, restricted to the region.
fn pole_witness(law: &MaterialLaw, pole: Complex64, edge: f64) -> Option<Counterexample> {
    let r = 1e-3 * pole.norm().max(1.0);
    (0..256)
        .filter_map(|k| {
            let th = 2.0 * std::f64::consts::PI * k as f64 / 256.0;
            let z = pole + Complex64::from_polar(r, th);
            if z.re < edge {
                return None;
            }
            let zf = ComplexFreq::from(z);
            law.real_part(zf).ok().map(|v| Counterexample {
                nu: zf.nu,
                t: zf.t,
                value: v,
            })
        })
        .min_by(|a, b| a.value.total_cmp(&b.value))
}

pub fn find_gamma(law: &MaterialLaw, nu_edge: f64, grid: &HalfPlaneGrid) -> Result<Certificate, CertifyError> {
    let summary = Some(grid.summary(nu_edge));
    let scan = match scan_halfplane(law, nu_edge, grid) {
        Ok(s) => s,
        Err(CertifyError::PoleInRegion { pole, edge }) => {
            return Ok(Certificate {
                verdict: Verdict::NotAccretive,
                nu0: -nu_edge,
                gamma: 0.0,
                slope_d: None,
                counterexample: pole_witness(law, pole, edge),
                grid: summary,
                asymptote_checked: false,
                method: CERTIFICATE_METHOD.into(),
                notes: vec![format!("pole {pole} lies in Re z >= {edge}")],
            })
        }
        Err(e) => return Err(e),
    };
    let lower = scan.lower();
    let gamma = lower.max(0.0);
    let accretive = gamma > TOL_GAMMA;
    let mut notes = Vec::new();
    if !scan.asymptote_checked {
        notes.push(format!(
            "t -> infinity limit {:.6e} at nu = {:.6e} undercuts the sampled minimum {:.6e}",
            scan.asymptote_min, scan.asymptote_nu, scan.inf
        ));
    }
    let counterexample = if accretive {
        None
    } else if scan.inf <= scan.asymptote_min {
        Some(Counterexample {
            nu: scan.argmin.nu,
            t: scan.argmin.t,
            value: scan.inf,
        })
    } else {
        ray_witness(law, scan.asymptote_nu, grid.t_max, TOL_GAMMA)
    };
    Ok(Certificate {
        verdict: if accretive { Verdict::Accretive } else { Verdict::NotAccretive },
        nu0: -nu_edge,
        gamma,
        slope_d: None,
        counterexample,
        grid: summary,
        asymptote_checked: scan.asymptote_checked,
        method: CERTIFICATE_METHOD.into(),
        notes,
    })
}

/// Smallest d with Re zM(z) ≥ Re z / d on the sampled right half-plane
/// (None when Re zM ≤ 0 somewhere there).
pub fn slope_bound(law: &MaterialLaw, grid: &HalfPlaneGrid) -> Option<f64> {
    let mut g = grid.clone();
    g.origin_radius = 0.0;
    g.nu_offsets.retain(|&o| o > 0.0);
    if g.nu_offsets.is_empty() {
        return None;
    }
    let pts = sample_points(&g, 0.0);
    let ratios: Vec<Option<f64>> = pts
        .par_iter()
        .map(|z| match law.real_part(*z) {
            Ok(v) if v > 0.0 => Some(z.nu / v),
            _ => None,
        })
        .collect();
    let mut d: f64 = 0.0;
    for r in ratios {
        d = d.max(r?);
    }
    for nu in g.nu_values(0.0) {
        let a = law.asymptote(nu);
        if a <= 0.0 {
            return None;
        }
        d = d.max(nu / a);
    }
    Some(d)
}

/// Largest ν0 in `nu_search` with the law accretive on Re z > −ν0.
pub fn find_nu0_stability(
    law: &MaterialLaw,
    grid: &HalfPlaneGrid,
    nu_search: (f64, f64),
) -> Result<Certificate, CertifyError> {
    let base = find_gamma(law, 0.0, grid)?;
    let slope_d = slope_bound(law, grid);
    if !base.is_accretive() {
        let mut c = base;
        c.slope_d = slope_d;
        c.nu0 = 0.0;
        c.notes.push("not accretive on Re z >= 0; no decay rate".into());
        // γ = 0 on the axis alone leaves the rate open; a strictly negative
        // value just left of it rules out every ν0 ≥ LEFT_PROBE.
        if let Ok(left) = find_gamma(law, -LEFT_PROBE, grid) {
            if let Some(w) = left.counterexample.filter(|w| w.value < 0.0) {
                if let Some(axis) = c.counterexample {
                    c.notes.push(format!(
                        "axis witness z = {}{:+}i, value {:.3e}",
                        axis.nu, axis.t, axis.value
                    ));
                }
                c.counterexample = Some(w);
                c.notes.push(format!("negative value at Re z = {:e}", -LEFT_PROBE));
            }
        }
        return Ok(c);
    }
    let (mut lo, mut hi) = (nu_search.0.max(0.0), nu_search.1);
    let mut best = base;
    if lo > 0.0 {
        let c = find_gamma(law, -lo, grid)?;
        if !c.is_accretive() {
            let mut b = best;
            b.nu0 = 0.0;
            b.slope_d = slope_d;
            b.notes.push(format!("not accretive at the lower search bound {lo}"));
            return Ok(b);
        }
        best = c;
    }
    let top = find_gamma(law, -hi, grid)?;
    if top.is_accretive() {
        best = top;
        lo = hi;
        best.notes.push("decay rate reached the upper search bound".into());
    } else {
        while hi - lo > BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            let c = find_gamma(law, -mid, grid)?;
            if c.is_accretive() {
                lo = mid;
                best = c;
            } else {
                hi = mid;
            }
        }
    }
    best.nu0 = lo;
    best.slope_d = slope_d;
    Ok(best)
}

fn block_form(sys: &BlockSystem, nu: f64) -> DenseMatrix {
    sys.m0.scale(nu).add(&sys.m1.sym_part())
}

/// λ_min(ν M0 + sym M1) at the edge.
pub fn block_gamma(sys: &BlockSystem, nu: f64) -> f64 {
    lambda_min(&block_form(sys, nu), JACOBI_TOL)
}

fn check_m0(sys: &BlockSystem) -> Result<(), CertifyError> {
    let l = if sys.m0.is_symmetric(0.0) {
        lambda_min(&sys.m0, JACOBI_TOL)
    } else {
        f64::NAN
    };
    if l > 0.0 {
        Ok(())
    } else {
        Err(CertifyError::M0NotSpd(l))
    }
}

pub fn certify_block(sys: &BlockSystem, nu_edge: f64) -> Result<Certificate, CertifyError> {
    check_m0(sys)?;
    let g = block_gamma(sys, nu_edge);
    let accretive = g > TOL_GAMMA;
    Ok(Certificate {
        verdict: if accretive { Verdict::Accretive } else { Verdict::NotAccretive },
        nu0: -nu_edge,
        gamma: g.max(0.0),
        slope_d: None,
        // Re<(zM0 + M1)u, u> does not depend on Im z for real u.
        counterexample: (!accretive).then_some(Counterexample {
            nu: nu_edge,
            t: 0.0,
            value: g,
        }),
        grid: None,
        asymptote_checked: true,
        method: "lambda_min of nu*M0 + sym(M1) by cyclic Jacobi".into(),
        notes: Vec::new(),
    })
}

/// Smallest edge in `[lo, hi]` at which the block form is accretive.
pub fn block_threshold(sys: &BlockSystem, lo: f64, hi: f64) -> Result<f64, CertifyError> {
    check_m0(sys)?;
    let (mut lo, mut hi) = (lo, hi);
    if block_gamma(sys, lo) > TOL_GAMMA {
        return Ok(lo);
    }
    if block_gamma(sys, hi) <= TOL_GAMMA {
        return Ok(f64::INFINITY);
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if block_gamma(sys, mid) > TOL_GAMMA {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Gershgorin/Young bound: for ν above this value every row of
/// ν M0 + sym M1 is strictly diagonally dominant.
pub fn young_threshold(sys: &BlockSystem) -> f64 {
    let s = sys.m1.sym_part();
    (0..s.rows)
        .map(|i| {
            let off: f64 = (0..s.cols).filter(|&j| j != i).map(|j| s[(i, j)].abs()).sum();
            (off - s[(i, i)]) / sys.m0[(i, i)]
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub name: String,
    pub pass: bool,
    pub applicable: bool,
    pub value: Option<f64>,
    pub witness: Option<Counterexample>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct M2M3Report {
    pub clauses: Vec<Clause>,
}

impl M2M3Report {
    pub fn clause(&self, name: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.name == name)
    }
}

/// Default ball radius for the (M2) clause.
pub const DEFAULT_ORIGIN_RADIUS: f64 = 0.05;

/// Checks the exponential-stability clauses for the permittivity.
pub fn check_m2m3(p: &DispersionParams) -> M2M3Report {
    let law = MaterialLaw::new(p.clone(), PmlStretch::NONE, Component::Electric);
    let grid = HalfPlaneGrid::default_for(&law);
    let mut clauses = Vec::new();

    // (M2') Re zε(z) ≥ 0 for Re z > 0, sampled just right of the axis.
    match scan_halfplane(&law, 1e-9, &grid) {
        Ok(s) => {
            let v = s.lower();
            clauses.push(Clause {
                name: "M2'".into(),
                pass: v >= -TOL_GAMMA,
                applicable: true,
                value: Some(v),
                witness: (v < -TOL_GAMMA).then_some(Counterexample {
                    nu: s.argmin.nu,
                    t: s.argmin.t,
                    value: s.inf,
                }),
                detail: "min Re z eps(z) over Re z > 0".into(),
            })
        }
        Err(e) => clauses.push(failed("M2'", e)),
    }

    // (M2) accretive outside B[0, δ] on some Re z > −ν.
    let ball = grid.clone().with_origin_radius(DEFAULT_ORIGIN_RADIUS);
    match find_nu0_stability(&law, &ball, (0.0, 1.0)) {
        Ok(c) => clauses.push(Clause {
            name: "M2".into(),
            pass: c.is_accretive() && c.nu0 > 0.0,
            applicable: true,
            value: Some(c.nu0),
            witness: c.counterexample,
            detail: format!("decay rate nu0 with delta = {DEFAULT_ORIGIN_RADIUS}, gamma = {:.3e}", c.gamma),
        }),
        Err(e) => clauses.push(failed("M2", e)),
    }

    let nu1 = matlaw::poles(p, &PmlStretch::NONE)
        .iter()
        .filter(|z| z.re < 0.0)
        .map(|z| -z.re)
        .fold(f64::INFINITY, f64::min);
    let nu1 = if nu1.is_finite() { 0.5 * nu1 } else { 1.0 };
    let pts = sample_points(&grid, -nu1);
    let evals: Vec<Option<(ComplexFreq, Complex64)>> = pts
        .par_iter()
        .map(|z| matlaw::eval_chi(p, *z).ok().map(|c| (*z, c)))
        .collect();
    let evals: Vec<(ComplexFreq, Complex64)> = evals.into_iter().flatten().collect();

    // (M3) χ and zχ bounded on Re z > −ν1.
    let (chi_max, zchi_max) = evals.iter().fold((0.0f64, 0.0f64), |(a, b), (z, c)| {
        (a.max(c.norm()), b.max((z.z() * c).norm()))
    });
    let bounded = chi_max < 1e6 && zchi_max < 1e6 && evals.len() == pts.len();
    clauses.push(Clause {
        name: "M3-bounded".into(),
        pass: bounded,
        applicable: true,
        value: Some(chi_max.max(zchi_max)),
        witness: None,
        detail: format!("sup |chi| = {chi_max:.3e}, sup |z chi| = {zchi_max:.3e} on Re z > -{nu1:.3e}"),
    });

    // lim_{z→0} zχ(z) = 0, probed on shrinking circles in Re z ≥ 0.
    let radii = [1e-2, 1e-4, 1e-6];
    let circle_max: Vec<f64> = radii
        .iter()
        .map(|&r| {
            (0..=64)
                .map(|k| {
                    let th = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * k as f64 / 64.0;
                    let z = ComplexFreq::new(r * th.cos(), r * th.sin());
                    matlaw::eval_chi(p, z).map(|c| (z.z() * c).norm()).unwrap_or(f64::INFINITY)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let shrinking = circle_max.windows(2).all(|w| w[1] <= w[0]) && circle_max[2] <= 1e-4;
    clauses.push(Clause {
        name: "M3-limit".into(),
        pass: shrinking,
        applicable: true,
        value: Some(circle_max[2]),
        witness: None,
        detail: format!("max |z chi| on |z| = 1e-2, 1e-4, 1e-6: {circle_max:?}"),
    });

    // ε∞ + Re χ ≥ c1 > 0 on Re z > −ν1.
    let (c1, wz) = evals
        .iter()
        .map(|(z, c)| (p.eps_inf + c.re, *z))
        .fold((f64::INFINITY, ComplexFreq::ZERO), |a, x| if x.0 < a.0 { x } else { a });
    clauses.push(Clause {
        name: "M3-c1".into(),
        pass: c1 > 0.0,
        applicable: true,
        value: Some(c1),
        witness: (c1 <= 0.0).then_some(Counterexample {
            nu: wz.nu,
            t: wz.t,
            value: c1,
        }),
        detail: "min eps_inf + Re chi(z)".into(),
    });

    // Re zε(z) ≥ c near Re z = 0 for conductive media.
    if p.sigma_bar > 0.0 {
        let g = grid.clone();
        match (find_gamma(&law, 0.0, &g), find_nu0_stability(&law, &g, (0.0, 1.0))) {
            (Ok(c0), Ok(cs)) => clauses.push(Clause {
                name: "accr_perm_strict".into(),
                pass: c0.is_accretive(),
                applicable: true,
                value: Some(c0.gamma),
                witness: c0.counterexample,
                detail: format!("c = min Re z eps(z) on Re z >= 0; holds on Re z > -{:.3e}", cs.nu0),
            }),
            (Err(e), _) | (_, Err(e)) => clauses.push(failed("accr_perm_strict", e)),
        }
    } else {
        clauses.push(Clause {
            name: "accr_perm_strict".into(),
            pass: true,
            applicable: false,
            value: None,
            witness: None,
            detail: "no conductivity".into(),
        });
    }
    M2M3Report { clauses }
}

fn failed(name: &str, e: CertifyError) -> Clause {
    Clause {
        name: name.into(),
        pass: false,
        applicable: true,
        value: None,
        witness: None,
        detail: e.to_string(),
    }
}
