//! 1D staggered-grid solver for the block systems (E_z, H_y, ∂x as curl).
//!
//! E-aligned blocks live on integer nodes `x_i = origin + i dx`, H-aligned
//! blocks on half nodes. Fields are paired by leapfrog; each node's local
//! chain `M0 ∂t u + M1 u = b` is advanced by the trapezoidal rule.

use crate::blocksys::{self, BlockError, BlockSystem, Variant};
use crate::linalg::{solve_in_place, DenseMatrix};
use crate::matlaw::{DispersionParams, MatlawError, PmlStretch, StretchKind};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TdsimError {
    #[error("dt = {dt:.6e} exceeds the CFL limit {limit:.6e}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("non-finite field value at step {step}")]
    NonFiniteField { step: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("series has non-positive values in the fit window")]
    NonPositiveValues,
    #[error("measurement window ends at {window:.4} but reference boundary returns reach the probe at {contaminated:.4}")]
    WindowTooLong { window: f64, contaminated: f64 },
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Matlaw(#[from] MatlawError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, TdsimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaGrading {
    Constant,
    /// α_max at the interface falling linearly to 0 at the outer wall.
    #[default]
    LinearDecay,
}

fn default_m() -> u32 {
    3
}

fn default_target_db() -> f64 {
    -80.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmlProfile {
    pub kind: StretchKind,
    /// Cells per side.
    pub thickness: usize,
    /// None: chosen so the normal-incidence round trip attenuates by `target_db`.
    #[serde(default)]
    pub sigma_max: Option<f64>,
    #[serde(default)]
    pub alpha_max: f64,
    #[serde(default = "default_m")]
    pub grading_exponent: u32,
    #[serde(default)]
    pub alpha_grading: AlphaGrading,
    #[serde(default = "default_target_db")]
    pub target_db: f64,
}

impl PmlProfile {
    pub fn cfs(thickness: usize, alpha_max: f64) -> Self {
        Self {
            kind: StretchKind::Cfs,
            thickness,
            sigma_max: None,
            alpha_max,
            grading_exponent: 3,
            alpha_grading: AlphaGrading::LinearDecay,
            target_db: -80.0,
        }
    }

    pub fn uniaxial(thickness: usize) -> Self {
        Self {
            kind: StretchKind::Uniaxial,
            alpha_max: 0.0,
            ..Self::cfs(thickness, 0.0)
        }
    }

    /// σ_max = c (m+1) ln(1/R) / (2L) with R the target round-trip amplitude.
    pub fn resolved_sigma_max(&self, dx: f64, speed: f64) -> f64 {
        match self.sigma_max {
            Some(s) => s,
            None if self.thickness == 0 => 0.0,
            None => {
                let r = 10f64.powf(self.target_db / 20.0);
                let l = self.thickness as f64 * dx;
                speed * (self.grading_exponent as f64 + 1.0) * (1.0 / r).ln() / (2.0 * l)
            }
        }
    }
}

fn default_stride() -> usize {
    1
}

fn default_cfl() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub n_cells: usize,
    pub dx: f64,
    /// Coordinate of node 0.
    #[serde(default)]
    pub origin: f64,
    /// Graded absorbing layers on both sides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pml: Option<PmlProfile>,
    /// One stretch applied to the whole domain (no physical region).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform: Option<PmlStretch>,
}

impl Grid1D {
    pub fn plain(n_cells: usize, dx: f64) -> Self {
        Self {
            n_cells,
            dx,
            origin: 0.0,
            pml: None,
            uniform: None,
        }
    }

    pub fn thickness(&self) -> usize {
        self.pml.as_ref().map_or(0, |p| p.thickness)
    }

    /// Cells of the physical region, `[first, last)`.
    pub fn phys_range(&self) -> (usize, usize) {
        let t = self.thickness();
        (t, self.n_cells - t)
    }

    pub fn node_x(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.dx
    }

    fn stretch_at(&self, cell_pos: f64, sigma_max: f64) -> PmlStretch {
        if let Some(u) = self.uniform {
            return u;
        }
        let Some(p) = &self.pml else {
            return PmlStretch::NONE;
        };
        if p.thickness == 0 || p.kind == StretchKind::None {
            return PmlStretch::NONE;
        }
        let th = p.thickness as f64;
        let depth = (th - cell_pos).max(cell_pos - (self.n_cells as f64 - th)).max(0.0);
        let rel = (depth / th).min(1.0);
        let sigma = sigma_max * rel.powi(p.grading_exponent as i32);
        let alpha = match p.alpha_grading {
            AlphaGrading::Constant => p.alpha_max,
            AlphaGrading::LinearDecay => p.alpha_max * (1.0 - rel),
        };
        PmlStretch {
            kind: p.kind,
            sigma,
            alpha,
        }
    }
}

fn default_phase() -> f64 {
    -std::f64::consts::FRAC_PI_2
}

/// Right-hand side `f(x, t) = A g(t) h(x)` of the E row (f = −J), with
/// `g(t) = exp(−(B (t − t_d))²) cos(ω (t − t_d) + φ)` and a Gaussian or
/// point profile `h`. Zero for `t ≤ onset` and for `t ≥ cutoff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub amplitude: f64,
    /// Angular center frequency ω.
    #[serde(default)]
    pub frequency: f64,
    /// Envelope rate B (1/time).
    pub bandwidth: f64,
    pub delay: f64,
    #[serde(default = "default_phase")]
    pub phase: f64,
    pub position: f64,
    /// Gaussian half-width in length units; 0 puts a 1/dx impulse on the nearest node.
    #[serde(default)]
    pub width: f64,
    #[serde(default)]
    pub onset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
    /// Carrier switched on smoothly over this many seconds instead of the Gaussian envelope.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuous_ramp: Option<f64>,
}

impl Pulse {
    pub fn value(&self, t: f64) -> f64 {
        if t <= self.onset || self.cutoff.is_some_and(|c| t >= c) {
            return 0.0;
        }
        let s = t - self.delay;
        let carrier = (self.frequency * s + self.phase).cos();
        let env = match self.continuous_ramp {
            Some(r) => {
                let u = ((t - self.onset) / r).min(1.0);
                u * u * (3.0 - 2.0 * u)
            }
            None => (-(self.bandwidth * s).powi(2)).exp(),
        };
        self.amplitude * env * carrier
    }

    /// Earliest time with a non-negligible value.
    pub fn start_time(&self) -> f64 {
        if self.continuous_ramp.is_some() {
            return self.onset;
        }
        (self.delay - 6.0 / self.bandwidth).max(self.onset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Diagnostic {
    /// ½Σdx(ε∞ E^{n−1}E^n + μ (H^{n−1/2})²).
    Energy,
    /// Same pairing restricted to the physical region.
    PhysicalEnergy,
    /// ½⟨M0 U, U⟩ including auxiliaries.
    StateNorm,
    /// E at an integer node.
    Probe { node: usize },
}

impl Diagnostic {
    pub fn name(&self) -> String {
        match self {
            Diagnostic::Energy => "energy".into(),
            Diagnostic::PhysicalEnergy => "physical_energy".into(),
            Diagnostic::StateNorm => "state_norm".into(),
            Diagnostic::Probe { node } => format!("probe_{node}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub variant: Variant,
    #[serde(default)]
    pub material: DispersionParams,
    pub grid: Grid1D,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub n_steps: usize,
    #[serde(default)]
    pub sources: Vec<Pulse>,
    #[serde(default)]
    pub record: Vec<Diagnostic>,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    #[serde(default = "default_cfl")]
    pub cfl_safety: f64,
}

impl SimConfig {
    pub fn new(variant: Variant, material: DispersionParams, grid: Grid1D, n_steps: usize) -> Self {
        Self {
            variant,
            material,
            grid,
            dt: None,
            n_steps,
            sources: Vec::new(),
            record: Vec::new(),
            record_stride: 1,
            cfl_safety: 0.9,
        }
    }

    /// Largest permissible step, `cfl_safety · dx · sqrt(min(ε∞,1) · min(μ,1))`.
    pub fn dt_limit(&self) -> f64 {
        self.cfl_safety * self.grid.dx * (self.material.eps_inf.min(1.0) * self.material.mu.min(1.0)).sqrt()
    }

    pub fn time_step(&self) -> f64 {
        self.dt.unwrap_or_else(|| self.dt_limit())
    }

    /// Fastest wave speed 1/sqrt(ε∞ μ).
    pub fn speed(&self) -> f64 {
        1.0 / (self.material.eps_inf * self.material.mu).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TdsimError::InvalidConfig(m));
        self.material.validate()?;
        if self.material.eps_inf <= 0.0 {
            return bad("eps_inf must be positive for simulation".into());
        }
        let g = &self.grid;
        if g.n_cells < 2 || !(g.dx > 0.0 && g.dx.is_finite()) {
            return bad("grid needs n_cells >= 2 and dx > 0".into());
        }
        if g.pml.is_some() && g.uniform.is_some() {
            return bad("grid.pml and grid.uniform are exclusive".into());
        }
        if let Some(p) = &g.pml {
            if 2 * p.thickness >= g.n_cells {
                return bad("PML layers leave no physical region".into());
            }
            if p.grading_exponent < 1 {
                return bad("grading_exponent must be >= 1".into());
            }
            if p.alpha_max < 0.0 || p.sigma_max.is_some_and(|s| s < 0.0) {
                return bad("PML parameters must be >= 0".into());
            }
        }
        let kind = g
            .uniform
            .map(|u| u.kind)
            .or(g.pml.as_ref().filter(|p| p.thickness > 0).map(|p| p.kind))
            .unwrap_or(StretchKind::None);
        if kind != StretchKind::None && kind != self.variant.stretch_kind() {
            return bad(format!("stretch kind {kind:?} does not match variant {:?}", self.variant));
        }
        if self.record_stride == 0 {
            return bad("record_stride must be >= 1".into());
        }
        for s in &self.sources {
            if s.onset < 0.0 || s.bandwidth <= 0.0 && s.continuous_ramp.is_none() {
                return bad("sources must be causal (onset >= 0) with positive bandwidth".into());
            }
        }
        for d in &self.record {
            if let Diagnostic::Probe { node } = d {
                if *node > g.n_cells {
                    return bad(format!("probe node {node} outside the grid"));
                }
            }
        }
        let dt = self.time_step();
        let limit = self.dt_limit();
        if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
            return Err(TdsimError::CflViolation { dt, limit });
        }
        Ok(())
    }
}

/// Trapezoidal propagator of one node's chain: `u ← P u + q b`.
#[derive(Debug, Clone)]
struct LocalStep {
    p: Vec<f64>,
    q: Vec<f64>,
}

fn local_step(m0: &DenseMatrix, m1: &DenseMatrix, idx: &[usize], dt: f64) -> Result<LocalStep> {
    let d = idx.len();
    let mut a = vec![0.0; d * d];
    let mut rhs = vec![0.0; d * (d + 1)];
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            a[r * d + c] = m0[(i, j)] / dt + 0.5 * m1[(i, j)];
            rhs[r * (d + 1) + c] = m0[(i, j)] / dt - 0.5 * m1[(i, j)];
        }
    }
    rhs[d] = 1.0;
    solve_in_place(&mut a, &mut rhs, d, d + 1, 1e-14)
        .map_err(|_| TdsimError::InvalidConfig("singular local propagator".into()))?;
    let mut p = vec![0.0; d * d];
    let mut q = vec![0.0; d];
    for r in 0..d {
        p[r * d..(r + 1) * d].copy_from_slice(&rhs[r * (d + 1)..r * (d + 1) + d]);
        q[r] = rhs[r * (d + 1) + d];
    }
    Ok(LocalStep { p, q })
}

#[derive(Debug, Clone)]
struct Chain {
    /// State indices of this chain, field first.
    idx: Vec<usize>,
    kinds: Vec<LocalStep>,
    node_kind: Vec<u32>,
}

impl Chain {
    fn dim(&self) -> usize {
        self.idx.len()
    }

    fn advance(&self, node: usize, u: &mut [f64], b: f64, tmp: &mut [f64]) {
        let k = &self.kinds[self.node_kind[node] as usize];
        let d = u.len();
        for r in 0..d {
            let row = &k.p[r * d..(r + 1) * d];
            let mut s = k.q[r] * b;
            for c in 0..d {
                s += row[c] * u[c];
            }
            tmp[r] = s;
        }
        u.copy_from_slice(&tmp[..d]);
    }
}

/// Simulator state: E-chain values on the n_cells+1 integer nodes and
/// H-chain values on the n_cells half nodes, both node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub time: f64,
    pub step: usize,
    pub e_chain: Vec<f64>,
    pub h_chain: Vec<f64>,
    /// E at the previous integer time, for the leapfrog energy pairing.
    pub e_prev: Vec<f64>,
    pub e_labels: Vec<String>,
    pub h_labels: Vec<String>,
}

impl FieldState {
    fn de(&self) -> usize {
        self.e_labels.len()
    }

    fn dh(&self) -> usize {
        self.h_labels.len()
    }

    pub fn e(&self) -> Vec<f64> {
        self.e_chain.iter().step_by(self.de()).copied().collect()
    }

    pub fn h(&self) -> Vec<f64> {
        self.h_chain.iter().step_by(self.dh()).copied().collect()
    }

    /// One array per layout block component, E-aligned on nodes and H-aligned on half nodes.
    pub fn blocks(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (k, l) in self.e_labels.iter().enumerate() {
            out.push((l.clone(), self.e_chain.iter().skip(k).step_by(self.de()).copied().collect()));
        }
        for (k, l) in self.h_labels.iter().enumerate() {
            out.push((l.clone(), self.h_chain.iter().skip(k).step_by(self.dh()).copied().collect()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energies {
    /// ½Σdx(ε∞ E^{n−1}E^n + μ (H^{n−1/2})²).
    pub field: f64,
    /// ½⟨M0 U, U⟩ with the same E pairing.
    pub state: f64,
}

pub struct Simulator {
    cfg: SimConfig,
    dt: f64,
    echain: Chain,
    hchain: Chain,
    /// Per-pulse node weights.
    weights: Vec<Vec<(usize, f64)>>,
    state: FieldState,
    tmp: Vec<f64>,
    scratch_f: Vec<f64>,
}

impl Simulator {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let dt = cfg.time_step();
        let p = &cfg.material;
        let grid = &cfg.grid;
        let n = grid.n_cells;
        let membership = blocksys::structural_membership(cfg.variant, p)?;
        let probe_stretch = match cfg.variant.stretch_kind() {
            StretchKind::None => PmlStretch::NONE,
            StretchKind::Cfs => PmlStretch::cfs(0.0, 0.0),
            StretchKind::Uniaxial => PmlStretch::uniaxial(0.0),
        };
        let proto = blocksys::assemble(cfg.variant, p, &probe_stretch)?;
        let labels = proto.layout.labels();
        let eidx: Vec<usize> = (0..proto.layout.dim).filter(|&i| membership[i]).collect();
        let hidx: Vec<usize> = (0..proto.layout.dim).filter(|&i| !membership[i]).collect();
        let sigma_max = grid
            .pml
            .as_ref()
            .map_or(0.0, |pr| pr.resolved_sigma_max(grid.dx, cfg.speed()));
        let mut cache: HashMap<(u64, u64), usize> = HashMap::new();
        let mut systems: Vec<BlockSystem> = Vec::new();
        let mut kind_of = |s: PmlStretch| -> Result<usize> {
            let key = (s.sigma.to_bits(), s.alpha.to_bits());
            if let Some(&k) = cache.get(&key) {
                return Ok(k);
            }
            let sys = blocksys::assemble(cfg.variant, p, &s)?;
            for &i in &eidx {
                for &j in &hidx {
                    if sys.m1[(i, j)] != 0.0 || sys.m1[(j, i)] != 0.0 {
                        return Err(TdsimError::InvalidConfig("E and H chains are coupled through M1".into()));
                    }
                }
            }
            systems.push(sys);
            cache.insert(key, systems.len() - 1);
            Ok(systems.len() - 1)
        };
        let stretch_for = |pos: f64| {
            let mut s = grid.stretch_at(pos, sigma_max);
            if s.kind == StretchKind::None {
                s = probe_stretch;
            }
            s
        };
        let e_kind: Vec<usize> = (0..=n).map(|i| kind_of(stretch_for(i as f64))).collect::<Result<_>>()?;
        let h_kind: Vec<usize> = (0..n).map(|i| kind_of(stretch_for(i as f64 + 0.5))).collect::<Result<_>>()?;
        let build = |idx: &[usize], kinds: &[usize]| -> Result<Chain> {
            let steps = systems
                .iter()
                .map(|s| local_step(&s.m0, &s.m1, idx, dt))
                .collect::<Result<Vec<_>>>()?;
            Ok(Chain {
                idx: idx.to_vec(),
                kinds: steps,
                node_kind: kinds.iter().map(|&k| k as u32).collect(),
            })
        };
        let echain = build(&eidx, &e_kind)?;
        let hchain = build(&hidx, &h_kind)?;
        let weights = cfg
            .sources
            .iter()
            .map(|s| source_weights(s, grid))
            .collect();
        let state = FieldState {
            time: 0.0,
            step: 0,
            e_chain: vec![0.0; (n + 1) * echain.dim()],
            h_chain: vec![0.0; n * hchain.dim()],
            e_prev: vec![0.0; n + 1],
            e_labels: eidx.iter().map(|&i| labels[i].clone()).collect(),
            h_labels: hidx.iter().map(|&i| labels[i].clone()).collect(),
        };
        let dmax = echain.dim().max(hchain.dim());
        Ok(Self {
            cfg: cfg.clone(),
            dt,
            echain,
            hchain,
            weights,
            state,
            tmp: vec![0.0; dmax],
            scratch_f: vec![0.0; n + 1],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn state(&self) -> &FieldState {
        &self.state
    }

    /// E-row source at every node for time t.
    pub fn source_at(&self, t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (pulse, w) in self.cfg.sources.iter().zip(&self.weights) {
            let g = pulse.value(t);
            if g == 0.0 {
                continue;
            }
            for &(i, wi) in w {
                out[i] += g * wi;
            }
        }
    }

    /// Advances one dt. `extra` is added to the E-row right-hand side at
    /// every node (sampled at the half step).
    pub fn step(&mut self, extra: Option<&[f64]>) -> Result<()> {
        let n = self.cfg.grid.n_cells;
        let dx = self.cfg.grid.dx;
        let de = self.echain.dim();
        let dh = self.hchain.dim();
        let st = &mut self.state;
        // H chain: t_{n−1/2} → t_{n+1/2}, driven by ∂x E at t_n.
        for i in 0..n {
            let b = (st.e_chain[(i + 1) * de] - st.e_chain[i * de]) / dx;
            self.hchain
                .advance(i, &mut st.h_chain[i * dh..(i + 1) * dh], b, &mut self.tmp);
        }
        for i in 0..=n {
            st.e_prev[i] = st.e_chain[i * de];
        }
        let th = st.time + 0.5 * self.dt;
        let mut f = std::mem::take(&mut self.scratch_f);
        self.source_at(th, &mut f);
        if let Some(x) = extra {
            for (fi, xi) in f.iter_mut().zip(x) {
                *fi += xi;
            }
        }
        let st = &mut self.state;
        for i in 1..n {
            let b = (st.h_chain[i * dh] - st.h_chain[(i - 1) * dh]) / dx + f[i];
            self.echain
                .advance(i, &mut st.e_chain[i * de..(i + 1) * de], b, &mut self.tmp);
        }
        self.scratch_f = f;
        st.step += 1;
        st.time = st.step as f64 * self.dt;
        if !st.e_chain.iter().chain(&st.h_chain).all(|v| v.is_finite()) {
            return Err(TdsimError::NonFiniteField { step: st.step });
        }
        Ok(())
    }

    pub fn energies(&self) -> Energies {
        energy_of(&self.state, &self.cfg, None)
    }

    pub fn physical_energy(&self) -> f64 {
        let (a, b) = self.cfg.grid.phys_range();
        energy_of(&self.state, &self.cfg, Some((a, b))).field
    }

    pub fn sample(&self, d: &Diagnostic) -> f64 {
        match d {
            Diagnostic::Energy => self.energies().field,
            Diagnostic::PhysicalEnergy => self.physical_energy(),
            Diagnostic::StateNorm => self.energies().state,
            Diagnostic::Probe { node } => self.state.e_chain[node * self.echain.dim()],
        }
    }
}

fn source_weights(s: &Pulse, g: &Grid1D) -> Vec<(usize, f64)> {
    let n = g.n_cells;
    if s.width == 0.0 {
        let i = ((s.position - g.origin) / g.dx).round();
        if i < 1.0 || i > (n - 1) as f64 {
            return Vec::new();
        }
        return vec![(i as usize, 1.0 / g.dx)];
    }
    (1..n)
        .filter_map(|i| {
            let r = (g.node_x(i) - s.position) / s.width;
            (r.abs() < 8.0).then(|| (i, (-r * r).exp()))
        })
        .collect()
}

fn energy_of(st: &FieldState, cfg: &SimConfig, range: Option<(usize, usize)>) -> Energies {
    let g = &cfg.grid;
    let n = g.n_cells;
    let (de, dh) = (st.de(), st.dh());
    let (lo_e, hi_e, lo_h, hi_h) = match range {
        Some((a, b)) => (a, b, a, b),
        None => (0, n, 0, n),
    };
    let (eps, mu) = (cfg.material.eps_inf, cfg.material.mu);
    let mut field = 0.0;
    let mut aux = 0.0;
    for i in lo_e..=hi_e {
        field += eps * st.e_prev[i] * st.e_chain[i * de];
        for k in 1..de {
            aux += st.e_chain[i * de + k].powi(2);
        }
    }
    for i in lo_h..hi_h {
        field += mu * st.h_chain[i * dh].powi(2);
        for k in 1..dh {
            aux += st.h_chain[i * dh + k].powi(2);
        }
    }
    Energies {
        field: 0.5 * g.dx * field,
        state: 0.5 * g.dx * (field + aux),
    }
}

/// Both energy observables of a state.
pub fn energy(state: &FieldState, cfg: &SimConfig) -> Energies {
    energy_of(state, cfg, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub name: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Runs `cfg.n_steps` steps, recording `cfg.record` every `record_stride` steps.
pub fn run(cfg: &SimConfig) -> Result<(FieldState, Vec<TimeSeries>)> {
    let mut sim = Simulator::new(cfg)?;
    let mut series: Vec<TimeSeries> = cfg
        .record
        .iter()
        .map(|d| TimeSeries {
            name: d.name(),
            times: Vec::new(),
            values: Vec::new(),
        })
        .collect();
    for _ in 0..cfg.n_steps {
        sim.step(None)?;
        if sim.state.step % cfg.record_stride == 0 {
            for (d, s) in cfg.record.iter().zip(series.iter_mut()) {
                s.times.push(sim.state.time);
                s.values.push(sim.sample(d));
            }
        }
    }
    Ok((sim.state, series))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesKind {
    /// Quadratic quantity: the field rate is half the log slope.
    Energy,
    Amplitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub slope: f64,
    pub r_squared: f64,
}

/// Least-squares slope of log(values) over `window`.
pub fn fit_decay_rate(series: &TimeSeries, window: (f64, f64), kind: SeriesKind) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = series
        .times
        .iter()
        .zip(&series.values)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(t, v)| (*t, *v))
        .collect();
    if pts.len() < 2 {
        return Err(TdsimError::InvalidConfig("fit window holds fewer than two samples".into()));
    }
    if pts.iter().any(|(_, v)| !(*v > 0.0)) {
        return Err(TdsimError::NonPositiveValues);
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (t, v) in &pts {
        let (a, b) = (t - mt, v.ln() - my);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    let rate = match kind {
        SeriesKind::Energy => -slope / 2.0,
        SeriesKind::Amplitude => -slope,
    };
    Ok(DecayFit {
        rate,
        slope,
        r_squared: r2,
    })
}

/// Writes series sharing one time axis as `time,name1,name2,...`.
pub fn write_series_csv<W: Write>(series: &[TimeSeries], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend(series.iter().map(|s| s.name.clone()));
    w.write_record(&header)?;
    if let Some(first) = series.first() {
        for s in series {
            if s.times != first.times {
                return Err(TdsimError::InvalidConfig("series do not share a time axis".into()));
            }
        }
        for (k, t) in first.times.iter().enumerate() {
            let mut row = vec![format!("{t:.17e}")];
            row.extend(series.iter().map(|s| format!("{:.17e}", s.values[k])));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes every block of a state, E-aligned then H-aligned, as `block,index,x,value`.
pub fn write_snapshot_csv<W: Write>(state: &FieldState, grid: &Grid1D, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["block", "index", "x", "value"])?;
    let ne = state.e_labels.len();
    for (k, (name, vals)) in state.blocks().into_iter().enumerate() {
        let half = if k < ne { 0.0 } else { 0.5 };
        for (i, v) in vals.iter().enumerate() {
            let x = grid.origin + (i as f64 + half) * grid.dx;
            w.write_record([name.clone(), i.to_string(), format!("{x:.17e}"), format!("{v:.17e}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionReport {
    pub r_db: f64,
    pub probe_node: usize,
    pub window_end: f64,
    pub contamination_time: f64,
    pub peak_reference: f64,
    pub peak_difference: f64,
}

/// Cells between the probe and the right PML interface.
pub const PROBE_INSET: usize = 10;

/// Same medium and sources in a domain padded by `pad` cells per side, with hard walls.
pub fn embedded_reference(small: &SimConfig, pad: usize) -> SimConfig {
    let mut r = small.clone();
    r.dt = Some(small.time_step());
    r.grid = Grid1D {
        n_cells: small.grid.n_cells + 2 * pad,
        dx: small.grid.dx,
        origin: small.grid.origin - pad as f64 * small.grid.dx,
        pml: None,
        uniform: None,
    };
    r.record.clear();
    r
}

/// Peak |E_small − E_ref| at a probe 10 cells inside the right interface,
/// relative to the peak |E_ref|, in dB.
pub fn reflection_coefficient(small: &SimConfig, reference: &SimConfig) -> Result<ReflectionReport> {
    let dx = small.grid.dx;
    if (reference.grid.dx - dx).abs() > 1e-12 * dx || (reference.time_step() - small.time_step()).abs() > 1e-12 * dx {
        return Err(TdsimError::InvalidConfig("reference must share dx and dt".into()));
    }
    let shift = (small.grid.origin - reference.grid.origin) / dx;
    let offset = shift.round();
    if (shift - offset).abs() > 1e-9 || offset < 0.0 {
        return Err(TdsimError::InvalidConfig("reference grid is not aligned with the small grid".into()));
    }
    let offset = offset as usize;
    let (_, phys_hi) = small.grid.phys_range();
    let probe = phys_hi
        .checked_sub(PROBE_INSET)
        .ok_or_else(|| TdsimError::InvalidConfig("physical region too small for the probe".into()))?;
    let probe_ref = probe + offset;
    if probe_ref > reference.grid.n_cells || reference.grid.n_cells < 4 * (small.grid.phys_range().1 - small.grid.phys_range().0) {
        return Err(TdsimError::InvalidConfig("reference domain must be at least 4x the physical region".into()));
    }
    let dt = small.time_step();
    let window = small.n_steps as f64 * dt;
    let xp = small.grid.node_x(probe);
    let walls = [reference.grid.node_x(0), reference.grid.node_x(reference.grid.n_cells)];
    let c = reference.speed();
    let contaminated = reference
        .sources
        .iter()
        .flat_map(|s| walls.iter().map(move |w| s.start_time() + ((s.position - w).abs() + (w - xp).abs()) / c))
        .fold(f64::INFINITY, f64::min);
    if window >= contaminated {
        return Err(TdsimError::WindowTooLong { window, contaminated });
    }
    let mut a = Simulator::new(small)?;
    let mut b = Simulator::new(&SimConfig {
        n_steps: small.n_steps,
        ..reference.clone()
    })?;
    let (mut peak_ref, mut peak_diff) = (0.0f64, 0.0f64);
    for _ in 0..small.n_steps {
        a.step(None)?;
        b.step(None)?;
        let ea = a.sample(&Diagnostic::Probe { node: probe });
        let eb = b.sample(&Diagnostic::Probe { node: probe_ref });
        peak_ref = peak_ref.max(eb.abs());
        peak_diff = peak_diff.max((ea - eb).abs());
    }
    Ok(ReflectionReport {
        r_db: 20.0 * (peak_diff / peak_ref).log10(),
        probe_node: probe,
        window_end: window,
        contamination_time: contaminated,
        peak_reference: peak_ref,
        peak_difference: peak_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vacuum(n: usize, steps: usize) -> SimConfig {
        SimConfig::new(Variant::Dispersion, DispersionParams::vacuum(), Grid1D::plain(n, 0.1), steps)
    }

    #[test]
    fn cfl_is_enforced() {
        let mut c = vacuum(10, 1);
        c.dt = Some(0.2);
        assert!(matches!(Simulator::new(&c), Err(TdsimError::CflViolation { .. })));
    }

    #[test]
    fn zero_state_has_zero_energy() {
        let sim = Simulator::new(&vacuum(16, 1)).unwrap();
        let e = sim.energies();
        assert_eq!((e.field, e.state), (0.0, 0.0));
    }

    #[test]
    fn synthetic_decay_fit() {
        let times: Vec<f64> = (0..200).map(|k| k as f64 * 0.01).collect();
        let s = TimeSeries {
            name: "x".into(),
            values: times.iter().map(|t| (-3.0 * t).exp()).collect(),
            times,
        };
        let e = fit_decay_rate(&s, (0.0, 2.0), SeriesKind::Energy).unwrap();
        let a = fit_decay_rate(&s, (0.0, 2.0), SeriesKind::Amplitude).unwrap();
        assert!((e.rate - 1.5).abs() < 1e-12 && (a.rate - 3.0).abs() < 1e-12);
        assert!(a.r_squared > 0.999999);
    }

    #[test]
    fn non_positive_values_rejected() {
        let s = TimeSeries {
            name: "x".into(),
            times: vec![0.0, 1.0],
            values: vec![1.0, 0.0],
        };
        assert!(matches!(
            fit_decay_rate(&s, (0.0, 1.0), SeriesKind::Energy),
            Err(TdsimError::NonPositiveValues)
        ));
    }

    #[test]
    fn mismatched_stretch_rejected() {
        let mut c = vacuum(40, 1);
        c.grid.pml = Some(PmlProfile::uniaxial(4));
        assert!(matches!(Simulator::new(&c), Err(TdsimError::InvalidConfig(_))));
    }

    #[test]
    fn pulse_is_causal() {
        let p = Pulse {
            amplitude: 1.0,
            frequency: 0.0,
            bandwidth: 1.0,
            delay: 0.0,
            phase: 0.0,
            position: 0.0,
            width: 0.0,
            onset: 0.5,
            cutoff: Some(2.0),
            continuous_ramp: None,
        };
        assert_eq!(p.value(0.5), 0.0);
        assert_eq!(p.value(2.0), 0.0);
        assert!(p.value(1.0) > 0.0);
    }
}
