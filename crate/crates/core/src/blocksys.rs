//! Per-point block systems `∂t M0 U + M1 U + A U = F` for the dispersive
//! Maxwell equations with and without PML, and their Laplace-domain
//! validation against the scalar material law.

use crate::linalg::{solve_in_place, DenseMatrix};
use crate::matlaw::{self, ComplexFreq, DispersionParams, MatlawError, PmlStretch, StretchKind};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlockError {
    #[error("invalid parameters for {variant:?}: {reason}")]
    InvalidVariantParams { variant: Variant, reason: String },
    #[error("singular elimination at z = {z} (column {column})")]
    SingularElimination { z: Complex64, column: usize },
    #[error(transparent)]
    Matlaw(#[from] MatlawError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Dispersion,
    CfsVacuum,
    DispersionCfs,
    DispersionUpml,
}

impl Variant {
    /// Stretch kind this variant is built for.
    pub fn stretch_kind(self) -> StretchKind {
        match self {
            Variant::Dispersion => StretchKind::None,
            Variant::CfsVacuum | Variant::DispersionCfs => StretchKind::Cfs,
            Variant::DispersionUpml => StretchKind::Uniaxial,
        }
    }
}

/// How the S3 auxiliary of the dispersive CFS system collects polarizations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum S3Coupling {
    /// Sum over every polarization (Debye and Lorentz).
    #[default]
    Union,
    /// Sum over the intersection of the disjoint index sets, i.e. nothing.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockName {
    E,
    H,
    #[serde(rename = "p_L1")]
    PL1,
    #[serde(rename = "j_L2")]
    JL2,
    #[serde(rename = "p_L2")]
    PL2,
    S1,
    S2,
    S3,
    R,
    Q,
    S,
}

impl BlockName {
    pub fn label(self) -> &'static str {
        match self {
            BlockName::E => "E",
            BlockName::H => "H",
            BlockName::PL1 => "p_L1",
            BlockName::JL2 => "j_L2",
            BlockName::PL2 => "p_L2",
            BlockName::S1 => "S1",
            BlockName::S2 => "S2",
            BlockName::S3 => "S3",
            BlockName::R => "R",
            BlockName::Q => "Q",
            BlockName::S => "S",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: BlockName,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateLayout {
    pub blocks: Vec<Block>,
    pub dim: usize,
}

impl StateLayout {
    fn new(blocks: Vec<(BlockName, usize)>) -> Self {
        let blocks: Vec<Block> = blocks
            .into_iter()
            .map(|(name, multiplicity)| Block { name, multiplicity })
            .collect();
        let dim = blocks.iter().map(|b| b.multiplicity).sum();
        Self { blocks, dim }
    }

    /// Index of the first component of a block, if present.
    pub fn offset(&self, name: BlockName) -> Option<usize> {
        let mut off = 0;
        for b in &self.blocks {
            if b.name == name {
                return Some(off);
            }
            off += b.multiplicity;
        }
        None
    }

    /// Component labels such as `p_L1[0]`, in state order.
    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim);
        for b in &self.blocks {
            if matches!(b.name, BlockName::PL1 | BlockName::JL2 | BlockName::PL2) {
                for i in 0..b.multiplicity {
                    out.push(format!("{}[{}]", b.name.label(), i));
                }
            } else {
                out.push(b.name.label().to_string());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpatialTag {
    Curl3D,
    Dx1D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSystem {
    pub variant: Variant,
    pub layout: StateLayout,
    #[serde(rename = "M0")]
    pub m0: DenseMatrix,
    #[serde(rename = "M1")]
    pub m1: DenseMatrix,
    pub rho: f64,
    pub spatial_tag: SpatialTag,
    pub notes: Vec<String>,
}

impl BlockSystem {
    pub fn e_index(&self) -> usize {
        0
    }

    pub fn h_index(&self) -> usize {
        1
    }
}

pub fn assemble(variant: Variant, p: &DispersionParams, s: &PmlStretch) -> Result<BlockSystem, BlockError> {
    assemble_with(variant, p, s, S3Coupling::Union)
}

pub fn assemble_with(
    variant: Variant,
    p: &DispersionParams,
    s: &PmlStretch,
    s3: S3Coupling,
) -> Result<BlockSystem, BlockError> {
    let invalid = |reason: &str| BlockError::InvalidVariantParams {
        variant,
        reason: reason.to_string(),
    };
    p.validate()?;
    s.validate()?;
    if s.kind != StretchKind::None && s.kind != variant.stretch_kind() {
        return Err(invalid("stretch kind does not match the variant"));
    }
    let (sigma, alpha) = if s.kind == StretchKind::None {
        (0.0, 0.0)
    } else {
        (s.sigma, s.alpha_eff())
    };
    let (n1, n2) = (p.debye.len(), p.lorentz.len());
    let eps = p.eps_inf;
    let mu = p.mu;
    let mut notes = Vec::new();

    let mut blocks = vec![(BlockName::E, 1), (BlockName::H, 1)];
    match variant {
        Variant::CfsVacuum => {
            if !p.is_vacuum() {
                return Err(invalid("requires sigma_bar = 0 and no dispersive terms"));
            }
            blocks.push((BlockName::R, 1));
            blocks.push((BlockName::Q, 1));
            notes.push("R is the electric auxiliary and Q the magnetic one, inferred from the M1 coupling pattern".into());
        }
        _ => {
            if n1 > 0 {
                blocks.push((BlockName::PL1, n1));
            }
            if n2 > 0 {
                blocks.push((BlockName::JL2, n2));
                blocks.push((BlockName::PL2, n2));
            }
            match variant {
                Variant::DispersionCfs => {
                    blocks.extend([(BlockName::S1, 1), (BlockName::S2, 1), (BlockName::S3, 1), (BlockName::R, 1)]);
                    notes.push("first auxiliary group named p_L1 (Debye polarizations)".into());
                    match s3 {
                        S3Coupling::Union => {
                            notes.push("S3 collects sigma * p over all Debye and Lorentz polarizations".into())
                        }
                        S3Coupling::Literal => notes.push(
                            "S3 collects sigma * p over the intersection of the disjoint index sets (empty)".into(),
                        ),
                    }
                    notes.push("S3 row carries no conductivity entry in the E column; only S1 couples sigma*sigma_bar".into());
                }
                Variant::DispersionUpml => {
                    blocks.push((BlockName::S, 1));
                    notes.push("H row uses curl_0 E (Dx in 1D)".into());
                }
                _ => {}
            }
        }
    }
    let layout = StateLayout::new(blocks);
    let n = layout.dim;
    let mut m0 = DenseMatrix::identity(n);
    m0[(0, 0)] = eps;
    m0[(1, 1)] = mu;
    let mut m1 = DenseMatrix::zeros(n, n);
    let (e, h) = (0, 1);
    let pl1 = layout.offset(BlockName::PL1);
    let jl2 = layout.offset(BlockName::JL2);
    let pl2 = layout.offset(BlockName::PL2);

    if variant == Variant::CfsVacuum {
        let r = layout.offset(BlockName::R).unwrap();
        let q = layout.offset(BlockName::Q).unwrap();
        m1[(e, e)] = eps * sigma;
        m1[(e, r)] = -alpha;
        m1[(r, e)] = -eps * sigma;
        m1[(r, r)] = alpha;
        m1[(h, h)] = mu * sigma;
        m1[(h, q)] = -alpha;
        m1[(q, h)] = -mu * sigma;
        m1[(q, q)] = alpha;
    } else {
        // Rows shared by every dispersive variant.
        m1[(e, e)] = p.sigma_bar + p.rho();
        for (l, d) in p.debye.iter().enumerate() {
            let i = pl1.unwrap() + l;
            m1[(e, i)] = -d.b;
            m1[(i, e)] = -d.a;
            m1[(i, i)] = d.b;
        }
        for (l, lz) in p.lorentz.iter().enumerate() {
            let j = jl2.unwrap() + l;
            let pp = pl2.unwrap() + l;
            m1[(e, j)] = 1.0;
            m1[(j, e)] = lz.d * lz.f - lz.c;
            m1[(j, j)] = lz.f;
            m1[(j, pp)] = lz.e;
            m1[(pp, e)] = -lz.d;
            m1[(pp, j)] = -1.0;
        }
        let polarizations: Vec<usize> = (0..n1)
            .map(|l| pl1.unwrap() + l)
            .chain((0..n2).map(|l| pl2.unwrap() + l))
            .collect();
        match variant {
            Variant::DispersionCfs => {
                let s1 = layout.offset(BlockName::S1).unwrap();
                let s2 = layout.offset(BlockName::S2).unwrap();
                let s3i = layout.offset(BlockName::S3).unwrap();
                let r = layout.offset(BlockName::R).unwrap();
                m1[(e, e)] += eps * sigma;
                for &i in &polarizations {
                    m1[(e, i)] += sigma;
                }
                m1[(e, s1)] = 1.0;
                m1[(e, s2)] = -alpha;
                m1[(e, s3i)] = -alpha;
                m1[(h, h)] = mu * sigma;
                m1[(h, r)] = -alpha;
                m1[(s1, e)] = -sigma * p.sigma_bar;
                m1[(s1, s1)] = alpha;
                m1[(s2, e)] = -sigma * eps;
                m1[(s2, s2)] = alpha;
                if s3 == S3Coupling::Union {
                    for &i in &polarizations {
                        m1[(s3i, i)] = -sigma;
                    }
                }
                m1[(s3i, s3i)] = alpha;
                m1[(r, h)] = -mu * sigma;
                m1[(r, r)] = alpha;
            }
            Variant::DispersionUpml => {
                let si = layout.offset(BlockName::S).unwrap();
                m1[(e, e)] += eps * sigma;
                for &i in &polarizations {
                    m1[(e, i)] += sigma;
                }
                m1[(e, si)] = 1.0;
                m1[(h, h)] = mu * sigma;
                m1[(si, e)] = -sigma * p.sigma_bar;
            }
            _ => {}
        }
    }
    if mu != 1.0 {
        notes.push("H row scaled by mu".into());
    }
    debug_assert!(m1.all_finite());
    Ok(BlockSystem {
        variant,
        layout,
        m0,
        m1,
        rho: p.rho(),
        spatial_tag: SpatialTag::Dx1D,
        notes,
    })
}

/// Which field chain each state component belongs to, from the coupling
/// pattern of M1 (E-connected components are electric).
pub fn chain_membership(sys: &BlockSystem) -> Vec<bool> {
    let n = sys.layout.dim;
    let mut electric = vec![false; n];
    let mut stack = vec![0usize];
    electric[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if j == 1 || electric[j] {
                continue;
            }
            if sys.m1[(i, j)] != 0.0 || sys.m1[(j, i)] != 0.0 {
                electric[j] = true;
                stack.push(j);
            }
        }
    }
    let mut magnetic = vec![false; n];
    let mut stack = vec![1usize];
    magnetic[1] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if j == 0 || magnetic[j] {
                continue;
            }
            if sys.m1[(i, j)] != 0.0 || sys.m1[(j, i)] != 0.0 {
                magnetic[j] = true;
                stack.push(j);
            }
        }
    }
    // Components coupled to neither chain are inert; keep them with E.
    (0..n).map(|i| !magnetic[i] || electric[i]).collect()
}

/// Chain membership determined on a representative fully active instance of
/// the variant (σ = α = 1), so that inert entries at σ = 0 do not change the
/// staggering.
pub fn structural_membership(variant: Variant, p: &DispersionParams) -> Result<Vec<bool>, BlockError> {
    let s = match variant.stretch_kind() {
        StretchKind::None => PmlStretch::NONE,
        StretchKind::Cfs => PmlStretch::cfs(1.0, 1.0),
        StretchKind::Uniaxial => PmlStretch::uniaxial(1.0),
    };
    let mut q = p.clone();
    if q.sigma_bar == 0.0 && variant != Variant::CfsVacuum {
        q.sigma_bar = 1.0;
    }
    Ok(chain_membership(&assemble(variant, &q, &s)?))
}

/// Eliminated 2×2 symbol of `(z M0 + M1)` onto (E, H): returns
/// `[[EE, EH], [HE, HH]]`.
pub fn field_symbol(sys: &BlockSystem, z: ComplexFreq) -> Result<[[Complex64; 2]; 2], BlockError> {
    let n = sys.layout.dim;
    let zc = z.z();
    let k = |i: usize, j: usize| zc * sys.m0[(i, j)] + sys.m1[(i, j)];
    let mut out = [[k(0, 0), k(0, 1)], [k(1, 0), k(1, 1)]];
    let m = n - 2;
    if m == 0 {
        return Ok(out);
    }
    // Schur complement: K_ff − K_fx K_xx⁻¹ K_xf with x the auxiliaries.
    let mut kxx = vec![Complex64::new(0.0, 0.0); m * m];
    let mut kxf = vec![Complex64::new(0.0, 0.0); m * 2];
    for i in 0..m {
        for j in 0..m {
            kxx[i * m + j] = k(i + 2, j + 2);
        }
        kxf[i * 2] = k(i + 2, 0);
        kxf[i * 2 + 1] = k(i + 2, 1);
    }
    solve_in_place(&mut kxx, &mut kxf, m, 2, 1e-13).map_err(|e| BlockError::SingularElimination {
        z: zc,
        column: e.column + 2,
    })?;
    for (a, row) in out.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..m {
                acc += k(a, i + 2) * kxf[i * 2 + b];
            }
            *v -= acc;
        }
    }
    Ok(out)
}

/// Effective electric symbol after eliminating the auxiliary blocks.
pub fn transfer_function(sys: &BlockSystem, z: ComplexFreq) -> Result<Complex64, BlockError> {
    Ok(field_symbol(sys, z)?[0][0])
}

pub fn magnetic_transfer_function(sys: &BlockSystem, z: ComplexFreq) -> Result<Complex64, BlockError> {
    Ok(field_symbol(sys, z)?[1][1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfSample {
    pub nu: f64,
    pub t: f64,
    pub electric_error: f64,
    pub magnetic_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfReport {
    pub variant: Variant,
    pub samples: usize,
    pub seed: u64,
    pub max_rel_error_electric: f64,
    pub max_rel_error_magnetic: f64,
    /// Largest |E-H| coupling left after elimination (the chains are decoupled).
    pub max_cross_coupling: f64,
    pub worst: Option<TfSample>,
    pub failures: Vec<String>,
    pub pass: bool,
}

pub const TF_TOLERANCE: f64 = 1e-9;

/// Compares the eliminated block symbols with `z s ε` and `z s μ` at random
/// points with `1 < Re z < 11`, `|Im z| < 10`.
pub fn tf_equivalence_check(
    sys: &BlockSystem,
    p: &DispersionParams,
    s: &PmlStretch,
    sample_count: usize,
    seed: u64,
) -> TfReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = TfReport {
        variant: sys.variant,
        samples: sample_count,
        seed,
        max_rel_error_electric: 0.0,
        max_rel_error_magnetic: 0.0,
        max_cross_coupling: 0.0,
        worst: None,
        failures: Vec::new(),
        pass: false,
    };
    let mut worst = -1.0;
    for _ in 0..sample_count {
        let z = ComplexFreq::new(1.0 + 10.0 * rng.gen::<f64>(), 20.0 * rng.gen::<f64>() - 10.0);
        let sym = match field_symbol(sys, z) {
            Ok(v) => v,
            Err(e) => {
                report.failures.push(e.to_string());
                continue;
            }
        };
        let (ze, zh) = match matlaw::eval_zm(p, s, z) {
            Ok(v) => v,
            Err(e) => {
                report.failures.push(e.to_string());
                continue;
            }
        };
        let ee = (sym[0][0] - ze).norm() / ze.norm().max(f64::MIN_POSITIVE);
        let eh = (sym[1][1] - zh).norm() / zh.norm().max(f64::MIN_POSITIVE);
        let cross = sym[0][1].norm().max(sym[1][0].norm()) / ze.norm().max(zh.norm());
        report.max_rel_error_electric = report.max_rel_error_electric.max(ee);
        report.max_rel_error_magnetic = report.max_rel_error_magnetic.max(eh);
        report.max_cross_coupling = report.max_cross_coupling.max(cross);
        if ee.max(eh) > worst {
            worst = ee.max(eh);
            report.worst = Some(TfSample {
                nu: z.nu,
                t: z.t,
                electric_error: ee,
                magnetic_error: eh,
            });
        }
    }
    report.pass = report.failures.is_empty()
        && report.max_rel_error_electric <= TF_TOLERANCE
        && report.max_rel_error_magnetic <= TF_TOLERANCE
        && report.max_cross_coupling <= TF_TOLERANCE;
    report
}

fn fmt_coef(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e6 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Multiplies out `∂t M0 U + M1 U + A U` against the symbolic state, one
/// line per row. Used for golden comparisons with the ODE systems.
pub fn expand_rows(sys: &BlockSystem) -> Vec<String> {
    let labels = sys.layout.labels();
    let n = sys.layout.dim;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut line = String::new();
        let m0 = sys.m0[(i, i)];
        if m0 == 1.0 {
            let _ = write!(line, "d/dt {}", labels[i]);
        } else {
            let _ = write!(line, "{}*d/dt {}", fmt_coef(m0), labels[i]);
        }
        for j in 0..n {
            let c = sys.m1[(i, j)];
            if c == 0.0 {
                continue;
            }
            let sign = if c < 0.0 { " - " } else { " + " };
            let a = c.abs();
            if a == 1.0 {
                let _ = write!(line, "{sign}{}", labels[j]);
            } else {
                let _ = write!(line, "{sign}{}*{}", fmt_coef(a), labels[j]);
            }
        }
        match i {
            0 => line.push_str(" - Dx H = f"),
            1 => line.push_str(" - Dx E = 0"),
            _ => line.push_str(" = 0"),
        }
        out.push(line);
    }
    out
}
