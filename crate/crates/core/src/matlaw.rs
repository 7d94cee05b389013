//! Material laws as rational functions of the Laplace variable `z = ν + i t`.
//!
//! The permittivity is the generalized dispersion model
//! `ε(z) = ε∞ + σ̄/z + Σ a/(b+z) + Σ (c+zd)/(e+fz+z²)` and PML layers enter
//! through a scalar stretching function `s(z)` multiplying `zε(z)` and `zμ`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Denominators smaller than this are treated as poles.
pub const POLE_EPS: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatlawError {
    #[error("pole: |{term}| = {magnitude:.3e} at z = {z}")]
    Pole {
        term: &'static str,
        z: Complex64,
        magnitude: f64,
    },
    #[error("conductive term evaluated at z = 0")]
    ZeroFrequency,
    #[error("parameters do not match model {0:?}")]
    ModelMismatch(ClosedForm),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, MatlawError>;

/// A point of the complex frequency plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexFreq {
    pub nu: f64,
    pub t: f64,
}

impl ComplexFreq {
    pub const ZERO: ComplexFreq = ComplexFreq { nu: 0.0, t: 0.0 };

    pub fn new(nu: f64, t: f64) -> Self {
        Self { nu, t }
    }

    pub fn z(self) -> Complex64 {
        Complex64::new(self.nu, self.t)
    }

    pub fn conj(self) -> Self {
        Self {
            nu: self.nu,
            t: -self.t,
        }
    }

    pub fn is_finite(self) -> bool {
        self.nu.is_finite() && self.t.is_finite()
    }
}

impl From<Complex64> for ComplexFreq {
    fn from(z: Complex64) -> Self {
        Self { nu: z.re, t: z.im }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Debye {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lorentz {
    pub c: f64,
    #[serde(default)]
    pub d: f64,
    pub e: f64,
    #[serde(default)]
    pub f: f64,
}

impl Lorentz {
    /// Roots of `e + f z + z²`.
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.f * self.f - 4.0 * self.e, 0.0).sqrt();
        let h = Complex64::new(-self.f, 0.0);
        [(h + disc) * 0.5, (h - disc) * 0.5]
    }
}

/// Localized analytic correction `(1 + (z − z0)/r)` of every Lorentz term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub r: f64,
    #[serde(default = "zero_freq")]
    pub z0: ComplexFreq,
}

fn zero_freq() -> ComplexFreq {
    ComplexFreq::ZERO
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionParams {
    #[serde(default = "one")]
    pub eps_inf: f64,
    #[serde(default)]
    pub sigma_bar: f64,
    #[serde(default = "one")]
    pub mu: f64,
    #[serde(default)]
    pub debye: Vec<Debye>,
    #[serde(default)]
    pub lorentz: Vec<Lorentz>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction: Option<Correction>,
}

impl Default for DispersionParams {
    fn default() -> Self {
        Self::vacuum()
    }
}

impl DispersionParams {
    pub fn vacuum() -> Self {
        Self {
            eps_inf: 1.0,
            sigma_bar: 0.0,
            mu: 1.0,
            debye: Vec::new(),
            lorentz: Vec::new(),
            correction: None,
        }
    }

    pub fn with_debye(mut self, a: f64, b: f64) -> Self {
        self.debye.push(Debye { a, b });
        self
    }

    pub fn with_lorentz(mut self, c: f64, d: f64, e: f64, f: f64) -> Self {
        self.lorentz.push(Lorentz { c, d, e, f });
        self
    }

    pub fn is_vacuum(&self) -> bool {
        self.sigma_bar == 0.0 && self.debye.is_empty() && self.lorentz.is_empty()
    }

    /// ρ = Σ d + Σ a, the static part of the auxiliary coupling.
    pub fn rho(&self) -> f64 {
        self.lorentz.iter().map(|l| l.d).sum::<f64>() + self.debye.iter().map(|d| d.a).sum::<f64>()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MatlawError::Invalid(m.to_string()));
        if !(self.eps_inf >= 0.0 && self.eps_inf.is_finite()) {
            return bad("eps_inf must be finite and >= 0");
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad("mu must be finite and > 0");
        }
        if !(self.sigma_bar >= 0.0 && self.sigma_bar.is_finite()) {
            return bad("sigma_bar must be finite and >= 0");
        }
        for d in &self.debye {
            if !(d.a.is_finite() && d.b > 0.0 && d.b.is_finite()) {
                return bad("Debye terms need finite a and b > 0");
            }
        }
        for l in &self.lorentz {
            if !(l.c.is_finite() && l.d.is_finite() && l.e > 0.0 && l.f >= 0.0 && l.f.is_finite()) {
                return bad("Lorentz terms need finite c, d and e > 0, f >= 0");
            }
        }
        if let Some(c) = &self.correction {
            if !(c.r > 0.0 && c.r.is_finite() && c.z0.is_finite()) {
                return bad("correction needs finite r > 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StretchKind {
    #[default]
    None,
    Uniaxial,
    Cfs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PmlStretch {
    #[serde(default)]
    pub kind: StretchKind,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub alpha: f64,
}

impl PmlStretch {
    pub const NONE: PmlStretch = PmlStretch {
        kind: StretchKind::None,
        sigma: 0.0,
        alpha: 0.0,
    };

    pub fn cfs(sigma: f64, alpha: f64) -> Self {
        Self {
            kind: StretchKind::Cfs,
            sigma,
            alpha,
        }
    }

    pub fn uniaxial(sigma: f64) -> Self {
        Self {
            kind: StretchKind::Uniaxial,
            sigma,
            alpha: 0.0,
        }
    }

    /// Effective α (ignored for the uniaxial stretch).
    pub fn alpha_eff(&self) -> f64 {
        match self.kind {
            StretchKind::Cfs => self.alpha,
            _ => 0.0,
        }
    }

    pub fn is_active(&self) -> bool {
        self.kind != StretchKind::None && self.sigma != 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite() && self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(MatlawError::Invalid("stretch needs finite sigma, alpha >= 0".into()));
        }
        Ok(())
    }
}

fn guard(term: &'static str, den: Complex64, z: Complex64) -> Result<Complex64> {
    let m = den.norm();
    if m < POLE_EPS {
        Err(MatlawError::Pole {
            term,
            z,
            magnitude: m,
        })
    } else {
        Ok(den)
    }
}

fn lorentz_term(l: &Lorentz, corr: Option<&Correction>, z: Complex64) -> Result<Complex64> {
    let den = guard("e + f z + z^2", l.e + l.f * z + z * z, z)?;
    let mut v = (l.c + l.d * z) / den;
    if let Some(c) = corr {
        v *= 1.0 + (z - c.z0.z()) / c.r;
    }
    Ok(v)
}

/// χ(z): the Debye and Lorentz part of the permittivity.
pub fn eval_chi(p: &DispersionParams, z: ComplexFreq) -> Result<Complex64> {
    let z = z.z();
    let mut acc = Complex64::new(0.0, 0.0);
    for d in &p.debye {
        acc += d.a / guard("b + z", d.b + z, z)?;
    }
    for l in &p.lorentz {
        acc += lorentz_term(l, p.correction.as_ref(), z)?;
    }
    Ok(acc)
}

/// ε(z) = ε∞ + σ̄/z + χ(z).
pub fn eval_epsilon(p: &DispersionParams, z: ComplexFreq) -> Result<Complex64> {
    let chi = eval_chi(p, z)?;
    let zc = z.z();
    let cond = if p.sigma_bar != 0.0 {
        if zc.norm() < POLE_EPS {
            return Err(MatlawError::ZeroFrequency);
        }
        p.sigma_bar / zc
    } else {
        Complex64::new(0.0, 0.0)
    };
    Ok(p.eps_inf + cond + chi)
}

pub fn eval_stretch(s: &PmlStretch, z: ComplexFreq) -> Result<Complex64> {
    let zc = z.z();
    match s.kind {
        StretchKind::None => Ok(Complex64::new(1.0, 0.0)),
        _ if s.sigma == 0.0 => Ok(Complex64::new(1.0, 0.0)),
        StretchKind::Cfs => Ok(1.0 + s.sigma / guard("alpha + z", s.alpha + zc, zc)?),
        StretchKind::Uniaxial => Ok(1.0 + s.sigma / guard("z", zc, zc)?),
    }
}

/// `z s(z)`, which is entire for the uniaxial stretch.
pub fn eval_zs(s: &PmlStretch, z: ComplexFreq) -> Result<Complex64> {
    let zc = z.z();
    match s.kind {
        StretchKind::Uniaxial => Ok(zc + s.sigma),
        _ => Ok(zc * eval_stretch(s, z)?),
    }
}

/// Electric and magnetic symbols `(z s ε, z s μ)`.
///
/// The products are formed so that removable singularities at z = 0
/// (σ̄/z against z, σ/z against z) never raise a pole.
pub fn eval_zm(p: &DispersionParams, s: &PmlStretch, z: ComplexFreq) -> Result<(Complex64, Complex64)> {
    let zc = z.z();
    let chi = eval_chi(p, z)?;
    let z_eps = p.eps_inf * zc + p.sigma_bar + zc * chi;
    match s.kind {
        StretchKind::Uniaxial => {
            let zs = zc + s.sigma;
            let mut e = zs * (p.eps_inf + chi) + p.sigma_bar;
            if p.sigma_bar != 0.0 && s.sigma != 0.0 {
                e += p.sigma_bar * s.sigma / guard("z", zc, zc)?;
            }
            Ok((e, zs * p.mu))
        }
        _ => {
            let sv = eval_stretch(s, z)?;
            Ok((sv * z_eps, sv * zc * p.mu))
        }
    }
}

/// Poles of `z s ε` and `z s μ` in the closed complex plane.
pub fn poles(p: &DispersionParams, s: &PmlStretch) -> Vec<Complex64> {
    let mut out: Vec<Complex64> = p.debye.iter().map(|d| Complex64::new(-d.b, 0.0)).collect();
    for l in &p.lorentz {
        out.extend_from_slice(&l.poles());
    }
    match s.kind {
        StretchKind::Cfs if s.sigma != 0.0 => out.push(Complex64::new(-s.alpha, 0.0)),
        StretchKind::Uniaxial if s.sigma != 0.0 && p.sigma_bar != 0.0 => out.push(Complex64::new(0.0, 0.0)),
        _ => {}
    }
    out
}

/// Largest pole magnitude (0 for pole-free laws).
pub fn pole_radius(p: &DispersionParams, s: &PmlStretch) -> f64 {
    poles(p, s).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Closed-form limit of `Re z s ε` as `t → ±∞` at fixed ν, as `(slope, offset)`
/// with the limit equal to `slope·ν + offset`.
///
/// For large |z|, `z s ε ≈ ε∞' (z + σ) + c1 + O(1/z)` with `ε∞'` the effective
/// high-frequency permittivity (the correction makes Lorentz terms grow like z/r).
pub fn electric_asymptote(p: &DispersionParams, s: &PmlStretch) -> (f64, f64) {
    let sigma = if s.kind == StretchKind::None { 0.0 } else { s.sigma };
    let mut eps_eff = p.eps_inf;
    let mut c1 = p.sigma_bar + p.debye.iter().map(|d| d.a).sum::<f64>();
    for l in &p.lorentz {
        match &p.correction {
            None => c1 += l.d,
            Some(c) => {
                eps_eff += l.d / c.r;
                c1 += l.d * (1.0 - c.z0.nu / c.r) + (l.c - l.d * l.f) / c.r;
            }
        }
    }
    (eps_eff, eps_eff * sigma + c1)
}

pub fn magnetic_asymptote(p: &DispersionParams, s: &PmlStretch) -> (f64, f64) {
    let sigma = if s.kind == StretchKind::None { 0.0 } else { s.sigma };
    (p.mu, p.mu * sigma)
}

/// Decomposed closed forms for Re(z M(z)), written in real arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClosedForm {
    DebyePlain,
    LorentzCfs,
    DebyeCfs,
    LorentzUpml,
    DebyeUpml,
}

/// Real and imaginary parts of χ at (ν, t) without complex arithmetic.
fn chi_parts(p: &DispersionParams, nu: f64, t: f64) -> Result<(f64, f64)> {
    let (mut re, mut im) = (0.0, 0.0);
    for d in &p.debye {
        let den = (nu + d.b).powi(2) + t * t;
        if den.sqrt() < POLE_EPS {
            return Err(MatlawError::Pole {
                term: "b + z",
                z: Complex64::new(nu, t),
                magnitude: den.sqrt(),
            });
        }
        re += d.a * (nu + d.b) / den;
        im -= d.a * t / den;
    }
    for l in &p.lorentz {
        let dr = l.e + l.f * nu + nu * nu - t * t;
        let di = t * (l.f + 2.0 * nu);
        let den = dr * dr + di * di;
        if den.sqrt() < POLE_EPS {
            return Err(MatlawError::Pole {
                term: "e + f z + z^2",
                z: Complex64::new(nu, t),
                magnitude: den.sqrt(),
            });
        }
        let nr = l.c + l.d * nu;
        let ni = l.d * t;
        re += (nr * dr + ni * di) / den;
        im += (ni * dr - nr * di) / den;
    }
    Ok((re, im))
}

/// Re(zM(z)) of the electric component through the decomposed formulas:
/// the Debye expansion, the CFS product `A·B + C` and the UPML product
/// `(ν+σ)(ε∞ + Re χ) − t Im χ`.
pub fn real_part_zm_formula(model: ClosedForm, p: &DispersionParams, s: &PmlStretch, nu: f64, t: f64) -> Result<f64> {
    let mismatch = Err(MatlawError::ModelMismatch(model));
    if p.sigma_bar != 0.0 || p.correction.is_some() {
        return mismatch;
    }
    let debye_only = p.lorentz.is_empty() && !p.debye.is_empty();
    let lorentz_only = p.debye.is_empty() && !p.lorentz.is_empty();
    let ok = match model {
        ClosedForm::DebyePlain => debye_only && s.kind == StretchKind::None,
        ClosedForm::DebyeCfs => debye_only && s.kind == StretchKind::Cfs,
        ClosedForm::LorentzCfs => lorentz_only && s.kind == StretchKind::Cfs,
        ClosedForm::DebyeUpml => debye_only && s.kind == StretchKind::Uniaxial,
        ClosedForm::LorentzUpml => lorentz_only && s.kind == StretchKind::Uniaxial,
    };
    if !ok {
        return mismatch;
    }
    let eps = p.eps_inf;
    match model {
        ClosedForm::DebyePlain => {
            let mut v = eps * nu;
            for d in &p.debye {
                let den = t * t + (nu + d.b).powi(2);
                v += (nu * nu * d.a + d.a * t * t) / den + d.b * nu * d.a / den;
            }
            Ok(v)
        }
        ClosedForm::DebyeCfs | ClosedForm::LorentzCfs => {
            let (re, im) = chi_parts(p, nu, t)?;
            let (sg, al) = (s.sigma, s.alpha);
            let den = t * t + (nu + al).powi(2);
            if den.sqrt() < POLE_EPS {
                return Err(MatlawError::Pole {
                    term: "alpha + z",
                    z: Complex64::new(nu, t),
                    magnitude: den.sqrt(),
                });
            }
            let a = (sg * t * t + sg * nu * nu) / den + sg * al * nu / den + nu;
            let b = eps + re;
            let c = -(1.0 + al * sg / den) * t * im;
            Ok(a * b + c)
        }
        ClosedForm::DebyeUpml | ClosedForm::LorentzUpml => {
            let (re, im) = chi_parts(p, nu, t)?;
            Ok((nu + s.sigma) * (eps + re) - t * im)
        }
    }
}
