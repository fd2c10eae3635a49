//! Kármán–Howarth–Monin relations: the coefficient functions `c(ℓ,k)` that
//! govern the small- and large-scale limits, and the right-hand sides and
//! residuals of the three relations
//!
//! ```text
//! S_vel(ℓ)  = −4νΓ'_vel(ℓ) − (4/ℓ^{d−1}) ∫₀^ℓ r^{d−1} a_vel(r) dr
//! S_vel∥(ℓ) = −4νΓ'_∥(ℓ) + (2/ℓ^{d+1}) ∫₀^ℓ r^d S_vel(r) dr − (4/ℓ^{d+1}) ∫₀^ℓ r^{d+1} a_∥(r) dr
//! S_vor(ℓ)  = −4νΓ'_vor(ℓ) − (4/ℓ) ∫₀^ℓ r a_vor(r) dr            (d = 2)
//! ```
//!
//! Every forcing integral is a finite sum over forcing modes, and each mode
//! integrates in closed form: `∫₀^ℓ r^{d−1}T₀(r|k|)dr = |k|^{−d}G(ℓ|k|)` and
//! `∫₀^ℓ r^{d+1}L₀(r|k|)dr = |k|^{−d−2}H(ℓ|k|)` with `G = xJ₁, H = x²J₂` in
//! 2D and `G = ∫t sin t, H = ∫t G` in 3D.

use serde::{Deserialize, Serialize};

use crate::correlations::{
    correlation_spectral, structure_samples, CorrelationKind, FlowSnapshot, NodeRule, StructureCurve, StructureKind,
    StructureSamples,
};
use crate::dd::Dd;
use crate::error::{invalid, Error, Result};
use crate::forcing::ForcingSpec;
use crate::grid::{RadialSpectrum, ShellSpectrum};
use crate::quad::{adaptive_gauss, GaussRule, MonotoneCubic};
use crate::special::{bessel_j, bessel_j_trapezoid, int_t_int_t_sin, int_t_sin};
use crate::sphere::{beta, KernelSeries, Rational, SERIES_X_MAX};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Dir3dS0,
    Dir3dSpar,
    Dir2dVor,
    Dir2dS0,
    Dir2dSpar,
    InvS0,
    InvSpar,
}

impl Family {
    pub const ALL: [Family; 7] =
        [Family::Dir3dS0, Family::Dir3dSpar, Family::Dir2dVor, Family::Dir2dS0, Family::Dir2dSpar, Family::InvS0, Family::InvSpar];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Dir3dS0 => "dir3d_S0",
            Family::Dir3dSpar => "dir3d_Spar",
            Family::Dir2dVor => "dir2d_vor",
            Family::Dir2dS0 => "dir2d_S0",
            Family::Dir2dSpar => "dir2d_Spar",
            Family::InvS0 => "inv_S0",
            Family::InvSpar => "inv_Spar",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown coefficient family {s:?}")))
    }
}

/// A coefficient function `c(x)`, `x = ℓ|k|`, with `c(0) = 0` and limit `L`
/// as `x → ∞`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoefficientFamily {
    pub family: Family,
    pub d: usize,
}

/// `c(x) = prefactor · Σ_{m≥1} t_m` with `t_0 = t0_num/t0_den` and
/// `t_m = −x² t_{m−1} / den(m)`.
struct SeriesShape {
    prefactor: f64,
    t0_num: f64,
    t0_den: f64,
    den: fn(f64) -> f64,
}

const SERIES_MAX_TERMS: u32 = 200;

impl CoefficientFamily {
    pub fn new(family: Family, d: usize) -> Result<Self> {
        let ok = match family {
            Family::Dir3dS0 | Family::Dir3dSpar => d == 3,
            Family::Dir2dVor | Family::Dir2dS0 | Family::Dir2dSpar => d == 2,
            Family::InvS0 | Family::InvSpar => d == 2 || d == 3,
        };
        if !ok {
            return invalid(format!("family {} is not defined for d = {d}", family.name()));
        }
        Ok(Self { family, d })
    }

    /// Every (family, dimension) pair.
    pub fn all() -> Vec<Self> {
        let mut out = Vec::new();
        for f in Family::ALL {
            for d in [2, 3] {
                if let Ok(c) = Self::new(f, d) {
                    out.push(c);
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        match self.family {
            Family::InvS0 | Family::InvSpar => format!("{}_d{}", self.family.name(), self.d),
            _ => self.family.name().to_string(),
        }
    }

    /// `lim_{x→∞} c(x)`.
    pub fn limit(&self) -> Result<Rational> {
        Ok(match self.family {
            Family::Dir3dS0 => Rational::new(4, 3),
            Family::Dir3dSpar => Rational::new(4, 15),
            Family::Dir2dVor => Rational::from_integer(2),
            Family::Dir2dS0 => Rational::new(-1, 4),
            Family::Dir2dSpar => Rational::new(1, 24),
            Family::InvS0 => -beta(self.d, 1)? * Rational::from_integer(4),
            Family::InvSpar => -beta(self.d, 2)? * Rational::from_integer(4),
        })
    }

    pub fn limit_f64(&self) -> f64 {
        let r = self.limit().expect("limits use small β indices");
        *r.numer() as f64 / *r.denom() as f64
    }

    fn shape(&self) -> SeriesShape {
        let (prefactor, t0_num, t0_den, den): (f64, f64, f64, fn(f64) -> f64) = match (self.family, self.d) {
            (Family::Dir3dS0, _) => (-4.0, 1.0, 3.0, |m| 2.0 * m * (2.0 * m + 3.0)),
            (Family::Dir3dSpar, _) => (-4.0, 1.0, 15.0, |m| 2.0 * m * (2.0 * m + 5.0)),
            (Family::Dir2dVor, _) => (-2.0, 1.0, 1.0, |m| 4.0 * m * (m + 1.0)),
            (Family::Dir2dS0, _) => (0.5, 1.0, 2.0, |m| 4.0 * (m + 1.0) * (m + 2.0)),
            (Family::Dir2dSpar, _) => (-0.25, 1.0, 6.0, |m| 4.0 * (m + 1.0) * (m + 3.0)),
            (Family::InvS0, 2) => (4.0, 1.0, 2.0, |m| 4.0 * m * (m + 1.0)),
            (Family::InvS0, _) => (4.0, 1.0, 3.0, |m| 2.0 * m * (2.0 * m + 3.0)),
            (Family::InvSpar, 2) => (4.0, 1.0, 8.0, |m| 4.0 * m * (m + 2.0)),
            (Family::InvSpar, _) => (4.0, 1.0, 15.0, |m| 2.0 * m * (2.0 * m + 5.0)),
        };
        SeriesShape { prefactor, t0_num, t0_den, den }
    }

    /// Power series in double-double arithmetic; usable up to `x ≈ 30`.
    pub fn eval_series(&self, x: f64) -> Result<f64> {
        let x = x.abs();
        if x == 0.0 {
            return Ok(0.0);
        }
        let s = self.shape();
        let x2 = Dd::prod(x, x);
        let mut term = Dd::new(s.t0_num).div_f64(s.t0_den);
        let mut sum = Dd::ZERO;
        let mut prev = f64::INFINITY;
        for m in 1..=SERIES_MAX_TERMS {
            let den = (s.den)(m as f64);
            term = (term * x2).mul_f64(-1.0).div_f64(den);
            sum = sum + term;
            let mag = term.hi.abs();
            if mag == 0.0 || (den > x2.hi && mag <= prev && mag <= 1e-17 * sum.hi.abs().max(1e-300)) {
                return Ok(sum.to_f64() * s.prefactor);
            }
            prev = mag;
        }
        Err(Error::Divergence(format!("{} series at x = {x} did not converge", self.label())))
    }

    /// Bessel / trigonometric closed form; loses accuracy to cancellation
    /// as `x → 0`. The removable singularity at 0 takes the value `c(0) = 0`.
    pub fn eval_closed(&self, x: f64) -> f64 {
        let x = x.abs();
        if x == 0.0 {
            return 0.0;
        }
        let l = self.limit_f64();
        match (self.family, self.d) {
            (Family::Dir3dS0, _) | (Family::InvS0, 3) => {
                let g = 4.0 * int_t_sin(x) / x.powi(3);
                if self.family == Family::InvS0 { g + l } else { l - g }
            }
            (Family::Dir3dSpar, _) | (Family::InvSpar, 3) => {
                let g = 4.0 * int_t_int_t_sin(x) / x.powi(5);
                if self.family == Family::InvSpar { g + l } else { l - g }
            }
            (Family::Dir2dVor, _) => l - 4.0 * bessel_j(1, x) / x,
            (Family::InvS0, _) => 4.0 * bessel_j(1, x) / x + l,
            (Family::Dir2dS0, _) => l - (4.0 * bessel_j(1, x) / x.powi(3) - 2.0 / (x * x)),
            (Family::Dir2dSpar, _) => l - (0.5 / (x * x) - 4.0 * bessel_j(2, x) / x.powi(4)),
            (Family::InvSpar, _) => 4.0 * bessel_j(2, x) / (x * x) + l,
        }
    }

    /// Integral representation evaluated by adaptive Gauss–Legendre (or
    /// the trapezoid Bessel route); independent of both other paths.
    pub fn eval_quadrature(&self, x: f64) -> f64 {
        let x = x.abs();
        if x == 0.0 {
            return 0.0;
        }
        let l = self.limit_f64();
        let tol = 1e-13;
        let panels = (x / 2.0).ceil() as usize;
        let int_t_sin_q = |t: f64| adaptive_gauss(&|s: f64| s * s.sin(), 0.0, t, (t / 2.0).ceil() as usize, tol);
        match (self.family, self.d) {
            (Family::Dir3dS0, _) => l - 4.0 * int_t_sin_q(x) / x.powi(3),
            (Family::Dir3dSpar, _) => {
                l - 4.0 * adaptive_gauss(&|t: f64| t * int_t_sin_q(t), 0.0, x, panels, tol) / x.powi(5)
            }
            (Family::Dir2dVor, _) => l - 4.0 * bessel_j_trapezoid(1, x) / x,
            (Family::Dir2dS0, _) => {
                l + 4.0 * adaptive_gauss(&|t: f64| bessel_j(2, t) / t, 0.0, x, panels, tol) / (x * x)
            }
            (Family::Dir2dSpar, _) => {
                l - 4.0 * adaptive_gauss(&|t: f64| bessel_j(3, t) / (t * t), 0.0, x, panels, tol) / (x * x)
            }
            (Family::InvS0, 2) => 4.0 * bessel_j_trapezoid(1, x) / x + l,
            (Family::InvS0, _) => {
                // −T₀'(x)/x = (1/x)∫₀¹ μ sin(xμ) dμ
                4.0 * adaptive_gauss(&|mu: f64| mu * (x * mu).sin(), 0.0, 1.0, panels, tol) / x + l
            }
            (Family::InvSpar, 2) => 4.0 * bessel_j_trapezoid(2, x) / (x * x) + l,
            (Family::InvSpar, _) => {
                // −L₀'(x)/x = (1/2x)∫₀¹ (1 − μ²) μ sin(xμ) dμ
                2.0 * adaptive_gauss(&|mu: f64| (1.0 - mu * mu) * mu * (x * mu).sin(), 0.0, 1.0, panels, tol) / x + l
            }
        }
    }

    /// Series up to `x = 30`, closed form beyond.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if x.abs() <= SERIES_X_MAX {
            self.eval_series(x)
        } else {
            Ok(self.eval_closed(x))
        }
    }

    /// Decay exponent `q` of the envelope `|L − c(x)| ≤ C x^{−q}`.
    pub fn decay_rate(&self) -> f64 {
        match self.family {
            Family::Dir2dS0 => 0.5,
            _ => 1.0,
        }
    }

    /// The explicit constant `C` where one is known.
    pub fn exact_envelope_constant(&self) -> Option<f64> {
        match self.family {
            Family::Dir3dS0 => Some(2.0),
            _ => None,
        }
    }
}

/// `c(x)` for a family in dimension `d`.
pub fn coefficient_c(family: Family, d: usize, x: f64) -> Result<f64> {
    if x < 0.0 || !x.is_finite() {
        return invalid(format!("coefficient argument must be finite and ≥ 0, got {x}"));
    }
    CoefficientFamily::new(family, d)?.eval(x)
}

#[derive(Clone, Debug, Serialize)]
pub struct EnvelopeReport {
    pub family: String,
    pub rate: f64,
    /// `max(|L − c| − C x^{−q}, 0)` for the explicit constant, if any.
    pub exact_violation: Option<f64>,
    /// Constant fitted on the even-indexed points.
    pub fitted_constant: f64,
    /// `max(|L − c| x^q / C_fit − 1, 0)` on the odd-indexed points.
    pub holdout_violation: f64,
}

/// Checks `|L − c(x)| ≤ C x^{−q}` on `xs ⊂ (0, 200]`.
pub fn decay_envelope_check(family: &CoefficientFamily, xs: &[f64]) -> Result<EnvelopeReport> {
    if xs.iter().any(|&x| !(x > 0.0 && x <= 200.0)) {
        return invalid("envelope grid must lie in (0, 200]");
    }
    let q = family.decay_rate();
    let l = family.limit_f64();
    let scaled: Vec<f64> = xs.iter().map(|&x| Ok((l - family.eval(x)?).abs() * x.powf(q))).collect::<Result<_>>()?;
    let exact_violation = family.exact_envelope_constant().map(|c| {
        xs.iter().zip(&scaled).map(|(&x, &s)| (s - c) * x.powf(-q)).fold(0.0f64, f64::max)
    });
    let fitted_constant = scaled.iter().step_by(2).fold(0.0f64, |a, &b| a.max(b));
    let holdout_violation = if fitted_constant > 0.0 {
        scaled.iter().skip(1).step_by(2).map(|&s| s / fitted_constant - 1.0).fold(0.0f64, f64::max)
    } else {
        0.0
    };
    Ok(EnvelopeReport { family: family.label(), rate: q, exact_violation, fitted_constant, holdout_violation })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Vel,
    VelPar,
    Vor,
}

impl Relation {
    pub const ALL: [Relation; 3] = [Relation::Vel, Relation::VelPar, Relation::Vor];

    pub fn name(&self) -> &'static str {
        match self {
            Relation::Vel => "vel",
            Relation::VelPar => "vel_par",
            Relation::Vor => "vor",
        }
    }

    pub fn structure_kind(&self) -> StructureKind {
        match self {
            Relation::Vel => StructureKind::SVel,
            Relation::VelPar => StructureKind::SVelPar,
            Relation::Vor => StructureKind::SVor,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Relation::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown relation {s:?}")))
    }
}

/// Spectral statistics entering the right-hand sides.
#[derive(Clone, Debug, PartialEq)]
pub struct KhmInputs {
    pub nu: f64,
    /// `E|û(k)|²` summed over components.
    pub velocity: RadialSpectrum,
    /// `E|ω̂(k)|²` (2D).
    pub vorticity: Option<RadialSpectrum>,
    /// `½Σ_j|f̂_j(k)|²`.
    pub forcing_velocity: RadialSpectrum,
    /// `½Σ_j|curl f̂_j(k)|²` (2D).
    pub forcing_vorticity: Option<RadialSpectrum>,
}

impl KhmInputs {
    pub fn new(nu: f64, velocity: RadialSpectrum, vorticity: Option<RadialSpectrum>, forcing: &ForcingSpec) -> Result<Self> {
        if !(nu >= 0.0) {
            return invalid("viscosity must be ≥ 0");
        }
        let d = velocity.dim;
        if d != forcing.grid().dim() {
            return invalid("flow and forcing dimensions differ");
        }
        let forcing_vorticity = if d == 2 { Some(forcing.vorticity_spectrum()?) } else { None };
        Ok(Self { nu, velocity, vorticity, forcing_velocity: forcing.velocity_spectrum(), forcing_vorticity })
    }

    pub fn from_shell_spectra(nu: f64, su: &ShellSpectrum, sw: Option<&ShellSpectrum>, forcing: &ForcingSpec) -> Result<Self> {
        if su.grid != *forcing.grid() {
            return invalid("flow and forcing grids differ");
        }
        Self::new(nu, su.radial(), sw.map(|s| s.radial()), forcing)
    }

    pub fn dim(&self) -> usize {
        self.velocity.dim
    }

    pub fn eps(&self) -> f64 {
        self.forcing_velocity.total()
    }

    pub fn eta(&self) -> Option<f64> {
        self.forcing_vorticity.as_ref().map(|s| s.total())
    }

    /// Injection rate setting the residual scale of a relation.
    pub fn rate(&self, relation: Relation) -> f64 {
        match relation {
            Relation::Vor => self.eta().unwrap_or(0.0),
            _ => self.eps(),
        }
    }
}

/// Source of `S_vel` in the nested `vel_par` term.
#[derive(Clone, Copy, Debug)]
pub enum NestedSource<'a> {
    /// The `vel` right-hand side built from the same inputs, integrated in
    /// closed form.
    Model,
    /// A measured curve, interpolated monotonically; below its first point
    /// `S_vel(r) = S_vel(ℓ₀)(r/ℓ₀)³`.
    Curve(&'a StructureCurve),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KhmBudget {
    pub relation: Relation,
    pub ell: Vec<f64>,
    pub viscous: Vec<f64>,
    pub forcing: Vec<f64>,
    /// Zero except for `vel_par`.
    pub nested: Vec<f64>,
    pub rhs: Vec<f64>,
    pub lhs: Option<Vec<f64>>,
    pub lhs_stderr: Option<Vec<f64>>,
    pub residual: Option<Vec<f64>>,
    /// `ε` (vel, vel_par) or `η` (vor).
    pub rate: f64,
}

impl KhmBudget {
    fn sum_terms(viscous: f64, forcing: f64, nested: f64) -> f64 {
        (viscous + forcing) + nested
    }

    /// RHS recomputed from the stored terms.
    pub fn recomputed_rhs(&self) -> Vec<f64> {
        (0..self.ell.len()).map(|i| Self::sum_terms(self.viscous[i], self.forcing[i], self.nested[i])).collect()
    }

    pub fn with_lhs(mut self, curve: &StructureCurve) -> Result<Self> {
        if curve.kind != self.relation.structure_kind() {
            return invalid(format!("{} curve cannot be the LHS of the {} relation", curve.kind.name(), self.relation.name()));
        }
        if curve.ell != self.ell {
            return invalid("LHS curve and budget use different ℓ grids");
        }
        self.residual = Some(curve.values.iter().zip(&self.rhs).map(|(l, r)| l - r).collect());
        self.lhs = Some(curve.values.clone());
        self.lhs_stderr = Some(curve.stderr.clone());
        Ok(self)
    }

    /// `|LHS − RHS| / max(|LHS|, |RHS|, rate·ℓ)` per ℓ.
    pub fn normalized_residual(&self) -> Option<Vec<f64>> {
        let lhs = self.lhs.as_ref()?;
        let res = self.residual.as_ref()?;
        Some(
            (0..self.ell.len())
                .map(|i| {
                    let scale = lhs[i].abs().max(self.rhs[i].abs()).max(self.rate * self.ell[i]);
                    if scale > 0.0 { res[i].abs() / scale } else { 0.0 }
                })
                .collect(),
        )
    }

    /// Largest normalized residual over `lo ≤ ℓ ≤ hi`.
    pub fn max_normalized_residual(&self, lo: f64, hi: f64) -> Option<f64> {
        let n = self.normalized_residual()?;
        let vals: Vec<f64> =
            self.ell.iter().zip(&n).filter(|(&l, _)| l >= lo * (1.0 - 1e-12) && l <= hi * (1.0 + 1e-12)).map(|(_, &v)| v).collect();
        if vals.is_empty() { None } else { Some(vals.into_iter().fold(0.0, f64::max)) }
    }
}

fn primitive_g(d: usize, x: f64) -> f64 {
    if d == 2 { x * bessel_j(1, x) } else { int_t_sin(x) }
}

fn primitive_h(d: usize, x: f64) -> f64 {
    if d == 2 { x * x * bessel_j(2, x) } else { int_t_int_t_sin(x) }
}

/// `Σ_k w ∫₀^ℓ r^{d−1} T₀(r|k|) dr`.
pub fn tangential_moment(spectrum: &RadialSpectrum, ell: f64) -> f64 {
    let d = spectrum.dim;
    spectrum
        .modes
        .iter()
        .map(|&(k, w)| if k == 0.0 { w * ell.powi(d as i32) / d as f64 } else { w * k.powi(-(d as i32)) * primitive_g(d, ell * k) })
        .sum()
}

/// `Σ_k w ∫₀^ℓ r^{d+1} L₀(r|k|) dr`.
pub fn longitudinal_moment(spectrum: &RadialSpectrum, ell: f64) -> f64 {
    let d = spectrum.dim;
    spectrum
        .modes
        .iter()
        .map(|&(k, w)| {
            if k == 0.0 {
                w * ell.powi(d as i32 + 2) / (d * (d + 2)) as f64
            } else {
                w * k.powi(-(d as i32 + 2)) * primitive_h(d, ell * k)
            }
        })
        .sum()
}

/// `∫₀^ℓ r^d S_vel(r) dr` with `S_vel` the `vel` right-hand side of `inputs`.
pub fn nested_model(inputs: &KhmInputs, ell: f64) -> Result<f64> {
    let d = inputs.dim();
    let t0 = KernelSeries::tangential(d, 0);
    let mut visc = 0.0;
    for &(k, w) in &inputs.velocity.modes {
        if k == 0.0 || w == 0.0 {
            continue;
        }
        let x = ell * k;
        // ∫₀^X t^d T₀'(t) dt = X^d T₀(X) − d G(X), which cancels to O(X^{d+2})
        let m = if x < 1.0 { t0.derivative_moment(d as u32, x)? } else { x.powi(d as i32) * t0.eval(x)? - d as f64 * primitive_g(d, x) };
        visc += w * k.powi(-(d as i32)) * m;
    }
    Ok(-4.0 * inputs.nu * visc - 4.0 * longitudinal_moment(&inputs.forcing_velocity, ell))
}

/// `∫₀^ℓ r^d S(r) dr` for a measured curve.
pub fn nested_measured(curve: &StructureCurve, d: usize, ell: f64) -> Result<f64> {
    let (l0, lmax) = (curve.ell[0], *curve.ell.last().unwrap());
    if ell > lmax * (1.0 + 1e-12) {
        return invalid(format!("ℓ = {ell} is beyond the S_vel curve range (max {lmax})"));
    }
    let s0 = curve.values[0];
    let di = d as i32;
    // S(r) = s0 (r/ℓ₀)³ below the first sample
    let head = |b: f64| s0 * b.powi(di + 4) / ((di + 4) as f64 * l0.powi(3));
    if ell <= l0 {
        return Ok(head(ell));
    }
    let interp = MonotoneCubic::new(curve.ell.clone(), curve.values.clone());
    let rule = GaussRule::new(4);
    let mut total = head(l0);
    for w in curve.ell.windows(2) {
        let (a, b) = (w[0], w[1].min(ell));
        if a >= ell {
            break;
        }
        total += rule.integrate(a, b, |r| r.powi(di) * interp.eval(r));
    }
    Ok(total)
}

/// Right-hand side of one relation on an `ℓ` grid.
pub fn khm_rhs(relation: Relation, inputs: &KhmInputs, ell: &[f64], nested: NestedSource) -> Result<KhmBudget> {
    let d = inputs.dim();
    if ell.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return invalid("separations must be positive and finite");
    }
    if relation == Relation::Vor && d != 2 {
        return invalid("the vorticity relation is two-dimensional");
    }
    let (gamma_spec, gamma_kind, force_spec) = match relation {
        Relation::Vel => (&inputs.velocity, CorrelationKind::GammaVel, &inputs.forcing_velocity),
        Relation::VelPar => (&inputs.velocity, CorrelationKind::GammaVelPar, &inputs.forcing_velocity),
        Relation::Vor => (
            inputs.vorticity.as_ref().ok_or_else(|| Error::Invalid("vorticity spectrum missing".into()))?,
            CorrelationKind::GammaVor,
            inputs.forcing_vorticity.as_ref().ok_or_else(|| Error::Invalid("forcing vorticity spectrum missing".into()))?,
        ),
    };
    let gamma = correlation_spectral(gamma_spec, gamma_kind, ell)?;
    let viscous: Vec<f64> = gamma.derivative.iter().map(|g| -4.0 * inputs.nu * g).collect();
    let di = d as i32;
    let mut forcing = Vec::with_capacity(ell.len());
    let mut nested_terms = Vec::with_capacity(ell.len());
    for &l in ell {
        match relation {
            Relation::Vel | Relation::Vor => {
                forcing.push(-4.0 * tangential_moment(force_spec, l) / l.powi(di - 1));
                nested_terms.push(0.0);
            }
            Relation::VelPar => {
                forcing.push(-4.0 * longitudinal_moment(force_spec, l) / l.powi(di + 1));
                let n = match nested {
                    NestedSource::Model => nested_model(inputs, l)?,
                    NestedSource::Curve(c) => {
                        if c.kind != StructureKind::SVel {
                            return invalid("the nested term needs an S_vel curve");
                        }
                        nested_measured(c, d, l)?
                    }
                };
                nested_terms.push(2.0 * n / l.powi(di + 1));
            }
        }
    }
    let rhs = (0..ell.len()).map(|i| KhmBudget::sum_terms(viscous[i], forcing[i], nested_terms[i])).collect();
    let all_finite = viscous.iter().chain(&forcing).chain(&nested_terms).all(|v| v.is_finite());
    if !all_finite {
        return Err(Error::Unstable(format!("non-finite term in the {} budget", relation.name())));
    }
    Ok(KhmBudget {
        relation,
        ell: ell.to_vec(),
        viscous,
        forcing,
        nested: nested_terms,
        rhs,
        lhs: None,
        lhs_stderr: None,
        residual: None,
        rate: inputs.rate(relation),
    })
}

/// Budgets with LHS for every relation whose curve is present.
pub fn khm_budgets(curves: &[StructureCurve], inputs: &KhmInputs) -> Result<Vec<KhmBudget>> {
    let svel = curves.iter().find(|c| c.kind == StructureKind::SVel);
    let mut out = Vec::new();
    for rel in Relation::ALL {
        let Some(curve) = curves.iter().find(|c| c.kind == rel.structure_kind()) else { continue };
        let nested = match (rel, svel) {
            (Relation::VelPar, Some(s)) => NestedSource::Curve(s),
            (Relation::VelPar, None) => return invalid("the vel_par relation needs the S_vel curve as well"),
            _ => NestedSource::Model,
        };
        out.push(khm_rhs(rel, inputs, &curve.ell, nested)?.with_lhs(curve)?);
    }
    Ok(out)
}

/// Residual budgets of `relations` from a snapshot set.
pub fn khm_residual(
    snapshots: &[FlowSnapshot],
    relations: &[Relation],
    nu: f64,
    forcing: &ForcingSpec,
    ell: &[f64],
    rule: &NodeRule,
) -> Result<Vec<KhmBudget>> {
    let mut acc = KhmAccumulator::new(relations, ell.to_vec(), rule.clone())?;
    for s in snapshots {
        acc.push(s)?;
    }
    acc.budgets(acc.len(), nu, forcing)
}

/// Streaming snapshot statistics for KHM budgets over any prefix of the
/// snapshot sequence.
#[derive(Clone, Debug)]
pub struct KhmAccumulator {
    relations: Vec<Relation>,
    kinds: Vec<StructureKind>,
    ell: Vec<f64>,
    rule: NodeRule,
    samples: Option<StructureSamples>,
    velocity: Vec<RadialSpectrum>,
    vorticity: Vec<Option<RadialSpectrum>>,
}

impl KhmAccumulator {
    pub fn new(relations: &[Relation], ell: Vec<f64>, rule: NodeRule) -> Result<Self> {
        if relations.is_empty() {
            return invalid("no relations requested");
        }
        let mut kinds: Vec<StructureKind> = relations.iter().map(|r| r.structure_kind()).collect();
        if relations.contains(&Relation::VelPar) && !kinds.contains(&StructureKind::SVel) {
            kinds.insert(0, StructureKind::SVel);
        }
        Ok(Self { relations: relations.to_vec(), kinds, ell, rule, samples: None, velocity: Vec::new(), vorticity: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.velocity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocity.is_empty()
    }

    pub fn push(&mut self, snap: &FlowSnapshot) -> Result<()> {
        let s = structure_samples(std::slice::from_ref(snap), &self.kinds, &self.ell, &self.rule)?;
        match self.samples.as_mut() {
            None => self.samples = Some(s),
            Some(acc) => acc.append(s)?,
        }
        self.velocity.push(ShellSpectrum::from_field(&snap.u).radial());
        self.vorticity.push(snap.omega.as_ref().map(|w| ShellSpectrum::from_field(w).radial()));
        Ok(())
    }

    pub fn samples(&self) -> Option<&StructureSamples> {
        self.samples.as_ref()
    }

    fn mean_spectrum<'a>(specs: impl Iterator<Item = &'a RadialSpectrum>, count: usize, dim: usize) -> RadialSpectrum {
        let mut all = RadialSpectrum::empty(dim);
        for s in specs {
            all = all.concat(s);
        }
        all.scaled(1.0 / count as f64)
    }

    /// Budgets from the first `count` snapshots.
    pub fn budgets(&self, count: usize, nu: f64, forcing: &ForcingSpec) -> Result<Vec<KhmBudget>> {
        let Some(samples) = self.samples.as_ref() else { return invalid("no snapshots accumulated") };
        if count == 0 || count > self.len() {
            return invalid(format!("prefix of {count} snapshots requested, {} available", self.len()));
        }
        let dim = self.velocity[0].dim;
        let velocity = Self::mean_spectrum(self.velocity[..count].iter(), count, dim);
        let vorticity = if self.vorticity[0].is_some() {
            Some(Self::mean_spectrum(self.vorticity[..count].iter().flatten(), count, dim))
        } else {
            None
        };
        let inputs = KhmInputs::new(nu, velocity, vorticity, forcing)?;
        let curves = samples.curves(count);
        let budgets = khm_budgets(&curves, &inputs)?;
        Ok(budgets.into_iter().filter(|b| self.relations.contains(&b.relation)).collect())
    }
}

/// `Γ'` and the forcing integral of `vel` at `ℓ → 0` reduce to `4ε/d·ℓ` and
/// `−4ε/d·ℓ`; this is the leading forcing slope `−4·a(0)/d`.
pub fn forcing_slope_at_zero(spectrum: &RadialSpectrum) -> f64 {
    -4.0 * spectrum.total() / spectrum.dim as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::WaveGrid;
    use std::f64::consts::PI;

    fn x_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn vanishes_at_zero_and_tends_to_limit() {
        for c in CoefficientFamily::all() {
            assert_eq!(c.eval(0.0).unwrap(), 0.0, "{}", c.label());
            for x in [1e4, 3e4, 1e5] {
                assert!((c.eval(x).unwrap() - c.limit_f64()).abs() < 1e-3, "{} x={x}", c.label());
            }
        }
    }

    #[test]
    fn series_matches_closed_forms() {
        for c in CoefficientFamily::all() {
            for x in x_grid(0.06, 30.0, 500) {
                let s = c.eval_series(x).unwrap();
                let cl = c.eval_closed(x);
                assert!((s - cl).abs() < 1e-9, "{} x={x} series={s} closed={cl}", c.label());
            }
        }
    }

    #[test]
    fn vorticity_family_at_ten() {
        let c = CoefficientFamily::new(Family::Dir2dVor, 2).unwrap();
        let want = 2.0 - 4.0 * bessel_j(1, 10.0) / 10.0;
        assert!((c.eval_series(10.0).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn quadrature_path_matches_beyond_series_range() {
        for c in CoefficientFamily::all() {
            for x in [30.5, 47.0, 88.8, 150.0, 200.0] {
                let a = c.eval(x).unwrap();
                let b = c.eval_quadrature(x);
                assert!((a - b).abs() < 1e-6, "{} x={x}: {a} vs {b}", c.label());
            }
        }
    }

    #[test]
    fn literal_tj2_form_does_not_match_the_series() {
        // (4/x²)∫₀ˣ tJ₂(t)dt is not −¼ − c; the integrand must be J₂(t)/t
        let c = CoefficientFamily::new(Family::Dir2dS0, 2).unwrap();
        let x = 5.0;
        let lhs = -0.25 - c.eval_series(x).unwrap();
        let literal = 4.0 / (x * x) * adaptive_gauss(&|t: f64| t * bessel_j(2, t), 0.0, x, 4, 1e-14);
        let fixed = -4.0 / (x * x) * adaptive_gauss(&|t: f64| bessel_j(2, t) / t, 0.0, x, 4, 1e-14);
        assert!((lhs - fixed).abs() < 1e-12);
        assert!((lhs.abs() - literal.abs()).abs() > 0.1);
        // and ∫₀ˣ J₃ for the ∥ family needs the 1/t² weight
        let c = CoefficientFamily::new(Family::Dir2dSpar, 2).unwrap();
        let lhs = 1.0 / 24.0 - c.eval_series(x).unwrap();
        let literal = 4.0 / (x * x) * adaptive_gauss(&|t: f64| bessel_j(3, t), 0.0, x, 4, 1e-14);
        let fixed = 4.0 / (x * x) * adaptive_gauss(&|t: f64| bessel_j(3, t) / (t * t), 0.0, x, 4, 1e-14);
        assert!((lhs - fixed).abs() < 1e-12);
        assert!((lhs - literal).abs() > 0.01);
    }

    #[test]
    fn envelopes() {
        let xs = x_grid(0.1, 200.0, 4000);
        let c = CoefficientFamily::new(Family::Dir3dS0, 3).unwrap();
        assert_eq!(decay_envelope_check(&c, &xs).unwrap().exact_violation, Some(0.0));
        for c in CoefficientFamily::all() {
            let r = decay_envelope_check(&c, &xs).unwrap();
            assert!(r.holdout_violation < 1e-2, "{:?}", r);
        }
        assert!(decay_envelope_check(&c, &[0.0]).is_err());
    }

    #[test]
    fn limits_are_beta_composites() {
        let c = CoefficientFamily::new(Family::InvS0, 2).unwrap();
        assert_eq!(c.limit().unwrap(), Rational::from_integer(-2));
        let c = CoefficientFamily::new(Family::InvSpar, 3).unwrap();
        assert_eq!(c.limit().unwrap(), Rational::new(-4, 15));
        assert!(CoefficientFamily::new(Family::Dir2dVor, 3).is_err());
        assert!(Family::parse("nope").is_err());
    }

    fn mode_spectrum(d: usize, modes: &[(f64, f64)]) -> RadialSpectrum {
        RadialSpectrum::new(d, modes.to_vec())
    }

    #[test]
    fn moments_match_adaptive_quadrature() {
        for d in [2, 3] {
            let spec = mode_spectrum(d, &[(0.0, 0.3), (1.0, 0.7), (3.6, 0.2), (11.0, 0.05)]);
            let t0 = KernelSeries::tangential(d, 0);
            let l0 = KernelSeries::longitudinal(d, 0);
            for ell in [0.01, 0.4, 2.5, 9.0] {
                let tq: f64 = spec
                    .modes
                    .iter()
                    .map(|&(k, w)| w * adaptive_gauss(&|r: f64| r.powi(d as i32 - 1) * t0.eval(r * k).unwrap(), 0.0, ell, 8, 1e-14))
                    .sum();
                let lq: f64 = spec
                    .modes
                    .iter()
                    .map(|&(k, w)| w * adaptive_gauss(&|r: f64| r.powi(d as i32 + 1) * l0.eval(r * k).unwrap(), 0.0, ell, 8, 1e-14))
                    .sum();
                let ta = tangential_moment(&spec, ell);
                let la = longitudinal_moment(&spec, ell);
                assert!((ta - tq).abs() <= 1e-11 * tq.abs().max(1e-300), "d={d} ℓ={ell}: {ta} vs {tq}");
                assert!((la - lq).abs() <= 1e-10 * lq.abs().max(1e-300), "d={d} ℓ={ell}: {la} vs {lq}");
            }
        }
    }

    fn shell_inputs(nu: f64) -> (ForcingSpec, KhmInputs) {
        let g = WaveGrid::new(2, 2.0 * PI, 32).unwrap();
        let f = ForcingSpec::shell(g, 3.0, 5.0, 1.0, 4).unwrap().with_injection_rate(0.5).unwrap();
        let vel = mode_spectrum(2, &[(1.0, 0.4), (2.0, 0.2), (4.0, 0.1), (9.0, 0.01)]);
        let vor = RadialSpectrum::new(2, vel.modes.iter().map(|&(k, w)| (k, w * k * k)).collect());
        let inputs = KhmInputs::new(nu, vel, Some(vor), &f).unwrap();
        (f, inputs)
    }

    #[test]
    fn forcing_terms_at_small_separation() {
        let (_, inputs) = shell_inputs(0.01);
        let ell = [1e-4];
        let b = khm_rhs(Relation::Vel, &inputs, &ell, NestedSource::Model).unwrap();
        assert!((b.forcing[0] / ell[0] - (-4.0 * 0.5 / 2.0)).abs() < 1e-6);
        let b = khm_rhs(Relation::Vor, &inputs, &ell, NestedSource::Model).unwrap();
        let eta = inputs.eta().unwrap();
        assert!((b.forcing[0] / ell[0] + 2.0 * eta).abs() < 1e-6 * eta);
    }

    #[test]
    fn mean_zero_forcing_integral_vanishes_at_large_separation() {
        let (f, inputs) = shell_inputs(0.01);
        let (klo, _) = f.band();
        let ell = 1e3 / klo;
        let v = 4.0 * tangential_moment(&inputs.forcing_velocity, ell) / ell.powi(2);
        assert!(v.abs() < 1e-3 * inputs.eps(), "{v}");
    }

    #[test]
    fn zero_inputs_give_zero_rhs_and_sum_is_exact() {
        let g = WaveGrid::new(2, 2.0 * PI, 16).unwrap();
        let f = ForcingSpec::empty(g);
        let inputs = KhmInputs::new(0.1, RadialSpectrum::empty(2), Some(RadialSpectrum::empty(2)), &f).unwrap();
        for rel in Relation::ALL {
            let b = khm_rhs(rel, &inputs, &[0.1, 0.5, 1.0], NestedSource::Model).unwrap();
            assert!(b.rhs.iter().all(|&v| v == 0.0));
        }
        let (_, inputs) = shell_inputs(0.02);
        for rel in Relation::ALL {
            let b = khm_rhs(rel, &inputs, &[0.05, 0.3, 1.7], NestedSource::Model).unwrap();
            assert_eq!(b.recomputed_rhs(), b.rhs);
        }
    }

    #[test]
    fn measured_nested_term_tracks_the_model() {
        let (_, inputs) = shell_inputs(0.02);
        let ell = crate::correlations::log_spaced(0.01, 2.0, 400);
        let vel = khm_rhs(Relation::Vel, &inputs, &ell, NestedSource::Model).unwrap();
        let curve = StructureCurve {
            kind: StructureKind::SVel,
            ell: ell.clone(),
            values: vel.rhs.clone(),
            stderr: vec![0.0; ell.len()],
            nodes: vec![0; ell.len()],
            snapshots: 1,
        };
        let model = khm_rhs(Relation::VelPar, &inputs, &ell, NestedSource::Model).unwrap();
        let meas = khm_rhs(Relation::VelPar, &inputs, &ell, NestedSource::Curve(&curve)).unwrap();
        // the synthetic inputs are not in balance, so S_vel ~ ℓ near 0 and the
        // cubic head only becomes negligible well above the first sample
        for i in (200..ell.len()).step_by(20) {
            let scale = model.forcing[i].abs();
            assert!((model.nested[i] - meas.nested[i]).abs() < 1e-4 * scale, "ℓ={} {} {}", ell[i], model.nested[i], meas.nested[i]);
        }
        assert!(nested_measured(&curve, 2, 3.0).is_err());
    }

    #[test]
    fn nested_model_matches_quadrature_of_the_vel_rhs() {
        let (_, inputs) = shell_inputs(0.02);
        let s = |r: f64| khm_rhs(Relation::Vel, &inputs, &[r], NestedSource::Model).unwrap().rhs[0];
        for ell in [0.2, 1.1, 2.9] {
            let q = adaptive_gauss(&|r: f64| r * r * s(r), 1e-9, ell, 8, 1e-13);
            let a = nested_model(&inputs, ell).unwrap();
            assert!((a - q).abs() < 1e-9 * q.abs().max(1e-12), "ℓ={ell}: {a} vs {q}");
        }
    }
}
