//! Energy and enstrophy balances, and the mollified defect functionals
//!
//! ```text
//! D_γ(u) = ¼ ⨍_x ∫ ∇φ_γ(y)·δ_y u |δ_y u|² dy
//! A_γ(u) = ⨍ u·div(u⊗u)_γ − ⨍ (u⊗u):∇u_γ
//! ```
//!
//! with `∫∫∇φ_γ·δ_y u|δ_y u|² = 2A_γ`. Both use the torus average `⨍ dx` in
//! `x` and the Lebesgue measure in `y`, so `D_γ` has the units of an energy
//! dissipation rate and enters the energy balance additively.
//!
//! The `y`-integral runs over a polar Gauss–Legendre × sphere rule on the
//! support of `φ_γ`; `δ_y u` comes from exact spectral shifts, so off-grid
//! `y` are fine. `A_γ` mollifies in Fourier space with `φ̂_γ(k)` computed by
//! the same radial rule.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlations::FlowSnapshot;
use crate::error::{invalid, Result};
use crate::forcing::ForcingSpec;
use crate::grid::{shift_phases, SpectralField, Transformer, WaveGrid};
use crate::quad::gauss_legendre;
use crate::sim2d::TrajectoryStats;
use crate::special::{bessel_j, sinc};
use crate::sphere::SphereRule;

/// Unnormalized bump `exp(−1/(1 − s²))` on `s < 1`.
fn bump(s: f64) -> f64 {
    if s >= 1.0 { 0.0 } else { (-1.0 / (1.0 - s * s)).exp() }
}

fn bump_prime(s: f64) -> f64 {
    if s >= 1.0 { 0.0 } else { bump(s) * (-2.0 * s / ((1.0 - s * s) * (1.0 - s * s))) }
}

fn sphere_area(d: usize) -> f64 {
    if d == 2 { 2.0 * std::f64::consts::PI } else { 4.0 * std::f64::consts::PI }
}

/// Radial bump `φ_γ(y) = γ^{−d} φ(|y|/γ)` normalized on its radial rule.
#[derive(Clone, Debug)]
pub struct Mollifier {
    pub d: usize,
    pub gamma: f64,
    /// Radial nodes in `(0, γ)`.
    radii: Vec<f64>,
    /// `|S^{d−1}| r^{d−1} w_r`, so that `∫ g(|y|) dy ≈ Σ g(r_i) radial_weights_i`.
    radial_weights: Vec<f64>,
    /// `1/∫ φ` on the rule.
    norm: f64,
}

impl Mollifier {
    pub const RADIAL_NODES: usize = 64;

    pub fn new(d: usize, gamma: f64, lambda: f64) -> Result<Self> {
        Self::with_nodes(d, gamma, lambda, Self::RADIAL_NODES)
    }

    pub fn with_nodes(d: usize, gamma: f64, lambda: f64, nodes: usize) -> Result<Self> {
        if d != 2 && d != 3 {
            return invalid(format!("mollifier dimension must be 2 or 3, got {d}"));
        }
        if !(gamma > 0.0 && gamma < lambda / 4.0) {
            return invalid(format!("mollifier radius {gamma} must lie in (0, λ/4 = {})", lambda / 4.0));
        }
        let (x, w) = gauss_legendre(nodes);
        let area = sphere_area(d);
        let radii: Vec<f64> = x.iter().map(|t| 0.5 * gamma * (t + 1.0)).collect();
        let radial_weights: Vec<f64> =
            radii.iter().zip(&w).map(|(r, w)| area * r.powi(d as i32 - 1) * 0.5 * gamma * w).collect();
        let mut m = Self { d, gamma, radii, radial_weights, norm: 1.0 };
        let mass: f64 = m.radii.iter().zip(&m.radial_weights).map(|(&r, w)| m.profile(r) * w).sum();
        m.norm = 1.0 / mass;
        Ok(m)
    }

    /// `φ_γ(r)`.
    pub fn profile(&self, r: f64) -> f64 {
        self.norm * self.gamma.powi(-(self.d as i32)) * bump(r / self.gamma)
    }

    /// `dφ_γ/dr`.
    pub fn profile_derivative(&self, r: f64) -> f64 {
        self.norm * self.gamma.powi(-(self.d as i32) - 1) * bump_prime(r / self.gamma)
    }

    /// `∫ φ_γ` on the radial rule.
    pub fn mass(&self) -> f64 {
        self.radii.iter().zip(&self.radial_weights).map(|(&r, w)| self.profile(r) * w).sum()
    }

    /// `φ̂_γ(k) = ∫ φ_γ(y) e^{−ik·y} dy`, so that `(φ_γ * f)^(k) = φ̂_γ(k) f̂(k)`.
    pub fn fourier(&self, k: f64) -> f64 {
        self.radii
            .iter()
            .zip(&self.radial_weights)
            .map(|(&r, w)| {
                let ang = if self.d == 2 { bessel_j(0, k * r) } else { sinc(k * r) };
                self.profile(r) * ang * w
            })
            .sum()
    }

    /// `(y, weight·dφ_γ/dr)` pairs with the sphere rule `rule`, where the
    /// gradient is `dφ_γ/dr · n`.
    fn gradient_nodes(&self, rule: &SphereRule) -> Vec<([f64; 3], [f64; 3])> {
        let mut out = Vec::with_capacity(self.radii.len() * rule.len());
        for (&r, &rw) in self.radii.iter().zip(&self.radial_weights) {
            let dphi = self.profile_derivative(r);
            for (n, &sw) in rule.nodes.iter().zip(&rule.weights) {
                let y = [r * n[0], r * n[1], r * n[2]];
                let g = rw * sw * dphi;
                out.push((y, [g * n[0], g * n[1], g * n[2]]));
            }
        }
        out
    }
}

/// Largest `|z|_∞` carrying a nonzero coefficient.
fn lattice_support(u: &SpectralField) -> i64 {
    let g = u.grid();
    let len = g.len();
    let mut m = 0;
    for c in 0..u.components() {
        for (idx, v) in u.component(c).iter().enumerate().take(len) {
            if *v != Complex64::default() {
                m = m.max(g.lattice(idx).iter().map(|z| z.abs()).max().unwrap());
            }
        }
    }
    m
}

fn check_field(u: &SpectralField, m: &Mollifier) -> Result<()> {
    let g = u.grid();
    if g.dim() != m.d || u.components() != g.dim() {
        return invalid("mollifier dimension does not match the velocity field");
    }
    if m.gamma <= 4.0 * g.dx() {
        return invalid(format!("γ = {} is not resolved (needs > 4 grid spacings = {})", m.gamma, 4.0 * g.dx()));
    }
    // grid means of cubic products are exact only without aliasing
    if 3 * lattice_support(u) >= g.n_axis() as i64 {
        return invalid("velocity support too wide for alias-free cubic averages (need 3·|z|max < n)");
    }
    Ok(())
}

/// `∫∫ ∇φ_γ(y)·δ_y u |δ_y u|² dy ⨍dx` by quadrature in `y`.
pub fn defect_integral(u: &SpectralField, m: &Mollifier) -> Result<f64> {
    check_field(u, m)?;
    let g = *u.grid();
    let d = g.dim();
    let kmax = (lattice_support(u) as f64) * g.dk() * (d as f64).sqrt();
    let rule = SphereRule::for_bandwidth(d, 3.0 * kmax * m.gamma, 16);
    let nodes = m.gradient_nodes(&rule);
    let len = g.len();
    let mut tr = Transformer::new(g);
    let base = tr.physical(u);
    // one shifted field per node; chunked so each worker owns a transformer
    let chunk = (nodes.len() / rayon::current_num_threads().max(1) / 4).max(8);
    let partial: Vec<f64> = nodes
        .par_chunks(chunk)
        .map(|block| {
            let mut tr = Transformer::new(g);
            let mut shifted = SpectralField::zeros(g, u.kind());
            let mut phys = vec![0.0; d * len];
            let mut acc = 0.0;
            for (y, grad) in block {
                let ph = shift_phases(&g, &y[..d]);
                for c in 0..d {
                    for ((o, a), p) in shifted.component_mut(c).iter_mut().zip(u.component(c)).zip(&ph) {
                        *o = a * p;
                    }
                }
                let mut c = 0;
                while c < d {
                    if c + 1 < d {
                        let (lo, hi) = phys[c * len..(c + 2) * len].split_at_mut(len);
                        tr.to_physical_pair(shifted.component(c), shifted.component(c + 1), lo, hi);
                        c += 2;
                    } else {
                        tr.to_physical_component(shifted.component(c), &mut phys[c * len..(c + 1) * len]);
                        c += 1;
                    }
                }
                let mut s = 0.0;
                for i in 0..len {
                    let mut du = [0.0; 3];
                    let mut sq = 0.0;
                    for c in 0..d {
                        du[c] = phys[c * len + i] - base.data[c * len + i];
                        sq += du[c] * du[c];
                    }
                    let proj: f64 = (0..d).map(|c| grad[c] * du[c]).sum();
                    s += proj * sq;
                }
                acc += s / len as f64;
            }
            acc
        })
        .collect();
    Ok(partial.iter().sum())
}

/// `D_γ(u) = ¼ ∫∫ ∇φ_γ·δ_y u|δ_y u|²`.
pub fn d_gamma(u: &SpectralField, m: &Mollifier) -> Result<f64> {
    Ok(0.25 * defect_integral(u, m)?)
}

/// `A_γ(u)` by spectral mollification and grid products.
pub fn a_gamma(u: &SpectralField, m: &Mollifier) -> Result<f64> {
    check_field(u, m)?;
    let g = *u.grid();
    let d = g.dim();
    let len = g.len();
    let mut tr = Transformer::new(g);
    let phys = tr.physical(u);
    let mut phi_hat = vec![0.0; len];
    for (idx, p) in phi_hat.iter_mut().enumerate() {
        *p = m.fourier(g.k_sq(idx).sqrt());
    }
    let kv: Vec<[f64; 3]> = (0..len).map(|idx| g.wavevector(idx)).collect();
    let i = Complex64::i();
    let mut spec = vec![Complex64::default(); len];
    let mut tmp = vec![Complex64::default(); len];
    let mut out = vec![0.0; len];
    let mut term1 = 0.0;
    let mut term2 = 0.0;
    // term 1: Σ_i ⨍ u_i Σ_j ∂_j (u_i u_j)_γ
    for a in 0..d {
        let mut q = vec![Complex64::default(); len];
        for b in 0..d {
            let prod: Vec<f64> = (0..len).map(|x| phys.data[a * len + x] * phys.data[b * len + x]).collect();
            tr.to_spectral_component(&prod, &mut spec);
            for idx in 0..len {
                q[idx] += i * kv[idx][b] * phi_hat[idx] * spec[idx];
            }
        }
        tr.to_physical_component(&q, &mut out);
        term1 += (0..len).map(|x| phys.data[a * len + x] * out[x]).sum::<f64>() / len as f64;
    }
    // term 2: Σ_ij ⨍ u_i u_j ∂_j (u_i)_γ
    for a in 0..d {
        for b in 0..d {
            for idx in 0..len {
                tmp[idx] = i * kv[idx][b] * phi_hat[idx] * u.component(a)[idx];
            }
            tr.to_physical_component(&tmp, &mut out);
            term2 += (0..len).map(|x| phys.data[a * len + x] * phys.data[b * len + x] * out[x]).sum::<f64>() / len as f64;
        }
    }
    Ok(term1 - term2)
}

/// `u_γ = φ_γ * u` in Fourier space.
pub fn mollify(u: &SpectralField, m: &Mollifier) -> SpectralField {
    let g = u.grid();
    let len = g.len();
    let mut out = u.clone();
    for c in 0..u.components() {
        for (idx, v) in out.component_mut(c).iter_mut().enumerate().take(len) {
            *v *= m.fourier(g.k_sq(idx).sqrt());
        }
    }
    out
}

/// `D ≈ D₀ + c γ^q` fitted on a ladder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RichardsonFit {
    pub limit: f64,
    pub coefficient: f64,
    pub rate: f64,
    pub rms_residual: f64,
}

/// Least squares in `(D₀, c)` for each `q` on a grid over `[0.25, 8]`,
/// refined by golden section. Needs at least three points.
pub fn richardson_fit(gammas: &[f64], values: &[f64]) -> Result<RichardsonFit> {
    if gammas.len() < 3 || gammas.len() != values.len() {
        return invalid("Richardson fit needs at least three (γ, D_γ) pairs");
    }
    let fit = |q: f64| -> RichardsonFit {
        let n = gammas.len() as f64;
        let xs: Vec<f64> = gammas.iter().map(|g| g.powf(q)).collect();
        let sx: f64 = xs.iter().sum();
        let sy: f64 = values.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(values).map(|(x, y)| x * y).sum();
        let det = n * sxx - sx * sx;
        let (c, d0) = if det.abs() > 0.0 { ((n * sxy - sx * sy) / det, (sy * sxx - sx * sxy) / det) } else { (0.0, sy / n) };
        let rss: f64 = xs.iter().zip(values).map(|(x, y)| (d0 + c * x - y).powi(2)).sum();
        RichardsonFit { limit: d0, coefficient: c, rate: q, rms_residual: (rss / n).sqrt() }
    };
    let mut best = fit(0.25);
    let mut q = 0.25;
    while q <= 8.0 {
        let f = fit(q);
        if f.rms_residual < best.rms_residual {
            best = f;
        }
        q += 0.05;
    }
    let (mut a, mut b) = ((best.rate - 0.05).max(0.25), (best.rate + 0.05).min(8.0));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if fit(c).rms_residual < fit(d).rms_residual { b = d } else { a = c }
    }
    let refined = fit(0.5 * (a + b));
    Ok(if refined.rms_residual <= best.rms_residual { refined } else { best })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DGammaCurve {
    pub gammas: Vec<f64>,
    /// Snapshot mean of `D_γ`.
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub snapshots: usize,
    pub fit: Option<RichardsonFit>,
}

/// `D_γ` on a ladder `γ₁ > … > γ_m`, averaged over snapshots.
pub fn duchon_robert_d(snapshots: &[FlowSnapshot], gammas: &[f64]) -> Result<DGammaCurve> {
    if snapshots.is_empty() {
        return invalid("no snapshots");
    }
    if gammas.is_empty() || gammas.windows(2).any(|w| w[1] >= w[0]) {
        return invalid("γ ladder must be nonempty and strictly decreasing");
    }
    let g: WaveGrid = *snapshots[0].grid();
    let mollifiers: Vec<Mollifier> = gammas.iter().map(|&gm| Mollifier::new(g.dim(), gm, g.lambda())).collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(gammas.len());
    let mut stderr = Vec::with_capacity(gammas.len());
    for m in &mollifiers {
        let per: Vec<f64> = snapshots.iter().map(|s| d_gamma(&s.u, m)).collect::<Result<_>>()?;
        let n = per.len() as f64;
        let mean = per.iter().sum::<f64>() / n;
        let var = if per.len() > 1 { per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        values.push(mean);
        stderr.push((var / n).sqrt());
    }
    let fit = if gammas.len() >= 3 { Some(richardson_fit(gammas, &values)?) } else { None };
    Ok(DGammaCurve { gammas: gammas.to_vec(), values, stderr, snapshots: snapshots.len(), fit })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub nu: f64,
    pub eps: f64,
    pub eta: Option<f64>,
    /// Time average of `‖∇u‖²`.
    pub mean_grad_u_sq: f64,
    /// Time average of `‖∇ω‖²` (2D).
    pub mean_grad_omega_sq: Option<f64>,
    pub energy_dissipation: f64,
    pub enstrophy_dissipation: Option<f64>,
    pub d_gamma: Option<DGammaCurve>,
    /// Extrapolated `D`, or 0 when no ladder was evaluated.
    pub d_limit: f64,
    /// `|ν⟨‖∇u‖²⟩ + D − ε| / ε`.
    pub energy_closure_error: f64,
    /// `|ν⟨‖∇ω‖²⟩ − η| / η`.
    pub enstrophy_closure_error: Option<f64>,
    pub t_sample: f64,
    pub drift: f64,
    pub stationary: bool,
    pub normalization: String,
}

pub fn balance_report(stats: &TrajectoryStats, forcing: &ForcingSpec, d_gamma: Option<DGammaCurve>) -> Result<BalanceReport> {
    if stats.grid != *forcing.grid() {
        return invalid("trajectory and forcing grids differ");
    }
    let (eps, eta) = forcing.injection_rates();
    if !(eps > 0.0) {
        return invalid("balance closure needs a forcing with ε > 0");
    }
    let d_limit = d_gamma.as_ref().and_then(|c| c.fit.map(|f| f.limit).or(c.values.last().copied())).unwrap_or(0.0);
    let energy_dissipation = stats.nu * stats.mean.grad_u_sq;
    let enstrophy_dissipation = stats.nu * stats.mean.grad_omega_sq;
    let report = BalanceReport {
        nu: stats.nu,
        eps,
        eta,
        mean_grad_u_sq: stats.mean.grad_u_sq,
        mean_grad_omega_sq: Some(stats.mean.grad_omega_sq),
        energy_dissipation,
        enstrophy_dissipation: Some(enstrophy_dissipation),
        d_gamma,
        d_limit,
        energy_closure_error: (energy_dissipation + d_limit - eps).abs() / eps,
        enstrophy_closure_error: eta.map(|h| (enstrophy_dissipation - h).abs() / h),
        t_sample: stats.t_sample,
        drift: stats.drift,
        stationary: stats.stationary,
        normalization: "norms are torus averages (⨍dx); D_γ uses ⨍dx ∫dy".into(),
    };
    let finite = [report.energy_dissipation, report.d_limit, report.energy_closure_error].iter().all(|v| v.is_finite());
    if !finite {
        return Err(crate::error::Error::Unstable("non-finite balance entry".into()));
    }
    Ok(report)
}

/// Unforced energy ledger on a trace `(t, ‖u‖², ‖ω‖²)`: for each window of
/// `stride` trace intervals, `(t_mid, ½(‖u‖²(t₀) − ‖u‖²(t₁)), ν∫‖ω‖² dt)`.
/// In 2D `‖∇u‖² = ‖ω‖²`.
pub fn decay_ledger(trace: &[(f64, f64, f64)], nu: f64, stride: usize) -> Vec<(f64, f64, f64)> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    let mut i = 0;
    while i + stride < trace.len() {
        let (t0, u0, _) = trace[i];
        let (t1, u1, _) = trace[i + stride];
        let mut integral = 0.0;
        for w in trace[i..=i + stride].windows(2) {
            integral += 0.5 * (w[1].0 - w[0].0) * (w[0].2 + w[1].2);
        }
        out.push((0.5 * (t0 + t1), 0.5 * (u0 - u1), nu * integral));
        i += stride;
    }
    out
}
