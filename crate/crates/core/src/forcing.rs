//! Gaussian forcing `Σ_j f_j dW^j`, white in time and coloured in space.
//!
//! Each `f_j` is a finite list of Fourier modes; the conjugate mode at `−z`
//! is implied, so listed modes must not contain both `z` and `−z`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{FieldKind, RadialSpectrum, SpectralField, WaveGrid};
use crate::rng;

/// One Fourier mode of a forcing function: integer wavenumber and velocity
/// amplitude vector (first `d` entries used).
#[derive(Clone, Debug, PartialEq)]
pub struct ForcingMode {
    pub z: [i64; 3],
    pub amp: [Complex64; 3],
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ForcingFunction {
    pub modes: Vec<ForcingMode>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForcingSpec {
    grid: WaveGrid,
    functions: Vec<ForcingFunction>,
    seed: u64,
}

/// Storage entries `(j, lattice index, coefficient)` with conjugates
/// expanded.
pub type SparseEntries = Vec<(usize, usize, Complex64)>;

impl ForcingSpec {
    pub fn new(grid: WaveGrid, functions: Vec<ForcingFunction>, seed: u64) -> Result<Self> {
        let d = grid.dim();
        for (j, f) in functions.iter().enumerate() {
            let mut seen: Vec<[i64; 3]> = Vec::new();
            for m in &f.modes {
                let z = &m.z[..d];
                let Some(idx) = grid.index_of(z) else {
                    return invalid(format!("forcing mode {z:?} of f_{j} is not resolved by the grid"));
                };
                let k = grid.wavevector(idx);
                let dot: Complex64 = (0..d).map(|a| m.amp[a] * k[a]).sum();
                let mag: f64 = (0..d).map(|a| m.amp[a].norm_sqr()).sum::<f64>().sqrt();
                if dot.norm() > 1e-12 * mag * grid.k_sq(idx).sqrt() {
                    return invalid(format!("forcing mode {z:?} of f_{j} is not divergence-free"));
                }
                if idx == 0 && (0..d).any(|a| m.amp[a].im != 0.0) {
                    return invalid(format!("mean mode of f_{j} must be real"));
                }
                let neg = [-m.z[0], -m.z[1], -m.z[2]];
                if seen.contains(&m.z) || (idx != 0 && seen.contains(&neg)) {
                    return invalid(format!("mode {z:?} of f_{j} listed twice (conjugates are implied)"));
                }
                seen.push(m.z);
            }
        }
        Ok(Self { grid, functions, seed })
    }

    pub fn empty(grid: WaveGrid) -> Self {
        Self { grid, functions: Vec::new(), seed: 0 }
    }

    /// Default shell forcing: every lattice mode with `lo ≤ |z| ≤ hi` (one
    /// representative per `±z` pair) carries two functions of amplitude
    /// `amplitude` with fixed random phases `φ` and `φ + π/2` drawn from
    /// `seed`. Polarization is `k̂^⊥` in 2D; in 3D each of two orthonormal
    /// transverse directions gets its own pair.
    pub fn shell(grid: WaveGrid, lo: f64, hi: f64, amplitude: f64, seed: u64) -> Result<Self> {
        if !(lo > 0.0 && hi >= lo) {
            return invalid("shell forcing needs 0 < lo <= hi");
        }
        let d = grid.dim();
        let r = hi.floor() as i64;
        let mut phase_rng = rng::stream(seed, u64::MAX);
        let mut functions = Vec::new();
        let z2_range = if d == 3 { -r..=r } else { 0..=0 };
        for z0 in 0..=r {
            for z1 in -r..=r {
                for z2 in z2_range.clone() {
                    let z = [z0, z1, z2];
                    if !is_representative(&z) {
                        continue;
                    }
                    let norm = ((z0 * z0 + z1 * z1 + z2 * z2) as f64).sqrt();
                    if norm < lo - 1e-12 || norm > hi + 1e-12 {
                        continue;
                    }
                    if grid.index_of(&z[..d]).is_none() {
                        return invalid(format!("shell mode {z:?} exceeds grid resolution"));
                    }
                    for pol in transverse_basis(&z, d) {
                        let phi = 2.0 * PI * phase_rng.random::<f64>();
                        for shift in [0.0, 0.5 * PI] {
                            let c = Complex64::from_polar(amplitude, phi + shift);
                            let amp = [c * pol[0], c * pol[1], c * pol[2]];
                            functions.push(ForcingFunction { modes: vec![ForcingMode { z, amp }] });
                        }
                    }
                }
            }
        }
        Self::new(grid, functions, seed)
    }

    /// Same spec with amplitudes rescaled so that `ε = eps`.
    pub fn with_injection_rate(mut self, eps: f64) -> Result<Self> {
        let (cur, _) = self.injection_rates();
        if cur <= 0.0 {
            return invalid("cannot rescale a forcing with zero injection rate");
        }
        let s = (eps / cur).sqrt();
        for f in &mut self.functions {
            for m in &mut f.modes {
                for a in &mut m.amp {
                    *a *= s;
                }
            }
        }
        Ok(self)
    }

    /// Same functions, different noise seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn grid(&self) -> &WaveGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn functions(&self) -> &[ForcingFunction] {
        &self.functions
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn is_mean_zero(&self) -> bool {
        self.functions.iter().all(|f| f.modes.iter().all(|m| m.z.iter().any(|&v| v != 0)))
    }

    /// `[min |k|, max |k|]` over the populated modes.
    pub fn band(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for (_, idx, _) in self.velocity_entries() {
            let k = self.grid.k_sq(idx).sqrt();
            lo = lo.min(k);
            hi = hi.max(k);
        }
        (lo, hi)
    }

    /// Velocity coefficients `(j, idx, component, f̂_j(k)_c)` incl. conjugates.
    fn velocity_components(&self) -> Vec<(usize, usize, usize, Complex64)> {
        let d = self.grid.dim();
        let mut out = Vec::new();
        for (j, f) in self.functions.iter().enumerate() {
            for m in &f.modes {
                let idx = self.grid.index_of(&m.z[..d]).expect("validated");
                for c in 0..d {
                    out.push((j, idx, c, m.amp[c]));
                    if idx != 0 {
                        out.push((j, self.grid.negated(idx), c, m.amp[c].conj()));
                    }
                }
            }
        }
        out
    }

    /// `(j, idx, |f̂_j(k)|)`-style entries: one per lattice point, carrying
    /// the first component (used only for iteration over support).
    fn velocity_entries(&self) -> SparseEntries {
        self.velocity_components().into_iter().filter(|e| e.2 == 0).map(|e| (e.0, e.1, e.3)).collect()
    }

    /// 2D vorticity coefficients `curl f̂_j(k) = i(k₁f̂₂ − k₂f̂₁)` incl. conjugates.
    pub fn vorticity_entries(&self) -> Result<SparseEntries> {
        if self.grid.dim() != 2 {
            return invalid("vorticity forcing is defined for d = 2 only");
        }
        let i = Complex64::new(0.0, 1.0);
        let mut out = Vec::new();
        for (j, f) in self.functions.iter().enumerate() {
            for m in &f.modes {
                let idx = self.grid.index_of(&m.z[..2]).expect("validated");
                let k = self.grid.wavevector(idx);
                let w = i * (k[0] * m.amp[1] - k[1] * m.amp[0]);
                out.push((j, idx, w));
                if idx != 0 {
                    out.push((j, self.grid.negated(idx), w.conj()));
                }
            }
        }
        Ok(out)
    }

    /// `f_j` as a velocity field.
    pub fn function_field(&self, j: usize) -> SpectralField {
        let mut f = SpectralField::zeros(self.grid, FieldKind::Velocity);
        let len = self.grid.len();
        for (jj, idx, c, v) in self.velocity_components() {
            if jj == j {
                f.data_mut()[c * len + idx] += v;
            }
        }
        f
    }

    /// `ε = ½Σ_j‖f_j‖_λ²` and, in 2D, `η = ½Σ_j‖curl f_j‖_λ²`.
    pub fn injection_rates(&self) -> (f64, Option<f64>) {
        let eps = 0.5 * self.velocity_components().iter().map(|e| e.3.norm_sqr()).sum::<f64>();
        let eta = self
            .vorticity_entries()
            .ok()
            .map(|v| 0.5 * v.iter().map(|e| e.2.norm_sqr()).sum::<f64>());
        (eps, eta)
    }

    /// `Σ_j ‖∇³f_j‖_λ²`, the smoothness bound of the forcing assumption.
    pub fn smoothness_bound(&self) -> f64 {
        self.velocity_components().iter().map(|e| self.grid.k_sq(e.1).powi(3) * e.3.norm_sqr()).sum()
    }

    /// Radial weights `½Σ_j|f̂_j(k)|²`, the spectrum of `a_vel` and `a_vel^∥`.
    pub fn velocity_spectrum(&self) -> RadialSpectrum {
        let modes = self
            .velocity_components()
            .iter()
            .map(|e| (self.grid.k_sq(e.1).sqrt(), 0.5 * e.3.norm_sqr()))
            .collect();
        RadialSpectrum::new(self.grid.dim(), modes)
    }

    /// Radial weights `½Σ_j|curl f̂_j(k)|²`, the spectrum of `a_vor` (2D).
    pub fn vorticity_spectrum(&self) -> Result<RadialSpectrum> {
        let modes = self
            .vorticity_entries()?
            .iter()
            .map(|e| (self.grid.k_sq(e.1).sqrt(), 0.5 * e.2.norm_sqr()))
            .collect();
        Ok(RadialSpectrum::new(2, modes))
    }

    /// Velocity increment `Σ_j f_j ξ_j √dt`, `ξ_j` keyed by `(seed, j, step)`.
    pub fn sample_increment(&self, dt: f64, step: u64) -> SpectralField {
        let mut f = SpectralField::zeros(self.grid, FieldKind::Velocity);
        let len = self.grid.len();
        let xi = self.noise(dt, step);
        for (j, idx, c, v) in self.velocity_components() {
            f.data_mut()[c * len + idx] += v * xi[j];
        }
        f
    }

    /// Vorticity increment `Σ_j curl f_j ξ_j √dt` (2D), same draws as
    /// [`Self::sample_increment`].
    pub fn sample_vorticity_increment(&self, dt: f64, step: u64) -> Result<SpectralField> {
        let entries = self.vorticity_entries()?;
        let mut f = SpectralField::zeros(self.grid, FieldKind::Scalar);
        let xi = self.noise(dt, step);
        for (j, idx, v) in entries {
            f.data_mut()[idx] += v * xi[j];
        }
        Ok(f)
    }

    /// `ξ_j √dt` for every `j` at `step`.
    pub fn noise(&self, dt: f64, step: u64) -> Vec<f64> {
        let s = dt.sqrt();
        (0..self.functions.len()).map(|j| s * rng::normal_at(self.seed, j as u64, step)).collect()
    }
}

fn is_representative(z: &[i64; 3]) -> bool {
    for &v in z {
        if v != 0 {
            return v > 0;
        }
    }
    false
}

/// Unit vectors orthogonal to `z` (one in 2D, two in 3D).
fn transverse_basis(z: &[i64; 3], d: usize) -> Vec<[f64; 3]> {
    let k = [z[0] as f64, z[1] as f64, z[2] as f64];
    let kn = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
    if d == 2 {
        return vec![[-k[1] / kn, k[0] / kn, 0.0]];
    }
    let khat = [k[0] / kn, k[1] / kn, k[2] / kn];
    let helper = if khat[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let dot = helper[0] * khat[0] + helper[1] * khat[1] + helper[2] * khat[2];
    let mut e1 = [helper[0] - dot * khat[0], helper[1] - dot * khat[1], helper[2] - dot * khat[2]];
    let n1 = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    for v in &mut e1 {
        *v /= n1;
    }
    let e2 = [
        khat[1] * e1[2] - khat[2] * e1[1],
        khat[2] * e1[0] - khat[0] * e1[2],
        khat[0] * e1[1] - khat[1] * e1[0],
    ];
    vec![e1, e2]
}

/// Forcing as written in a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ForcingConfig {
    /// Default generator; `epsilon`, when given, overrides `amplitude`.
    Shell {
        shell_lo: f64,
        shell_hi: f64,
        #[serde(default = "one")]
        amplitude: f64,
        epsilon: Option<f64>,
        seed: u64,
    },
    /// Explicit list; each entry of `functions` is one `f_j`.
    Modes { functions: Vec<Vec<ModeEntry>>, seed: u64 },
}

fn one() -> f64 {
    1.0
}

/// `k` is the integer wavenumber; in 2D `amplitude = [re, im]` multiplies
/// `k̂^⊥`, in 3D `vector` gives the complex amplitude per component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeEntry {
    pub k: Vec<i64>,
    #[serde(default)]
    pub amplitude: Option<[f64; 2]>,
    #[serde(default)]
    pub vector: Option<Vec<[f64; 2]>>,
}

impl ForcingConfig {
    pub fn build(&self, grid: WaveGrid) -> Result<ForcingSpec> {
        match self {
            ForcingConfig::Shell { shell_lo, shell_hi, amplitude, epsilon, seed } => {
                let spec = ForcingSpec::shell(grid, *shell_lo, *shell_hi, *amplitude, *seed)?;
                match epsilon {
                    Some(e) => spec.with_injection_rate(*e),
                    None => Ok(spec),
                }
            }
            ForcingConfig::Modes { functions, seed } => {
                let d = grid.dim();
                let mut out = Vec::new();
                for entries in functions {
                    let mut modes = Vec::new();
                    for e in entries {
                        if e.k.len() != d {
                            return invalid(format!("mode {:?} does not have {d} components", e.k));
                        }
                        let mut z = [0i64; 3];
                        z[..d].copy_from_slice(&e.k);
                        let amp = match (&e.amplitude, &e.vector) {
                            (Some(a), None) if d == 2 => {
                                let c = Complex64::new(a[0], a[1]);
                                let pol = transverse_basis(&z, 2)[0];
                                if z == [0; 3] {
                                    return invalid("mean mode needs an explicit vector amplitude");
                                }
                                [c * pol[0], c * pol[1], Complex64::default()]
                            }
                            (None, Some(v)) if v.len() == d => {
                                let mut amp = [Complex64::default(); 3];
                                for (slot, c) in amp.iter_mut().zip(v) {
                                    *slot = Complex64::new(c[0], c[1]);
                                }
                                amp
                            }
                            _ => return invalid(format!("mode {:?}: give `amplitude` (2D) or a `vector` of length {d}", e.k)),
                        };
                        modes.push(ForcingMode { z, amp });
                    }
                    out.push(ForcingFunction { modes });
                }
                ForcingSpec::new(grid, out, *seed)
            }
        }
    }
}
