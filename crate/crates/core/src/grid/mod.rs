//! Torus geometry, the wavenumber lattice `(2π/λ)ℤ^d`, spectral ↔ physical
//! transforms and the basic operators on Fourier coefficients.
//!
//! Coefficients are stored in FFT index order: along each axis index `i`
//! holds integer wavenumber `z = i` for `i < n/2` and `z = i − n` otherwise.
//! Index `n/2` is the unmatched Nyquist row and is kept at zero.
//!
//! Parseval: with the averaged forward transform, `‖f‖_λ² = Σ_k |f̂(k)|²`.
//! [`norm_sq`] is the only place this constant lives.

mod fft;
pub mod io;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
pub use fft::FftNd;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Periodic box `[0, λ)^d` sampled with `n` points per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveGrid {
    dim: usize,
    lambda: f64,
    n: usize,
}

impl WaveGrid {
    pub fn new(dim: usize, lambda: f64, n_axis: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return invalid(format!("dimension must be 2 or 3, got {dim}"));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return invalid(format!("torus size must be positive, got {lambda}"));
        }
        if n_axis < 2 || n_axis % 2 != 0 {
            return invalid(format!("n_axis must be even and >= 2, got {n_axis}"));
        }
        Ok(Self { dim, lambda, n: n_axis })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_axis(&self) -> usize {
        self.n
    }

    /// Number of lattice points (= physical samples) per component.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Lattice spacing `2π/λ`.
    pub fn dk(&self) -> f64 {
        2.0 * PI / self.lambda
    }

    /// Physical grid spacing `λ/n`.
    pub fn dx(&self) -> f64 {
        self.lambda / self.n as f64
    }

    pub fn axis_wavenumber(&self, i: usize) -> i64 {
        if i < self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    fn axis_index(&self, z: i64) -> Option<usize> {
        let h = (self.n / 2) as i64;
        if z <= -h || z >= h {
            return None;
        }
        Some(if z >= 0 { z as usize } else { (z + self.n as i64) as usize })
    }

    /// Integer lattice coordinates `z` of storage index `idx` (unused axes 0).
    pub fn lattice(&self, idx: usize) -> [i64; 3] {
        let mut z = [0i64; 3];
        let mut rem = idx;
        for a in (0..self.dim).rev() {
            z[a] = self.axis_wavenumber(rem % self.n);
            rem /= self.n;
        }
        z
    }

    /// Storage index of integer wavenumber `z`; `None` outside the resolved
    /// lattice (including the Nyquist row).
    pub fn index_of(&self, z: &[i64]) -> Option<usize> {
        if z.len() != self.dim {
            return None;
        }
        let mut idx = 0;
        for &za in z {
            idx = idx * self.n + self.axis_index(za)?;
        }
        Some(idx)
    }

    /// Wavevector `k = (2π/λ) z`.
    pub fn wavevector(&self, idx: usize) -> [f64; 3] {
        let z = self.lattice(idx);
        let dk = self.dk();
        [z[0] as f64 * dk, z[1] as f64 * dk, z[2] as f64 * dk]
    }

    pub fn k_sq(&self, idx: usize) -> f64 {
        let k = self.wavevector(idx);
        k[0] * k[0] + k[1] * k[1] + k[2] * k[2]
    }

    /// True on the unmatched Nyquist planes.
    pub fn is_nyquist(&self, idx: usize) -> bool {
        let h = (self.n / 2) as i64;
        self.lattice(idx)[..self.dim].iter().any(|&z| z == -h)
    }

    /// Storage index of `-k`, for non-Nyquist `idx`.
    pub fn negated(&self, idx: usize) -> usize {
        let mut out = 0;
        let mut rem = idx;
        let mut mul = 1;
        for _ in 0..self.dim {
            let i = rem % self.n;
            rem /= self.n;
            out += ((self.n - i) % self.n) * mul;
            mul *= self.n;
        }
        out
    }

    /// Physical position of sample `idx`.
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        let mut rem = idx;
        for a in (0..self.dim).rev() {
            x[a] = (rem % self.n) as f64 * self.dx();
            rem /= self.n;
        }
        x
    }

    /// Largest resolved `|k|` (excluding the Nyquist row).
    pub fn k_max(&self) -> f64 {
        let zmax = (self.n / 2 - 1) as f64;
        zmax * (self.dim as f64).sqrt() * self.dk()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Scalar,
    Velocity,
}

/// Fourier coefficients of a real field, component-major storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    grid: WaveGrid,
    kind: FieldKind,
    data: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: WaveGrid, kind: FieldKind) -> Self {
        let ncomp = components(&grid, kind);
        Self { grid, kind, data: vec![Complex64::default(); ncomp * grid.len()] }
    }

    pub fn from_data(grid: WaveGrid, kind: FieldKind, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != components(&grid, kind) * grid.len() {
            return invalid("coefficient count does not match grid and kind");
        }
        Ok(Self { grid, kind, data })
    }

    pub fn grid(&self) -> &WaveGrid {
        &self.grid
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn components(&self) -> usize {
        components(&self.grid, self.kind)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        let len = self.grid.len();
        &self.data[c * len..(c + 1) * len]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        let len = self.grid.len();
        &mut self.data[c * len..(c + 1) * len]
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    /// Coefficient vector at lattice point `idx`.
    pub fn at(&self, idx: usize) -> [Complex64; 3] {
        let mut v = [Complex64::default(); 3];
        for (c, slot) in v.iter_mut().enumerate().take(self.components()) {
            *slot = self.data[c * self.grid.len() + idx];
        }
        v
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.data {
            *c *= s;
        }
    }

    pub fn add_assign(&mut self, other: &SpectralField) {
        assert!(self.grid == other.grid && self.kind == other.kind);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Project onto real fields: `c(k) ← (c(k) + conj c(−k))/2`, Nyquist
    /// row zeroed.
    pub fn hermitian_symmetrize(&mut self) {
        let grid = self.grid;
        let len = grid.len();
        for c in 0..self.components() {
            let comp = &mut self.data[c * len..(c + 1) * len];
            hermitian_symmetrize_slice(&grid, comp);
        }
    }

    /// Largest `|c(k) − conj c(−k)|` relative to the field norm.
    pub fn hermitian_defect(&self) -> f64 {
        let len = self.grid.len();
        let mut worst: f64 = 0.0;
        for c in 0..self.components() {
            let comp = &self.data[c * len..(c + 1) * len];
            for idx in 0..len {
                if self.grid.is_nyquist(idx) {
                    worst = worst.max(comp[idx].norm());
                    continue;
                }
                let j = self.grid.negated(idx);
                worst = worst.max((comp[idx] - comp[j].conj()).norm());
            }
        }
        let scale = norm_sq(self).sqrt().max(f64::MIN_POSITIVE);
        worst / scale
    }

    pub fn set_mean_zero(&mut self) {
        let len = self.grid.len();
        for c in 0..self.components() {
            self.data[c * len] = Complex64::default();
        }
    }

    pub fn is_mean_zero(&self) -> bool {
        let len = self.grid.len();
        (0..self.components()).all(|c| self.data[c * len] == Complex64::default())
    }

    /// Largest `|k·û(k)| / (|k||û(k)|)` over non-zero modes; 0 for scalars.
    pub fn divergence_defect(&self) -> f64 {
        if self.kind == FieldKind::Scalar {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for idx in 1..self.grid.len() {
            let k = self.grid.wavevector(idx);
            let u = self.at(idx);
            let mut dot = Complex64::default();
            let mut mag = 0.0;
            for a in 0..self.grid.dim {
                dot += u[a] * k[a];
                mag += u[a].norm_sqr();
            }
            if mag > 0.0 {
                let rel = dot.norm() / (mag.sqrt() * self.grid.k_sq(idx).sqrt());
                worst = worst.max(rel);
            }
        }
        worst
    }
}

fn components(grid: &WaveGrid, kind: FieldKind) -> usize {
    match kind {
        FieldKind::Scalar => 1,
        FieldKind::Velocity => grid.dim,
    }
}

pub(crate) fn hermitian_symmetrize_slice(grid: &WaveGrid, comp: &mut [Complex64]) {
    for idx in 0..grid.len() {
        if grid.is_nyquist(idx) {
            comp[idx] = Complex64::default();
            continue;
        }
        let j = grid.negated(idx);
        if j < idx {
            continue;
        }
        if j == idx {
            comp[idx] = Complex64::new(comp[idx].re, 0.0);
        } else {
            let avg = 0.5 * (comp[idx] + comp[j].conj());
            comp[idx] = avg;
            comp[j] = avg.conj();
        }
    }
}

/// Real samples on the `n^d` grid, component-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalField {
    pub grid: WaveGrid,
    pub components: usize,
    pub data: Vec<f64>,
}

impl PhysicalField {
    pub fn component(&self, c: usize) -> &[f64] {
        let len = self.grid.len();
        &self.data[c * len..(c + 1) * len]
    }

    /// `⨍ |f|² dx` from samples.
    pub fn mean_square(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>() / self.grid.len() as f64
    }
}

/// Reusable transform engine for one grid.
pub struct Transformer {
    grid: WaveGrid,
    fft: FftNd,
    buf: Vec<Complex64>,
}

impl Transformer {
    pub fn new(grid: WaveGrid) -> Self {
        Self { grid, fft: FftNd::new(grid.n, grid.dim), buf: vec![Complex64::default(); grid.len()] }
    }

    pub fn grid(&self) -> &WaveGrid {
        &self.grid
    }

    /// `f(x_j) = Σ_k c(k) e^{ik·x_j}` for one component.
    pub fn to_physical_component(&mut self, coeffs: &[Complex64], out: &mut [f64]) {
        self.buf.copy_from_slice(coeffs);
        self.fft.inverse(&mut self.buf);
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b.re;
        }
    }

    /// Two real fields with one complex transform: returns `a` in `out_a`
    /// and `b` in `out_b`.
    pub fn to_physical_pair(&mut self, a: &[Complex64], b: &[Complex64], out_a: &mut [f64], out_b: &mut [f64]) {
        for ((slot, x), y) in self.buf.iter_mut().zip(a).zip(b) {
            *slot = x + I * y;
        }
        self.fft.inverse(&mut self.buf);
        for ((oa, ob), v) in out_a.iter_mut().zip(out_b.iter_mut()).zip(&self.buf) {
            *oa = v.re;
            *ob = v.im;
        }
    }

    /// Averaged forward transform of one real component, Hermitian-projected.
    pub fn to_spectral_component(&mut self, samples: &[f64], out: &mut [Complex64]) {
        let inv_len = 1.0 / self.grid.len() as f64;
        for (slot, &v) in self.buf.iter_mut().zip(samples) {
            *slot = Complex64::new(v, 0.0);
        }
        self.fft.forward(&mut self.buf);
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b * inv_len;
        }
        hermitian_symmetrize_slice(&self.grid, out);
    }

    /// Raw inverse transform of arbitrary complex coefficients.
    pub fn inverse_raw(&mut self, data: &mut [Complex64]) {
        self.fft.inverse(data);
    }

    pub fn physical(&mut self, f: &SpectralField) -> PhysicalField {
        assert_eq!(f.grid, self.grid);
        let len = self.grid.len();
        let nc = f.components();
        let mut data = vec![0.0; nc * len];
        let mut c = 0;
        while c < nc {
            if c + 1 < nc {
                let (lo, hi) = data[c * len..(c + 2) * len].split_at_mut(len);
                self.to_physical_pair(f.component(c), f.component(c + 1), lo, hi);
                c += 2;
            } else {
                self.to_physical_component(f.component(c), &mut data[c * len..(c + 1) * len]);
                c += 1;
            }
        }
        PhysicalField { grid: self.grid, components: nc, data }
    }

    pub fn spectral(&mut self, p: &PhysicalField, kind: FieldKind) -> Result<SpectralField> {
        let mut f = SpectralField::zeros(p.grid, kind);
        if f.components() != p.components || p.grid != self.grid {
            return invalid("physical samples do not match grid/kind");
        }
        let len = self.grid.len();
        for c in 0..p.components {
            let src = &p.data[c * len..(c + 1) * len];
            self.to_spectral_component(src, f.component_mut(c));
        }
        Ok(f)
    }
}

/// Real samples of `f` on the grid.
pub fn transform_to_physical(f: &SpectralField) -> PhysicalField {
    Transformer::new(f.grid).physical(f)
}

/// Averaged Fourier coefficients of real samples.
pub fn transform_to_spectral(p: &PhysicalField, kind: FieldKind) -> Result<SpectralField> {
    Transformer::new(p.grid).spectral(p, kind)
}

/// `‖f‖_λ² = ⨍|f|² dx = Σ_k |f̂(k)|²`.
pub fn norm_sq(f: &SpectralField) -> f64 {
    f.data.iter().map(|c| c.norm_sqr()).sum()
}

/// `‖∇f‖_λ² = Σ_k |k|² |f̂(k)|²`.
pub fn grad_norm_sq(f: &SpectralField) -> f64 {
    let len = f.grid.len();
    let mut s = 0.0;
    for c in 0..f.components() {
        for (idx, v) in f.component(c).iter().enumerate() {
            s += f.grid.k_sq(idx) * v.norm_sqr();
        }
    }
    let _ = len;
    s
}

/// 2D Biot–Savart: velocity whose curl is ω.
///
/// Uses `û(k) = −i k^⊥ ω̂(k)/|k|²` with `k^⊥ = (−k₂, k₁)`, the sign for which
/// `∂₁u₂ − ∂₂u₁ = ω`.
pub fn biot_savart(omega: &SpectralField) -> Result<SpectralField> {
    let g = omega.grid;
    if g.dim != 2 || omega.kind != FieldKind::Scalar {
        return invalid("Biot–Savart needs a 2D scalar vorticity");
    }
    if omega.data[0] != Complex64::default() {
        return invalid("vorticity must be mean-zero (k = 0 mode is not invertible)");
    }
    let mut u = SpectralField::zeros(g, FieldKind::Velocity);
    let len = g.len();
    for idx in 1..len {
        let k = g.wavevector(idx);
        let k2 = k[0] * k[0] + k[1] * k[1];
        let w = omega.data[idx] / k2;
        u.data[idx] = I * k[1] * w;
        u.data[len + idx] = -I * k[0] * w;
    }
    Ok(u)
}

/// Scalar curl `∂₁u₂ − ∂₂u₁` of a 2D velocity.
pub fn curl_2d(u: &SpectralField) -> Result<SpectralField> {
    let g = u.grid;
    if g.dim != 2 || u.kind != FieldKind::Velocity {
        return invalid("curl_2d needs a 2D velocity field");
    }
    let len = g.len();
    let mut w = SpectralField::zeros(g, FieldKind::Scalar);
    for idx in 0..len {
        let k = g.wavevector(idx);
        w.data[idx] = I * (k[0] * u.data[len + idx] - k[1] * u.data[idx]);
    }
    Ok(w)
}

/// Leray projection `û ← û − k(k·û)/|k|²`; the `k = 0` mode passes through.
pub fn leray_project(v: &SpectralField) -> Result<SpectralField> {
    if v.kind != FieldKind::Velocity {
        return invalid("Leray projection needs a velocity field");
    }
    let g = v.grid;
    let len = g.len();
    let d = g.dim;
    let mut out = v.clone();
    for idx in 1..len {
        let k = g.wavevector(idx);
        let k2 = g.k_sq(idx);
        let mut dot = Complex64::default();
        for a in 0..d {
            dot += v.data[a * len + idx] * k[a];
        }
        for a in 0..d {
            out.data[a * len + idx] -= dot * (k[a] / k2);
        }
    }
    Ok(out)
}

/// Exact translation `T_y f(x) = f(x + y)`: `c(k) ← c(k) e^{ik·y}`.
pub fn spectral_shift(f: &SpectralField, y: &[f64]) -> SpectralField {
    let mut out = f.clone();
    shift_in_place(&mut out, y);
    out
}

pub fn shift_in_place(f: &mut SpectralField, y: &[f64]) {
    let g = f.grid;
    let len = g.len();
    let phases = shift_phases(&g, y);
    for c in 0..f.components() {
        for (v, p) in f.data[c * len..(c + 1) * len].iter_mut().zip(&phases) {
            *v *= p;
        }
    }
}

/// `e^{ik·y}` for every lattice point, built from per-axis factors so the
/// phase of each axis is computed once.
pub fn shift_phases(g: &WaveGrid, y: &[f64]) -> Vec<Complex64> {
    let n = g.n;
    let dk = g.dk();
    let axis: Vec<Vec<Complex64>> = (0..g.dim)
        .map(|a| {
            (0..n)
                .map(|i| {
                    let z = g.axis_wavenumber(i) as f64;
                    Complex64::from_polar(1.0, z * dk * y[a])
                })
                .collect()
        })
        .collect();
    let mut out = vec![Complex64::new(1.0, 0.0); g.len()];
    for (idx, slot) in out.iter_mut().enumerate() {
        let mut rem = idx;
        let mut p = Complex64::new(1.0, 0.0);
        for a in (0..g.dim).rev() {
            p *= axis[a][rem % n];
            rem /= n;
        }
        *slot = p;
    }
    out
}

/// Per-lattice-point nonnegative density `E(k)` (energy or enstrophy).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellSpectrum {
    pub grid: WaveGrid,
    pub density: Vec<f64>,
}

impl ShellSpectrum {
    pub fn zeros(grid: WaveGrid) -> Self {
        Self { grid, density: vec![0.0; grid.len()] }
    }

    /// `|f̂(k)|²` summed over components.
    pub fn from_field(f: &SpectralField) -> Self {
        let mut s = Self::zeros(f.grid);
        s.accumulate(f, 1.0);
        s
    }

    pub fn accumulate(&mut self, f: &SpectralField, weight: f64) {
        assert_eq!(self.grid, f.grid);
        let len = self.grid.len();
        for c in 0..f.components() {
            for (d, v) in self.density.iter_mut().zip(&f.data[c * len..(c + 1) * len]) {
                *d += weight * v.norm_sqr();
            }
        }
    }

    pub fn total(&self) -> f64 {
        self.density.iter().sum()
    }

    /// Densities multiplied by `|k|^{2p}`.
    pub fn weighted(&self, p: i32) -> Self {
        let density = self
            .density
            .iter()
            .enumerate()
            .map(|(idx, &e)| if idx == 0 && p < 0 { 0.0 } else { e * self.grid.k_sq(idx).powi(p) })
            .collect();
        Self { grid: self.grid, density }
    }

    /// Shell sums over half-open bins `[m·dk, (m+1)·dk)`.
    pub fn shells(&self) -> Vec<f64> {
        let dk = self.grid.dk();
        let nbins = (self.grid.k_max() / dk).floor() as usize + 1;
        let mut out = vec![0.0; nbins];
        for (idx, &e) in self.density.iter().enumerate() {
            let m = (self.grid.k_sq(idx).sqrt() / dk + 1e-9).floor() as usize;
            out[m.min(nbins - 1)] += e;
        }
        out
    }

    /// Radial mass points `(|k|, density)` with zero entries dropped.
    pub fn radial(&self) -> RadialSpectrum {
        let mut modes: Vec<(f64, f64)> = self
            .density
            .iter()
            .enumerate()
            .filter(|(_, &e)| e != 0.0)
            .map(|(idx, &e)| (self.grid.k_sq(idx).sqrt(), e))
            .collect();
        modes.sort_by(|a, b| a.0.total_cmp(&b.0));
        RadialSpectrum::merged(self.grid.dim, modes)
    }
}

/// Isotropic spectrum as point masses `(|k|, w)`; every spectral sum in the
/// diagnostics depends on `k` only through `|k|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialSpectrum {
    pub dim: usize,
    pub modes: Vec<(f64, f64)>,
}

impl RadialSpectrum {
    pub fn new(dim: usize, mut modes: Vec<(f64, f64)>) -> Self {
        modes.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self::merged(dim, modes)
    }

    fn merged(dim: usize, sorted: Vec<(f64, f64)>) -> Self {
        let mut modes: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
        for (k, w) in sorted {
            match modes.last_mut() {
                Some(last) if (last.0 - k).abs() <= 1e-12 * k.max(1.0) => last.1 += w,
                _ => modes.push((k, w)),
            }
        }
        Self { dim, modes }
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, modes: Vec::new() }
    }

    pub fn total(&self) -> f64 {
        self.modes.iter().map(|m| m.1).sum()
    }

    /// Weights multiplied by `|k|^{2p}`.
    pub fn weighted(&self, p: i32) -> Self {
        let modes = self
            .modes
            .iter()
            .map(|&(k, w)| (k, if k == 0.0 && p < 0 { 0.0 } else { w * k.powi(2 * p) }))
            .collect();
        Self { dim: self.dim, modes }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { dim: self.dim, modes: self.modes.iter().map(|&(k, w)| (k, w * s)).collect() }
    }

    pub fn concat(&self, other: &RadialSpectrum) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut modes = self.modes.clone();
        modes.extend_from_slice(&other.modes);
        Self::new(self.dim, modes)
    }

    /// `Σ_{|k| ≥ cut} w`.
    pub fn mass_above(&self, cut: f64) -> f64 {
        self.modes.iter().filter(|m| m.0 >= cut).map(|m| m.1).sum()
    }

    /// `Σ_{|k| ≤ cut} w`.
    pub fn mass_below(&self, cut: f64) -> f64 {
        self.modes.iter().filter(|m| m.0 <= cut).map(|m| m.1).sum()
    }
}

/// Random real field with `|f̂(k)|` ∝ `amplitude(|k|)` for `0 < |z|_∞ ≤ zmax`,
/// Gaussian coefficients, mean zero; velocity fields are Leray-projected.
pub fn synthetic_field<R: Rng>(
    grid: WaveGrid,
    kind: FieldKind,
    zmax: i64,
    amplitude: impl Fn(f64) -> f64,
    rng: &mut R,
) -> SpectralField {
    let mut f = SpectralField::zeros(grid, kind);
    let len = grid.len();
    for c in 0..f.components() {
        for idx in 1..len {
            let z = grid.lattice(idx);
            if z.iter().any(|v| v.abs() > zmax) || grid.is_nyquist(idx) {
                continue;
            }
            let a = amplitude(grid.k_sq(idx).sqrt());
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            f.data[c * len + idx] = Complex64::new(re, im) * a;
        }
    }
    f.hermitian_symmetrize();
    if kind == FieldKind::Velocity {
        f = leray_project(&f).expect("velocity kind");
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g2(n: usize) -> WaveGrid {
        WaveGrid::new(2, 2.0 * PI, n).unwrap()
    }

    #[test]
    fn lattice_round_trip() {
        let g = WaveGrid::new(3, 3.0, 6).unwrap();
        for idx in 0..g.len() {
            if g.is_nyquist(idx) {
                continue;
            }
            let z = g.lattice(idx);
            assert_eq!(g.index_of(&z[..3]), Some(idx));
            let nz = g.lattice(g.negated(idx));
            assert_eq!([-z[0], -z[1], -z[2]], nz);
        }
    }

    #[test]
    fn single_mode_inversion() {
        let g = WaveGrid::new(2, 3.0, 8).unwrap();
        let mut f = SpectralField::zeros(g, FieldKind::Scalar);
        let i = g.index_of(&[2, -1]).unwrap();
        let j = g.index_of(&[-2, 1]).unwrap();
        f.data_mut()[i] = Complex64::new(1.0, 0.0);
        f.data_mut()[j] = Complex64::new(1.0, 0.0);
        let p = transform_to_physical(&f);
        for idx in 0..g.len() {
            let x = g.position(idx);
            let phase = g.dk() * (2.0 * x[0] - x[1]);
            assert!((p.data[idx] - 2.0 * phase.cos()).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_field_gives_zero_samples() {
        let p = transform_to_physical(&SpectralField::zeros(g2(8), FieldKind::Velocity));
        assert!(p.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_and_parseval() {
        let g = g2(16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = synthetic_field(g, FieldKind::Velocity, 7, |k| 1.0 / (1.0 + k), &mut rng);
        let p = transform_to_physical(&f);
        let back = transform_to_spectral(&p, FieldKind::Velocity).unwrap();
        let err: f64 = f.data().iter().zip(back.data()).map(|(a, b)| (a - b).norm_sqr()).sum();
        assert!(err.sqrt() < 1e-12 * norm_sq(&f).sqrt());
        assert!((p.mean_square() - norm_sq(&f)).abs() < 1e-12 * norm_sq(&f));
    }

    #[test]
    fn biot_savart_single_mode() {
        let g = WaveGrid::new(2, 5.0, 8).unwrap();
        let mut w = SpectralField::zeros(g, FieldKind::Scalar);
        let i = g.index_of(&[1, 0]).unwrap();
        let j = g.index_of(&[-1, 0]).unwrap();
        w.data_mut()[i] = Complex64::new(1.0, 0.0);
        w.data_mut()[j] = Complex64::new(1.0, 0.0);
        let u = biot_savart(&w).unwrap();
        let k = g.dk();
        // k^⊥ = (0, k): û = −i (0, k)/k²
        let want = -I / k;
        assert!(u.component(0)[i].norm() < 1e-15);
        assert!((u.component(1)[i] - want).norm() < 1e-15);
        let back = curl_2d(&u).unwrap();
        assert!((back.data()[i] - w.data()[i]).norm() < 1e-14);
    }

    #[test]
    fn biot_savart_rejects_mean() {
        let g = g2(8);
        let mut w = SpectralField::zeros(g, FieldKind::Scalar);
        w.data_mut()[0] = Complex64::new(1.0, 0.0);
        assert!(biot_savart(&w).is_err());
    }

    #[test]
    fn biot_savart_random_identities() {
        let g = g2(32);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = synthetic_field(g, FieldKind::Scalar, 15, |_| 1.0, &mut rng);
        let u = biot_savart(&w).unwrap();
        assert!(u.divergence_defect() < 1e-14);
        let back = curl_2d(&u).unwrap();
        let err: f64 = back.data().iter().zip(w.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
        for idx in 1..g.len() {
            let k2 = g.k_sq(idx);
            let uu = u.at(idx)[0].norm_sqr() + u.at(idx)[1].norm_sqr();
            let ww = w.data()[idx].norm_sqr();
            assert!((k2 * k2 * uu - k2 * ww).abs() <= 1e-12 * (k2 * ww).max(1e-300));
        }
    }

    #[test]
    fn leray_examples() {
        let g = WaveGrid::new(3, 2.0, 6).unwrap();
        let mut grad = SpectralField::zeros(g, FieldKind::Velocity);
        let len = g.len();
        for idx in 0..len {
            if g.is_nyquist(idx) {
                continue;
            }
            let k = g.wavevector(idx);
            for a in 0..3 {
                // i k φ̂ with φ̂ real symmetric gives a real gradient field
                grad.data_mut()[a * len + idx] = I * k[a];
            }
        }
        let p = leray_project(&grad).unwrap();
        assert!(norm_sq(&p) < 1e-24);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut v = synthetic_field(g, FieldKind::Scalar, 2, |_| 1.0, &mut rng).into_data();
        v.extend(synthetic_field(g, FieldKind::Scalar, 2, |_| 1.0, &mut rng).into_data());
        v.extend(synthetic_field(g, FieldKind::Scalar, 2, |_| 1.0, &mut rng).into_data());
        let v = SpectralField::from_data(g, FieldKind::Velocity, v).unwrap();
        let p1 = leray_project(&v).unwrap();
        assert!(p1.divergence_defect() < 1e-14);
        let p2 = leray_project(&p1).unwrap();
        let diff: f64 = p1.data().iter().zip(p2.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-14);
    }

    #[test]
    fn shift_examples() {
        let g = WaveGrid::new(2, 3.0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = synthetic_field(g, FieldKind::Scalar, 3, |_| 1.0, &mut rng);
        assert_eq!(spectral_shift(&f, &[0.0, 0.0]), f);
        let per = spectral_shift(&f, &[3.0, 0.0]);
        for (a, b) in per.data().iter().zip(f.data()) {
            assert!((a - b).norm() < 1e-13);
        }
        // integer-grid shift equals index rotation of samples
        let (s0, s1) = (3usize, 5usize);
        let y = [s0 as f64 * g.dx(), s1 as f64 * g.dx()];
        let shifted = transform_to_physical(&spectral_shift(&f, &y));
        let base = transform_to_physical(&f);
        let n = g.n_axis();
        for i in 0..n {
            for j in 0..n {
                let want = base.data[((i + s0) % n) * n + (j + s1) % n];
                assert!((shifted.data[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shell_sums_match_lattice_sum() {
        let g = g2(16);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = synthetic_field(g, FieldKind::Velocity, 7, |k| k.powf(-1.5), &mut rng);
        let s = ShellSpectrum::from_field(&f);
        let shells: f64 = s.shells().iter().sum();
        assert!((shells - s.total()).abs() < 1e-12 * s.total());
        assert!((s.radial().total() - s.total()).abs() < 1e-12 * s.total());
    }
}
