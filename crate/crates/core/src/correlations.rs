//! Third-order structure functions and two-point correlations as functions
//! of the separation `ℓ`.
//!
//! Structure functions are evaluated in physical space from exact spectral
//! shifts `T_{ℓn}`, averaged over `x`, then over a sphere rule in `n`, then
//! over snapshots. Correlations are evaluated from radial spectra with the
//! sphere-averaged kernels, so their `ℓ`-derivatives are analytic.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::forcing::ForcingSpec;
use crate::grid::{biot_savart, curl_2d, FftNd, FieldKind, RadialSpectrum, ShellSpectrum, SpectralField, WaveGrid};
use crate::sphere::{KernelSeries, SphereRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    SVel,
    SVelPar,
    SVor,
}

impl StructureKind {
    pub const ALL: [StructureKind; 3] = [StructureKind::SVel, StructureKind::SVelPar, StructureKind::SVor];

    pub fn name(&self) -> &'static str {
        match self {
            StructureKind::SVel => "s_vel",
            StructureKind::SVelPar => "s_vel_par",
            StructureKind::SVor => "s_vor",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    GammaVel,
    GammaVelPar,
    GammaVor,
    AVel,
    AVelPar,
    AVor,
}

impl CorrelationKind {
    pub fn longitudinal(&self) -> bool {
        matches!(self, CorrelationKind::GammaVelPar | CorrelationKind::AVelPar)
    }

    pub fn name(&self) -> &'static str {
        match self {
            CorrelationKind::GammaVel => "gamma_vel",
            CorrelationKind::GammaVelPar => "gamma_vel_par",
            CorrelationKind::GammaVor => "gamma_vor",
            CorrelationKind::AVel => "a_vel",
            CorrelationKind::AVelPar => "a_vel_par",
            CorrelationKind::AVor => "a_vor",
        }
    }
}

/// How many sphere nodes to use at each separation.
#[derive(Clone, Debug)]
pub enum NodeRule {
    /// The same rule at every `ℓ`.
    Fixed(SphereRule),
    /// [`SphereRule::for_bandwidth`] at `x = ℓ·k_max` of the data, never
    /// fewer than `min_nodes`.
    Bandwidth { min_nodes: usize },
}

impl Default for NodeRule {
    fn default() -> Self {
        NodeRule::Bandwidth { min_nodes: 64 }
    }
}

impl NodeRule {
    fn rule(&self, d: usize, x: f64) -> SphereRule {
        match self {
            NodeRule::Fixed(r) => r.clone(),
            NodeRule::Bandwidth { min_nodes } => SphereRule::for_bandwidth(d, x, *min_nodes),
        }
    }
}

/// One sample of the flow: velocity and, in 2D, vorticity.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSnapshot {
    pub u: SpectralField,
    pub omega: Option<SpectralField>,
}

impl FlowSnapshot {
    pub fn from_vorticity(omega: SpectralField) -> Result<Self> {
        let u = biot_savart(&omega)?;
        Ok(Self { u, omega: Some(omega) })
    }

    /// Velocity snapshot; the vorticity is derived when `d = 2`.
    pub fn from_velocity(u: SpectralField) -> Result<Self> {
        if u.kind() != FieldKind::Velocity {
            return invalid("expected a velocity field");
        }
        let omega = if u.grid().dim() == 2 { Some(curl_2d(&u)?) } else { None };
        Ok(Self { u, omega })
    }

    pub fn grid(&self) -> &WaveGrid {
        self.u.grid()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureCurve {
    pub kind: StructureKind,
    pub ell: Vec<f64>,
    pub values: Vec<f64>,
    /// Standard error of the snapshot mean (0 for a single snapshot).
    pub stderr: Vec<f64>,
    /// Sphere nodes used at each `ℓ`.
    pub nodes: Vec<usize>,
    pub snapshots: usize,
}

impl StructureCurve {
    /// Curve built from the first `count` snapshots' values.
    fn from_samples(kind: StructureKind, ell: &[f64], nodes: &[usize], per_snap: &[Vec<f64>]) -> Self {
        let m = per_snap.len();
        let mut values = vec![0.0; ell.len()];
        let mut stderr = vec![0.0; ell.len()];
        for i in 0..ell.len() {
            let mean = per_snap.iter().map(|s| s[i]).sum::<f64>() / m as f64;
            values[i] = mean;
            if m > 1 {
                let var = per_snap.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
                stderr[i] = (var / m as f64).sqrt();
            }
        }
        Self { kind, ell: ell.to_vec(), values, stderr, nodes: nodes.to_vec(), snapshots: m }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub kind: CorrelationKind,
    pub ell: Vec<f64>,
    pub values: Vec<f64>,
    /// `d/dℓ` of the values.
    pub derivative: Vec<f64>,
}

/// Default separations: 48 log-spaced points in `[2π/(λ n/3), 0.9 λ/2]`.
pub fn default_separations(grid: &WaveGrid) -> Vec<f64> {
    let lo = 2.0 * std::f64::consts::PI / (grid.lambda() * grid.n_axis() as f64 / 3.0);
    let hi = 0.9 * grid.lambda() / 2.0;
    log_spaced(lo, hi, 48)
}

pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let r = (hi / lo).ln();
    (0..n).map(|i| lo * (r * i as f64 / (n - 1) as f64).exp()).collect()
}

fn check_snapshots(snapshots: &[FlowSnapshot]) -> Result<WaveGrid> {
    let Some(first) = snapshots.first() else {
        return invalid("no snapshots");
    };
    let g = *first.grid();
    if snapshots.iter().any(|s| s.grid() != &g) {
        return invalid("snapshots do not share a grid");
    }
    Ok(g)
}

fn check_separations(g: &WaveGrid, ell: &[f64]) -> Result<()> {
    for &l in ell {
        if !(l > 0.0 && l <= g.lambda() / 2.0 * (1.0 + 1e-12)) {
            return invalid(format!("separation {l} outside (0, λ/2]"));
        }
    }
    Ok(())
}

/// Largest `|k|` carrying a nonzero coefficient in any snapshot.
fn support_radius(snapshots: &[FlowSnapshot]) -> f64 {
    let g = snapshots[0].grid();
    let len = g.len();
    let mut r: f64 = 0.0;
    for s in snapshots {
        for (i, c) in s.u.data().iter().enumerate() {
            if *c != Complex64::default() {
                r = r.max(g.k_sq(i % len).sqrt());
            }
        }
    }
    r
}

/// Antipodal pairs `(i, w_i + w_j)` when the rule is symmetric under
/// `n → −n` with matching weights, else every node alone.
fn fold_antipodes(rule: &SphereRule) -> Vec<(usize, f64)> {
    let m = rule.len();
    let mut used = vec![false; m];
    let mut out = Vec::with_capacity(m / 2 + 1);
    for i in 0..m {
        if used[i] {
            continue;
        }
        used[i] = true;
        let n = rule.nodes[i];
        let partner = (i + 1..m).find(|&j| {
            !used[j]
                && (0..3).all(|a| (rule.nodes[j][a] + n[a]).abs() < 1e-12)
                && (rule.weights[j] - rule.weights[i]).abs() <= 1e-15 * rule.weights[i].abs()
        });
        match partner {
            Some(j) => {
                used[j] = true;
                out.push((i, rule.weights[i] + rule.weights[j]));
            }
            None => out.push((i, rule.weights[i])),
        }
    }
    out
}

/// Physical samples of a field, one `Vec<f64>` per component.
struct Sampler {
    grid: WaveGrid,
    fft: FftNd,
    buf: Vec<Complex64>,
}

impl Sampler {
    fn new(grid: WaveGrid) -> Self {
        let len = grid.len();
        Self {
            grid,
            fft: FftNd::new(grid.n_axis(), grid.dim()),
            buf: vec![Complex64::default(); len],
        }
    }

    /// Samples of `T_y f` for every component of `f`, with `phase` the
    /// precomputed `e^{ik·y}` (or `None` for `y = 0`).
    fn sample(&mut self, f: &SpectralField, phase: Option<&[Complex64]>, out: &mut [Vec<f64>]) {
        let len = self.grid.len();
        let i = Complex64::new(0.0, 1.0);
        let comps = f.components();
        let mut c = 0;
        while c < comps {
            let a = f.component(c);
            let pair = c + 1 < comps;
            for idx in 0..len {
                let p = phase.map_or(Complex64::new(1.0, 0.0), |ph| ph[idx]);
                let mut v = a[idx] * p;
                if pair {
                    v += i * f.component(c + 1)[idx] * p;
                }
                self.buf[idx] = v;
            }
            self.fft.inverse(&mut self.buf);
            for (o, v) in out[c].iter_mut().zip(&self.buf) {
                *o = v.re;
            }
            if pair {
                for (o, v) in out[c + 1].iter_mut().zip(&self.buf) {
                    *o = v.im;
                }
            }
            c += if pair { 2 } else { 1 };
        }
    }
}

fn phases(g: &WaveGrid, y: &[f64; 3]) -> Vec<Complex64> {
    crate::grid::shift_phases(g, &y[..g.dim()])
}

/// Per-snapshot values `[kind][ℓ]` of the requested structure functions.
fn structure_one(
    snap: &FlowSnapshot,
    kinds: &[StructureKind],
    ell: &[f64],
    rules: &[Vec<(usize, f64)>],
    nodes: &[Vec<[f64; 3]>],
) -> Vec<Vec<f64>> {
    let g = *snap.grid();
    let d = g.dim();
    let len = g.len();
    let mut sampler = Sampler::new(g);
    let need_vor = kinds.contains(&StructureKind::SVor);
    let mut u0 = vec![vec![0.0; len]; d];
    sampler.sample(&snap.u, None, &mut u0);
    let mut w0 = vec![vec![0.0; len]; 1];
    if need_vor {
        sampler.sample(snap.omega.as_ref().expect("checked"), None, &mut w0);
    }
    let mut us = vec![vec![0.0; len]; d];
    let mut ws = vec![vec![0.0; len]; 1];
    let mut out = vec![vec![0.0; ell.len()]; kinds.len()];
    for (li, &l) in ell.iter().enumerate() {
        for &(ni, weight) in &rules[li] {
            let n = nodes[li][ni];
            let y = [l * n[0], l * n[1], l * n[2]];
            let ph = phases(&g, &y);
            sampler.sample(&snap.u, Some(&ph), &mut us);
            if need_vor {
                sampler.sample(snap.omega.as_ref().expect("checked"), Some(&ph), &mut ws);
            }
            let mut acc = [0.0f64; 3];
            for x in 0..len {
                let mut du2 = 0.0;
                let mut dun = 0.0;
                for a in 0..d {
                    let du = us[a][x] - u0[a][x];
                    du2 += du * du;
                    dun += du * n[a];
                }
                acc[0] += du2 * dun;
                acc[1] += dun * dun * dun;
                if need_vor {
                    let dw = ws[0][x] - w0[0][x];
                    acc[2] += dw * dw * dun;
                }
            }
            for (ki, k) in kinds.iter().enumerate() {
                let v = match k {
                    StructureKind::SVel => acc[0],
                    StructureKind::SVelPar => acc[1],
                    StructureKind::SVor => acc[2],
                };
                out[ki][li] += weight * v / len as f64;
            }
        }
    }
    out
}

/// Per-snapshot structure-function samples, kept so that estimates over
/// prefixes of the snapshot list can be formed without recomputation.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureSamples {
    pub kinds: Vec<StructureKind>,
    pub ell: Vec<f64>,
    pub nodes: Vec<usize>,
    /// `[snapshot][kind][ℓ]`.
    pub values: Vec<Vec<Vec<f64>>>,
}

impl StructureSamples {
    /// Appends the snapshots of `other`, which must share kinds, separations
    /// and node counts.
    pub fn append(&mut self, other: StructureSamples) -> Result<()> {
        if other.kinds != self.kinds || other.ell != self.ell {
            return invalid("structure samples with different kinds or separations");
        }
        if other.nodes != self.nodes {
            return invalid("snapshots with different spectral support need a fixed node rule");
        }
        self.values.extend(other.values);
        Ok(())
    }

    /// Curves averaged over the first `count` snapshots.
    pub fn curves(&self, count: usize) -> Vec<StructureCurve> {
        let count = count.min(self.values.len()).max(1);
        self.kinds
            .iter()
            .enumerate()
            .map(|(ki, &k)| {
                let per: Vec<Vec<f64>> = self.values[..count].iter().map(|s| s[ki].clone()).collect();
                StructureCurve::from_samples(k, &self.ell, &self.nodes, &per)
            })
            .collect()
    }
}

/// Structure-function samples for several kinds at once (they share the
/// shifted fields).
pub fn structure_samples(
    snapshots: &[FlowSnapshot],
    kinds: &[StructureKind],
    ell: &[f64],
    rule: &NodeRule,
) -> Result<StructureSamples> {
    let g = check_snapshots(snapshots)?;
    check_separations(&g, ell)?;
    if kinds.contains(&StructureKind::SVor) && snapshots.iter().any(|s| s.omega.is_none()) {
        return invalid("S_vor needs vorticity snapshots (d = 2)");
    }
    let kmax = support_radius(snapshots);
    let rules: Vec<SphereRule> = ell.iter().map(|&l| rule.rule(g.dim(), l * kmax)).collect();
    if rules.iter().any(|r| r.dim != g.dim()) {
        return invalid("sphere rule dimension does not match the grid");
    }
    let folded: Vec<Vec<(usize, f64)>> = rules.iter().map(fold_antipodes).collect();
    let nodes: Vec<Vec<[f64; 3]>> = rules.iter().map(|r| r.nodes.clone()).collect();
    let values: Vec<Vec<Vec<f64>>> =
        snapshots.par_iter().map(|s| structure_one(s, kinds, ell, &folded, &nodes)).collect();
    Ok(StructureSamples { kinds: kinds.to_vec(), ell: ell.to_vec(), nodes: rules.iter().map(|r| r.len()).collect(), values })
}

/// `S_•(ℓ)` averaged over `x`, the sphere rule and the snapshots.
pub fn structure_function(
    snapshots: &[FlowSnapshot],
    kind: StructureKind,
    ell: &[f64],
    rule: &NodeRule,
) -> Result<StructureCurve> {
    let s = structure_samples(snapshots, &[kind], ell, rule)?;
    Ok(s.curves(snapshots.len()).remove(0))
}

/// Snapshot-averaged lattice spectra `(E|û(k)|², E|ω̂(k)|²)`; the second is
/// `None` in 3D.
pub fn snapshot_spectra(snapshots: &[FlowSnapshot]) -> Result<(ShellSpectrum, Option<ShellSpectrum>)> {
    let g = check_snapshots(snapshots)?;
    let w = 1.0 / snapshots.len() as f64;
    let mut su = ShellSpectrum::zeros(g);
    let mut sw = snapshots[0].omega.as_ref().map(|_| ShellSpectrum::zeros(g));
    for s in snapshots {
        su.accumulate(&s.u, w);
        if let (Some(acc), Some(om)) = (sw.as_mut(), s.omega.as_ref()) {
            acc.accumulate(om, w);
        }
    }
    Ok((su, sw))
}

/// `Σ_k K(ℓ|k|) w_k` and its `ℓ`-derivative, with `K` the `p = 0` kernel
/// (longitudinal for the `∥` kinds, tangential otherwise).
pub fn correlation_spectral(spectrum: &RadialSpectrum, kind: CorrelationKind, ell: &[f64]) -> Result<CorrelationCurve> {
    let d = spectrum.dim;
    let ks = if kind.longitudinal() { KernelSeries::longitudinal(d, 0) } else { KernelSeries::tangential(d, 0) };
    let mut values = Vec::with_capacity(ell.len());
    let mut derivative = Vec::with_capacity(ell.len());
    for &l in ell {
        let mut v = 0.0;
        let mut dv = 0.0;
        for &(k, w) in &spectrum.modes {
            if w == 0.0 {
                continue;
            }
            v += w * ks.eval(l * k)?;
            if k > 0.0 {
                dv += w * k * ks.derivative(l * k)?;
            }
        }
        values.push(v);
        derivative.push(dv);
    }
    Ok(CorrelationCurve { kind, ell: ell.to_vec(), values, derivative })
}

/// `a_•(ℓ)` of a forcing; requires an `a_*` kind.
pub fn forcing_correlation(forcing: &ForcingSpec, kind: CorrelationKind, ell: &[f64]) -> Result<CorrelationCurve> {
    let spectrum = match kind {
        CorrelationKind::AVel | CorrelationKind::AVelPar => forcing.velocity_spectrum(),
        CorrelationKind::AVor => forcing.vorticity_spectrum()?,
        _ => return invalid("forcing correlations are the a_* kinds"),
    };
    correlation_spectral(&spectrum, kind, ell)
}

/// `Γ_•(ℓ)` from snapshot-averaged spectra; requires a `gamma_*` kind.
pub fn snapshot_correlation(snapshots: &[FlowSnapshot], kind: CorrelationKind, ell: &[f64]) -> Result<CorrelationCurve> {
    let (su, sw) = snapshot_spectra(snapshots)?;
    let spectrum = match kind {
        CorrelationKind::GammaVel | CorrelationKind::GammaVelPar => su.radial(),
        CorrelationKind::GammaVor => match sw {
            Some(s) => s.radial(),
            None => return invalid("Γ_vor needs vorticity snapshots"),
        },
        _ => return invalid("snapshot correlations are the gamma_* kinds"),
    };
    correlation_spectral(&spectrum, kind, ell)
}

/// Shift-based `Γ_•(ℓ)`: `⨍_n ⨍_x f·T_{ℓn}f` (or `(n·u)(n·T_{ℓn}u)`).
pub fn correlation_physical(
    snapshots: &[FlowSnapshot],
    kind: CorrelationKind,
    ell: &[f64],
    rule: &NodeRule,
) -> Result<CorrelationCurve> {
    let g = check_snapshots(snapshots)?;
    check_separations(&g, ell)?;
    let use_vor = match kind {
        CorrelationKind::GammaVel | CorrelationKind::GammaVelPar => false,
        CorrelationKind::GammaVor => true,
        _ => return invalid("physical correlations are the gamma_* kinds"),
    };
    if use_vor && snapshots.iter().any(|s| s.omega.is_none()) {
        return invalid("Γ_vor needs vorticity snapshots");
    }
    let kmax = support_radius(snapshots);
    let d = g.dim();
    let len = g.len();
    let per: Vec<Vec<f64>> = snapshots
        .par_iter()
        .map(|s| {
            let f = if use_vor { s.omega.as_ref().expect("checked") } else { &s.u };
            let comps = f.components();
            let mut sampler = Sampler::new(g);
            let mut f0 = vec![vec![0.0; len]; comps];
            let mut fs = vec![vec![0.0; len]; comps];
            sampler.sample(f, None, &mut f0);
            ell.iter()
                .map(|&l| {
                    let r = rule.rule(d, l * kmax);
                    let mut total = 0.0;
                    for (n, w) in r.nodes.iter().zip(&r.weights) {
                        let y = [l * n[0], l * n[1], l * n[2]];
                        sampler.sample(f, Some(&phases(&g, &y)), &mut fs);
                        let mut acc = 0.0;
                        for x in 0..len {
                            if kind == CorrelationKind::GammaVelPar {
                                let a: f64 = (0..d).map(|c| f0[c][x] * n[c]).sum();
                                let b: f64 = (0..d).map(|c| fs[c][x] * n[c]).sum();
                                acc += a * b;
                            } else {
                                acc += (0..comps).map(|c| f0[c][x] * fs[c][x]).sum::<f64>();
                            }
                        }
                        total += w * acc / len as f64;
                    }
                    total
                })
                .collect()
        })
        .collect();
    let m = per.len() as f64;
    let values = (0..ell.len()).map(|i| per.iter().map(|p| p[i]).sum::<f64>() / m).collect();
    Ok(CorrelationCurve { kind, ell: ell.to_vec(), values, derivative: vec![f64::NAN; ell.len()] })
}

/// Largest discrepancy between the shift-based and the spectral evaluation
/// of `Γ_•`, relative to `|Γ_•(0)|`.
pub fn cross_validate(snapshots: &[FlowSnapshot], kind: CorrelationKind, ell: &[f64]) -> Result<f64> {
    let phys = correlation_physical(snapshots, kind, ell, &NodeRule::default())?;
    let spec = snapshot_correlation(snapshots, kind, ell)?;
    let scale = snapshot_correlation(snapshots, kind, &[0.0])?.values[0].abs();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    Ok(phys.values.iter().zip(&spec.values).map(|(a, b)| (a - b).abs() / scale).fold(0.0, f64::max))
}
