//! Isotropic averages over `S^{d−1}`: the coefficients `β_d(k)`, pairing
//! combinatorics, sphere quadrature and the tangential / longitudinal
//! kernels.
//!
//! The kernels are the power series
//!
//! ```text
//! T_p(x) = Σ_m β_d(m+p)   (−1)^m x^{2m} (2m+2p)! / (2^{m+p} (m+p)! (2m)!)
//! L_p(x) = Σ_m β_d(m+p+1) (−1)^m x^{2m} (2m+2p)! / (2^{m+p} (m+p)! (2m)!)
//! ```
//!
//! with `T_p(x) = ⨍ (n·k̂)^{2p} cos(x n·k̂) dS(n)` and
//! `L_p(x) = ⨍ (n·ê)² (n·k̂)^{2p} cos(x n·k̂) dS(n)` for a unit `ê ⊥ k̂`.
//! For `x ≤ 30` the series is summed in double-double; beyond that the
//! exact Bessel / trigonometric closed forms are used.

use std::f64::consts::PI;

use num_rational::Ratio;
use num_traits::{CheckedMul, ToPrimitive};
use rand_distr::{Distribution, StandardNormal};

use crate::dd::Dd;
use crate::error::{invalid, Error, Result};
use crate::quad::gauss_legendre;
use crate::special::{bessel_j, bessel_j_prime, moment_exp};

pub type Rational = Ratio<i128>;

/// Largest order accepted by the exact coefficient routines.
pub const MAX_EXACT_ORDER: u32 = 20;

/// Switch point from the series to the closed forms.
pub const SERIES_X_MAX: f64 = 30.0;

const SERIES_MAX_TERMS: usize = 200;
const SERIES_REL_TOL: f64 = 1e-16;

fn check_order(k: u32) -> Result<()> {
    if k > MAX_EXACT_ORDER {
        return Err(Error::Overflow(format!("order {k} exceeds the exact range 0..={MAX_EXACT_ORDER}")));
    }
    Ok(())
}

fn checked_product(factors: impl Iterator<Item = i128>) -> Result<i128> {
    let mut acc: i128 = 1;
    for f in factors {
        acc = acc.checked_mul(f).ok_or_else(|| Error::Overflow("integer product".into()))?;
    }
    Ok(acc)
}

/// `(2k−1)!! = 1·3·…·(2k−1)`, 1 for `k = 0`.
fn odd_double_factorial(k: u32) -> Result<i128> {
    checked_product((1..=k as i128).map(|i| 2 * i - 1))
}

/// `β₂(k) = 1/(2^k k!)`, `β₃(k) = 2^k k!/(2k+1)! = 1/(2k+1)!!`.
pub fn beta(d: usize, k: u32) -> Result<Rational> {
    check_order(k)?;
    let den = match d {
        2 => checked_product((1..=k as i128).map(|i| 2 * i))?,
        3 => odd_double_factorial(k + 1)?,
        _ => return invalid(format!("dimension must be 2 or 3, got {d}")),
    };
    Ok(Rational::new(1, den))
}

/// Number of perfect pairings of `2k` objects, `(2k)!/(2^k k!)`.
pub fn pairing_count(k: u32) -> Result<i128> {
    check_order(k)?;
    odd_double_factorial(k)
}

/// `⨍ n_{i₁}⋯n_{i₂ₖ} dS(n) = β_d(k) Σ_pairings Π δ`. Indices are 1-based.
///
/// The pairing sum equals `Π_v (c_v − 1)!!` over the distinct index values
/// `v` with multiplicities `c_v` when every `c_v` is even, and 0 otherwise.
pub fn isotropic_tensor_average(d: usize, indices: &[usize]) -> Result<Rational> {
    if d != 2 && d != 3 {
        return invalid(format!("dimension must be 2 or 3, got {d}"));
    }
    if let Some(bad) = indices.iter().find(|&&i| i == 0 || i > d) {
        return invalid(format!("index {bad} outside 1..={d}"));
    }
    if indices.len() % 2 == 1 {
        return Ok(Rational::from_integer(0));
    }
    let k = (indices.len() / 2) as u32;
    let b = beta(d, k)?;
    let mut count: i128 = 1;
    for v in 1..=d {
        let c = indices.iter().filter(|&&i| i == v).count() as u32;
        if c % 2 == 1 {
            return Ok(Rational::from_integer(0));
        }
        count = count
            .checked_mul(odd_double_factorial(c / 2)?)
            .ok_or_else(|| Error::Overflow("pairing count".into()))?;
    }
    b.checked_mul(&Rational::from_integer(count))
        .ok_or_else(|| Error::Overflow("tensor average".into()))
}

/// Quadrature rule on `S^{d−1}` for the normalized measure `⨍ dS(n)`.
/// Node sets are symmetric under `n → −n`.
#[derive(Clone, Debug)]
pub struct SphereRule {
    pub dim: usize,
    pub nodes: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    /// `m` equispaced nodes on `S¹` (`m` even).
    pub fn circle(m: usize) -> Self {
        assert!(m >= 2 && m % 2 == 0, "circle rule needs an even node count");
        let nodes = (0..m)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / m as f64;
                [t.cos(), t.sin(), 0.0]
            })
            .collect();
        Self { dim: 2, nodes, weights: vec![1.0 / m as f64; m] }
    }

    /// Gauss–Legendre in `cos θ` times uniform in `φ` on `S²`.
    pub fn product_s2(n_theta: usize, n_phi: usize) -> Self {
        assert!(n_phi >= 2 && n_phi % 2 == 0);
        let (mu, w) = gauss_legendre(n_theta);
        let mut nodes = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for (m, wm) in mu.iter().zip(&w) {
            let s = (1.0 - m * m).max(0.0).sqrt();
            for j in 0..n_phi {
                let p = 2.0 * PI * j as f64 / n_phi as f64;
                nodes.push([s * p.cos(), s * p.sin(), *m]);
                weights.push(wm / (2.0 * n_phi as f64));
            }
        }
        Self { dim: 3, nodes, weights }
    }

    /// Default rule for dimension `d`: 64 nodes on `S¹`, 64×128 on `S²`.
    pub fn default_for(d: usize) -> Self {
        if d == 2 {
            Self::circle(64)
        } else {
            Self::product_s2(64, 128)
        }
    }

    /// Smallest default-shaped rule that integrates `e^{i x n·k̂}` to machine
    /// precision, with at least `min_nodes` nodes (`S¹`) or a `min_nodes/4 ×
    /// min_nodes/2` product (`S²`).
    pub fn for_bandwidth(d: usize, x: f64, min_nodes: usize) -> Self {
        let x = x.abs();
        let need = x + 10.0 * x.cbrt() + 16.0;
        if d == 2 {
            let m = (need.ceil() as usize).max(min_nodes);
            Self::circle(m + m % 2)
        } else {
            let nt = ((need / 2.0).ceil() as usize).max(min_nodes / 4).max(2);
            let np = (need.ceil() as usize).max(min_nodes / 2).max(4);
            Self::product_s2(nt, np + np % 2)
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(&[f64; 3]) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(n, w)| w * f(n)).sum()
    }
}

/// Monte Carlo estimate of `⨍ f dS(n)` and its standard error.
pub fn monte_carlo_sphere_average(d: usize, f: impl Fn(&[f64; 3]) -> f64, samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = crate::rng::stream(seed, 0);
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for _ in 0..samples {
        let mut n = [0.0; 3];
        let mut r2 = 0.0;
        for slot in n.iter_mut().take(d) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *slot = z;
            r2 += z * z;
        }
        let r = r2.sqrt();
        for slot in n.iter_mut().take(d) {
            *slot /= r;
        }
        let v = f(&n);
        s1 += v;
        s2 += v * v;
    }
    let m = samples as f64;
    let mean = s1 / m;
    let var = (s2 / m - mean * mean).max(0.0);
    (mean, (var / (m - 1.0).max(1.0)).sqrt())
}

/// One of the kernel series `T_p` (tangential) or `L_p` (longitudinal).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelSeries {
    pub d: usize,
    pub p: u32,
    pub longitudinal: bool,
}

impl KernelSeries {
    pub fn tangential(d: usize, p: u32) -> Self {
        Self { d, p, longitudinal: false }
    }

    pub fn longitudinal(d: usize, p: u32) -> Self {
        Self { d, p, longitudinal: true }
    }

    fn validate(&self) -> Result<()> {
        if self.d != 2 && self.d != 3 {
            return invalid(format!("dimension must be 2 or 3, got {}", self.d));
        }
        if self.p > 12 {
            return invalid(format!("kernel order p = {} exceeds 12", self.p));
        }
        Ok(())
    }

    /// β index of the `m = 0` term.
    fn beta_offset(&self) -> u32 {
        self.p + self.longitudinal as u32
    }

    /// Leading coefficient `β_d(p[+1]) (2p−1)!!` as a double-double.
    fn leading(&self) -> Result<Dd> {
        let r = beta(self.d, self.beta_offset())? * Rational::from_integer(odd_double_factorial(self.p)?);
        let num = r.numer().to_f64().unwrap();
        let den = r.denom().to_f64().unwrap();
        Ok(Dd::new(num).div_f64(den))
    }

    /// `a_m / a_{m−1}` as an exact integer ratio.
    fn ratio(&self, m: u32) -> (f64, f64) {
        let j = (m + self.beta_offset()) as f64;
        let beta_den = if self.d == 2 { 2.0 * j } else { 2.0 * j + 1.0 };
        let mf = m as f64;
        let p = self.p as f64;
        (2.0 * mf + 2.0 * p - 1.0, beta_den * 2.0 * mf * (2.0 * mf - 1.0))
    }

    /// Value (`deriv = false`) or `d/dx` of the series at `x`.
    fn series(&self, x: f64, deriv: bool) -> Result<f64> {
        let x2 = Dd::prod(x, x);
        let mut coeff = self.leading()?;
        let lead_mag = coeff.hi.abs();
        let mut sum = if deriv { Dd::ZERO } else { coeff };
        // term_m = a_m (−1)^m x^{2m}; derivative term = 2m a_m (−1)^m x^{2m−1}
        let mut prev_mag = f64::INFINITY;
        for m in 1..SERIES_MAX_TERMS as u32 {
            let (num, den) = self.ratio(m);
            coeff = (coeff * x2).mul_f64(-num).div_f64(den);
            let term = if deriv {
                if x == 0.0 {
                    return Ok(0.0);
                }
                coeff.mul_f64(2.0 * m as f64).div_f64(x)
            } else {
                coeff
            };
            sum = sum + term;
            let mag = term.hi.abs();
            // near a zero of the kernel the partial sum is tiny; measure the
            // tail against the leading coefficient there
            let scale = sum.hi.abs().max(1e-6 * lead_mag);
            if mag <= prev_mag && mag <= SERIES_REL_TOL * scale {
                return Ok(sum.to_f64());
            }
            if mag == 0.0 {
                return Ok(sum.to_f64());
            }
            prev_mag = mag;
        }
        Err(Error::Divergence(format!(
            "kernel series (d={}, p={}, longitudinal={}) at x={x} did not converge in {SERIES_MAX_TERMS} terms",
            self.d, self.p, self.longitudinal
        )))
    }

    /// `∫₀^x t^q K'(t) dt` from the power series, free of the cancellation
    /// in `x^q K(x) − q∫t^{q−1}K`; intended for `x ≲ 1`.
    pub fn derivative_moment(&self, q: u32, x: f64) -> Result<f64> {
        self.validate()?;
        let x2 = Dd::prod(x, x);
        let mut coeff = self.leading()?;
        let mut sum = Dd::ZERO;
        for m in 1..SERIES_MAX_TERMS as u32 {
            let (num, den) = self.ratio(m);
            coeff = (coeff * x2).mul_f64(-num).div_f64(den);
            let term = coeff.mul_f64(2.0 * m as f64).div_f64((2 * m + q) as f64);
            sum = sum + term;
            if term.hi == 0.0 || term.hi.abs() <= SERIES_REL_TOL * sum.hi.abs() {
                return Ok(sum.to_f64() * x.powi(q as i32));
            }
        }
        Err(Error::Divergence(format!("derivative moment at x={x} did not converge")))
    }

    /// Closed form of the tangential kernel of order `p` (no longitudinal
    /// shift) and its derivative.
    fn closed_tangential(&self, p: u32, x: f64) -> (f64, f64) {
        if self.d == 3 {
            let q = 2 * p as usize;
            let mom = moment_exp(x, q + 1);
            (mom[q].0, -mom[q + 1].1)
        } else {
            // cos^{2p}θ = 4^{−p}[C(2p,p) + 2Σ_j C(2p,p−j) cos 2jθ] and
            // ⨍ cos(2jθ) cos(x cos θ) dθ = (−1)^j J_{2j}(x)
            let pi = p as i32;
            let mut v = binomial(2 * pi, pi) * bessel_j(0, x);
            let mut dv = binomial(2 * pi, pi) * bessel_j_prime(0, x);
            for j in 1..=pi {
                let c = 2.0 * binomial(2 * pi, pi - j) * if j % 2 == 0 { 1.0 } else { -1.0 };
                v += c * bessel_j(2 * j, x);
                dv += c * bessel_j_prime(2 * j, x);
            }
            let s = 0.25f64.powi(pi);
            (s * v, s * dv)
        }
    }

    fn closed(&self, x: f64) -> (f64, f64) {
        if !self.longitudinal {
            return self.closed_tangential(self.p, x);
        }
        if self.d == 3 {
            // L_p = ½ ∫₀¹ (1 − μ²) μ^{2p} cos(xμ) dμ
            let q = 2 * self.p as usize;
            let mom = moment_exp(x, q + 3);
            (0.5 * (mom[q].0 - mom[q + 2].0), -0.5 * (mom[q + 1].1 - mom[q + 3].1))
        } else {
            // sin²θ cos^{2p}θ = cos^{2p}θ − cos^{2p+2}θ
            let (a, da) = self.closed_tangential(self.p, x);
            let (b, db) = self.closed_tangential(self.p + 1, x);
            (a - b, da - db)
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        self.validate()?;
        let x = x.abs();
        if x <= SERIES_X_MAX {
            self.series(x, false)
        } else {
            Ok(self.closed(x).0)
        }
    }

    /// `d/dx` of the kernel (odd in `x`).
    pub fn derivative(&self, x: f64) -> Result<f64> {
        self.validate()?;
        let s = x.signum();
        let x = x.abs();
        let v = if x <= SERIES_X_MAX { self.series(x, true)? } else { self.closed(x).1 };
        Ok(s * v)
    }

    /// Series evaluation regardless of `x` (for cross-checks).
    pub fn eval_series(&self, x: f64) -> Result<f64> {
        self.validate()?;
        self.series(x.abs(), false)
    }

    /// Closed-form evaluation regardless of `x`; requires `x > 0` and, for
    /// `d = 3`, `x` larger than the highest moment order to stay stable.
    pub fn eval_closed(&self, x: f64) -> Result<f64> {
        self.validate()?;
        Ok(self.closed(x.abs()).0)
    }
}

fn binomial(n: i32, k: i32) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

/// `Re ⨍ (n·k̂)^{2p} e^{−ix n·k̂} dS(n)`.
pub fn tangential_kernel(d: usize, p: u32, x: f64) -> Result<f64> {
    KernelSeries::tangential(d, p).eval(x)
}

/// Coefficient of `E|û(k)|²` in `⨍ (n·û)(n·û̄)(n·k̂)^{2p} e^{−ix n·k̂} dS(n)`
/// for divergence-free `û`.
pub fn longitudinal_kernel(d: usize, p: u32, x: f64) -> Result<f64> {
    KernelSeries::longitudinal(d, p).eval(x)
}

/// The same kernels by direct quadrature on the sphere with `k̂ = e_d`: the
/// tangential weight is `μ^{2p}`, the longitudinal one averages `(n·e)²`
/// over unit `e ⊥ k̂`, i.e. `(1 − μ²)/(d − 1)`.
pub fn kernel_by_quadrature(d: usize, p: u32, longitudinal: bool, x: f64) -> Result<f64> {
    if d != 2 && d != 3 {
        return invalid(format!("dimension must be 2 or 3, got {d}"));
    }
    let rule = SphereRule::for_bandwidth(d, x, 64 + 4 * p as usize);
    let axis = d - 1;
    Ok(rule.integrate(|n| {
        let mu = n[axis];
        let w = if longitudinal { (1.0 - mu * mu) / (d - 1) as f64 } else { 1.0 };
        w * mu.powi(2 * p as i32) * (x * mu).cos()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i128, d: i128) -> Rational {
        Rational::new(n, d)
    }

    #[test]
    fn derivative_moment_matches_quadrature() {
        for d in [2usize, 3] {
            for k in [KernelSeries::tangential(d, 0), KernelSeries::longitudinal(d, 1)] {
                for x in [1e-4, 0.3, 1.0, 2.5] {
                    let q = d as u32;
                    let got = k.derivative_moment(q, x).unwrap();
                    let f = |t: f64| t.powi(q as i32) * k.derivative(t).unwrap();
                    let want = crate::quad::adaptive_gauss(&f, 0.0, x, 2, 1e-15);
                    assert!((got - want).abs() <= 1e-13 * want.abs().max(1e-300), "{k:?} x={x}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn beta_values() {
        assert_eq!(beta(2, 1).unwrap(), r(1, 2));
        assert_eq!(beta(3, 1).unwrap(), r(1, 3));
        assert_eq!(beta(3, 2).unwrap(), r(1, 15));
        assert_eq!(beta(2, 0).unwrap(), r(1, 1));
        assert!(matches!(beta(2, 21), Err(Error::Overflow(_))));
        assert!(beta(4, 1).is_err());
    }

    #[test]
    fn pairing_values() {
        assert_eq!(pairing_count(2).unwrap(), 3);
        assert_eq!(pairing_count(0).unwrap(), 1);
        assert_eq!(pairing_count(5).unwrap(), 945);
        assert!(pairing_count(21).is_err());
    }

    #[test]
    fn beta_times_pairings_is_moment_of_n1() {
        for k in 0..=20u32 {
            let m2 = beta(2, k).unwrap() * Rational::from_integer(pairing_count(k).unwrap());
            // (2k−1)!!/(2k)!!
            let num = odd_double_factorial(k).unwrap();
            let den: i128 = (1..=k as i128).map(|i| 2 * i).product();
            assert_eq!(m2, r(num, den));
            let m3 = beta(3, k).unwrap() * Rational::from_integer(pairing_count(k).unwrap());
            assert_eq!(m3, r(1, 2 * k as i128 + 1));
        }
    }

    #[test]
    fn tensor_average_examples() {
        assert_eq!(isotropic_tensor_average(2, &[1, 1]).unwrap(), r(1, 2));
        assert_eq!(isotropic_tensor_average(3, &[1, 1, 1, 1]).unwrap(), r(1, 5));
        assert_eq!(isotropic_tensor_average(2, &[1, 2]).unwrap(), r(0, 1));
        assert_eq!(isotropic_tensor_average(3, &[1, 1, 2]).unwrap(), r(0, 1));
        assert!(isotropic_tensor_average(2, &[3, 3]).is_err());
    }

    fn brute_pairings(idx: &[usize]) -> i128 {
        if idx.is_empty() {
            return 1;
        }
        let first = idx[0];
        let rest = &idx[1..];
        (0..rest.len())
            .filter(|&j| rest[j] == first)
            .map(|j| {
                let mut r: Vec<usize> = rest.to_vec();
                r.remove(j);
                brute_pairings(&r)
            })
            .sum()
    }

    #[test]
    fn pairing_formula_matches_enumeration() {
        let mut rng = crate::rng::stream(4, 0);
        use rand::Rng;
        for _ in 0..200 {
            let d = rng.random_range(2..=3);
            let k = rng.random_range(1..=4);
            let idx: Vec<usize> = (0..2 * k).map(|_| rng.random_range(1..=d)).collect();
            let want = beta(d, k as u32).unwrap() * Rational::from_integer(brute_pairings(&idx));
            assert_eq!(isotropic_tensor_average(d, &idx).unwrap(), want);
        }
    }

    #[test]
    fn rules_are_normalized_and_symmetric() {
        for rule in [SphereRule::circle(64), SphereRule::product_s2(16, 32), SphereRule::product_s2(64, 128)] {
            assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for n in &rule.nodes {
                assert!(((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs() < 1e-14);
            }
            for pw in [[1, 0, 0], [0, 1, 2], [3, 0, 0], [1, 1, 1], [2, 2, 1]] {
                let v = rule.integrate(|n| n[0].powi(pw[0]) * n[1].powi(pw[1]) * n[2].powi(pw[2]));
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mc_oracles() {
        let (m, se) = monte_carlo_sphere_average(3, |n| n[0] * n[0], 1_000_000, 1);
        assert!((m - 1.0 / 3.0).abs() < 3.0 * se);
        let (m, se) = monte_carlo_sphere_average(2, |n| n[0].powi(4), 1_000_000, 2);
        assert!((m - 3.0 / 8.0).abs() < 3.0 * se);
        let (m, _) = monte_carlo_sphere_average(2, |_| 1.0, 1000, 3);
        assert_eq!(m, 1.0);
    }

    #[test]
    fn kernels_match_sphere_quadrature() {
        for d in [2, 3] {
            for p in 0..3 {
                for long in [false, true] {
                    for i in 0..=100 {
                        let x = 0.5 * i as f64;
                        let k = KernelSeries { d, p, longitudinal: long };
                        let q = kernel_by_quadrature(d, p, long, x).unwrap();
                        assert!((k.eval(x).unwrap() - q).abs() < 1e-12, "d={d} p={p} long={long} x={x}");
                    }
                }
            }
        }
    }

    #[test]
    fn kernel_special_values() {
        assert!(tangential_kernel(3, 0, PI).unwrap().abs() < 1e-12);
        for d in [2, 3] {
            for p in 0..4u32 {
                let want = beta(d, p).unwrap() * Rational::from_integer(odd_double_factorial(p).unwrap());
                let t0 = tangential_kernel(d, p, 0.0).unwrap();
                assert!((t0 - want.to_f64().unwrap()).abs() < 1e-16);
            }
        }
        assert_eq!(longitudinal_kernel(2, 0, 0.0).unwrap(), 0.5);
        assert!((longitudinal_kernel(3, 1, 0.0).unwrap() - 1.0 / 15.0).abs() < 1e-17);
        for i in 0..=300 {
            let x = 0.1 * i as f64;
            assert!((tangential_kernel(2, 0, x).unwrap() - bessel_j(0, x)).abs() < 1e-14, "{x}");
            assert!((tangential_kernel(3, 0, x).unwrap() - crate::special::sinc(x)).abs() < 1e-14);
        }
    }

    #[test]
    fn series_and_closed_forms_overlap() {
        // both routes are valid near the switch point
        for d in [2, 3] {
            for p in 0..3 {
                for long in [false, true] {
                    let k = KernelSeries { d, p, longitudinal: long };
                    for x in [12.0, 20.0, 29.5, 30.0] {
                        let a = k.eval_series(x).unwrap();
                        let b = k.eval_closed(x).unwrap();
                        assert!((a - b).abs() < 1e-13, "d={d} p={p} long={long} x={x}: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        for d in [2, 3] {
            for p in 0..3 {
                for long in [false, true] {
                    let k = KernelSeries { d, p, longitudinal: long };
                    for x in [0.3, 4.0, 29.0, 31.0, 80.0] {
                        let h = 1e-5;
                        let fd = (k.eval(x + h).unwrap() - k.eval(x - h).unwrap()) / (2.0 * h);
                        assert!((k.derivative(x).unwrap() - fd).abs() < 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn mc_oracle_for_kernels() {
        // tangential d=2, p=1, x=10: ⨍ n₁² cos(10 n₁)
        let (m, se) = monte_carlo_sphere_average(2, |n| n[0] * n[0] * (10.0 * n[0]).cos(), 400_000, 9);
        assert!((m - tangential_kernel(2, 1, 10.0).unwrap()).abs() < 3.0 * se);
        // longitudinal d=2, p=0, x=5 with a random divergence-free covariance
        let k = [0.6, 0.8];
        let e = [-0.8, 0.6];
        let (m, se) = monte_carlo_sphere_average(
            2,
            |n| {
                let ne = n[0] * e[0] + n[1] * e[1];
                let nk = n[0] * k[0] + n[1] * k[1];
                ne * ne * (5.0 * nk).cos()
            },
            400_000,
            10,
        );
        assert!((m - longitudinal_kernel(2, 0, 5.0).unwrap()).abs() < 3.0 * se);
    }

    #[test]
    fn bandwidth_rule_integrates_plane_waves() {
        for x in [5.0, 50.0, 170.0] {
            let rule = SphereRule::for_bandwidth(2, x, 64);
            let v = rule.integrate(|n| (x * n[0]).cos());
            assert!((v - bessel_j(0, x)).abs() < 1e-13);
            let rule = SphereRule::for_bandwidth(3, x, 16);
            let v = rule.integrate(|n| (x * n[2]).cos());
            assert!((v - crate::special::sinc(x)).abs() < 1e-13);
        }
    }
}
