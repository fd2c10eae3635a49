//! Gauss–Legendre rules, adaptive integration and monotone cubic
//! interpolation.

use std::f64::consts::PI;

/// `n`-point Gauss–Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(n, z);
                dp = d;
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (z * p - p0) / (z * z - 1.0);
    (p, d)
}

/// Fixed Gauss–Legendre rule mapped to `[a, b]`.
pub struct GaussRule {
    x: Vec<f64>,
    w: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        Self { x, w }
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let h = 0.5 * (b - a);
        let m = 0.5 * (a + b);
        self.x.iter().zip(&self.w).map(|(x, w)| w * f(m + h * x)).sum::<f64>() * h
    }
}

/// Adaptive bisection with a 16-point Gauss–Legendre panel rule, starting
/// from `panels` equal panels. Stops a branch when the panel and its two
/// halves agree to `tol·(|I|+atol)`.
pub fn adaptive_gauss(f: &impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, tol: f64) -> f64 {
    let rule = GaussRule::new(16);
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let coarse: Vec<f64> = (0..panels)
        .map(|i| rule.integrate(a + i as f64 * h, a + (i + 1) as f64 * h, f))
        .collect();
    let scale = coarse.iter().map(|v| v.abs()).sum::<f64>();
    let atol = tol * scale.max(f64::MIN_POSITIVE);
    (0..panels)
        .map(|i| refine(&rule, f, a + i as f64 * h, a + (i + 1) as f64 * h, coarse[i], atol, 40))
        .sum()
}

fn refine(rule: &GaussRule, f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, atol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let left = rule.integrate(a, m, f);
    let right = rule.integrate(m, b, f);
    if (left + right - whole).abs() <= atol || depth == 0 {
        return left + right;
    }
    refine(rule, f, a, m, left, 0.5 * atol, depth - 1) + refine(rule, f, m, b, right, 0.5 * atol, depth - 1)
}

/// Fritsch–Carlson monotone piecewise-cubic Hermite interpolant.
#[derive(Clone, Debug)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        assert!(n >= 2 && y.len() == n);
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
        let mut m = vec![0.0; n];
        m[0] = delta[0];
        m[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            m[i] = if delta[i - 1] * delta[i] <= 0.0 { 0.0 } else { 0.5 * (delta[i - 1] + delta[i]) };
        }
        for i in 0..n - 1 {
            if delta[i] == 0.0 {
                m[i] = 0.0;
                m[i + 1] = 0.0;
                continue;
            }
            let a = m[i] / delta[i];
            let b = m[i + 1] / delta[i];
            let s = a * a + b * b;
            if s > 9.0 {
                let t = 3.0 / s.sqrt();
                m[i] = t * a * delta[i];
                m[i + 1] = t * b * delta[i];
            }
        }
        Self { x, y, m }
    }

    pub fn x_min(&self) -> f64 {
        self.x[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.x.last().unwrap()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * self.y[i] + h10 * h * self.m[i] + h01 * self.y[i + 1] + h11 * h * self.m[i + 1]
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(20);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let i38: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(38)).sum();
        assert!((i38 - 2.0 / 39.0).abs() < 1e-14);
        let (x, w) = gauss_legendre(128);
        let c: f64 = x.iter().zip(&w).map(|(x, w)| w * (40.0 * x).cos()).sum();
        assert!((c - 2.0 * (40.0f64).sin() / 40.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_oscillation() {
        let v = adaptive_gauss(&|t: f64| t * (50.0 * t).sin(), 0.0, 3.0, 4, 1e-13);
        let want = ((150.0f64).sin() - 150.0 * (150.0f64).cos()) / 2500.0;
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn monotone_cubic_preserves_monotonicity_and_knots() {
        let x = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let y = vec![0.0, 0.1, 5.0, 5.1, 9.0];
        let p = MonotoneCubic::new(x.clone(), y.clone());
        for (a, b) in x.iter().zip(&y) {
            assert!((p.eval(*a) - b).abs() < 1e-14);
        }
        let mut last = -1.0;
        for i in 0..=400 {
            let v = p.eval(i as f64 * 0.01);
            assert!(v >= last - 1e-14);
            last = v;
        }
    }
}
