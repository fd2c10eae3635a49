//! Bessel functions and the elementary closed forms that appear as limits
//! of the kernel series.

/// Bessel function of the first kind `J_n(x)`.
pub fn bessel_j(n: i32, x: f64) -> f64 {
    match n {
        0 => libm::j0(x),
        1 => libm::j1(x),
        _ => libm::jn(n, x),
    }
}

/// `J_n'(x)`.
pub fn bessel_j_prime(n: i32, x: f64) -> f64 {
    if n == 0 {
        -bessel_j(1, x)
    } else {
        0.5 * (bessel_j(n - 1, x) - bessel_j(n + 1, x))
    }
}

/// `sin x / x` with the removable singularity filled.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// `∫₀ˣ t sin t dt = sin x − x cos x`; power series below `|x| = 1`.
pub fn int_t_sin(x: f64) -> f64 {
    if x.abs() < 1.0 {
        small_series(x, 3)
    } else {
        x.sin() - x * x.cos()
    }
}

/// `∫₀ˣ t (sin t − t cos t) dt = 3 sin x − 3x cos x − x² sin x`; power
/// series below `|x| = 1`.
pub fn int_t_int_t_sin(x: f64) -> f64 {
    if x.abs() < 1.0 {
        small_series(x, 5)
    } else {
        3.0 * x.sin() - 3.0 * x * x.cos() - x * x * x.sin()
    }
}

/// `Σ_m (−1)^m x^{2m+top} / ((2m+1)! (2m+3) [(2m+5)])` for `top ∈ {3, 5}`.
fn small_series(x: f64, top: i32) -> f64 {
    let x2 = x * x;
    let mut fact = 1.0; // (2m+1)!
    let mut pow = x.powi(top);
    let mut sum = 0.0;
    for m in 0..12 {
        let mf = m as f64;
        if m > 0 {
            fact *= (2.0 * mf) * (2.0 * mf + 1.0);
            pow *= -x2;
        }
        let mut den = fact * (2.0 * mf + 3.0);
        if top == 5 {
            den *= 2.0 * mf + 5.0;
        }
        sum += pow / den;
    }
    sum
}

/// `∫₀^1 μ^q e^{ixμ} dμ` for `q = 0..=qmax`, by upward recurrence
/// `I_q = (e^{ix} − q I_{q−1})/(ix)`; stable for `x > qmax`.
pub fn moment_exp(x: f64, qmax: usize) -> Vec<(f64, f64)> {
    assert!(x > 0.0);
    let (s, c) = x.sin_cos();
    let mut out = Vec::with_capacity(qmax + 1);
    // I_0 = (e^{ix} − 1)/(ix) = (sin x)/x + i (1 − cos x)/x
    let mut re = s / x;
    let mut im = (1.0 - c) / x;
    out.push((re, im));
    for q in 1..=qmax {
        // (a + ib)/(ix) = b/x − i a/x
        let a = c - q as f64 * re;
        let b = s - q as f64 * im;
        re = b / x;
        im = -a / x;
        out.push((re, im));
    }
    out
}

/// Trapezoid-rule Bessel function from `J_n(x) = (1/2π)∫ cos(nτ − x sin τ)dτ`;
/// an evaluation route independent of [`bessel_j`], for tests.
pub fn bessel_j_trapezoid(n: i32, x: f64) -> f64 {
    let m = (x.abs() + 10.0 * x.abs().cbrt() + n.unsigned_abs() as f64 + 48.0).ceil() as usize;
    let h = 2.0 * std::f64::consts::PI / m as f64;
    (0..m).map(|i| {
        let t = i as f64 * h;
        (n as f64 * t - x * t.sin()).cos()
    }).sum::<f64>() / m as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn libm_bessel_agrees_with_trapezoid_route() {
        for n in 0..6 {
            for i in 0..200 {
                let x = 0.37 * i as f64;
                assert!((bessel_j(n, x) - bessel_j_trapezoid(n, x)).abs() < 5e-15, "n={n} x={x}");
            }
        }
    }

    #[test]
    fn moments_match_quadrature() {
        let x = 37.5;
        let m = moment_exp(x, 6);
        let rule = crate::quad::GaussRule::new(200);
        for (q, &(re, im)) in m.iter().enumerate() {
            let qre = rule.integrate(0.0, 1.0, |t| t.powi(q as i32) * (x * t).cos());
            let qim = rule.integrate(0.0, 1.0, |t| t.powi(q as i32) * (x * t).sin());
            assert!((re - qre).abs() < 1e-14 && (im - qim).abs() < 1e-14, "q={q}");
        }
    }

    #[test]
    fn antiderivatives() {
        let rule = crate::quad::GaussRule::new(64);
        let x = 7.3;
        assert!((int_t_sin(x) - rule.integrate(0.0, x, |t| t * t.sin())).abs() < 1e-13);
        assert!((int_t_int_t_sin(x) - rule.integrate(0.0, x, |t| t * int_t_sin(t))).abs() < 1e-12);
        for x in [1e-3, 0.2, 0.999, 1.0] {
            let a = rule.integrate(0.0, x, |t| t * t.sin());
            assert!((int_t_sin(x) / a - 1.0).abs() < 1e-14, "{x}");
            let b = rule.integrate(0.0, x, |t| t * rule.integrate(0.0, t, |s| s * s.sin()));
            assert!((int_t_int_t_sin(x) / b - 1.0).abs() < 1e-13, "{x}");
        }
    }
}
