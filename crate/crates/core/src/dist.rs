//! Normal and Student-t distribution functions.
//!
//! The t law goes through the regularized incomplete beta function (Lentz
//! continued fraction, from `statrs`); quantiles are polished by safeguarded
//! Newton iterations on the CDF. The normal tail uses the `libm` erfc, which
//! is accurate to a few ulp (the `statrs` one is off by about 1e-12).

use libm::erfc;
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc_inv;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_quantile(p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "probability {p} outside [0, 1]");
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let mut x = -SQRT_2 * erfc_inv(2.0 * p);
    // one Newton step removes the residual error of the inverse
    let d = normal_pdf(x);
    if d > 0.0 {
        x -= (normal_cdf(x) - p) / d;
    }
    x
}

/// Above this many degrees of freedom the incomplete beta prefactor loses
/// digits; Hill's normalizing transform is accurate to ~1e-14 there.
const LARGE_DF: f64 = 1000.0;

/// Normal deviate with the same upper tail as `|x|` under t(df) (Hill 1970).
fn hill_deviate(x: f64, df: f64) -> f64 {
    let a = df - 0.5;
    let b = 48.0 * a * a;
    let y = a * (x * x / df).ln_1p();
    (((((-0.4 * y - 3.3) * y - 24.0) * y - 85.5) / (0.8 * y * y + 100.0 + b) + y + 3.0) / b + 1.0)
        * y.sqrt()
}

/// Upper tail `P(T > x)`; `df = inf` gives the normal law.
pub fn t_sf(x: f64, df: f64) -> f64 {
    if df.is_infinite() {
        return normal_cdf(-x);
    }
    if df >= LARGE_DF {
        let z = hill_deviate(x, df);
        return if x >= 0.0 {
            normal_cdf(-z)
        } else {
            normal_cdf(z)
        };
    }
    let tail = 0.5 * beta_reg(0.5 * df, 0.5, df / (df + x * x));
    if x >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

pub fn t_cdf(x: f64, df: f64) -> f64 {
    t_sf(-x, df)
}

fn t_pdf(x: f64, df: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let lc =
        ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df) - 0.5 * (df * std::f64::consts::PI).ln();
    (lc - 0.5 * (df + 1.0) * (1.0 + x * x / df).ln()).exp()
}

/// Two-sided p-value `P(|T| >= |t|)`.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if df.is_infinite() {
        return (2.0 * normal_cdf(-t.abs())).min(1.0);
    }
    if df >= LARGE_DF {
        return (2.0 * normal_cdf(-hill_deviate(t, df))).min(1.0);
    }
    beta_reg(0.5 * df, 0.5, df / (df + t * t)).min(1.0)
}

pub fn t_quantile(p: f64, df: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "probability {p} outside [0, 1]");
    assert!(df > 0.0, "degrees of freedom must be positive");
    if df.is_infinite() || df > 1e10 {
        return normal_quantile(p);
    }
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        return -t_quantile(1.0 - p, df);
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    // closed forms for one and two degrees of freedom
    if df == 1.0 {
        return (std::f64::consts::PI * (p - 0.5)).tan();
    }
    if df == 2.0 {
        let a = 4.0 * p * (1.0 - p);
        return 2.0 * (p - 0.5) * (2.0 / a).sqrt();
    }
    let q = 1.0 - p;
    // bracket [lo, hi] around the root of sf(x) = q
    let mut lo = 0.0;
    let mut hi = normal_quantile(p).max(1.0);
    while t_sf(hi, df) > q {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = t_sf(x, df) - q;
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let step = f / t_pdf(x, df);
        let mut next = x + step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1.0) {
            return next;
        }
        x = next;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reference_quantiles() {
        // qnorm(0.975), qt(0.975, c(3, 10, 30)); two df in closed form
        assert_relative_eq!(normal_quantile(0.975), 1.959963984540054, epsilon = 1e-14);
        assert_relative_eq!(
            t_quantile(0.975, 2.0),
            0.95 / (2.0f64 * 0.975 * 0.025).sqrt(),
            epsilon = 1e-13
        );
        assert_relative_eq!(t_quantile(0.975, 3.0), 3.182446305284263, epsilon = 1e-12);
        assert_relative_eq!(t_quantile(0.975, 10.0), 2.228138851986274, epsilon = 1e-12);
        assert_relative_eq!(t_quantile(0.975, 30.0), 2.042272456301238, epsilon = 1e-12);
        assert_relative_eq!(t_quantile(0.025, 3.0), -3.182446305284263, epsilon = 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf_for_fractional_df() {
        for &df in &[0.7, 1.5, 2.5, 3.7, 12.3, 250.0, 1e6] {
            for &p in &[0.001, 0.025, 0.3, 0.6, 0.975, 0.9995] {
                let x = t_quantile(p, df);
                assert_relative_eq!(t_cdf(x, df), p, max_relative = 1e-11);
            }
        }
    }

    #[test]
    fn two_sided_p_at_critical_value() {
        let z = normal_quantile(0.975);
        assert_relative_eq!(t_two_sided_p(z, f64::INFINITY), 0.05, epsilon = 1e-14);
        let t3 = t_quantile(0.975, 3.0);
        assert_relative_eq!(t_two_sided_p(t3, 3.0), 0.05, epsilon = 1e-12);
        assert_eq!(t_two_sided_p(0.0, 5.0), 1.0);
    }

    #[test]
    fn t_tends_to_normal() {
        assert_relative_eq!(
            t_quantile(0.975, 1e9),
            normal_quantile(0.975),
            epsilon = 1e-7
        );
    }
}
