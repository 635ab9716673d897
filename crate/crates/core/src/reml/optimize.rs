//! Small derivative-free and quasi-Newton maximisers used by the REML fit.

/// Outcome of a maximisation.
#[derive(Debug, Clone)]
pub(crate) struct Maximum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// Brent's parabolic/golden-section search for the maximum of `f` on
/// `[lo, hi]`. Terminates when the bracket is narrower than `2 * xtol`.
pub(crate) fn brent_max<F>(f: F, lo: f64, hi: f64, xtol: f64, max_iter: usize) -> Maximum
where
    F: Fn(f64) -> f64,
{
    // minimise g = -f
    let g = |x: f64| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            -v
        }
    };
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = g(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e): (f64, f64) = (0.0, 0.0);

    for iter in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = xtol + 1e-12 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            return Maximum {
                x: vec![x],
                value: -fx,
                iterations: iter,
                converged: true,
            };
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + if d >= 0.0 { tol1 } else { -tol1 }
        };
        let fu = g(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Maximum {
        x: vec![x],
        value: -fx,
        iterations: max_iter,
        converged: false,
    }
}

/// Finds a bracket `[a, c]` containing a local maximum of `f` starting from
/// `start`, staying inside `[lo, hi]`. Returns `(a, c)`.
pub(crate) fn bracket_from<F>(f: &F, start: f64, step: f64, lo: f64, hi: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let start = start.clamp(lo, hi);
    let f0 = f(start);
    let right = (start + step).min(hi);
    let left = (start - step).max(lo);
    let (fr, fl) = (f(right), f(left));
    if f0 >= fr && f0 >= fl {
        return (left, right);
    }
    // walk uphill with doubling steps
    let dir = if fr > fl { 1.0 } else { -1.0 };
    let (mut prev, mut cur, mut fcur) = if dir > 0.0 {
        (start, right, fr)
    } else {
        (start, left, fl)
    };
    let mut h = step;
    loop {
        h *= 2.0;
        let next = (cur + dir * h).clamp(lo, hi);
        if next == cur {
            return if dir > 0.0 { (prev, hi) } else { (lo, prev) };
        }
        let fnext = f(next);
        if fnext <= fcur {
            return if dir > 0.0 {
                (prev, next)
            } else {
                (next, prev)
            };
        }
        prev = cur;
        cur = next;
        fcur = fnext;
    }
}

/// Settings for [`bfgs_max`].
#[derive(Debug, Clone)]
pub(crate) struct BfgsSettings {
    pub max_iter: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub grad_step: f64,
}

impl Default for BfgsSettings {
    fn default() -> Self {
        Self {
            max_iter: 500,
            ftol: 1e-10,
            xtol: 1e-8,
            grad_step: 1e-5,
        }
    }
}

fn numerical_gradient<F>(f: &F, x: &[f64], h: f64, lower: &[f64]) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|j| {
            let orig = x[j];
            let at_bound = orig <= lower[j];
            xp[j] = orig + h;
            let fp = f(&xp);
            let g = if at_bound {
                xp[j] = orig;
                (fp - f(&xp)) / h
            } else {
                xp[j] = orig - h;
                (fp - f(&xp)) / (2.0 * h)
            };
            xp[j] = orig;
            g
        })
        .collect()
}

/// Projected BFGS ascent with central-difference gradients and box lower
/// bounds. Coordinates pinned at their bound with an outward gradient are
/// frozen for the step.
pub(crate) fn bfgs_max<F>(f: F, x0: &[f64], lower: &[f64], settings: &BfgsSettings) -> Maximum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let project = |x: &mut [f64]| {
        for (v, lo) in x.iter_mut().zip(lower) {
            if *v < *lo {
                *v = *lo;
            }
        }
    };
    let mut x = x0.to_vec();
    project(&mut x);
    let mut fx = f(&x);
    let mut grad = numerical_gradient(&f, &x, settings.grad_step, lower);
    // inverse Hessian approximation of -f
    let mut h = identity(n);

    for iter in 0..settings.max_iter {
        let free: Vec<bool> = (0..n)
            .map(|j| !(x[j] <= lower[j] && grad[j] < 0.0))
            .collect();
        let gnorm = (0..n)
            .filter(|&j| free[j])
            .map(|j| grad[j].abs())
            .fold(0.0, f64::max);
        if gnorm < 1e-7 * (1.0 + fx.abs()) {
            return Maximum {
                x,
                value: fx,
                iterations: iter,
                converged: true,
            };
        }
        // ascent direction d = H g on the free coordinates
        let mut dir = vec![0.0; n];
        for a in 0..n {
            if !free[a] {
                continue;
            }
            for b in 0..n {
                if free[b] {
                    dir[a] += h[a][b] * grad[b];
                }
            }
        }
        let mut slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if slope <= 0.0 {
            h = identity(n);
            for j in 0..n {
                dir[j] = if free[j] { grad[j] } else { 0.0 };
            }
            slope = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        }
        let max_step = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let mut step = if max_step > 5.0 { 5.0 / max_step } else { 1.0 };
        let mut accepted = None;
        for _ in 0..50 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            project(&mut trial);
            let ft = f(&trial);
            if ft.is_finite() && ft >= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            // no ascent along the quasi-Newton or gradient direction
            return Maximum {
                x,
                value: fx,
                iterations: iter,
                converged: gnorm < 1e-4 * (1.0 + fx.abs()),
            };
        };
        let gn = numerical_gradient(&f, &xn, settings.grad_step, lower);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        // minimising -f: y = grad(-f)_new - grad(-f)_old
        let y: Vec<f64> = gn.iter().zip(&grad).map(|(a, b)| b - a).collect();
        let df = fnew - fx;
        let dx = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        x = xn;
        fx = fnew;
        grad = gn;
        if df.abs() < settings.ftol && dx < settings.xtol {
            return Maximum {
                x,
                value: fx,
                iterations: iter + 1,
                converged: true,
            };
        }
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            let hy: Vec<f64> = (0..n)
                .map(|a| (0..n).map(|b| h[a][b] * y[b]).sum())
                .collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let rho = 1.0 / sy;
            for a in 0..n {
                for b in 0..n {
                    h[a][b] +=
                        (1.0 + yhy * rho) * rho * s[a] * s[b] - rho * (hy[a] * s[b] + s[a] * hy[b]);
                }
            }
        }
    }
    Maximum {
        x,
        value: fx,
        iterations: settings.max_iter,
        converged: false,
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|a| (0..n).map(|b| if a == b { 1.0 } else { 0.0 }).collect())
        .collect()
}
