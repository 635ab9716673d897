mod common;

use approx::assert_relative_eq;
use ipdperm::inference::{
    kenward_roger_adjustment, satterthwaite_from_parts, theta_variance_gradient,
};
use ipdperm::reml::Component;
use ipdperm::{
    fit_reml, kenward_roger, satterthwaite_ci, satterthwaite_df, wald_normal, FitOptions,
    IpdDataset, Record,
};
use nalgebra::DMatrix;

fn theta_var(ds: &IpdDataset, tau2: f64, sigma2: &[f64]) -> f64 {
    let phi = common::dense_fixed_cov(ds, tau2, sigma2);
    phi[(2 * ds.k(), 2 * ds.k())]
}

/// Central differences of the dense GLS variance against the analytic gradient.
#[test]
fn variance_gradient_matches_finite_differences() {
    let mut rng = common::rng(51);
    let mut checked = 0;
    while checked < 12 {
        let ds = common::fuzz_dataset(&mut rng);
        let opts = FitOptions {
            equal_variances: checked % 2 == 0,
            ..FitOptions::default()
        };
        let fit = fit_reml(&ds, &opts).unwrap();
        if fit.tau2_on_boundary {
            continue;
        }
        checked += 1;
        let g = theta_variance_gradient(&fit).unwrap();
        let (tau2, sigma2) = (fit.vc_hat.tau2, fit.vc_hat.sigma2.clone());
        for (a, comp) in fit.components.iter().enumerate() {
            let h = 1e-5 * comp.value(&fit.vc_hat).max(1e-3);
            let eval = |d: f64| {
                let (mut t, mut s) = (tau2, sigma2.clone());
                match *comp {
                    Component::Tau2 => t += d,
                    Component::Sigma2 => s.iter_mut().for_each(|v| *v += d),
                    Component::Sigma2Study(i) => s[i] += d,
                }
                theta_var(&ds, t, &s)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert_relative_eq!(g[a], fd, max_relative = 1e-5, epsilon = 1e-10);
        }
    }
}

/// `Lambda` from dense matrices, following the same expansion.
fn dense_lambda(
    ds: &IpdDataset,
    tau2: f64,
    sigma2: &[f64],
    comps: &[Component],
    w: &DMatrix<f64>,
) -> f64 {
    let n = ds.n_total();
    let c = common::dense_c(ds, true);
    let si = common::dense_sigma(ds, tau2, sigma2).try_inverse().unwrap();
    let phi = (c.transpose() * &si * &c).try_inverse().unwrap();
    let z = DMatrix::from_fn(n, 1, |r, _| if ds.arms()[r] { 1.0 } else { 0.0 });
    let mut study = vec![0; n];
    for (i, b) in ds.blocks().iter().enumerate() {
        b.clone().for_each(|r| study[r] = i);
    }
    let deriv = |comp: Component| match comp {
        Component::Tau2 => DMatrix::from_fn(n, n, |a, b| {
            if study[a] == study[b] {
                z[a] * z[b]
            } else {
                0.0
            }
        }),
        Component::Sigma2 => DMatrix::identity(n, n),
        Component::Sigma2Study(i) => {
            DMatrix::from_fn(n, n, |a, b| f64::from(a == b && study[a] == i))
        }
    };
    let p: Vec<_> = comps
        .iter()
        .map(|&ca| -(c.transpose() * &si * deriv(ca) * &si * &c))
        .collect();
    let mut inner = DMatrix::zeros(c.ncols(), c.ncols());
    for (a, &ca) in comps.iter().enumerate() {
        for (b, &cb) in comps.iter().enumerate() {
            let q = c.transpose() * &si * deriv(ca) * &si * deriv(cb) * &si * &c;
            inner += (q - &p[a] * &phi * &p[b]) * w[(a, b)];
        }
    }
    let lambda = &phi * inner * &phi;
    lambda[(2 * ds.k(), 2 * ds.k())]
}

#[test]
fn kenward_roger_matches_dense_oracle() {
    let mut rng = common::rng(52);
    for i in 0..8 {
        let ds = common::fuzz_dataset(&mut rng);
        let opts = FitOptions {
            equal_variances: i % 2 == 0,
            ..FitOptions::default()
        };
        let fit = fit_reml(&ds, &opts).unwrap();
        let Some(w) = fit.vc_info_inv.clone() else {
            continue;
        };
        let adj = kenward_roger_adjustment(&fit, &w).unwrap();
        let lam = dense_lambda(
            &ds,
            fit.vc_hat.tau2,
            &fit.vc_hat.sigma2,
            &fit.components,
            &w,
        );
        assert_relative_eq!(adj.lambda_theta, lam, max_relative = 1e-7, epsilon = 1e-12);
        assert_relative_eq!(
            adj.se_kr,
            (fit.se_theta.powi(2) + 2.0 * lam).sqrt(),
            max_relative = 1e-7
        );
    }
}

#[test]
fn kenward_roger_tends_to_satterthwaite_as_component_uncertainty_vanishes() {
    let ds = common::fuzz_dataset(&mut common::rng(53));
    let fit = fit_reml(&ds, &FitOptions::default()).unwrap();
    let w = fit.vc_info_inv.clone().unwrap();
    let mut last = f64::INFINITY;
    for eps in [1.0, 1e-2, 1e-4, 1e-6] {
        let gap = (kenward_roger_adjustment(&fit, &(&w * eps)).unwrap().se_kr - fit.se_theta).abs();
        assert!(gap <= last);
        last = gap;
    }
    assert!(last < 1e-6 * fit.se_theta);
}

/// A single residual variance with `Var = c sigma2` gives the residual
/// degrees of freedom exactly.
#[test]
fn single_component_df_is_residual_df() {
    let mut rng = common::rng(54);
    let rows = (0..30).map(|j| {
        let y0 = common::normal(&mut rng);
        Record::new(1, y0 + common::normal(&mut rng), y0, j % 3 == 0)
    });
    let ds = IpdDataset::from_records(rows).unwrap();
    let fit = fit_reml(&ds, &FitOptions::default()).unwrap();
    let s2 = fit.vc_hat.sigma2[0];
    let var = theta_var(&ds, 0.0, &[s2]);
    let h = 1e-6 * s2;
    let g = (theta_var(&ds, 0.0, &[s2 + h]) - theta_var(&ds, 0.0, &[s2 - h])) / (2.0 * h);
    let w = DMatrix::from_element(1, 1, 2.0 * s2 * s2 / fit.residual_df);
    let df = satterthwaite_from_parts(var, &[g], &w).unwrap();
    assert_relative_eq!(df, fit.residual_df, max_relative = 1e-6);
}

#[test]
fn satterthwaite_interval_contains_normal_interval() {
    let mut rng = common::rng(55);
    for _ in 0..30 {
        let ds = common::fuzz_dataset(&mut rng);
        let fit = fit_reml(&ds, &FitOptions::default()).unwrap();
        let n = wald_normal(&fit, 0.05).unwrap();
        let Ok(s) = satterthwaite_ci(&fit, 0.05) else {
            continue;
        };
        assert!(s.ci_lower <= n.ci_lower && n.ci_upper <= s.ci_upper);
        assert!(s.p_value >= n.p_value);
        if let Ok(kr) = kenward_roger(&fit, 0.05) {
            assert_eq!(kr.df, s.df);
            assert!(kr.se_used >= fit.se_theta * (1.0 - 1e-12));
        }
    }
}

#[test]
fn df_is_positive_and_finite() {
    let mut rng = common::rng(56);
    for _ in 0..30 {
        let ds = common::fuzz_dataset(&mut rng);
        let fit = fit_reml(&ds, &FitOptions::default()).unwrap();
        if let Ok(df) = satterthwaite_df(&fit) {
            assert!(df > 0.0 && df.is_finite());
        }
    }
}

#[test]
fn inference_refuses_null_fits_and_bad_alpha() {
    let ds = common::fuzz_dataset(&mut common::rng(57));
    let null = fit_reml(&ds, &FitOptions::default().null_model()).unwrap();
    assert!(wald_normal(&null, 0.05).is_err());
    let fit = fit_reml(&ds, &FitOptions::default()).unwrap();
    for bad in [0.0, 1.0, -0.1, f64::NAN] {
        assert!(wald_normal(&fit, bad).is_err());
    }
}
