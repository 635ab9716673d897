use rand::Rng;
use rand_distr::{Distribution, Normal, StudentT};

use crate::model::{IpdDataset, Record};
use crate::rng;

use super::{ResidualLaw, ScenarioConfig, SizeRegime};

/// Draw streams per data component, so that cells differing only in, say,
/// `tau` reuse the same study sizes, baselines and residual draws.
const SIZES: u64 = 0;
const BASELINES: u64 = 1;
const EFFECTS: u64 = 2;
const RESIDUALS: u64 = 3;

/// Study size: rounded to the nearest integer, at least 3.
fn draw_size<R: Rng>(regime: SizeRegime, rng: &mut R) -> usize {
    let (a, b) = match regime {
        SizeRegime::Small => (30.0, 100.0),
        SizeRegime::Medium => (100.0, 200.0),
        SizeRegime::VerySmall => {
            if rng.random::<f64>() < 0.8 {
                (15.0, 30.0)
            } else {
                (30.0, 100.0)
            }
        }
    };
    let v: f64 = rng.random_range(a..b);
    (v.round() as usize).max(3)
}

fn draw_residual<R: Rng>(law: ResidualLaw, sigma: f64, rng: &mut R) -> f64 {
    match law {
        ResidualLaw::Normal => sigma * rng.sample::<f64, _>(rand_distr::StandardNormal),
        ResidualLaw::StudentT3Scaled => {
            let t = StudentT::new(3.0).expect("valid df");
            sigma * t.sample(rng) / 3.0_f64.sqrt()
        }
        ResidualLaw::LognormalScaled => {
            let e = std::f64::consts::E;
            let x: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal);
            (x.exp() - e.sqrt()) * sigma / ((e - 1.0) * e).sqrt()
        }
    }
}

/// One simulated meta-analysis for the scenario.
pub fn generate_dataset(cfg: &ScenarioConfig, seed: u64) -> IpdDataset {
    let k = cfg.k;
    let sigma = cfg.sigma_values();
    let mut size_rng = rng::substream(seed, &[SIZES]);
    let mut base_rng = rng::substream(seed, &[BASELINES]);
    let mut effect_rng = rng::substream(seed, &[EFFECTS]);
    let mut resid_rng = rng::substream(seed, &[RESIDUALS]);
    let baseline = Normal::new(cfg.baseline_mean, cfg.baseline_sd).expect("validated baseline law");

    let mut rows = Vec::new();
    for i in 0..k {
        let n = draw_size(cfg.size_regime, &mut size_rng);
        let p: f64 = size_rng.random_range(cfg.allocation.0..=cfg.allocation.1);
        // redraw the arms until both are present
        let arms = loop {
            let arms: Vec<bool> = (0..n).map(|_| size_rng.random::<f64>() < p).collect();
            if arms.iter().any(|&t| t) && arms.iter().any(|&t| !t) {
                break arms;
            }
        };
        let u = cfg.theta + cfg.tau * effect_rng.sample::<f64, _>(rand_distr::StandardNormal);
        for treated in arms {
            let y0 = baseline.sample(&mut base_rng);
            let e = draw_residual(cfg.residual_law, sigma[i], &mut resid_rng);
            let z = if treated { 1.0 } else { 0.0 };
            let y = cfg.intercepts[i] + cfg.slopes[i] * y0 + u * z + e;
            rows.push(Record::new(i + 1, y, y0, treated));
        }
    }
    IpdDataset::from_records(rows).expect("generated studies have both arms and n >= 3")
}
