#![allow(dead_code)]

pub mod grad;

use advbid_core::diff::ParamSet;
use advbid_core::env::replay_sequence;
use advbid_core::market::{generate_dataset, DayGroup, EnvironmentDay, GeneratorConfig, Mechanism, Split};
use advbid_core::policy::{Policy, PolicyConfig};
use advbid_core::seed;
use advbid_core::world::{EpisodeFeatures, WorldModel, WorldModelConfig};
use rand::Rng;

pub const H: usize = 4;

pub fn tiny_days() -> Vec<EnvironmentDay> {
    let cfg = GeneratorConfig {
        auctions_per_day: 60 * H,
        slots: H,
        groups: vec![
            DayGroup { split: Split::Train, mechanism: Mechanism::Gsp, days: 2, k_range: (0.0, 0.0) },
            DayGroup { split: Split::Train, mechanism: Mechanism::Mix, days: 2, k_range: (0.4, 0.9) },
        ],
        ..GeneratorConfig::default()
    };
    generate_dataset(&cfg).unwrap()
}

/// Slowly varying ratio sequences scaled by `scale`.
pub fn episodes(days: &[EnvironmentDay], scale: f64, expert: bool) -> Vec<EpisodeFeatures> {
    days.iter()
        .enumerate()
        .map(|(i, d)| {
            let r: Vec<f64> = (0..d.slots()).map(|t| scale * (0.7 + 0.06 * ((t + 2 * i) % 5) as f64)).collect();
            EpisodeFeatures::new(d, &replay_sequence(d, "fixture", &r).unwrap(), expert)
        })
        .collect()
}

pub fn tiny_world(tag: &str) -> WorldModel {
    let cfg = WorldModelConfig { latent_dim: 3, hidden: 5, ..WorldModelConfig::default() };
    let mut w = WorldModel::new(cfg, &mut seed::rng(11, tag));
    jitter(&mut w.params, 0.1, tag);
    w
}

pub fn tiny_policy(world: &WorldModel, use_latent: bool, tag: &str) -> Policy {
    let cfg = PolicyConfig { hidden: 6, use_latent, ..PolicyConfig::default() };
    let mut p = Policy::new(cfg, world, -0.2, &mut seed::rng(12, tag));
    // move off the zero-initialised output layer so every path carries gradient
    jitter(&mut p.params, 0.1, tag);
    p
}

pub fn jitter(params: &mut ParamSet, scale: f64, tag: &str) {
    let mut rng = seed::rng(13, tag);
    let flat: Vec<f64> = params.flatten().iter().map(|x| x + scale * rng.random_range(-1.0..1.0)).collect();
    params.assign_flat(&flat);
}

/// Two-class Fisher discriminant: projection `w = S_w^-1 (mu_1 - mu_0)` and
/// the midpoint threshold between projected class means.
pub struct Fisher {
    pub w: Vec<f64>,
    pub threshold: f64,
}

impl Fisher {
    pub fn fit(class0: &[Vec<f64>], class1: &[Vec<f64>]) -> Fisher {
        use nalgebra::{DMatrix, DVector};
        let d = class0[0].len();
        let mean = |xs: &[Vec<f64>]| DVector::from_fn(d, |i, _| xs.iter().map(|x| x[i]).sum::<f64>() / xs.len() as f64);
        let (m0, m1) = (mean(class0), mean(class1));
        let mut sw = DMatrix::<f64>::identity(d, d) * 1e-6;
        for (xs, m) in [(class0, &m0), (class1, &m1)] {
            for x in xs {
                let c = DVector::from_column_slice(x) - m;
                sw += &c * c.transpose();
            }
        }
        let w = sw.lu().solve(&(&m1 - &m0)).expect("scatter matrix is regularised");
        let threshold = 0.5 * (w.dot(&m0) + w.dot(&m1));
        Fisher { w: w.iter().copied().collect(), threshold }
    }

    /// True for class 1.
    pub fn classify(&self, x: &[f64]) -> bool {
        self.w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() > self.threshold
    }
}
