//! Latent world model trained on a two-regime market.

mod common;

use advbid_core::expert::{solve_day, ExpertConfig};
use advbid_core::market::{generate_dataset, EnvironmentDay, GeneratorConfig, Mechanism, Split};
use advbid_core::train::{pretrain_world, TrainConfig, TrainingSet};
use advbid_core::world::EpisodeFeatures;
use common::Fisher;

#[test]
fn filtered_latents_separate_regimes() {
    let gen = GeneratorConfig { auctions_per_day: 4800, slots: 12, ..GeneratorConfig::two_regime(12, 10) };
    let days = generate_dataset(&gen).unwrap();
    let experts: Vec<_> = days.iter().map(|d| solve_day(d, &ExpertConfig::default()).unwrap()).collect();
    let train: Vec<&EnvironmentDay> = days.iter().filter(|d| d.split == Split::Train).collect();
    let data = TrainingSet::new(train, &experts).unwrap();
    let cfg = TrainConfig::default();
    let (world, _, trace) = pretrain_world(&cfg, &data, 0).unwrap();

    let head: f64 = trace.vib[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = trace.vib[180..200].iter().sum::<f64>() / 20.0;
    assert!(tail < head, "latent objective {head} -> {tail} over the first 200 steps");

    let latent = |d: &EnvironmentDay| {
        let e = experts.iter().find(|e| e.day_id == d.day_id).unwrap();
        let f = EpisodeFeatures::new(d, &e.demonstration, true);
        world.day_latents(&[&f]).unwrap().data
    };
    let by_regime = |split: Split, mech: Mechanism| -> Vec<Vec<f64>> { days.iter().filter(|d| d.split == split && d.mechanism == mech).map(latent).collect() };
    let fisher = Fisher::fit(&by_regime(Split::Train, Mechanism::Gsp), &by_regime(Split::Train, Mechanism::Mix));
    let held_out: Vec<&EnvironmentDay> = days.iter().filter(|d| d.split == Split::TestIid).collect();
    let correct = held_out.iter().filter(|d| fisher.classify(&latent(d)) == (d.mechanism == Mechanism::Mix)).count();
    let acc = correct as f64 / held_out.len() as f64;
    assert!(acc >= 0.9, "held-out regime accuracy {acc}");
}
