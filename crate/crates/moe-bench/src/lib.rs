//! Shared fixtures for the criterion benchmarks.

use moe_core::model::{Atom, ExpertActivation, GatingKind, MixingMeasure};
use moe_core::rng::Rng64;
use moe_core::synth::{generate_dataset, sample_ground_truth, Dataset, GroundTruthConfig, Regime};

/// Reference-scale ground truth (d=32, k*=8) used by the hot-path benchmarks.
pub fn reference_truth() -> MixingMeasure {
    let cfg = GroundTruthConfig::defaults(Regime::Regime2, ExpertActivation::ReLU);
    sample_ground_truth(&cfg, &mut Rng64::from_seed(1)).unwrap()
}

/// Dataset of `n` rows drawn from [`reference_truth`].
pub fn reference_dataset(n: usize) -> Dataset {
    let cfg = GroundTruthConfig::defaults(Regime::Regime2, ExpertActivation::ReLU);
    let truth = sample_ground_truth(&cfg, &mut Rng64::from_seed(1)).unwrap();
    generate_dataset(&truth, n, cfg.nu, &cfg, &mut Rng64::from_seed(2)).unwrap()
}

/// Random k-atom measure in dimension d.
pub fn random_measure(d: usize, k: usize, seed: u64) -> MixingMeasure {
    let mut rng = Rng64::from_seed(seed);
    let atoms = (0..k)
        .map(|_| Atom {
            beta0: rng.standard_normal(),
            beta1: (0..d).map(|_| rng.standard_normal()).collect(),
            a: (0..d).map(|_| rng.standard_normal()).collect(),
            b: rng.standard_normal(),
        })
        .collect();
    MixingMeasure::new(atoms, GatingKind::Sigmoid, ExpertActivation::ReLU).unwrap()
}
