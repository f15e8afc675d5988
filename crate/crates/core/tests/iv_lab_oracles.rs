use nalgebra::DVector;

use cvgmm_core::gmm::mean_moment;
use cvgmm_core::iv_lab::{build_candidates, generate_iv_data, IvDesign};
use cvgmm_core::{estimate, OptimizerConfig, WeightingSpec};

fn design(t: usize, alpha: f64) -> IvDesign {
    IvDesign {
        t,
        alpha,
        reps: 1,
        ..IvDesign::default()
    }
}

#[test]
fn valid_second_model_moment_shrinks_at_root_t_rate() {
    let avg_norm = |t: usize| {
        let d = design(t, 0.0);
        let (_, m2) = build_candidates(d.p1, d.p2, d.c1, d.c2);
        let beta2 = DVector::from_element(d.p2, d.beta2);
        (0..20)
            .map(|rep| {
                let data = generate_iv_data(&d, rep).to_dataset().unwrap();
                mean_moment(&m2, &data, beta2.as_slice()).norm()
            })
            .sum::<f64>()
            / 20.0
    };
    let (small, large) = (avg_norm(100), avg_norm(10_000));
    // Ratio is 0.1 in expectation.
    assert!(large / small < 0.2, "{small} -> {large}");
}

#[test]
fn misspecified_second_model_minimand_plateaus_above_zero() {
    let q = |t: usize| {
        let d = design(t, 10.0);
        let (_, m2) = build_candidates(d.p1, d.p2, d.c1, d.c2);
        let data = generate_iv_data(&d, 0).to_dataset().unwrap();
        estimate(&m2, &data, &WeightingSpec::Identity, &OptimizerConfig::polish_only())
            .unwrap()
            .objective_value
    };
    // δ² spans the first p² instrument directions, so the population
    // minimand is the squared tenth coordinate of (α/c₂)·1, i.e. 1.
    let (a, b) = (q(1000), q(4000));
    assert!(a > 0.1 && b > 0.1, "{a} {b}");
    let plateau = q(64_000);
    assert!((plateau - 1.0).abs() < 0.3, "{plateau}");
}
