use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xsd_core::decoders::{DecoderSpec, Method};
use xsd_core::evaluation::{loso, EvalOptions};
use xsd_core::synth::{bayes_accuracy, generate, shift_profile, SubjectParams, SynthConfig};
use xsd_oracles::normal_cdf_simpson;

fn cfg(n_subjects: usize, trials: usize, d: usize, gamma: f64, tau: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        n_subjects,
        trials_per_subject: trials,
        d,
        mu: 2.0,
        sigma: 1.0,
        gamma,
        tau,
        seed,
    }
}

#[test]
fn bayes_oracle_matches_numerical_integration() {
    let one = SynthConfig { d: 1, gamma: 0.0, ..cfg(1, 2, 1, 0.0, 0.0, 0) };
    let params = SubjectParams::draw(&one, 1);
    let want = normal_cdf_simpson(1.0);
    assert!((bayes_accuracy(&params, &one).unwrap() - want).abs() < 1e-12);

    let null = SynthConfig { mu: 0.0, ..one.clone() };
    assert_eq!(bayes_accuracy(&SubjectParams::draw(&null, 1), &null).unwrap(), 0.5);
}

#[test]
fn bayes_accuracy_is_invariant_to_the_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let want = normal_cdf_simpson(2.0 / 2.0);
    for _ in 0..10 {
        let gamma: f64 = rng.random_range(0.05..1.5);
        let c = SynthConfig { tau: 0.7, ..cfg(3, 2, 8, gamma, 0.7, rng.random()) };
        for sid in 1..=3 {
            let got = bayes_accuracy(&SubjectParams::draw(&c, sid), &c).unwrap();
            assert!((got - want).abs() < 1e-9, "gamma {gamma}: {got} vs {want}");
        }
    }
}

#[test]
fn no_shift_subjects_share_feature_means() {
    let (ds, _) = generate(&cfg(2, 200, 5, 0.0, 0.0, 31)).unwrap();
    let bound = 4.0 * 1.0 / (200f64).sqrt();
    let mean = |s: usize, j: usize| {
        let t = ds.subjects()[s].trials();
        t.iter().map(|r| r.features[j]).sum::<f64>() / t.len() as f64
    };
    for j in 0..5 {
        assert!((mean(0, j) - mean(1, j)).abs() <= bound, "coordinate {j}");
    }
}

#[test]
fn class_balance_is_exact() {
    let (ds, _) = generate(&cfg(5, 46, 3, 0.3, 0.2, 2)).unwrap();
    for s in ds.subjects() {
        assert_eq!(s.class_counts(), [23, 23]);
    }
}

#[test]
fn profile_null_and_disjoint_extremes() {
    let (iid, _) = generate(&cfg(4, 200, 10, 0.0, 0.0, 8)).unwrap();
    let prof = shift_profile(&iid, 8).unwrap();
    assert_eq!(prof.pairs().len(), 6);
    for &v in prof.pairs() {
        assert!((v - 0.5).abs() <= 0.07, "iid pair value {v}");
    }
    let (far, _) = generate(&cfg(3, 200, 10, 0.3, 20.0, 8)).unwrap();
    assert!(shift_profile(&far, 8).unwrap().pairs().iter().all(|&v| v >= 0.95));
}

#[test]
fn profile_mean_grows_with_tau() {
    let taus = [0.0, 0.15, 0.4];
    let means: Vec<f64> = taus
        .iter()
        .map(|&tau| {
            (0..10)
                .map(|seed| {
                    let (ds, _) = generate(&cfg(3, 100, 10, 0.3, tau, seed)).unwrap();
                    shift_profile(&ds, seed).unwrap().mean()
                })
                .sum::<f64>()
                / 10.0
        })
        .collect();
    assert!(means[0] <= means[1] && means[1] <= means[2], "{means:?}");
}

#[test]
fn null_signal_decodes_at_chance() {
    let c = SynthConfig { mu: 0.0, ..cfg(4, 200, 5, 0.3, 0.3, 41) };
    let (ds, _) = generate(&c).unwrap();
    let specs = [DecoderSpec::new(Method::Pool), DecoderSpec::new(Method::Sg)];
    let table = loso(&ds, &specs, &EvalOptions::default(), 1).unwrap();
    // 800 scored trials: 3 binomial standard errors is about 0.053
    for m in [Method::Pool, Method::Sg] {
        let acc = table.mean(m).unwrap();
        assert!((acc - 0.5).abs() <= 0.053, "{m}: {acc}");
    }
}

#[test]
fn generation_is_reproducible_and_prefix_stable() {
    let a = generate(&cfg(3, 20, 4, 0.3, 0.5, 99)).unwrap();
    let b = generate(&cfg(3, 20, 4, 0.3, 0.5, 99)).unwrap();
    assert_eq!(a, b);
    let more = generate(&cfg(5, 20, 4, 0.3, 0.5, 99)).unwrap();
    assert_eq!(&more.0.subjects()[..3], a.0.subjects());
}
