//! End-to-end checks through the public API: simulate a Duffing oscillator,
//! push the data through training, selection and sparse regression.

use ndarray::Array2;
use siva::physics::{Encoding, ModelSpec, ParameterSet};
use siva::signal::{derive_states, resample_and_trim, PreprocessSettings, TimeSeries};
use siva::sim::{integrate_rk45, IvpConfig, Trajectory};
use siva::sindy::{build_library, mass_scaled_targets, stls, FunctionLibrary};
use siva::train::{build_networks, detect_convergence, run_training, Provenance, SivaDatasets, StateTriplet, TrainConfig};
use siva::uq::{approach_three, approach_two, harvested_samples, ScoringTarget};

const RATE: f64 = 2000.0;

fn duffing() -> (ModelSpec, ParameterSet) {
    let model = ModelSpec::duffing(0.05, [Encoding::SciNotation; 4]);
    let truth = ParameterSet::new(&model, vec![0.5, 4000.0, 300.0, 3e8]).unwrap();
    (model, truth)
}

fn simulate(model: &ModelSpec, params: &ParameterSet, v0: f64, seconds: f64) -> Trajectory {
    let n = (seconds * RATE) as usize;
    let grid: Vec<f64> = (0..=n).map(|i| i as f64 / RATE).collect();
    integrate_rk45(model, params, &[0.0, v0], (0.0, seconds), &grid, None, &IvpConfig::default()).unwrap()
}

fn series(a: Array2<f64>) -> TimeSeries {
    TimeSeries::new(RATE, 0.0, a).unwrap()
}

fn triplet(tr: &Trajectory, provenance: Provenance) -> StateTriplet {
    StateTriplet::new(
        provenance,
        series(tr.displacements()),
        series(tr.velocities()),
        series(tr.accelerations.clone()),
        None,
    )
    .unwrap()
}

fn datasets() -> (ModelSpec, SivaDatasets) {
    let (model, truth) = duffing();
    let data = SivaDatasets::new(
        triplet(&simulate(&model, &truth, 5.0, 0.5), Provenance::Training),
        vec![
            triplet(&simulate(&model, &truth, 3.0, 0.5), Provenance::Validation),
            triplet(&simulate(&model, &truth, 8.0, 0.5), Provenance::Validation),
        ],
    )
    .unwrap();
    (model, data)
}

fn short_config(seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: 4,
        batch_size: 100,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn short_training_run_is_finite_and_reproducible() {
    let (mut model, data) = datasets();
    for (c, p) in model.coefficients.iter_mut().zip([1.0, 1e3, 1e2, 1e8]) {
        c.prior_magnitude = Some(p);
    }
    let cfg = short_config(11);
    let run = || {
        let (p, d) = build_networks(&model, &cfg).unwrap();
        run_training(p, d, &model, &data, &cfg).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.records, b.records);
    assert_eq!(a.generator.parameters(), b.generator.parameters());
    assert_eq!(a.records.len(), 4);
    for r in &a.records {
        assert!(r.d_loss.is_finite() && r.adv_loss.is_finite() && r.mse_loss.is_finite());
        // The priors keep the early estimates at the right order of magnitude.
        for (v, t) in r.param_mean.values.iter().zip([0.5, 4000.0, 300.0, 3e8]) {
            assert!(v / t > 0.05 && v / t < 20.0, "{v} vs {t}");
        }
    }
    // Too few epochs to fill the convergence window.
    assert_eq!(detect_convergence(&a.records, &cfg.convergence), None);

    let other = {
        let cfg = short_config(12);
        let (p, d) = build_networks(&model, &cfg).unwrap();
        run_training(p, d, &model, &data, &cfg).unwrap()
    };
    assert_ne!(a.records, other.records);
}

#[test]
fn harvested_epochs_feed_selection() {
    let (model, data) = datasets();
    let cfg = short_config(5);
    let (p, d) = build_networks(&model, &cfg).unwrap();
    let run = run_training(p, d, &model, &data, &cfg).unwrap();
    let (names, samples) = harvested_samples(&run.records, 1).unwrap();
    assert_eq!(names, vec!["b", "b_nl", "k", "k_nl"]);
    assert_eq!(samples.nrows(), 3);
    let (mean, posterior) = approach_two(&run.records, 1).unwrap();
    let posterior = posterior.unwrap();
    for (j, c) in posterior.coefficients.iter().enumerate() {
        let col_mean = samples.column(j).mean().unwrap();
        assert!((mean.values[j] - col_mean).abs() <= 1e-12 * col_mean.abs());
        assert!(c.ci95[0] <= c.fit.mean && c.fit.mean <= c.ci95[1]);
    }

    // The truth wins against the harvested estimates when scored on the
    // data it generated.
    let (_, truth) = duffing();
    let target = ScoringTarget {
        displacement: data.training.displacement.clone(),
        initial_state: vec![0.0, 5.0],
        force: None,
    };
    let mut candidates: Vec<ParameterSet> = run.records.iter().map(|r| r.param_mean.clone()).collect();
    candidates.push(truth.clone());
    let sel = approach_three(&candidates, &model, &[target], &IvpConfig::default()).unwrap();
    assert_eq!(sel.best_index, candidates.len() - 1);
    assert!(sel.mse < 1e-12);
}

#[test]
fn states_derived_from_acceleration_track_the_simulation() {
    let (model, truth) = duffing();
    // A linear, lightly damped oscillator at about 12 Hz, inside the
    // default pass band.
    let linear = ParameterSet::new(&model, vec![0.05, 0.0, 300.0, 0.0]).unwrap();
    let tr = simulate(&model, &linear, 0.5, 4.0);
    let (disp, vel, _) = derive_states(&series(tr.accelerations.clone()), &PreprocessSettings::default()).unwrap();
    let core = 2000..6000;
    let err = |a: &TimeSeries, b: &Array2<f64>| {
        let peak = core.clone().map(|i| b[[i, 0]].abs()).fold(0.0, f64::max);
        core.clone().map(|i| (a.channels[[i, 0]] - b[[i, 0]]).abs()).fold(0.0, f64::max) / peak
    };
    assert!(err(&vel, &tr.velocities()) < 0.05);
    assert!(err(&disp, &tr.displacements()) < 0.05);

    // Decimation keeps every 8th sample from the requested start and
    // rebases time to zero.
    let full = series(simulate(&model, &truth, 5.0, 0.2).displacements());
    let d = resample_and_trim(&full, 250.0, 0.01).unwrap();
    assert_eq!(d.sample_rate, 250.0);
    assert_eq!(d.start_time, 0.0);
    for i in 0..d.len() {
        assert_eq!(d.channels[[i, 0]], full.channels[[24 + 8 * i, 0]]);
    }
}

#[test]
fn sparse_regression_on_simulated_data_recovers_duffing() {
    let (model, truth) = duffing();
    let tr = simulate(&model, &truth, 5.0, 1.0);
    let lib = FunctionLibrary::duffing();
    let theta = build_library(&series(tr.displacements()), &series(tr.velocities()), &lib).unwrap();
    let y = mass_scaled_targets(&series(tr.accelerations.clone()), &[0.05], None).unwrap();
    let fit = stls(&theta, &y, 0.1, 10).unwrap();
    let (rebuilt, params) = fit.to_model(&lib, &[0.05]);
    // The recovered model reproduces the response it was fitted to.
    let again = simulate(&rebuilt, &params, 5.0, 1.0);
    let worst = (0..again.times.len())
        .map(|i| (again.states[[i, 0]] - tr.states[[i, 0]]).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-5, "{worst}");
}
