//! The five subcommands. Each takes a resolved [`RunConfig`] and an output
//! directory, writes its artifacts there, and returns what it wrote so tests
//! can inspect results without re-reading files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use ndarray::{concatenate, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use siva::nn::Mlp;
use siva::physics::{ModelSpec, ParameterSet};
use siva::signal::{derive_states, dft_magnitude, resample_and_trim, TimeSeries};
use siva::sim::{integrate_rk45, interp_force, ForceInput, Trajectory};
use siva::sindy::{build_library, mass_scaled_targets, stls, IdentifiedTerm, SolveDiagnostics};
use siva::train::{build_networks, detect_convergence, run_training_with, EpochRecord, Provenance, SivaDatasets, StateTriplet, TrainConfig};
use siva::uq::{approach_one, approach_three, approach_two, score_candidate, ParameterPosterior, ScoringTarget};

use crate::config::{Approach, DatasetConfig, ForceConfig, PreprocessConfig, RunConfig, ScoreOn};
use crate::io::{read_json, read_series, write_json, write_series, write_table};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const BUNDLE: &str = "bundle.json";
pub const EPOCH_LOG: &str = "epochs.jsonl";
pub const SELECT_REPORT: &str = "select_report.json";
pub const SINDY_REPORT: &str = "sindy_report.json";

fn prepare_out(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    write_json(&out.join(RESOLVED_CONFIG), cfg)?;
    Ok(())
}

/// Non-finite values become `null` in JSON reports.
fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedCase {
    pub name: String,
    pub dataset: DatasetConfig,
}

fn uniform_grid(duration_s: f64, sample_rate_hz: f64) -> Result<Vec<f64>> {
    if !(duration_s > 0.0 && sample_rate_hz > 0.0 && duration_s.is_finite() && sample_rate_hz.is_finite()) {
        bail!("simulation needs a positive duration and sample rate");
    }
    let n = (duration_s * sample_rate_hz).round() as usize;
    Ok((0..=n).map(|i| i as f64 / sample_rate_hz).collect())
}

fn build_force(force: &ForceConfig, dof: usize, rate: f64) -> Result<ForceInput> {
    match force {
        ForceConfig::Csv { path, cutoff_s } => {
            let s = read_series(path)?;
            if s.channel_count() != dof {
                bail!("{}: force has {} channels, model has {dof}", path.display(), s.channel_count());
            }
            Ok(ForceInput::new(s, *cutoff_s))
        }
        ForceConfig::HalfSine { peak_force_n, duration_s } => {
            if peak_force_n.len() != dof || !(*duration_s > 0.0) {
                bail!("half-sine force needs one peak per degree of freedom and a positive duration");
            }
            // Sample the pulse finely enough that linear interpolation
            // reproduces it, independent of the output rate.
            let fine = (rate * 16.0).max(64.0 / duration_s);
            let n = (duration_s * fine).ceil() as usize;
            let ch = Array2::from_shape_fn((n + 1, dof), |(i, c)| {
                let t = (i as f64 / n as f64) * duration_s;
                peak_force_n[c] * (std::f64::consts::PI * t / duration_s).sin()
            });
            let s = TimeSeries::new(n as f64 / duration_s, 0.0, ch)?;
            Ok(ForceInput::new(s, Some(*duration_s)))
        }
    }
}

fn trajectory_series(tr: &Trajectory, rate: f64) -> Result<(TimeSeries, TimeSeries, TimeSeries)> {
    let start = tr.times[0];
    Ok((
        TimeSeries::new(rate, start, tr.displacements())?,
        TimeSeries::new(rate, start, tr.velocities())?,
        TimeSeries::new(rate, start, tr.accelerations.clone())?,
    ))
}

/// Integrates the `truth` model for every case and writes
/// `<case>_{displacement,velocity,acceleration}.csv` (plus `<case>_force.csv`
/// when a force acts) and `datasets.json` listing them.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<SimulatedCase>> {
    let model = cfg.model()?;
    let truth = cfg.truth()?;
    let sim = cfg.simulation.as_ref().ok_or_else(|| anyhow!("missing `simulation` section"))?;
    let grid = uniform_grid(sim.duration_s, sim.sample_rate_hz)?;
    let dof = model.dof();
    let mut inputs = Vec::new();
    for case in &sim.cases {
        if case.initial_displacement_m.len() != dof || case.initial_velocity_m_per_s.len() != dof {
            bail!("case `{}`: initial state needs {dof} displacements and velocities", case.name);
        }
        let force = case.force.as_ref().map(|f| build_force(f, dof, sim.sample_rate_hz)).transpose()?;
        inputs.push((case, force));
    }
    prepare_out(cfg, out)?;
    let mut written = Vec::new();
    for (case, force) in inputs {
        let y0: Vec<f64> = case.initial_displacement_m.iter().chain(&case.initial_velocity_m_per_s).copied().collect();
        let tr = integrate_rk45(model, &truth, &y0, (grid[0], grid[grid.len() - 1]), &grid, force.as_ref(), &cfg.ivp)
            .with_context(|| format!("case `{}`", case.name))?;
        let (d, v, a) = trajectory_series(&tr, sim.sample_rate_hz)?;
        let file = |kind: &str| out.join(format!("{}_{kind}.csv", case.name));
        write_series(&file("displacement"), &d)?;
        write_series(&file("velocity"), &v)?;
        write_series(&file("acceleration"), &a)?;
        let mut dataset = DatasetConfig {
            acceleration_csv: file("acceleration"),
            displacement_csv: Some(file("displacement")),
            velocity_csv: Some(file("velocity")),
            force_csv: None,
            force_cutoff_s: None,
        };
        if let Some(f) = &force {
            let mut ch = Array2::zeros((grid.len(), dof));
            let mut buf = vec![0.0; dof];
            for (i, &t) in grid.iter().enumerate() {
                interp_force(f, t, &mut buf);
                ch.row_mut(i).assign(&ndarray::aview1(&buf));
            }
            write_series(&file("force"), &TimeSeries::new(sim.sample_rate_hz, grid[0], ch)?)?;
            dataset.force_csv = Some(file("force"));
            dataset.force_cutoff_s = Some(f.support_end());
        }
        log::info!("simulated `{}`: {} samples", case.name, grid.len());
        written.push(SimulatedCase {
            name: case.name.clone(),
            dataset,
        });
    }
    write_json(&out.join("datasets.json"), &written)?;
    Ok(written)
}

// ---------------------------------------------------------------- datasets

/// A dataset after loading and preprocessing.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub triplet: StateTriplet,
    pub force_cutoff_s: Option<f64>,
}

impl LoadedDataset {
    pub fn scoring_target(&self) -> ScoringTarget {
        let t = &self.triplet;
        let initial_state = t.displacement.channels.row(0).iter().chain(t.velocity.channels.row(0).iter()).copied().collect();
        ScoringTarget {
            displacement: t.displacement.clone(),
            initial_state,
            force: t.force.clone().map(|f| ForceInput::new(f, self.force_cutoff_s)),
        }
    }
}

pub fn load_dataset(d: &DatasetConfig, pre: Option<&PreprocessConfig>, provenance: Provenance) -> Result<LoadedDataset> {
    let accel = read_series(&d.acceleration_csv)?;
    let force = d.force_csv.as_deref().map(read_series).transpose()?;
    let (mut disp, mut vel, mut acc) = match (&d.displacement_csv, &d.velocity_csv) {
        (Some(dp), Some(vp)) => (read_series(dp)?, read_series(vp)?, accel),
        _ => {
            let settings = pre.map(PreprocessConfig::settings).unwrap_or_default();
            derive_states(&accel, &settings).with_context(|| format!("preprocessing {}", d.acceleration_csv.display()))?
        }
    };
    let mut force = force;
    let mut cutoff = d.force_cutoff_s;
    if let Some(p) = pre.filter(|p| p.target_rate_hz.is_some() || p.start_at_s != 0.0) {
        let rate = p.target_rate_hz.unwrap_or(acc.sample_rate);
        siva::signal::check_alias_free(p.bandpass_hz[1], rate)?;
        let fix = |s: &TimeSeries| resample_and_trim(s, rate, p.start_at_s);
        disp = fix(&disp)?;
        vel = fix(&vel)?;
        acc = fix(&acc)?;
        force = force.as_ref().map(fix).transpose()?;
        cutoff = cutoff.map(|c| c - p.start_at_s);
    }
    let triplet = StateTriplet::new(provenance, disp, vel, acc, force).with_context(|| format!("dataset {}", d.acceleration_csv.display()))?;
    Ok(LoadedDataset {
        triplet,
        force_cutoff_s: cutoff,
    })
}

/// Training and validation datasets, all read and checked up front.
pub fn load_all(cfg: &RunConfig) -> Result<(LoadedDataset, Vec<LoadedDataset>)> {
    let data = cfg.data()?;
    let pre = cfg.preprocessing.as_ref();
    let training = load_dataset(&data.training, pre, Provenance::Training)?;
    let validation = data
        .validation
        .iter()
        .map(|d| load_dataset(d, pre, Provenance::Validation))
        .collect::<Result<Vec<_>>>()?;
    Ok((training, validation))
}

fn scoring_targets(cfg: &RunConfig, training: &LoadedDataset, validation: &[LoadedDataset]) -> Vec<(String, ScoringTarget)> {
    let mut out = Vec::new();
    if matches!(cfg.selection.score_on, ScoreOn::Training | ScoreOn::Both) {
        out.push(("training".to_owned(), training.scoring_target()));
    }
    if matches!(cfg.selection.score_on, ScoreOn::Validation | ScoreOn::Both) {
        for (i, v) in validation.iter().enumerate() {
            out.push((format!("validation_{}", i + 1), v.scoring_target()));
        }
    }
    out
}

// ---------------------------------------------------------------- identify

/// Everything downstream steps need from a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub model: ModelSpec,
    pub training: TrainConfig,
    pub generator: Mlp,
    pub discriminator: Mlp,
    pub records: Vec<EpochRecord>,
    pub convergence_epoch: Option<usize>,
}

/// Trains the generator/discriminator pair, streaming one JSON line per
/// epoch to `epochs.jsonl`, and writes `bundle.json`.
pub fn cmd_identify(cfg: &RunConfig, out: &Path) -> Result<ModelBundle> {
    let model = cfg.model()?.clone();
    let (training, validation) = load_all(cfg)?;
    if validation.is_empty() {
        bail!("identify needs at least one validation dataset");
    }
    let datasets = SivaDatasets::new(training.triplet, validation.into_iter().map(|v| v.triplet).collect())?;
    let (p, d) = build_networks(&model, &cfg.training)?;
    prepare_out(cfg, out)?;
    let log_path = out.join(EPOCH_LOG);
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("cannot create {}", log_path.display()))?);
    let mut write_err: Option<std::io::Error> = None;
    let result = run_training_with(p, d, &model, &datasets, &cfg.training, |rec| {
        if write_err.is_none() {
            let line = serde_json::to_string(rec).expect("epoch records serialise");
            if let Err(e) = writeln!(log, "{line}") {
                write_err = Some(e);
            }
        }
    });
    log.flush()?;
    if let Some(e) = write_err {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }
    let outcome = match result {
        Ok(o) => o,
        Err(failure) => {
            return Err(anyhow!(failure)).context(format!("partial epoch log kept in {}", log_path.display()));
        }
    };
    let convergence_epoch = detect_convergence(&outcome.records, &cfg.training.convergence);
    match convergence_epoch {
        Some(e) => log::info!("converged at epoch {e}"),
        None => log::warn!("no convergence detected in {} epochs", outcome.records.len()),
    }
    let bundle = ModelBundle {
        model,
        training: cfg.training.clone(),
        generator: outcome.generator,
        discriminator: outcome.discriminator,
        records: outcome.records,
        convergence_epoch,
    };
    write_json(&out.join(BUNDLE), &bundle)?;
    Ok(bundle)
}

pub fn read_bundle(path: &Path) -> Result<ModelBundle> {
    Ok(read_json(path)?)
}

// ---------------------------------------------------------------- select

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachReport {
    pub approach: Approach,
    pub parameters: ParameterSet,
    pub posterior: Option<ParameterPosterior>,
    /// Mean displacement MSE over the scoring datasets, m².
    pub mse_m2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSearch {
    pub best_index: usize,
    pub candidate_count: usize,
    pub candidate_mse_m2: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub seed: u64,
    pub harvest_from_epoch: usize,
    pub convergence_epoch: Option<usize>,
    pub scored_on: Vec<String>,
    pub approaches: Vec<ApproachReport>,
    pub candidate_search: Option<CandidateSearch>,
}

impl SelectionReport {
    pub fn get(&self, a: Approach) -> Option<&ApproachReport> {
        self.approaches.iter().find(|r| r.approach == a)
    }
}

/// The first epoch whose parameters feed Approaches II and III.
pub fn harvest_start(cfg: &RunConfig, bundle: &ModelBundle) -> usize {
    cfg.selection
        .harvest_from_epoch
        .or(bundle.convergence_epoch)
        .unwrap_or(bundle.records.len() / 2)
}

/// Runs the requested selection approaches on a trained bundle and writes
/// `select_report.json` and `select_parameters.csv`.
pub fn cmd_select(cfg: &RunConfig, bundle: &ModelBundle, out: &Path) -> Result<SelectionReport> {
    let model = &bundle.model;
    let (training, validation) = load_all(cfg)?;
    let named = scoring_targets(cfg, &training, &validation);
    let targets: Vec<ScoringTarget> = named.iter().map(|(_, t)| t.clone()).collect();
    let mut approaches: Vec<Approach> = cfg.selection.approaches.clone();
    approaches.sort();
    approaches.dedup();
    if approaches.is_empty() {
        bail!("no selection approach requested");
    }
    if targets.is_empty() {
        bail!("no scoring datasets: `score_on` selects none");
    }
    prepare_out(cfg, out)?;
    let from = harvest_start(cfg, bundle);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let layout = model.layout();
    let mut reports = Vec::new();
    if approaches.contains(&Approach::I) {
        let (params, posterior, _) = approach_one(&bundle.generator, &layout, cfg.selection.draw_count, &mut rng)?;
        let mse = score_candidate(model, &params, &targets, &cfg.ivp);
        reports.push(ApproachReport {
            approach: Approach::I,
            parameters: params,
            posterior,
            mse_m2: finite(mse),
        });
    }
    if approaches.contains(&Approach::II) {
        let (params, posterior) = approach_two(&bundle.records, from)?;
        let mse = score_candidate(model, &params, &targets, &cfg.ivp);
        reports.push(ApproachReport {
            approach: Approach::II,
            parameters: params,
            posterior,
            mse_m2: finite(mse),
        });
    }
    let mut search = None;
    if approaches.contains(&Approach::III) {
        let mut candidates: Vec<ParameterSet> = bundle.records.iter().filter(|r| r.epoch >= from).map(|r| r.param_mean.clone()).collect();
        if candidates.is_empty() {
            bail!("no epochs at or after {from} to choose from");
        }
        if cfg.selection.include_summary_candidates {
            candidates.extend(reports.iter().map(|r| r.parameters.clone()));
        }
        let sel = approach_three(&candidates, model, &targets, &cfg.ivp)?;
        reports.push(ApproachReport {
            approach: Approach::III,
            parameters: sel.best.clone(),
            posterior: None,
            mse_m2: finite(sel.mse),
        });
        search = Some(CandidateSearch {
            best_index: sel.best_index,
            candidate_count: candidates.len(),
            candidate_mse_m2: sel.candidate_mse.iter().map(|&m| finite(m)).collect(),
        });
    }
    let report = SelectionReport {
        seed: cfg.seed,
        harvest_from_epoch: from,
        convergence_epoch: bundle.convergence_epoch,
        scored_on: named.into_iter().map(|(n, _)| n).collect(),
        approaches: reports,
        candidate_search: search,
    };
    write_json(&out.join(SELECT_REPORT), &report)?;
    write_parameter_table(&out.join("select_parameters.csv"), &report)?;
    Ok(report)
}

fn write_parameter_table(path: &Path, report: &SelectionReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["approach", "coefficient", "value", "std", "ci95_low", "ci95_high", "mse_m2"])?;
    let num = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
    for r in &report.approaches {
        for (name, value) in r.parameters.names.iter().zip(&r.parameters.values) {
            let post = r.posterior.as_ref().and_then(|p| p.get(name));
            w.write_record([
                r.approach.label().to_owned(),
                name.clone(),
                num(Some(*value)),
                num(post.map(|p| p.fit.std)),
                num(post.map(|p| p.ci95[0])),
                num(post.map(|p| p.ci95[1])),
                num(r.mse_m2),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- sindy

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SindyReport {
    pub threshold: f64,
    pub iterations: usize,
    pub converged: bool,
    pub library: Vec<String>,
    /// `terms × degrees of freedom`, force units.
    pub coefficients: Array2<f64>,
    pub terms: Vec<IdentifiedTerm>,
    pub equations: Vec<String>,
    pub diagnostics: Vec<SolveDiagnostics>,
    /// Displacement MSE of the identified model resimulated on the training
    /// record, m².
    pub displacement_mse_m2: Option<f64>,
}

/// Sparse regression on the training dataset, written to `sindy_report.json`.
pub fn cmd_sindy(cfg: &RunConfig, out: &Path) -> Result<SindyReport> {
    let model = cfg.model()?;
    let sindy = cfg.sindy()?;
    let (training, _) = load_all(cfg)?;
    let t = &training.triplet;
    let theta = build_library(&t.displacement, &t.velocity, &sindy.library)?;
    let y = mass_scaled_targets(&t.acceleration, &model.masses_kg, t.force.as_ref())?;
    prepare_out(cfg, out)?;
    let fit = stls(&theta, &y, sindy.threshold, sindy.max_iters)?;
    let (ident, params) = fit.to_model(&sindy.library, &model.masses_kg);
    let target = training.scoring_target();
    let mse = score_candidate(&ident, &params, std::slice::from_ref(&target), &cfg.ivp);
    let report = SindyReport {
        threshold: fit.threshold,
        iterations: fit.iterations,
        converged: fit.converged,
        library: sindy.library.labels(),
        terms: fit.terms(&sindy.library),
        equations: fit.equations(&sindy.library, &model.masses_kg),
        coefficients: fit.coefficients.clone(),
        diagnostics: fit.diagnostics.clone(),
        displacement_mse_m2: finite(mse),
    };
    for e in &report.equations {
        log::info!("{e}");
    }
    write_json(&out.join(SINDY_REPORT), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- report

/// Measured versus simulated response of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub mse_m2: f64,
    pub frequencies_hz: Vec<f64>,
    /// `bins × 2·dof`: measured channels then simulated channels.
    pub spectra: Array2<f64>,
}

pub fn compare_responses(measured: &TimeSeries, simulated: &TimeSeries) -> Result<Comparison> {
    if measured.channels.dim() != simulated.channels.dim() || measured.sample_rate != simulated.sample_rate {
        bail!(
            "grid mismatch: measured {:?} at {} Hz, simulated {:?} at {} Hz",
            measured.channels.dim(),
            measured.sample_rate,
            simulated.channels.dim(),
            simulated.sample_rate
        );
    }
    let diff = &measured.channels - &simulated.channels;
    let mse_m2 = diff.mapv(|v| v * v).mean().unwrap_or(0.0);
    let a = dft_magnitude(measured)?;
    let b = dft_magnitude(simulated)?;
    Ok(Comparison {
        mse_m2,
        frequencies_hz: a.frequencies_hz,
        spectra: concatenate(Axis(1), &[a.magnitudes.view(), b.magnitudes.view()])?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub approach: Approach,
    pub dataset: String,
    pub mse_m2: Option<f64>,
}

/// For every approach in the selection report and every scoring dataset,
/// writes the measured and simulated displacements, their spectra, and an
/// MSE table (`mse_table.csv`).
pub fn cmd_report(cfg: &RunConfig, report_path: &Path, out: &Path) -> Result<Vec<MseRow>> {
    let report: SelectionReport = read_json(report_path)?;
    let model = cfg.model()?;
    let (training, validation) = load_all(cfg)?;
    let named = scoring_targets(cfg, &training, &validation);
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for a in &report.approaches {
        for (label, target) in &named {
            let stem = format!("{}_{label}", a.approach.label());
            let simulated = target
                .simulate(model, &a.parameters, &cfg.ivp)
                .ok()
                .and_then(|tr| TimeSeries::new(target.displacement.sample_rate, target.displacement.start_time, tr.displacements()).ok());
            let Some(sim) = simulated else {
                log::warn!("approach {} could not be simulated on {label}", a.approach.label());
                rows.push(MseRow {
                    approach: a.approach,
                    dataset: label.clone(),
                    mse_m2: None,
                });
                continue;
            };
            let cmp = compare_responses(&target.displacement, &sim)?;
            let dof = sim.channel_count();
            let mut header = vec!["t".to_owned()];
            header.extend((1..=dof).map(|c| format!("measured_q{c}")));
            header.extend((1..=dof).map(|c| format!("simulated_q{c}")));
            let m = &target.displacement;
            write_table(
                &out.join(format!("response_{stem}.csv")),
                &header,
                (0..m.len()).map(|i| {
                    let mut row = vec![m.time(i)];
                    row.extend(m.channels.row(i).iter());
                    row.extend(sim.channels.row(i).iter());
                    row
                }),
            )?;
            header[0] = "frequency_hz".to_owned();
            write_table(
                &out.join(format!("spectrum_{stem}.csv")),
                &header,
                cmp.frequencies_hz.iter().enumerate().map(|(k, f)| {
                    let mut row = vec![*f];
                    row.extend(cmp.spectra.row(k).iter());
                    row
                }),
            )?;
            rows.push(MseRow {
                approach: a.approach,
                dataset: label.clone(),
                mse_m2: Some(cmp.mse_m2),
            });
        }
    }
    let mut w = csv::Writer::from_path(out.join("mse_table.csv"))?;
    w.write_record(["approach", "dataset", "mse_m2"])?;
    for r in &rows {
        w.write_record([r.approach.label().to_owned(), r.dataset.clone(), r.mse_m2.map(|v| format!("{v:.16e}")).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: &[f64]) -> TimeSeries {
        TimeSeries::from_channel(100.0, 0.0, values.to_vec()).unwrap()
    }

    #[test]
    fn identical_responses_give_zero_error() {
        let s = series(&[0.0, 1.0, 0.5, -0.2, 0.3, 0.0, -1.0, 0.25]);
        let c = compare_responses(&s, &s).unwrap();
        assert_eq!(c.mse_m2, 0.0);
        assert_eq!(c.frequencies_hz.len(), 5);
        assert_eq!(c.spectra.nrows(), 5);
        assert_eq!(c.spectra.column(0), c.spectra.column(1));
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        assert!(compare_responses(&series(&[0.0, 1.0, 2.0]), &series(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn grid_has_inclusive_end() {
        let g = uniform_grid(1.0, 10_000.0).unwrap();
        assert_eq!(g.len(), 10_001);
        assert_eq!(g[10_000], 1.0);
        assert!(uniform_grid(0.0, 10.0).is_err());
    }
}
