//! Adversarial identification loop.
//!
//! The parameter generator `P` maps standard-normal noise to raw coefficient
//! slots, which are decoded into physical coefficients and pushed through the
//! equation of motion at measured states. Training-set accelerations feed the
//! mean squared error term; validation-set accelerations feed the
//! discriminator `D` and the generator's adversarial term. The two sources are
//! tagged with a [`Provenance`] and the tags are checked wherever a step reads
//! data, so the roles cannot be swapped by accident.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{bce_loss, mse_loss, stack, Activation, AdamConfig, AdamState, Gradients, Mlp, NnError};
use crate::physics::{Encoding, ModelSpec, ParamLayout, ParameterSet, PhysicsError};
use crate::signal::TimeSeries;

/// `ln 4`, the discriminator loss when it outputs 0.5 everywhere.
pub const LN_4: f64 = 1.386_294_361_119_890_6;

pub const GENERATOR_HIDDEN: [usize; 3] = [64, 32, 16];
pub const DISCRIMINATOR_HIDDEN: [usize; 2] = [64, 32];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid datasets: {0}")]
    Data(String),
    #[error("{stage} produced a non-finite value; offending parameters {params:?}")]
    NonFinite { stage: &'static str, params: Vec<f64> },
    #[error("{expected:?} data was required but {found:?} data was supplied")]
    Provenance { expected: Provenance, found: Provenance },
}

/// Role a dataset plays in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Training,
    Validation,
}

/// Rule deciding when the per-epoch records have settled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub window: usize,
    /// Largest relative change between the two halves of the window.
    pub param_rel_tol: f64,
    /// Largest mean `|d_loss − ln 4|` over the window.
    pub d_loss_tol: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            window: 100,
            param_rel_tol: 0.01,
            d_loss_tol: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Divide the MSE term by the mean square of the real training
    /// accelerations.
    pub mse_normalization: bool,
    /// Divide discriminator inputs by the per-channel RMS of the real
    /// validation accelerations.
    pub discriminator_input_scaling: bool,
    /// Multiplier on the generator's output-layer weights after
    /// initialisation. Values below 1 narrow the initial spread of the
    /// generated parameters.
    pub generator_output_scale: f64,
    pub convergence: ConvergenceConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            batch_size: 300,
            latent_dim: 16,
            learning_rate: 1e-4,
            gamma: 1.0,
            seed: 42,
            mse_normalization: false,
            discriminator_input_scaling: true,
            generator_output_scale: 0.1,
            convergence: ConvergenceConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_owned()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive and finite");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be non-negative and finite");
        }
        if !(self.generator_output_scale > 0.0 && self.generator_output_scale.is_finite()) {
            return bad("generator_output_scale must be positive and finite");
        }
        if self.convergence.window == 0 {
            return bad("convergence window must be positive");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Displacements, velocities and accelerations of one experiment on a common
/// grid, plus the external force if one acted during the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTriplet {
    pub provenance: Provenance,
    pub displacement: TimeSeries,
    pub velocity: TimeSeries,
    pub acceleration: TimeSeries,
    #[serde(default)]
    pub force: Option<TimeSeries>,
}

impl StateTriplet {
    pub fn new(
        provenance: Provenance,
        displacement: TimeSeries,
        velocity: TimeSeries,
        acceleration: TimeSeries,
        force: Option<TimeSeries>,
    ) -> Result<Self, TrainError> {
        let n = displacement.len();
        let c = displacement.channel_count();
        let mut all = vec![&velocity, &acceleration];
        all.extend(force.as_ref());
        for s in all {
            if s.len() != n || s.channel_count() != c {
                return Err(TrainError::Data(format!(
                    "series shapes differ: {}×{} vs {}×{}",
                    n,
                    c,
                    s.len(),
                    s.channel_count()
                )));
            }
        }
        Ok(Self {
            provenance,
            displacement,
            velocity,
            acceleration,
            force,
        })
    }

    pub fn len(&self) -> usize {
        self.displacement.len()
    }

    pub fn is_empty(&self) -> bool {
        self.displacement.is_empty()
    }

    pub fn dof(&self) -> usize {
        self.displacement.channel_count()
    }

    fn require(&self, expected: Provenance) -> Result<(), TrainError> {
        if self.provenance == expected {
            Ok(())
        } else {
            Err(TrainError::Provenance {
                expected,
                found: self.provenance,
            })
        }
    }

    /// Model accelerations at sample `i` under coefficients `params`.
    fn model_accel(&self, model: &ModelSpec, params: &[f64], i: usize, out: &mut [f64], scratch: &mut [f64]) {
        let q = self.displacement.channels.row(i);
        let v = self.velocity.channels.row(i);
        match &self.force {
            Some(f) => scratch.iter_mut().zip(f.channels.row(i)).for_each(|(s, &x)| *s = x),
            None => scratch.iter_mut().for_each(|s| *s = 0.0),
        }
        model.accel_into(params, q.as_slice().expect("row"), v.as_slice().expect("row"), scratch, out);
    }

    fn jacobian(&self, model: &ModelSpec, params: &[f64], i: usize, out: &mut [f64]) {
        let q = self.displacement.channels.row(i);
        let v = self.velocity.channels.row(i);
        model.jacobian_into(params, q.as_slice().expect("row"), v.as_slice().expect("row"), out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SivaDatasets {
    pub training: StateTriplet,
    pub validation: Vec<StateTriplet>,
}

impl SivaDatasets {
    pub fn new(training: StateTriplet, validation: Vec<StateTriplet>) -> Result<Self, TrainError> {
        training.require(Provenance::Training)?;
        if validation.is_empty() {
            return Err(TrainError::Data("at least one validation dataset is required".into()));
        }
        for v in &validation {
            v.require(Provenance::Validation)?;
            if v.dof() != training.dof() {
                return Err(TrainError::Data("validation and training channel counts differ".into()));
            }
        }
        Ok(Self { training, validation })
    }

    fn check(&self, model: &ModelSpec, batch_size: usize) -> Result<(), TrainError> {
        self.training.require(Provenance::Training)?;
        let dof = model.dof();
        let shortest = self.validation.iter().map(StateTriplet::len).chain([self.training.len()]).min().unwrap_or(0);
        for t in std::iter::once(&self.training).chain(&self.validation) {
            if t.dof() != dof {
                return Err(TrainError::Data(format!("dataset has {} channels, model has {dof} DOF", t.dof())));
            }
        }
        for v in &self.validation {
            v.require(Provenance::Validation)?;
        }
        if self.validation.is_empty() {
            return Err(TrainError::Data("at least one validation dataset is required".into()));
        }
        if batch_size > shortest {
            return Err(TrainError::Config(format!(
                "batch_size {batch_size} exceeds the shortest dataset ({shortest} samples)"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub d_loss: f64,
    pub adv_loss: f64,
    pub mse_loss: f64,
    pub param_mean: ParameterSet,
}

/// Fixed per-run scalings derived from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSettings {
    pub gamma: f64,
    /// Multiplies the MSE term.
    pub mse_scale: f64,
    /// Per-channel factor applied to accelerations before `D`.
    pub input_scale: Vec<f64>,
}

impl StepSettings {
    pub fn from_data(datasets: &SivaDatasets, config: &TrainConfig) -> Self {
        let dof = datasets.training.dof();
        let mse_scale = if config.mse_normalization {
            let a = &datasets.training.acceleration.channels;
            let ms = a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64;
            if ms > 0.0 {
                1.0 / ms
            } else {
                1.0
            }
        } else {
            1.0
        };
        let input_scale = if config.discriminator_input_scaling {
            let mut sums = vec![0.0; dof];
            let mut count = 0usize;
            for v in &datasets.validation {
                for row in v.acceleration.channels.outer_iter() {
                    for (s, x) in sums.iter_mut().zip(row) {
                        *s += x * x;
                    }
                }
                count += v.len();
            }
            sums.iter()
                .map(|s| {
                    let rms = (s / count as f64).sqrt();
                    if rms > 0.0 {
                        1.0 / rms
                    } else {
                        1.0
                    }
                })
                .collect()
        } else {
            vec![1.0; dof]
        };
        Self {
            gamma: config.gamma,
            mse_scale,
            input_scale,
        }
    }
}

/// One mini-batch: noise rows paired with a training sample and a validation
/// `(set, sample)` pick.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub noise: Array2<f64>,
    pub train_idx: Vec<usize>,
    pub val_picks: Vec<(usize, usize)>,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.train_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_idx.is_empty()
    }
}

pub fn sample_noise<R: Rng>(count: usize, latent_dim: usize, rng: &mut R) -> Result<Array2<f64>, TrainError> {
    if count == 0 || latent_dim == 0 {
        return Err(TrainError::Config("noise shape must be positive".into()));
    }
    Ok(Array2::from_shape_simple_fn((count, latent_dim), || rng.sample(StandardNormal)))
}

/// Generator and discriminator dimensioned for `model`, seeded from the
/// configuration seed.
///
/// The generator's output weights are scaled by `generator_output_scale`, and
/// coefficients with a prior magnitude get output biases that decode to it:
/// the value itself for a direct slot, mantissa `±1` and exponent
/// `log10|prior|` for scientific notation.
pub fn build_networks(model: &ModelSpec, config: &TrainConfig) -> Result<(Mlp, Mlp), TrainError> {
    model.validate()?;
    config.validate()?;
    let mut p = Mlp::init(
        &stack(config.latent_dim, &GENERATOR_HIDDEN, model.layout().raw_len(), Activation::Linear),
        config.seed,
    )?;
    let out = p.layers_mut().last_mut().expect("generator has layers");
    out.weight.mapv_inplace(|w| w * config.generator_output_scale);
    let mut slot = 0;
    for c in &model.coefficients {
        if let Some(m) = c.prior_magnitude {
            match c.encoding {
                Encoding::Direct => out.bias[slot] = m,
                Encoding::SciNotation => {
                    out.bias[slot] = m.signum();
                    out.bias[slot + 1] = m.abs().log10();
                }
            }
        }
        slot += c.encoding.slots();
    }
    let d = Mlp::init(
        &stack(model.dof(), &DISCRIMINATOR_HIDDEN, 1, Activation::Sigmoid),
        config.seed.wrapping_add(1),
    )?;
    Ok((p, d))
}

/// Decodes every generator output row; on failure the raw row is reported.
pub fn decode_batch(raw: ArrayView2<f64>, layout: &ParamLayout) -> Result<Array2<f64>, TrainError> {
    let mut out = Array2::zeros((raw.nrows(), layout.coefficient_count()));
    for (r, mut o) in raw.outer_iter().zip(out.outer_iter_mut()) {
        let row = r.to_vec();
        layout
            .decode_into(&row, o.as_slice_mut().expect("row"))
            .map_err(|_| TrainError::NonFinite {
                stage: "parameter decode",
                params: row.clone(),
            })?;
    }
    Ok(out)
}

/// Model accelerations on the validation picks, one parameter row per pick.
pub fn fake_validation_accels(model: &ModelSpec, params: ArrayView2<f64>, datasets: &SivaDatasets, picks: &[(usize, usize)]) -> Result<Array2<f64>, TrainError> {
    let dof = model.dof();
    let mut out = Array2::zeros((picks.len(), dof));
    let mut scratch = vec![0.0; dof];
    for (r, &(set, i)) in picks.iter().enumerate() {
        let v = &datasets.validation[set];
        v.require(Provenance::Validation)?;
        let p = params.row(r);
        let p = p.as_slice().expect("row");
        v.model_accel(model, p, i, out.row_mut(r).as_slice_mut().expect("row"), &mut scratch);
        if !out.row(r).iter().all(|x| x.is_finite()) {
            return Err(TrainError::NonFinite {
                stage: "fake validation acceleration",
                params: p.to_vec(),
            });
        }
    }
    Ok(out)
}

pub fn real_validation_accels(datasets: &SivaDatasets, picks: &[(usize, usize)]) -> Result<Array2<f64>, TrainError> {
    let dof = datasets.training.dof();
    let mut out = Array2::zeros((picks.len(), dof));
    for (r, &(set, i)) in picks.iter().enumerate() {
        let v = &datasets.validation[set];
        v.require(Provenance::Validation)?;
        out.row_mut(r).assign(&v.acceleration.channels.row(i));
    }
    Ok(out)
}

fn scale_columns(a: &mut Array2<f64>, scale: &[f64]) {
    for mut row in a.outer_iter_mut() {
        row.iter_mut().zip(scale).for_each(|(x, s)| *x *= s);
    }
}

/// Discriminator loss `mean(−ln D(real)) + mean(−ln(1 − D(fake)))` and its
/// gradient with respect to `D`'s parameters.
pub fn discriminator_loss_and_grad(d: &Mlp, real: ArrayView2<f64>, fake: ArrayView2<f64>) -> Result<(f64, Gradients), TrainError> {
    if real.ncols() != fake.ncols() {
        return Err(TrainError::Data("real and fake batches differ in width".into()));
    }
    let nr = real.nrows();
    let batch = ndarray::concatenate(ndarray::Axis(0), &[real, fake]).map_err(|e| TrainError::Data(e.to_string()))?;
    let (out, cache) = d.forward(batch.view())?;
    let preds: Vec<f64> = out.column(0).to_vec();
    let (real_loss, real_grad) = bce_loss(&preds[..nr], &vec![1.0; nr])?;
    let (fake_loss, fake_grad) = bce_loss(&preds[nr..], &vec![0.0; preds.len() - nr])?;
    let loss = real_loss + fake_loss;
    if !loss.is_finite() {
        return Err(TrainError::NonFinite {
            stage: "discriminator loss",
            params: Vec::new(),
        });
    }
    let mut g = real_grad;
    g.extend(fake_grad);
    let g = Array2::from_shape_vec((g.len(), 1), g).expect("column");
    let (grads, _) = d.backward(&cache, g.view())?;
    Ok((loss, grads))
}

/// One Adam update of `D`; the generator is not involved.
pub fn discriminator_step(d: &mut Mlp, real: ArrayView2<f64>, fake: ArrayView2<f64>, optimizer: &mut AdamState) -> Result<f64, TrainError> {
    let (loss, grads) = discriminator_loss_and_grad(d, real, fake)?;
    optimizer.step(d, &grads)?;
    Ok(loss)
}

/// Value and gradient of the generator objective for one batch.
#[derive(Debug, Clone)]
pub struct GeneratorEval {
    pub adv_loss: f64,
    /// Unscaled mean squared acceleration error on the training set.
    pub mse_loss: f64,
    pub grads: Gradients,
    /// Decoded coefficients, one row per noise vector.
    pub params: Array2<f64>,
}

/// `L_P = L_adv + γ·s·L_MSE` where `s` is [`StepSettings::mse_scale`].
pub fn generator_loss_and_grad(
    p: &Mlp,
    d: &Mlp,
    model: &ModelSpec,
    datasets: &SivaDatasets,
    batch: &BatchPlan,
    settings: &StepSettings,
) -> Result<GeneratorEval, TrainError> {
    let training = &datasets.training;
    training.require(Provenance::Training)?;
    let b = batch.len();
    if batch.noise.nrows() != b || batch.val_picks.len() != b {
        return Err(TrainError::Data("batch plan rows disagree".into()));
    }
    let dof = model.dof();
    let ncoef = model.coefficient_count();
    let layout = model.layout();

    let (raw, p_cache) = p.forward(batch.noise.view())?;
    let params = decode_batch(raw.view(), &layout)?;

    // Adversarial branch, validation data only.
    let mut fake_val = fake_validation_accels(model, params.view(), datasets, &batch.val_picks)?;
    scale_columns(&mut fake_val, &settings.input_scale);
    let (d_out, d_cache) = d.forward(fake_val.view())?;
    let preds: Vec<f64> = d_out.column(0).to_vec();
    let (adv_loss, adv_grad) = bce_loss(&preds, &vec![1.0; b])?;
    let adv_grad = Array2::from_shape_vec((b, 1), adv_grad).expect("column");
    let (_, mut d_fake_val) = d.backward(&d_cache, adv_grad.view())?;
    scale_columns(&mut d_fake_val, &settings.input_scale);

    // MSE branch, training data only.
    let mut fake_tr = Array2::zeros((b, dof));
    let mut scratch = vec![0.0; dof];
    for (r, &i) in batch.train_idx.iter().enumerate() {
        let prow = params.row(r);
        training.model_accel(model, prow.as_slice().expect("row"), i, fake_tr.row_mut(r).as_slice_mut().expect("row"), &mut scratch);
    }
    let real_tr = training.acceleration.channels.select(ndarray::Axis(0), &batch.train_idx);
    let (mse, mut d_fake_tr) = mse_loss(fake_tr.view(), real_tr.view())?;
    if !mse.is_finite() || !adv_loss.is_finite() {
        let worst = params.outer_iter().find(|r| !r.iter().all(|v| v.is_finite())).unwrap_or(params.row(0));
        return Err(TrainError::NonFinite {
            stage: "generator loss",
            params: worst.to_vec(),
        });
    }
    d_fake_tr *= settings.gamma * settings.mse_scale;

    // Chain through the model Jacobians and the decode into P's outputs.
    let mut d_raw = Array2::zeros(raw.dim());
    let mut jac = vec![0.0; dof * ncoef];
    let mut d_lambda = vec![0.0; ncoef];
    for r in 0..b {
        let prow = params.row(r);
        let prow = prow.as_slice().expect("row");
        d_lambda.iter_mut().for_each(|v| *v = 0.0);
        let (set, vi) = batch.val_picks[r];
        datasets.validation[set].jacobian(model, prow, vi, &mut jac);
        accumulate_jt(&jac, d_fake_val.row(r).as_slice().expect("row"), ncoef, &mut d_lambda);
        training.jacobian(model, prow, batch.train_idx[r], &mut jac);
        accumulate_jt(&jac, d_fake_tr.row(r).as_slice().expect("row"), ncoef, &mut d_lambda);
        let raw_row = raw.row(r);
        layout.backprop_row(raw_row.as_slice().expect("row"), &d_lambda, d_raw.row_mut(r).as_slice_mut().expect("row"));
    }
    let (grads, _) = p.backward(&p_cache, d_raw.view())?;
    if !grads.is_finite() {
        return Err(TrainError::NonFinite {
            stage: "generator gradient",
            params: params.row(0).to_vec(),
        });
    }
    Ok(GeneratorEval {
        adv_loss,
        mse_loss: mse,
        grads,
        params,
    })
}

fn accumulate_jt(jac: &[f64], upstream: &[f64], ncoef: usize, out: &mut [f64]) {
    for (d, &g) in upstream.iter().enumerate() {
        for (o, &j) in out.iter_mut().zip(&jac[d * ncoef..(d + 1) * ncoef]) {
            *o += g * j;
        }
    }
}

/// One Adam update of `P` with `D` held fixed.
pub fn generator_step(
    p: &mut Mlp,
    optimizer: &mut AdamState,
    d: &Mlp,
    model: &ModelSpec,
    datasets: &SivaDatasets,
    batch: &BatchPlan,
    settings: &StepSettings,
) -> Result<GeneratorEval, TrainError> {
    let eval = generator_loss_and_grad(p, d, model, datasets, batch, settings)?;
    optimizer.step(p, &eval.grads)?;
    Ok(eval)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub generator: Mlp,
    pub discriminator: Mlp,
    pub records: Vec<EpochRecord>,
    pub settings: StepSettings,
}

/// A failed run keeps the epochs completed before the error.
#[derive(Debug, Error)]
#[error("training stopped after {} epochs: {error}", records.len())]
pub struct TrainFailure {
    #[source]
    pub error: TrainError,
    pub records: Vec<EpochRecord>,
}

impl From<TrainError> for TrainFailure {
    fn from(error: TrainError) -> Self {
        Self {
            error,
            records: Vec::new(),
        }
    }
}

/// Alternating discriminator/generator updates for `config.max_epochs`
/// epochs. Each epoch walks a fresh shuffle of the training samples in
/// batches of `batch_size`.
pub fn run_training(
    generator: Mlp,
    discriminator: Mlp,
    model: &ModelSpec,
    datasets: &SivaDatasets,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainFailure> {
    run_training_with(generator, discriminator, model, datasets, config, |_| {})
}

/// [`run_training`] with a callback invoked after every epoch.
pub fn run_training_with<F: FnMut(&EpochRecord)>(
    mut p: Mlp,
    mut d: Mlp,
    model: &ModelSpec,
    datasets: &SivaDatasets,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome, TrainFailure> {
    config.validate()?;
    model.validate().map_err(TrainError::from)?;
    datasets.check(model, config.batch_size)?;
    let layout = model.layout();
    if p.input_dim() != config.latent_dim || p.output_dim() != layout.raw_len() {
        return Err(TrainError::Config("generator dimensions do not match latent_dim and the model layout".into()).into());
    }
    if d.input_dim() != model.dof() || d.output_dim() != 1 {
        return Err(TrainError::Config("discriminator dimensions do not match the model".into()).into());
    }

    let settings = StepSettings::from_data(datasets, config);
    let mut p_opt = AdamState::new(&p, config.adam());
    let mut d_opt = AdamState::new(&d, config.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..datasets.training.len()).collect();
    let val_lens: Vec<usize> = datasets.validation.iter().map(StateTriplet::len).collect();
    let mut records = Vec::with_capacity(config.max_epochs);

    for epoch in 0..config.max_epochs {
        let result = (|| -> Result<EpochRecord, TrainError> {
            order.shuffle(&mut rng);
            let mut sums = [0.0; 3];
            let mut batches = 0usize;
            let mut last_params = None;
            for chunk in order.chunks(config.batch_size) {
                let noise = sample_noise(chunk.len(), config.latent_dim, &mut rng)?;
                let val_picks: Vec<(usize, usize)> = (0..chunk.len())
                    .map(|_| {
                        let set = rng.random_range(0..val_lens.len());
                        (set, rng.random_range(0..val_lens[set]))
                    })
                    .collect();
                let plan = BatchPlan {
                    noise,
                    train_idx: chunk.to_vec(),
                    val_picks,
                };

                let raw = p.predict(plan.noise.view())?;
                let params = decode_batch(raw.view(), &layout)?;
                let mut fake = fake_validation_accels(model, params.view(), datasets, &plan.val_picks)?;
                let mut real = real_validation_accels(datasets, &plan.val_picks)?;
                scale_columns(&mut fake, &settings.input_scale);
                scale_columns(&mut real, &settings.input_scale);
                let d_loss = discriminator_step(&mut d, real.view(), fake.view(), &mut d_opt)?;

                let eval = generator_step(&mut p, &mut p_opt, &d, model, datasets, &plan, &settings)?;
                sums[0] += d_loss;
                sums[1] += eval.adv_loss;
                sums[2] += eval.mse_loss;
                batches += 1;
                last_params = Some(eval.params);
            }
            let params = last_params.expect("at least one batch");
            let mean = params.mean_axis(ndarray::Axis(0)).expect("non-empty batch").to_vec();
            let n = batches as f64;
            Ok(EpochRecord {
                epoch,
                d_loss: sums[0] / n,
                adv_loss: sums[1] / n,
                mse_loss: sums[2] / n,
                param_mean: ParameterSet {
                    names: layout.names.clone(),
                    values: mean,
                },
            })
        })();
        match result {
            Ok(rec) => {
                if epoch % 100 == 0 || epoch + 1 == config.max_epochs {
                    log::info!(
                        "epoch {epoch}: d {:.4} adv {:.4} mse {:.4e} params {:?}",
                        rec.d_loss,
                        rec.adv_loss,
                        rec.mse_loss,
                        rec.param_mean.values
                    );
                }
                on_epoch(&rec);
                records.push(rec);
            }
            Err(error) => return Err(TrainFailure { error, records }),
        }
    }
    Ok(TrainOutcome {
        generator: p,
        discriminator: d,
        records,
        settings,
    })
}

/// Earliest epoch `e ≥ W` whose trailing window `[e − W, e]` is settled:
/// the mean of every coefficient over the window's second half differs from
/// the first half's by less than `param_rel_tol` (relative), and the mean of
/// `|d_loss − ln 4|` over the window is below `d_loss_tol`.
pub fn detect_convergence(records: &[EpochRecord], config: &ConvergenceConfig) -> Option<usize> {
    let w = config.window;
    if records.len() <= w {
        return None;
    }
    let ncoef = records[0].param_mean.values.len();
    (w..records.len()).find(|&e| {
        let window = &records[e - w..=e];
        let half = window.len() / 2;
        let (first, second) = window.split_at(half);
        let mean_of = |rs: &[EpochRecord], c: usize| rs.iter().map(|r| r.param_mean.values[c]).sum::<f64>() / rs.len() as f64;
        let params_ok = (0..ncoef).all(|c| {
            let (a, b) = (mean_of(first, c), mean_of(second, c));
            let change = (b - a).abs();
            change.is_finite() && (change < config.param_rel_tol * a.abs() || change == 0.0)
        });
        let d_dev = window.iter().map(|r| (r.d_loss - LN_4).abs()).sum::<f64>() / window.len() as f64;
        params_ok && d_dev < config.d_loss_tol
    })
}
