//! Turning measured accelerations into displacement/velocity/acceleration
//! triplets: Butterworth design, zero-phase filtering, integration with
//! high-pass drift removal, decimation and spectra.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("time series needs at least {needed} samples, found {found}")]
    TooShort { needed: usize, found: usize },
    #[error("invalid sample rate {0} Hz")]
    SampleRate(f64),
    #[error("cutoff {cutoff} Hz must lie in (0, {nyquist}) Hz")]
    Cutoff { cutoff: f64, nyquist: f64 },
    #[error("band edges must be ordered, found {0} >= {1}")]
    BandOrder(f64, f64),
    #[error("filter order must be at least 1")]
    Order,
    #[error("{kind:?} filters take {expected} cutoff(s), found {found}")]
    CutoffCount {
        kind: FilterKind,
        expected: usize,
        found: usize,
    },
    #[error("sample rate {from} Hz is not an integer multiple of {to} Hz")]
    DecimationRatio { from: f64, to: f64 },
    #[error("start time {start} s outside [{first}, {last}] s")]
    StartOutOfRange { start: f64, first: f64, last: f64 },
    #[error("band-pass upper edge {edge} Hz is not below the target Nyquist {nyquist} Hz")]
    Aliasing { edge: f64, nyquist: f64 },
    #[error("non-finite sample in time series")]
    NonFinite,
    #[error("series have different shapes")]
    ShapeMismatch,
}

/// Uniformly sampled, multichannel signal (`samples × channels`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub sample_rate: f64,
    pub start_time: f64,
    pub channels: Array2<f64>,
}

impl TimeSeries {
    pub fn new(sample_rate: f64, start_time: f64, channels: Array2<f64>) -> Result<Self, SignalError> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(SignalError::SampleRate(sample_rate));
        }
        if channels.nrows() < 2 {
            return Err(SignalError::TooShort {
                needed: 2,
                found: channels.nrows(),
            });
        }
        if !channels.iter().all(|v| v.is_finite()) || !start_time.is_finite() {
            return Err(SignalError::NonFinite);
        }
        Ok(Self {
            sample_rate,
            start_time,
            channels,
        })
    }

    pub fn from_channel(sample_rate: f64, start_time: f64, values: Vec<f64>) -> Result<Self, SignalError> {
        let n = values.len();
        Self::new(sample_rate, start_time, Array2::from_shape_vec((n, 1), values).expect("column shape"))
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.channels.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.nrows() == 0
    }

    pub fn channel_count(&self) -> usize {
        self.channels.ncols()
    }

    pub fn time(&self, index: usize) -> f64 {
        self.start_time + index as f64 / self.sample_rate
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.len() - 1)
    }

    fn with_channels(&self, channels: Array2<f64>) -> Self {
        Self {
            sample_rate: self.sample_rate,
            start_time: self.start_time,
            channels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    LowPass,
    HighPass,
    BandPass,
}

/// Digital IIR filter. `numerator`/`denominator` hold the expanded transfer
/// function (`denominator[0] == 1`); filtering runs through the equivalent
/// cascade of second-order sections `[b0, b1, b2, 1, a1, a2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IirFilter {
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
    pub sections: Vec<[f64; 6]>,
}

impl IirFilter {
    pub fn order(&self) -> usize {
        self.denominator.len() - 1
    }

    /// Roots of the denominator polynomial (companion-matrix eigenvalues).
    pub fn poles(&self) -> Vec<Complex64> {
        let n = self.order();
        if n == 0 {
            return Vec::new();
        }
        let a0 = self.denominator[0];
        let mut companion = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            companion[(0, j)] = -self.denominator[j + 1] / a0;
        }
        for i in 1..n {
            companion[(i, i - 1)] = 1.0;
        }
        companion.complex_eigenvalues().iter().map(|c| Complex64::new(c.re, c.im)).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    /// Frequency response `H(e^{jω})` at `freq_hz`, evaluated section by
    /// section.
    pub fn response(&self, freq_hz: f64, sample_rate: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / sample_rate;
        let zinv = Complex64::from_polar(1.0, -w);
        let poly = |c: &[f64]| c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &v| acc * zinv + v);
        self.sections
            .iter()
            .map(|sec| poly(&sec[..3]) / poly(&sec[3..]))
            .product()
    }

    /// Edge padding used by [`zero_phase_filter`].
    pub fn pad_len(&self) -> usize {
        3 * (self.order() + 1)
    }

    fn steady_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|sec| {
                let [b0, b1, b2, _, a1, a2] = *sec;
                let (r0, r1) = (b1 - a1 * b0, b2 - a2 * b0);
                let z0 = (r0 + r1) / (1.0 + a1 + a2);
                let z1 = r1 - a2 * z0;
                let zi = [scale * z0, scale * z1];
                scale *= (b0 + b1 + b2) / (1.0 + a1 + a2);
                zi
            })
            .collect()
    }

    /// Causal filtering of one channel with initial section states `zi`.
    fn run(&self, x: &mut [f64], mut zi: Vec<[f64; 2]>) {
        for (sec, z) in self.sections.iter().zip(zi.iter_mut()) {
            let [b0, b1, b2, _, a1, a2] = *sec;
            for v in x.iter_mut() {
                let input = *v;
                let y = b0 * input + z[0];
                z[0] = b1 * input - a1 * y + z[1];
                z[1] = b2 * input - a2 * y;
                *v = y;
            }
        }
    }

    /// Single forward pass over a channel starting from rest.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.run(&mut y, vec![[0.0; 2]; self.sections.len()]);
        y
    }
}

fn check_cutoff(cutoff: f64, sample_rate: f64) -> Result<(), SignalError> {
    let nyquist = sample_rate / 2.0;
    if !(cutoff > 0.0 && cutoff < nyquist) {
        return Err(SignalError::Cutoff { cutoff, nyquist });
    }
    Ok(())
}

/// Butterworth design via the analog prototype, frequency prewarping and the
/// bilinear transform. Band-pass filters of `order` n have 2n poles.
pub fn design_butterworth(order: usize, kind: FilterKind, cutoffs_hz: &[f64], sample_rate: f64) -> Result<IirFilter, SignalError> {
    if order < 1 {
        return Err(SignalError::Order);
    }
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(SignalError::SampleRate(sample_rate));
    }
    let expected = if kind == FilterKind::BandPass { 2 } else { 1 };
    if cutoffs_hz.len() != expected {
        return Err(SignalError::CutoffCount {
            kind,
            expected,
            found: cutoffs_hz.len(),
        });
    }
    for &c in cutoffs_hz {
        check_cutoff(c, sample_rate)?;
    }
    if kind == FilterKind::BandPass && cutoffs_hz[0] >= cutoffs_hz[1] {
        return Err(SignalError::BandOrder(cutoffs_hz[0], cutoffs_hz[1]));
    }

    let fs2 = 2.0 * sample_rate;
    let warp = |f: f64| fs2 * (PI * f / sample_rate).tan();
    let prototype: Vec<Complex64> = (0..order)
        .map(|k| {
            let m = -(order as f64) + 1.0 + 2.0 * k as f64;
            -Complex64::from_polar(1.0, PI * m / (2.0 * order as f64))
        })
        .collect();

    // Analog zeros, poles, gain.
    let (zeros, poles, gain): (Vec<Complex64>, Vec<Complex64>, f64) = match kind {
        FilterKind::LowPass => {
            let wo = warp(cutoffs_hz[0]);
            (Vec::new(), prototype.iter().map(|p| p * wo).collect(), wo.powi(order as i32))
        }
        FilterKind::HighPass => {
            let wo = warp(cutoffs_hz[0]);
            let prod: Complex64 = prototype.iter().map(|p| -p).product();
            (
                vec![Complex64::new(0.0, 0.0); order],
                prototype.iter().map(|p| wo / p).collect(),
                (1.0 / prod).re,
            )
        }
        FilterKind::BandPass => {
            let (w1, w2) = (warp(cutoffs_hz[0]), warp(cutoffs_hz[1]));
            let bw = w2 - w1;
            let wo2 = w1 * w2;
            let mut poles = Vec::with_capacity(2 * order);
            for p in &prototype {
                let pl = p * bw / 2.0;
                let root = (pl * pl - wo2).sqrt();
                poles.push(pl + root);
                poles.push(pl - root);
            }
            (vec![Complex64::new(0.0, 0.0); order], poles, bw.powi(order as i32))
        }
    };

    // Bilinear transform.
    let degree = poles.len() - zeros.len();
    let num: Complex64 = zeros.iter().map(|z| fs2 - z).product();
    let den: Complex64 = poles.iter().map(|p| fs2 - p).product();
    let gain = gain * (num / den).re;
    let mut zd: Vec<Complex64> = zeros.iter().map(|z| (fs2 + z) / (fs2 - z)).collect();
    zd.extend(std::iter::repeat_n(Complex64::new(-1.0, 0.0), degree));
    let pd: Vec<Complex64> = poles.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();

    let numerator: Vec<f64> = poly(&zd).iter().map(|c| c.re * gain).collect();
    let denominator: Vec<f64> = poly(&pd).iter().map(|c| c.re).collect();
    let sections = to_sections(&zd, &pd, gain);
    Ok(IirFilter {
        numerator,
        denominator,
        sections,
    })
}

/// Monic polynomial coefficients (highest power first) from its roots.
fn poly(roots: &[Complex64]) -> Vec<Complex64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, v) in c.iter().enumerate() {
            next[i] += v;
            next[i + 1] -= v * r;
        }
        c = next;
    }
    c
}

/// Groups roots into conjugate pairs followed by leftover real roots.
fn pair_roots(roots: &[Complex64]) -> Vec<Vec<Complex64>> {
    const TOL: f64 = 1e-10;
    let mut groups: Vec<Vec<Complex64>> = roots
        .iter()
        .filter(|r| r.im > TOL)
        .map(|r| vec![*r, r.conj()])
        .collect();
    let reals: Vec<Complex64> = roots.iter().filter(|r| r.im.abs() <= TOL).map(|r| Complex64::new(r.re, 0.0)).collect();
    groups.extend(reals.chunks(2).map(<[Complex64]>::to_vec));
    groups
}

fn to_sections(zeros: &[Complex64], poles: &[Complex64], gain: f64) -> Vec<[f64; 6]> {
    let pole_groups = pair_roots(poles);
    let mut zero_pool: Vec<Complex64> = pair_roots(zeros).into_iter().flatten().collect();
    let mut sections = Vec::with_capacity(pole_groups.len());
    for (i, pg) in pole_groups.iter().enumerate() {
        let take = pg.len().min(zero_pool.len());
        let zg: Vec<Complex64> = zero_pool.drain(..take).collect();
        let mut b: Vec<f64> = poly(&zg).iter().map(|c| c.re).collect();
        let mut a: Vec<f64> = poly(pg).iter().map(|c| c.re).collect();
        // Align to the section's degree so zeros contribute z^-k terms correctly.
        while b.len() < a.len() {
            b.insert(0, 0.0);
        }
        b.resize(3, 0.0);
        a.resize(3, 0.0);
        if b.len() > 3 || a.len() > 3 {
            unreachable!("sections are at most second order");
        }
        let k = if i == 0 { gain } else { 1.0 };
        sections.push([k * b[0], k * b[1], k * b[2], 1.0, a[1], a[2]]);
    }
    sections
}

fn odd_extend(x: ArrayView1<f64>, pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend(x.iter().copied());
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    ext
}

/// Forward-backward filtering with odd-reflection padding and steady-state
/// initial conditions. Every channel is filtered independently.
pub fn zero_phase_filter(filter: &IirFilter, series: &TimeSeries) -> Result<TimeSeries, SignalError> {
    let pad = filter.pad_len();
    if series.len() <= pad {
        return Err(SignalError::TooShort {
            needed: pad + 1,
            found: series.len(),
        });
    }
    let zi = filter.steady_state();
    let scaled = |v: f64| zi.iter().map(|z| [z[0] * v, z[1] * v]).collect::<Vec<_>>();
    let mut out = Array2::zeros(series.channels.raw_dim());
    for (c, column) in series.channels.axis_iter(Axis(1)).enumerate() {
        let mut y = odd_extend(column, pad);
        let x0 = y[0];
        filter.run(&mut y, scaled(x0));
        y.reverse();
        let y0 = y[0];
        filter.run(&mut y, scaled(y0));
        y.reverse();
        out.column_mut(c).assign(&ArrayView1::from(&y[pad..pad + series.len()]));
    }
    Ok(series.with_channels(out))
}

/// Cumulative trapezoid integral with zero initial value.
pub fn cumulative_integral(series: &TimeSeries) -> Result<TimeSeries, SignalError> {
    if series.len() < 2 {
        return Err(SignalError::TooShort {
            needed: 2,
            found: series.len(),
        });
    }
    let half_dt = 0.5 * series.dt();
    let mut out = Array2::zeros(series.channels.raw_dim());
    for c in 0..series.channel_count() {
        let x = series.channels.column(c);
        let mut acc = 0.0;
        for i in 1..x.len() {
            acc += half_dt * (x[i - 1] + x[i]);
            out[[i, c]] = acc;
        }
    }
    Ok(series.with_channels(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSettings {
    pub filter_order: usize,
    pub bandpass_hz: [f64; 2],
    pub highpass_hz: f64,
}

impl Default for PreprocessSettings {
    fn default() -> Self {
        Self {
            filter_order: 3,
            bandpass_hz: [4.0, 50.0],
            highpass_hz: 3.0,
        }
    }
}

/// Displacement, velocity and filtered acceleration from measured
/// acceleration: band-pass the acceleration, then integrate and high-pass
/// twice. All filtering is zero-phase.
pub fn derive_states(accel: &TimeSeries, settings: &PreprocessSettings) -> Result<(TimeSeries, TimeSeries, TimeSeries), SignalError> {
    let bandpass = design_butterworth(settings.filter_order, FilterKind::BandPass, &settings.bandpass_hz, accel.sample_rate)?;
    let highpass = design_butterworth(settings.filter_order, FilterKind::HighPass, &[settings.highpass_hz], accel.sample_rate)?;
    let accel_f = zero_phase_filter(&bandpass, accel)?;
    let vel = zero_phase_filter(&highpass, &cumulative_integral(&accel_f)?)?;
    let disp = zero_phase_filter(&highpass, &cumulative_integral(&vel)?)?;
    Ok((disp, vel, accel_f))
}

/// Keeps every k-th sample (`k = sample_rate / target_rate`), drops samples
/// before `start_at` and rebases the time origin to 0.
pub fn resample_and_trim(series: &TimeSeries, target_rate: f64, start_at: f64) -> Result<TimeSeries, SignalError> {
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(SignalError::SampleRate(target_rate));
    }
    let ratio = series.sample_rate / target_rate;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio {
        return Err(SignalError::DecimationRatio {
            from: series.sample_rate,
            to: target_rate,
        });
    }
    let k = k as usize;
    let (first, last) = (series.start_time, series.end_time());
    if !(start_at >= first && start_at <= last) {
        return Err(SignalError::StartOutOfRange {
            start: start_at,
            first,
            last,
        });
    }
    let slack = 1e-9 / series.sample_rate;
    let keep: Vec<usize> = (0..series.len()).step_by(k).filter(|&i| series.time(i) >= start_at - slack).collect();
    if keep.len() < 2 {
        return Err(SignalError::TooShort {
            needed: 2,
            found: keep.len(),
        });
    }
    let channels = series.channels.select(Axis(0), &keep);
    TimeSeries::new(target_rate, 0.0, channels)
}

/// Guards decimation without an extra anti-alias stage.
pub fn check_alias_free(bandpass_upper_hz: f64, target_rate: f64) -> Result<(), SignalError> {
    let nyquist = target_rate / 2.0;
    if bandpass_upper_hz >= nyquist {
        return Err(SignalError::Aliasing {
            edge: bandpass_upper_hz,
            nyquist,
        });
    }
    Ok(())
}

/// Single-sided amplitude spectrum.
///
/// For an N-sample channel with DFT `X_k`, bin `k` (frequency `k·fs/N`,
/// `0 ≤ k ≤ N/2`) holds `c_k |X_k| / N` with `c_k = 1` at DC and at the
/// Nyquist bin and `c_k = 2` elsewhere, so a unit-amplitude sinusoid on a bin
/// reads 1. Parseval: `mean(x²) = Σ_k w_k · mag_k²` with `w_k = 1` at DC and
/// Nyquist and `w_k = 1/2` elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub frequencies_hz: Vec<f64>,
    /// `bins × channels`
    pub magnitudes: Array2<f64>,
}

pub fn dft_magnitude(series: &TimeSeries) -> Result<Spectrum, SignalError> {
    let n = series.len();
    if n < 2 {
        return Err(SignalError::TooShort { needed: 2, found: n });
    }
    let bins = n / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut magnitudes = Array2::zeros((bins, series.channel_count()));
    for (c, column) in series.channels.axis_iter(Axis(1)).enumerate() {
        let mut buf: Vec<Complex64> = column.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.process(&mut buf);
        for k in 0..bins {
            let edge = k == 0 || (n % 2 == 0 && k == n / 2);
            let scale = if edge { 1.0 } else { 2.0 };
            magnitudes[[k, c]] = scale * buf[k].norm() / n as f64;
        }
    }
    let frequencies_hz = (0..bins).map(|k| k as f64 * series.sample_rate / n as f64).collect();
    Ok(Spectrum {
        frequencies_hz,
        magnitudes,
    })
}

/// Column `c` of a series as an owned vector.
pub fn channel(series: &TimeSeries, c: usize) -> Array1<f64> {
    series.channels.slice(s![.., c]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sine(freq: f64, amp: f64, fs: f64, n: usize) -> TimeSeries {
        TimeSeries::from_channel(fs, 0.0, (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin()).collect()).unwrap()
    }

    #[test]
    fn bandpass_magnitudes() {
        let f = design_butterworth(3, FilterKind::BandPass, &[4.0, 50.0], 2048.0).unwrap();
        assert_eq!(f.order(), 6);
        assert!((f.response(20.0, 2048.0).norm() - 1.0).abs() < 0.01);
        // Single pass |H(1 Hz)| ≈ 0.01236; the forward-backward response is |H|².
        assert_relative_eq!(f.response(1.0, 2048.0).norm(), 0.012355882, max_relative = 1e-6);
        assert!(f.response(1.0, 2048.0).norm_sqr() < 0.01);
        // -3 dB at the band edges.
        assert_relative_eq!(f.response(4.0, 2048.0).norm(), std::f64::consts::FRAC_1_SQRT_2, max_relative = 1e-6);
        assert_relative_eq!(f.response(50.0, 2048.0).norm(), std::f64::consts::FRAC_1_SQRT_2, max_relative = 1e-6);
        assert!(f.is_stable());
    }

    #[test]
    fn butterworth_reference_coefficients() {
        // Third-order low-pass at a quarter of the sample rate: the bilinear
        // image of the normalised prototype is b = [1,3,3,1]/6, a = [1,0,1/3,0].
        let f = design_butterworth(3, FilterKind::LowPass, &[250.0], 1000.0).unwrap();
        let b = [1.0 / 6.0, 0.5, 0.5, 1.0 / 6.0];
        let a = [1.0, 0.0, 1.0 / 3.0, 0.0];
        for (x, y) in f.numerator.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{:?}", f.numerator);
        }
        for (x, y) in f.denominator.iter().zip(a) {
            assert!((x - y).abs() < 1e-12, "{:?}", f.denominator);
        }
    }

    #[test]
    fn matches_reference_design_tool() {
        // scipy.signal.butter(3, [4, 50], 'bandpass', fs=2048) and
        // scipy.signal.butter(3, 3, 'highpass', fs=2048).
        let cases: [(FilterKind, &[f64], &[f64], &[f64]); 2] = [
            (
                FilterKind::BandPass,
                &[4.0, 50.0],
                &[0.00030658913154358, 0.0, -0.00091976739463074, 0.0, 0.00091976739463074, 0.0, -0.00030658913154358],
                &[1.0, -5.712587911046627, 13.607710874856705, -17.30143494481649, 12.383995576233001, -4.731589372216344, 0.7539057828082169],
            ),
            (
                FilterKind::HighPass,
                &[3.0],
                &[0.9908383091828729, -2.9725149275486187, 2.9725149275486187, -0.9908383091828729],
                &[1.0, -2.981592295513102, 2.9633536230055144, -0.9817605549443645],
            ),
        ];
        for (kind, cut, b, a) in cases {
            let f = design_butterworth(3, kind, cut, 2048.0).unwrap();
            for (x, y) in f.numerator.iter().zip(b) {
                assert!((x - y).abs() < 1e-12, "{kind:?} b {:?}", f.numerator);
            }
            for (x, y) in f.denominator.iter().zip(a) {
                assert!((x - y).abs() < 1e-9, "{kind:?} a {:?}", f.denominator);
            }
        }
    }

    #[test]
    fn highpass_blocks_dc() {
        let f = design_butterworth(3, FilterKind::HighPass, &[3.0], 2048.0).unwrap();
        assert!(f.response(0.0, 2048.0).norm() < 1e-12);
        assert!((f.response(100.0, 2048.0).norm() - 1.0).abs() < 1e-3);
        assert!(f.is_stable());
    }

    #[test]
    fn sections_match_transfer_function() {
        let f = design_butterworth(3, FilterKind::BandPass, &[4.0, 50.0], 2048.0).unwrap();
        let mut impulse = vec![0.0; 64];
        impulse[0] = 1.0;
        let via_sections = f.apply(&impulse);
        // Direct-form recursion on the expanded coefficients.
        let (b, a) = (&f.numerator, &f.denominator);
        let mut y = vec![0.0; 64];
        for n in 0..64 {
            let mut acc = 0.0;
            for (k, bk) in b.iter().enumerate() {
                if n >= k {
                    acc += bk * impulse[n - k];
                }
            }
            for (k, ak) in a.iter().enumerate().skip(1) {
                if n >= k {
                    acc -= ak * y[n - k];
                }
            }
            y[n] = acc;
        }
        let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (u, v) in via_sections.iter().zip(&y) {
            assert!((u - v).abs() < 1e-7 * scale, "{u} vs {v}");
        }
    }

    #[test]
    fn design_errors() {
        assert!(matches!(
            design_butterworth(3, FilterKind::LowPass, &[2000.0], 2048.0),
            Err(SignalError::Cutoff { .. })
        ));
        assert_eq!(design_butterworth(0, FilterKind::LowPass, &[10.0], 2048.0), Err(SignalError::Order));
        assert!(matches!(
            design_butterworth(3, FilterKind::BandPass, &[50.0, 4.0], 2048.0),
            Err(SignalError::BandOrder(..))
        ));
        assert!(matches!(
            design_butterworth(3, FilterKind::BandPass, &[4.0], 2048.0),
            Err(SignalError::CutoffCount { .. })
        ));
    }

    #[test]
    fn stable_over_configurations() {
        for order in 1..=6 {
            for fs in [256.0, 1000.0, 2048.0, 10000.0] {
                for kind in [FilterKind::LowPass, FilterKind::HighPass] {
                    let f = design_butterworth(order, kind, &[fs * 0.01], fs).unwrap();
                    assert!(f.is_stable(), "{kind:?} order {order} fs {fs}");
                }
                let f = design_butterworth(order, FilterKind::BandPass, &[fs * 0.005, fs * 0.1], fs).unwrap();
                assert!(f.is_stable(), "band-pass order {order} fs {fs}");
            }
        }
    }

    #[test]
    fn zero_phase_examples() {
        let f = design_butterworth(3, FilterKind::BandPass, &[4.0, 50.0], 2048.0).unwrap();
        let zero = TimeSeries::new(2048.0, 0.0, Array2::zeros((200, 1))).unwrap();
        assert!(zero_phase_filter(&f, &zero).unwrap().channels.iter().all(|&v| v == 0.0));

        let mut imp = vec![0.0; 40001];
        imp[20000] = 1.0;
        let out = zero_phase_filter(&f, &TimeSeries::from_channel(2048.0, 0.0, imp).unwrap()).unwrap();
        let y = out.channels.column(0);
        for k in 1..4000 {
            assert!((y[20000 - k] - y[20000 + k]).abs() < 1e-10);
        }

        let short = TimeSeries::new(2048.0, 0.0, Array2::zeros((21, 1))).unwrap();
        assert!(matches!(zero_phase_filter(&f, &short), Err(SignalError::TooShort { .. })));
    }

    #[test]
    fn zero_phase_sinusoid_has_no_lag() {
        let f = design_butterworth(3, FilterKind::BandPass, &[4.0, 50.0], 2048.0).unwrap();
        let x = sine(20.0, 1.0, 2048.0, 8192);
        let y = zero_phase_filter(&f, &x).unwrap();
        let (xi, yi) = (x.channels.column(0), y.channels.column(0));
        let inner = 1024..7168;
        let corr = |lag: i64| -> f64 { inner.clone().map(|i| xi[i] * yi[(i as i64 + lag) as usize]).sum() };
        let best = (-50..=50).max_by(|&a, &b| corr(a).total_cmp(&corr(b))).unwrap();
        assert_eq!(best, 0);
        let peak = inner.clone().map(|i| yi[i].abs()).fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 0.02, "peak {peak}");
    }

    #[test]
    fn integral_examples() {
        let ones = TimeSeries::new(100.0, 0.0, Array2::ones((101, 1))).unwrap();
        let ramp = cumulative_integral(&ones).unwrap();
        assert_eq!(ramp.channels[[0, 0]], 0.0);
        assert_relative_eq!(ramp.channels[[100, 0]], 1.0, max_relative = 1e-12);

        let (f, fs) = (5.0, 10000.0);
        let x = sine(f, 1.0, fs, 2001);
        let v = cumulative_integral(&x).unwrap();
        let w = 2.0 * PI * f;
        let err = (0..2001)
            .map(|i| (v.channels[[i, 0]] - (1.0 - (w * i as f64 / fs).cos()) / w).abs())
            .fold(0.0, f64::max);
        let dt = 1.0 / fs;
        assert!(err < w * dt * dt, "err {err}");

        let one = TimeSeries {
            sample_rate: 10.0,
            start_time: 0.0,
            channels: Array2::zeros((1, 1)),
        };
        assert!(cumulative_integral(&one).is_err());
        assert!(TimeSeries::new(10.0, 0.0, Array2::zeros((1, 1))).is_err());
    }

    #[test]
    fn derive_states_examples() {
        let settings = PreprocessSettings::default();
        let zero = TimeSeries::new(2048.0, 0.0, Array2::zeros((4096, 1))).unwrap();
        let (d, v, _) = derive_states(&zero, &settings).unwrap();
        assert!(d.channels.iter().chain(v.channels.iter()).all(|&x| x == 0.0));

        let (f, amp) = (20.0, 3.0);
        let a = sine(f, amp, 2048.0, 8 * 2048);
        let (_, v, _) = derive_states(&a, &settings).unwrap();
        let peak = (2048..6 * 2048).map(|i| v.channels[[i, 0]].abs()).fold(0.0, f64::max);
        let expected = amp / (2.0 * PI * f);
        assert!((peak - expected).abs() / expected < 0.03, "{peak} vs {expected}");
    }

    #[test]
    fn derive_states_removes_dc_drift() {
        let n = 8 * 2048;
        let offset = 0.5;
        let a = TimeSeries::from_channel(
            2048.0,
            0.0,
            (0..n).map(|i| offset + (2.0 * PI * 15.0 * i as f64 / 2048.0).sin()).collect(),
        )
        .unwrap();
        let (d, _, _) = derive_states(&a, &PreprocessSettings::default()).unwrap();
        let max_disp = d.channels.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // Naive double integration of the offset alone reaches offset·T²/2 = 16 m.
        let t_end = (n - 1) as f64 / 2048.0;
        assert!(max_disp < 1e-2 * offset * t_end * t_end / 2.0, "max {max_disp}");
    }

    #[test]
    fn resample_examples() {
        let x = TimeSeries::from_channel(2048.0, 0.0, (0..4096).map(|i| i as f64).collect()).unwrap();
        let y = resample_and_trim(&x, 256.0, 0.0).unwrap();
        assert_eq!(y.len(), 512);
        assert!(y.channels.column(0).iter().enumerate().all(|(i, &v)| v == (8 * i) as f64));
        assert_eq!(resample_and_trim(&x, 2048.0, 0.0).unwrap(), x);
        let shifted = resample_and_trim(&x, 256.0, 0.01).unwrap();
        assert_eq!(shifted.start_time, 0.0);
        assert_eq!(shifted.channels[[0, 0]], 24.0);
        let odd = TimeSeries::from_channel(1000.0, 0.0, vec![0.0; 100]).unwrap();
        assert!(matches!(resample_and_trim(&odd, 256.0, 0.0), Err(SignalError::DecimationRatio { .. })));
        assert!(matches!(resample_and_trim(&x, 256.0, 5.0), Err(SignalError::StartOutOfRange { .. })));
        assert!(check_alias_free(50.0, 256.0).is_ok());
        assert!(check_alias_free(150.0, 256.0).is_err());
    }

    #[test]
    fn spectrum_examples() {
        let (fs, n) = (1000.0, 1000);
        let x = sine(50.0, 1.0, fs, n);
        let s = dft_magnitude(&x).unwrap();
        assert_eq!(s.frequencies_hz.len(), n / 2 + 1);
        let peak = (0..s.frequencies_hz.len()).max_by(|&a, &b| s.magnitudes[[a, 0]].total_cmp(&s.magnitudes[[b, 0]])).unwrap();
        assert_eq!(s.frequencies_hz[peak], 50.0);
        assert_relative_eq!(s.magnitudes[[peak, 0]], 1.0, max_relative = 1e-9);

        let zero = TimeSeries::new(fs, 0.0, Array2::zeros((64, 1))).unwrap();
        assert!(dft_magnitude(&zero).unwrap().magnitudes.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spectrum_two_tones_dominate() {
        let (fs, n) = (1000.0, 2000);
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut noise = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64 - 0.5) * 1e-3
        };
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * PI * 40.0 * t).sin() + 0.5 * (2.0 * PI * 125.0 * t).sin() + noise()
            })
            .collect();
        let s = dft_magnitude(&TimeSeries::from_channel(fs, 0.0, x).unwrap()).unwrap();
        let bin = |f: f64| (f * n as f64 / fs) as usize;
        let floor = (0..s.frequencies_hz.len())
            .filter(|&k| k != bin(40.0) && k != bin(125.0))
            .map(|k| s.magnitudes[[k, 0]])
            .fold(0.0, f64::max);
        for (f, a) in [(40.0, 1.0), (125.0, 0.5)] {
            let m = s.magnitudes[[bin(f), 0]];
            assert!((m - a).abs() < 1e-3);
            assert!(20.0 * (m / floor).log10() > 40.0);
        }
    }

    #[test]
    fn parseval_scaling() {
        let x = TimeSeries::from_channel(100.0, 0.0, (0..64).map(|i| ((i * 7 % 13) as f64 - 6.0) / 3.0).collect()).unwrap();
        let s = dft_magnitude(&x).unwrap();
        let n = x.len();
        let energy: f64 = (0..s.frequencies_hz.len())
            .map(|k| {
                let w = if k == 0 || k == n / 2 { 1.0 } else { 0.5 };
                w * s.magnitudes[[k, 0]].powi(2)
            })
            .sum();
        let mean_sq = x.channels.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert_relative_eq!(energy, mean_sq, max_relative = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn derive_states_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, f1 in 6.0f64..40.0, f2 in 6.0f64..40.0) {
                let n = 4096;
                let fs = 2048.0;
                let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * f1 * i as f64 / fs).sin()).collect();
                let y: Vec<f64> = (0..n).map(|i| (2.0 * PI * f2 * i as f64 / fs).cos()).collect();
                let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
                let st = PreprocessSettings::default();
                let run = |v: Vec<f64>| derive_states(&TimeSeries::from_channel(fs, 0.0, v).unwrap(), &st).unwrap();
                let (dx, vx, ax) = run(x);
                let (dy, vy, ay) = run(y);
                let (dc, vc, ac) = run(combo);
                for (lhs, (p, q)) in [(&dc, (&dx, &dy)), (&vc, (&vx, &vy)), (&ac, (&ax, &ay))] {
                    let expected = &p.channels * a + &q.channels * b;
                    let scale = expected.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
                    let err = (&lhs.channels - &expected).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    prop_assert!(err <= 1e-9 * scale);
                }
            }

            #[test]
            fn decimation_preserves_values(k in 1usize..9, n in 20usize..200) {
                let x = TimeSeries::from_channel(256.0 * k as f64, 0.0, (0..n).map(|i| (i as f64).sin()).collect()).unwrap();
                let y = resample_and_trim(&x, 256.0, 0.0).unwrap();
                for (i, v) in y.channels.column(0).iter().enumerate() {
                    prop_assert_eq!(*v, x.channels[[i * k, 0]]);
                }
            }
        }
    }
}
