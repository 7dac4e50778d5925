//! Per-frame linear prediction.
//!
//! Coefficients use the predictor sign convention
//! `A(z) = 1 - sum_{k=1}^{P} a_k z^-k`, so `s[n] - sum a_k s[n-k] = e[n]`.

use std::f64::consts::PI;
use std::io::{self, Write};

use num_complex::Complex64;
use thiserror::Error;

/// Lag-0 scale applied to the autocorrelation as a white-noise floor.
pub const AUTOCORR_REGULARIZATION: f64 = 1e-9;

const MAGNITUDE_FLOOR: f64 = 1e-12;
const MIN_ENVELOPE_BINS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpcError {
    #[error("frame has no energy (r[0] = {0})")]
    DegenerateFrame(f64),
    #[error("reflection coefficient {value} at stage {stage} is not inside the unit interval")]
    UnstableReflection { stage: usize, value: f64 },
    #[error("spectral envelope needs at least {MIN_ENVELOPE_BINS} bins, got {0}")]
    TooFewBins(usize),
}

/// Prediction order from the sample rate: twice the Nyquist frequency in kHz
/// plus two, rounded for rates that are not whole kHz.
pub fn compute_lpc_order(sample_rate: u32) -> usize {
    (sample_rate as f64 / 1000.0).round() as usize + 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpcModel {
    coeffs: Vec<f64>,
    residual_energy: f64,
}

impl LpcModel {
    pub fn new(coeffs: Vec<f64>, residual_energy: f64) -> Self {
        Self {
            coeffs,
            residual_energy,
        }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    /// `a_1..a_P`.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn residual_energy(&self) -> f64 {
        self.residual_energy
    }

    /// Evaluates `A(e^{jw})`.
    pub fn response_at(&self, omega: f64) -> Complex64 {
        // Horner in z^-1
        let zinv = Complex64::from_polar(1.0, -omega);
        let mut acc = Complex64::new(0.0, 0.0);
        for &a in self.coeffs.iter().rev() {
            acc = (acc - a) * zinv;
        }
        acc + 1.0
    }
}

/// Autocorrelation lags `r[0..=order]` with the lag-0 term scaled by `1 + 1e-9`.
pub fn autocorrelate(frame: &[f64], order: usize) -> Vec<f64> {
    let mut r: Vec<f64> = (0..=order)
        .map(|k| {
            frame
                .iter()
                .zip(frame.iter().skip(k))
                .map(|(x, y)| x * y)
                .sum()
        })
        .collect();
    r[0] *= 1.0 + AUTOCORR_REGULARIZATION;
    r
}

/// Solves the Toeplitz normal equations for the predictor of order `r.len() - 1`.
pub fn levinson_durbin(r: &[f64]) -> Result<LpcModel, LpcError> {
    let order = r.len().saturating_sub(1);
    let r0 = r.first().copied().unwrap_or(0.0);
    if r0.is_nan() || r0 <= 0.0 {
        return Err(LpcError::DegenerateFrame(r0));
    }

    let mut a = vec![0.0; order];
    let mut prev = vec![0.0; order];
    let mut err = r0;
    for i in 0..order {
        let acc = r[i + 1] - (0..i).map(|j| a[j] * r[i - j]).sum::<f64>();
        let k = acc / err;
        if k.is_nan() || k.abs() >= 1.0 {
            return Err(LpcError::UnstableReflection {
                stage: i + 1,
                value: k,
            });
        }
        prev[..i].copy_from_slice(&a[..i]);
        a[i] = k;
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        err *= 1.0 - k * k;
    }
    Ok(LpcModel::new(a, err))
}

/// FIR filtering by `A(z)` with zero initial conditions.
pub fn inverse_filter(frame: &[f64], model: &LpcModel) -> Vec<f64> {
    let a = model.coeffs();
    (0..frame.len())
        .map(|n| {
            let pred: f64 = a
                .iter()
                .enumerate()
                .take(n)
                .map(|(k, ak)| ak * frame[n - 1 - k])
                .sum();
            frame[n] - pred
        })
        .collect()
}

/// IIR filtering by `1 / A(z)` with zero initial conditions.
pub fn allpole_filter(residual: &[f64], model: &LpcModel) -> Vec<f64> {
    let a = model.coeffs();
    let mut out = Vec::with_capacity(residual.len());
    for (n, &e) in residual.iter().enumerate() {
        let fb: f64 = a
            .iter()
            .enumerate()
            .take(n)
            .map(|(k, ak)| ak * out[n - 1 - k])
            .sum();
        out.push(e + fb);
    }
    out
}

/// Gainless LPC envelope `-20 log10 |A(e^{jw})|` on a linear grid from DC to Nyquist.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEnvelope {
    pub freqs_hz: Vec<f64>,
    pub magnitude_db: Vec<f64>,
}

impl SpectralEnvelope {
    pub fn len(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs_hz.is_empty()
    }

    pub fn bin_width_hz(&self) -> f64 {
        self.freqs_hz[1] - self.freqs_hz[0]
    }

    /// Writes `freq_hz,magnitude_db` CSV.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "freq_hz,magnitude_db")?;
        for (f, m) in self.freqs_hz.iter().zip(&self.magnitude_db) {
            writeln!(out, "{f},{m}")?;
        }
        Ok(())
    }
}

pub fn lpc_envelope(
    model: &LpcModel,
    sample_rate: u32,
    n_bins: usize,
) -> Result<SpectralEnvelope, LpcError> {
    if n_bins < MIN_ENVELOPE_BINS {
        return Err(LpcError::TooFewBins(n_bins));
    }
    let last = (n_bins - 1) as f64;
    let fs = sample_rate as f64;
    let (freqs_hz, magnitude_db) = (0..n_bins)
        .map(|i| {
            let omega = PI * i as f64 / last;
            let mag = model.response_at(omega).norm().max(MAGNITUDE_FLOOR);
            (omega * fs / (2.0 * PI), -20.0 * mag.log10())
        })
        .unzip();
    Ok(SpectralEnvelope {
        freqs_hz,
        magnitude_db,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormantPeak {
    pub freq_hz: f64,
    pub magnitude_db: f64,
}

pub const MIN_PEAK_PROMINENCE_DB: f64 = 1.0;
pub const MIN_PEAK_SPACING_HZ: f64 = 100.0;

/// Local maxima with at least 1 dB prominence, thinned so no two kept peaks
/// are closer than 100 Hz (stronger peaks win), returned in ascending
/// frequency and truncated to `max_peaks`.
pub fn pick_formant_peaks(env: &SpectralEnvelope, max_peaks: usize) -> Vec<FormantPeak> {
    let mag = &env.magnitude_db;
    let n = mag.len();
    if n < 3 {
        return Vec::new();
    }

    // Plateaus count once, at their left edge.
    let mut candidates = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        if mag[i] > mag[i - 1] {
            let mut j = i;
            while j + 1 < n && mag[j + 1] == mag[i] {
                j += 1;
            }
            if j + 1 < n && mag[j + 1] < mag[i] {
                candidates.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    let mut prominent: Vec<usize> = candidates
        .into_iter()
        .filter(|&p| prominence(mag, p) >= MIN_PEAK_PROMINENCE_DB)
        .collect();

    prominent.sort_by(|&x, &y| mag[y].total_cmp(&mag[x]).then(x.cmp(&y)));
    let mut kept: Vec<usize> = Vec::new();
    for p in prominent {
        if kept
            .iter()
            .all(|&q| (env.freqs_hz[p] - env.freqs_hz[q]).abs() >= MIN_PEAK_SPACING_HZ)
        {
            kept.push(p);
        }
    }
    kept.sort_unstable();
    kept.into_iter()
        .take(max_peaks)
        .map(|p| FormantPeak {
            freq_hz: env.freqs_hz[p],
            magnitude_db: mag[p],
        })
        .collect()
}

/// Height above the higher of the two bases, each base being the minimum
/// between the peak and the nearest strictly higher sample on that side.
fn prominence(mag: &[f64], peak: usize) -> f64 {
    let h = mag[peak];
    let mut left_min = h;
    for &v in mag[..peak].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &mag[peak + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}
