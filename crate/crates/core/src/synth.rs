//! Synthetic vowels and speech-like test utterances with known formants.
//!
//! Vowels are a pulse train through a cascade of resonances plus two real
//! poles for glottal tilt. Resonances are added above the requested formants
//! so an order-18 analysis at 16 kHz finds every formant among the lowest
//! pole pairs instead of spending spare poles between them.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lpc::{allpole_filter, LpcModel};
use crate::poles::{poly_from_roots, PolePair, PoleSet};
use crate::signal::{peak_abs, AudioBuffer};

/// Higher resonances appended above the requested formants.
const UPPER_RESONANCES: [Resonance; 5] = [
    Resonance::new(3500.0, 200.0),
    Resonance::new(4500.0, 250.0),
    Resonance::new(5500.0, 300.0),
    Resonance::new(6500.0, 350.0),
    Resonance::new(7400.0, 400.0),
];
const GLOTTAL_TILT: [f64; 2] = [0.9, 0.6];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resonance {
    pub freq_hz: f64,
    pub bandwidth_hz: f64,
}

impl Resonance {
    pub const fn new(freq_hz: f64, bandwidth_hz: f64) -> Self {
        Self {
            freq_hz,
            bandwidth_hz,
        }
    }

    /// Pole with radius `exp(-pi B / fs)` at angle `2 pi F / fs`.
    pub fn pole(&self, sample_rate: u32) -> PolePair {
        let fs = sample_rate as f64;
        PolePair {
            magnitude: (-PI * self.bandwidth_hz / fs).exp(),
            phase: 2.0 * PI * self.freq_hz / fs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VowelSpec {
    pub formants: Vec<Resonance>,
    /// Real poles shaping the source spectrum (glottal tilt).
    pub tilt_poles: Vec<f64>,
    pub f0_hz: f64,
    pub duration_secs: f64,
    pub sample_rate: u32,
    pub peak: f64,
}

impl VowelSpec {
    /// 1 s at 16 kHz, 100 Hz pitch, peak 0.5. The given formants get
    /// bandwidths of 80, 100, 120, ... Hz; fixed higher resonances at least
    /// 500 Hz above the last one and the glottal tilt poles are added.
    pub fn with_formants(freqs_hz: &[f64]) -> Self {
        let sample_rate = 16000;
        Self {
            formants: with_upper_resonances(freqs_hz, sample_rate),
            tilt_poles: GLOTTAL_TILT.to_vec(),
            f0_hz: 100.0,
            duration_secs: 1.0,
            sample_rate,
            peak: 0.5,
        }
    }

    pub fn all_pole_model(&self) -> LpcModel {
        formant_model(&self.formants, &self.tilt_poles, self.sample_rate)
    }
}

fn with_upper_resonances(freqs_hz: &[f64], sample_rate: u32) -> Vec<Resonance> {
    let top = freqs_hz.iter().copied().fold(0.0, f64::max);
    let nyquist = sample_rate as f64 / 2.0;
    freqs_hz
        .iter()
        .enumerate()
        .map(|(i, &f)| Resonance::new(f, 80.0 + 20.0 * i as f64))
        .chain(
            UPPER_RESONANCES
                .iter()
                .copied()
                .filter(|r| r.freq_hz >= top + 500.0 && r.freq_hz < nyquist),
        )
        .collect()
}

fn formant_model(formants: &[Resonance], tilt: &[f64], sample_rate: u32) -> LpcModel {
    let poles = PoleSet {
        pairs: formants.iter().map(|r| r.pole(sample_rate)).collect(),
        reals: tilt.to_vec(),
    };
    LpcModel::new(poly_from_roots(&poles), 1.0)
}

/// A pulse train at `f0` through the vowel's all-pole filter, peak-normalized.
pub fn synthetic_vowel(spec: &VowelSpec) -> AudioBuffer {
    let fs = spec.sample_rate as f64;
    let len = (spec.duration_secs * fs).round() as usize;
    let period = fs / spec.f0_hz;
    let mut excitation = vec![0.0; len];
    let mut t = 0.0;
    while (t as usize) < len {
        excitation[t as usize] = 1.0;
        t += period;
    }
    let mut samples = allpole_filter(&excitation, &spec.all_pole_model());
    normalize(&mut samples, spec.peak);
    AudioBuffer::new(samples, spec.sample_rate).expect("finite synthetic samples")
}

fn normalize(samples: &mut [f64], target_peak: f64) {
    let peak = peak_abs(samples);
    if peak > 0.0 {
        let gain = target_peak / peak;
        samples.iter_mut().for_each(|s| *s *= gain);
    }
}

#[derive(Debug, Clone, Copy)]
enum Segment {
    Silence {
        ms: f64,
    },
    Vowel {
        ms: f64,
        from: [f64; 3],
        to: [f64; 3],
    },
    Noise {
        ms: f64,
    },
}

/// About 1.2 s of vowel glides, a noise burst and silences at 16 kHz, with a
/// falling pitch contour. Formants are interpolated every 5 ms and the
/// filter state carries across updates.
pub fn speech_like_utterance(seed: u64) -> AudioBuffer {
    const A: [f64; 3] = [730.0, 1090.0, 2440.0];
    const I: [f64; 3] = [270.0, 2290.0, 3010.0];
    const U: [f64; 3] = [300.0, 870.0, 2240.0];
    let script = [
        Segment::Silence { ms: 80.0 },
        Segment::Vowel {
            ms: 250.0,
            from: A,
            to: A,
        },
        Segment::Vowel {
            ms: 150.0,
            from: A,
            to: I,
        },
        Segment::Vowel {
            ms: 200.0,
            from: I,
            to: I,
        },
        Segment::Noise { ms: 90.0 },
        Segment::Vowel {
            ms: 120.0,
            from: I,
            to: U,
        },
        Segment::Vowel {
            ms: 220.0,
            from: U,
            to: U,
        },
        Segment::Silence { ms: 90.0 },
    ];

    let sample_rate = 16000u32;
    let fs = sample_rate as f64;
    let update = 80usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<f64> = Vec::new();
    let mut history = [0.0; 18];
    let total: f64 = script
        .iter()
        .map(|s| match s {
            Segment::Silence { ms } | Segment::Vowel { ms, .. } | Segment::Noise { ms } => *ms,
        })
        .sum();
    let total_len = (total * fs / 1000.0) as usize;
    let mut phase = 0.0;

    for seg in script {
        match seg {
            Segment::Silence { ms } => {
                let n = (ms * fs / 1000.0) as usize;
                out.extend(std::iter::repeat_n(0.0, n));
                history.iter_mut().for_each(|h| *h = 0.0);
            }
            Segment::Noise { ms } => {
                let n = (ms * fs / 1000.0) as usize;
                let mut prev = 0.0;
                for _ in 0..n {
                    let x: f64 = rng.random_range(-1.0..1.0);
                    // first difference tilts the burst toward high frequencies
                    out.push(0.05 * (x - prev));
                    prev = x;
                }
                history.iter_mut().for_each(|h| *h = 0.0);
            }
            Segment::Vowel { ms, from, to } => {
                let n = (ms * fs / 1000.0) as usize;
                let mut model = None;
                for i in 0..n {
                    if i % update == 0 {
                        let t = i as f64 / n as f64;
                        let freqs: Vec<f64> =
                            (0..3).map(|k| from[k] + (to[k] - from[k]) * t).collect();
                        model = Some(formant_model(
                            &with_upper_resonances(&freqs, sample_rate),
                            &GLOTTAL_TILT,
                            sample_rate,
                        ));
                    }
                    let m = model.as_ref().expect("set on first sample");
                    let progress = out.len() as f64 / total_len as f64;
                    let f0 = 140.0 - 40.0 * progress;
                    phase += f0 / fs;
                    let mut e = 0.002 * rng.random_range(-1.0..1.0);
                    if phase >= 1.0 {
                        phase -= 1.0;
                        e += 1.0;
                    }
                    let y = e + m
                        .coeffs()
                        .iter()
                        .zip(history.iter())
                        .map(|(a, h)| a * h)
                        .sum::<f64>();
                    history.rotate_right(1);
                    history[0] = y;
                    out.push(y);
                }
            }
        }
    }
    normalize(&mut out, 0.6);
    AudioBuffer::new(out, sample_rate).expect("finite synthetic samples")
}
