//! Per-frame and per-utterance formant perturbation.
//!
//! Each voiced frame goes through: autocorrelation, Levinson-Durbin, inverse
//! filtering to the residual, root finding, pair classification, phase warp,
//! polynomial rebuild and all-pole resynthesis of the residual. Frames are
//! then overlap-added back into an utterance of the original length.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lpc::{
    allpole_filter, autocorrelate, compute_lpc_order, inverse_filter, levinson_durbin, LpcError,
    LpcModel,
};
use crate::poles::{
    classify_and_sort, find_roots, poly_from_roots, sample_warp_factors, warp_pairs, PairWarp,
    PoleError, PolePair, PoleSet, SeedMaterial, WarpPlan,
};
use crate::signal::{
    frame_signal, limit_peak, overlap_add, rms, AudioBuffer, FramingConfig, SignalError, WindowKind,
};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error("{window}-sample window is too short for order-{order} analysis")]
    WindowTooShort { window: usize, order: usize },
    #[error(transparent)]
    Pole(#[from] PoleError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub warp_lo: f64,
    pub warp_hi: f64,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub silence_rms_threshold: f64,
    pub peak_limit: f64,
    pub energy_match: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            warp_lo: 0.8,
            warp_hi: 1.2,
            window_ms: 20.0,
            hop_ms: 10.0,
            silence_rms_threshold: 1e-5,
            peak_limit: 0.999,
            energy_match: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |msg: String| Err(AugmentError::InvalidConfig(msg));
        if !(self.warp_lo > 0.0 && self.warp_lo <= self.warp_hi && self.warp_hi.is_finite()) {
            return bad(format!(
                "warp range must satisfy 0 < lo <= hi, got [{}, {}]",
                self.warp_lo, self.warp_hi
            ));
        }
        if !(self.silence_rms_threshold > 0.0 && self.silence_rms_threshold.is_finite()) {
            return bad("silence threshold must be positive".into());
        }
        if !(self.peak_limit > 0.0 && self.peak_limit <= 1.0) {
            return bad("peak limit must lie in (0, 1]".into());
        }
        self.framing()
            .validate()
            .map_err(|e| AugmentError::InvalidConfig(e.to_string()))
    }

    pub fn framing(&self) -> FramingConfig {
        FramingConfig {
            window_ms: self.window_ms,
            hop_ms: self.hop_ms,
            window_kind: WindowKind::Hamming,
        }
    }
}

/// Identity of one augmented copy; determines its warp factors.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UtteranceSeed {
    pub global_seed: u64,
    pub utterance_id: String,
    pub copy_index: u32,
}

impl UtteranceSeed {
    pub fn new(global_seed: u64, utterance_id: impl Into<String>, copy_index: u32) -> Self {
        Self {
            global_seed,
            utterance_id: utterance_id.into(),
            copy_index,
        }
    }

    /// SHA-256 of `"lpcaug/utterance-seed/v1"`, the global seed (u64 LE),
    /// the id length (u64 LE), the UTF-8 id bytes and the copy index (u32 LE).
    pub fn seed_material(&self) -> SeedMaterial {
        let mut h = Sha256::new();
        h.update(b"lpcaug/utterance-seed/v1");
        h.update(self.global_seed.to_le_bytes());
        h.update((self.utterance_id.len() as u64).to_le_bytes());
        h.update(self.utterance_id.as_bytes());
        h.update(self.copy_index.to_le_bytes());
        SeedMaterial(h.finalize().into())
    }
}

/// Why a frame left the pipeline unmodified.
#[derive(Debug, Clone, PartialEq)]
pub enum Passthrough {
    Silent,
    Lpc(LpcError),
    Poles(PoleError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub samples: Vec<f64>,
    pub passthrough: Option<Passthrough>,
    /// Empty for passthrough frames.
    pub warps: Vec<PairWarp>,
}

/// Perturbs one windowed frame; degenerate frames come back unchanged.
pub fn augment_frame(frame: &[f64], plan: &WarpPlan, order: usize) -> FrameOutcome {
    match warp_frame(frame, plan, order) {
        Ok((samples, warps)) => FrameOutcome {
            samples,
            passthrough: None,
            warps,
        },
        Err(reason) => passthrough(frame, reason),
    }
}

fn passthrough(frame: &[f64], reason: Passthrough) -> FrameOutcome {
    FrameOutcome {
        samples: frame.to_vec(),
        passthrough: Some(reason),
        warps: Vec::new(),
    }
}

fn warp_frame(
    frame: &[f64],
    plan: &WarpPlan,
    order: usize,
) -> Result<(Vec<f64>, Vec<PairWarp>), Passthrough> {
    let model = levinson_durbin(&autocorrelate(frame, order)).map_err(Passthrough::Lpc)?;
    let residual = inverse_filter(frame, &model);
    let poles = classify_and_sort(&find_roots(&model).map_err(Passthrough::Poles)?)
        .map_err(Passthrough::Poles)?;
    let warps = warp_pairs(&poles, plan);
    let warped = PoleSet {
        pairs: warps
            .iter()
            .map(|w| PolePair {
                magnitude: w.magnitude_after,
                phase: w.phase_after,
            })
            .collect(),
        reals: poles.reals,
    };
    let synthesis = LpcModel::new(poly_from_roots(&warped), model.residual_energy());
    Ok((allpole_filter(&residual, &synthesis), warps))
}

fn match_energy(out: &mut [f64], reference: &[f64]) {
    let e_out: f64 = out.iter().map(|s| s * s).sum();
    let e_ref: f64 = reference.iter().map(|s| s * s).sum();
    if e_out > 0.0 {
        let gain = (e_ref / e_out).sqrt();
        out.iter_mut().for_each(|s| *s *= gain);
    }
}

/// One frame's pole movements, for auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrace {
    pub frame_index: usize,
    pub warps: Vec<PairWarp>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub buffer: AudioBuffer,
    pub plan: WarpPlan,
    pub frames: usize,
    pub silent_frames: usize,
    /// Frames left unmodified because analysis failed or they were silent.
    pub passthrough_frames: usize,
    pub clipped: bool,
    /// The utterance was shorter than one window and came back unmodified.
    pub too_short: bool,
    pub trace: Option<Vec<FrameTrace>>,
}

/// Perturbs a whole utterance with factors drawn from `seed`.
pub fn augment_utterance(
    buffer: &AudioBuffer,
    cfg: &AugmentConfig,
    seed: &UtteranceSeed,
) -> Result<Augmented, AugmentError> {
    cfg.validate()?;
    let order = compute_lpc_order(buffer.sample_rate());
    let plan = sample_warp_factors(cfg.warp_lo, cfg.warp_hi, order / 2, &seed.seed_material())?;
    augment_with_plan(buffer, cfg, &plan, false)
}

/// Perturbs a whole utterance with an explicit plan, optionally recording
/// every frame's pole movements.
pub fn augment_with_plan(
    buffer: &AudioBuffer,
    cfg: &AugmentConfig,
    plan: &WarpPlan,
    trace: bool,
) -> Result<Augmented, AugmentError> {
    cfg.validate()?;
    let framing = cfg.framing();
    let rate = buffer.sample_rate();
    let order = compute_lpc_order(rate);
    let window = framing.window_len(rate);
    if window < 2 * order {
        return Err(AugmentError::WindowTooShort { window, order });
    }

    let framed = match frame_signal(buffer, &framing) {
        Ok(f) => f,
        Err(SignalError::TooShort { len, window }) => {
            log::warn!("utterance of {len} samples is shorter than a {window}-sample window; left unmodified");
            return Ok(Augmented {
                buffer: buffer.clone(),
                plan: plan.clone(),
                frames: 0,
                silent_frames: 0,
                passthrough_frames: 0,
                clipped: false,
                too_short: true,
                trace: trace.then(Vec::new),
            });
        }
        Err(e) => return Err(e.into()),
    };

    let mut out_frames = Vec::with_capacity(framed.frames.len());
    let mut traces = Vec::new();
    let mut silent = 0;
    let mut passthrough_count = 0;
    for (index, frame) in framed.frames.iter().enumerate() {
        let outcome = if rms(frame) < cfg.silence_rms_threshold {
            silent += 1;
            passthrough(frame, Passthrough::Silent)
        } else {
            let mut o = augment_frame(frame, plan, order);
            if cfg.energy_match && o.passthrough.is_none() {
                match_energy(&mut o.samples, frame);
            }
            o
        };
        if let Some(reason) = &outcome.passthrough {
            passthrough_count += 1;
            if !matches!(reason, Passthrough::Silent) {
                log::debug!("frame {index} passed through: {reason:?}");
            }
        }
        if trace {
            traces.push(FrameTrace {
                frame_index: index,
                warps: outcome.warps,
            });
        }
        out_frames.push(outcome.samples);
    }

    let mut samples = overlap_add(&out_frames, &framed.grid, &framing, buffer.len())?;
    let clipped = limit_peak(&mut samples, cfg.peak_limit);
    Ok(Augmented {
        buffer: AudioBuffer::new(samples, rate)?,
        plan: plan.clone(),
        frames: framed.frames.len(),
        silent_frames: silent,
        passthrough_frames: passthrough_count,
        clipped,
        too_short: false,
        trace: trace.then_some(traces),
    })
}
