//! Audio I/O, short-time framing and overlap-add reconstruction.
//!
//! Frames are cut with a Hamming window and a fixed hop. Reconstruction divides
//! the overlap-added frames by the pointwise sum of the shifted analysis
//! windows, so an unmodified set of frames reproduces the input exactly no
//! matter whether the window/hop pair satisfies the constant-overlap-add
//! condition.

use std::f64::consts::PI;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Window sums below this are treated as uncovered and reconstruct to zero.
const WINDOW_SUM_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("audio file not found: {0}")]
    NotFound(PathBuf),
    #[error("unsupported audio encoding in {path}: {detail}")]
    UnsupportedEncoding { path: PathBuf, detail: String },
    #[error("audio file {0} contains no samples")]
    Empty(PathBuf),
    #[error("invalid audio buffer: {0}")]
    InvalidBuffer(String),
    #[error("signal of {len} samples is shorter than one {window}-sample window")]
    TooShort { len: usize, window: usize },
    #[error("invalid framing configuration: {0}")]
    InvalidFraming(String),
    #[error("frame grid mismatch: {0}")]
    GridMismatch(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Mono audio with samples in full-scale units.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, SignalError> {
        if sample_rate == 0 {
            return Err(SignalError::InvalidBuffer(
                "sample rate must be positive".into(),
            ));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SignalError::InvalidBuffer(format!(
                "sample {i} is not finite"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn peak(&self) -> f64 {
        peak_abs(&self.samples)
    }
}

/// Reads a PCM WAV file, averaging channels to mono and scaling to [-1, 1].
///
/// Accepts 8/16/24/32-bit integer and 32-bit float encodings.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, SignalError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(SignalError::NotFound(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(SignalError::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: "zero channels".into(),
        });
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| wav_error(path, e))?
        }
        (format, bits) => {
            return Err(SignalError::UnsupportedEncoding {
                path: path.to_path_buf(),
                detail: format!("{bits}-bit {format:?}"),
            })
        }
    };

    let samples: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    if samples.is_empty() {
        return Err(SignalError::Empty(path.to_path_buf()));
    }
    AudioBuffer::new(samples, spec.sample_rate)
}

fn wav_error(path: &Path, err: hound::Error) -> SignalError {
    match err {
        hound::Error::IoError(source) => SignalError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => SignalError::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

/// Writes a 16-bit PCM mono WAV. Samples outside [-1, 1] saturate.
pub fn save_wav(buffer: &AudioBuffer, path: impl AsRef<Path>) -> Result<(), SignalError> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => SignalError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => SignalError::Io {
            path: path.to_path_buf(),
            source: io::Error::other(other.to_string()),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(io_err)?;
    for &s in &buffer.samples {
        writer.write_sample(quantize_i16(s)).map_err(io_err)?;
    }
    writer.finalize().map_err(io_err)
}

fn quantize_i16(sample: f64) -> i16 {
    (sample * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hamming,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hamming => hamming(len),
        }
    }
}

/// Symmetric Hamming window, `0.54 - 0.46 cos(2 pi n / (L - 1))`.
pub fn hamming(len: usize) -> Vec<f64> {
    match len {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => {
            let denom = (len - 1) as f64;
            (0..len)
                .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / denom).cos())
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramingConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub window_kind: WindowKind,
}

impl Default for FramingConfig {
    fn default() -> Self {
        Self {
            window_ms: 20.0,
            hop_ms: 10.0,
            window_kind: WindowKind::Hamming,
        }
    }
}

impl FramingConfig {
    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.window_ms.is_finite() && self.hop_ms.is_finite()) {
            return Err(SignalError::InvalidFraming(
                "durations must be finite".into(),
            ));
        }
        if self.hop_ms <= 0.0 || self.hop_ms > self.window_ms {
            return Err(SignalError::InvalidFraming(format!(
                "need 0 < hop_ms <= window_ms, got hop {} and window {}",
                self.hop_ms, self.window_ms
            )));
        }
        Ok(())
    }

    pub fn window_len(&self, sample_rate: u32) -> usize {
        ms_to_samples(self.window_ms, sample_rate)
    }

    pub fn hop_len(&self, sample_rate: u32) -> usize {
        ms_to_samples(self.hop_ms, sample_rate)
    }
}

fn ms_to_samples(ms: f64, sample_rate: u32) -> usize {
    (ms * sample_rate as f64 / 1000.0).round() as usize
}

/// Frame start positions and sizes for one framed signal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameGrid {
    pub starts: Vec<usize>,
    pub frame_len: usize,
    pub hop: usize,
    pub signal_len: usize,
}

impl FrameGrid {
    pub fn new(signal_len: usize, frame_len: usize, hop: usize) -> Result<Self, SignalError> {
        if frame_len == 0 || hop == 0 {
            return Err(SignalError::InvalidFraming(
                "window and hop must each span at least one sample".into(),
            ));
        }
        if signal_len < frame_len {
            return Err(SignalError::TooShort {
                len: signal_len,
                window: frame_len,
            });
        }
        let count = (signal_len - frame_len).div_ceil(hop) + 1;
        let starts = (0..count).map(|i| i * hop).collect();
        Ok(Self {
            starts,
            frame_len,
            hop,
            signal_len,
        })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramedSignal {
    pub frames: Vec<Vec<f64>>,
    pub grid: FrameGrid,
}

/// Cuts the buffer into windowed frames. The last frame is zero-padded.
pub fn frame_signal(
    buffer: &AudioBuffer,
    cfg: &FramingConfig,
) -> Result<FramedSignal, SignalError> {
    cfg.validate()?;
    let rate = buffer.sample_rate();
    let grid = FrameGrid::new(buffer.len(), cfg.window_len(rate), cfg.hop_len(rate))?;
    let window = cfg.window_kind.coefficients(grid.frame_len);
    let samples = buffer.samples();
    let frames = grid
        .starts
        .iter()
        .map(|&start| {
            window
                .iter()
                .enumerate()
                .map(|(i, w)| samples.get(start + i).map_or(0.0, |s| s * w))
                .collect()
        })
        .collect();
    Ok(FramedSignal { frames, grid })
}

/// Reassembles frames on `grid`, normalizing by the overlapped window sum.
///
/// Output positions whose window sum is below 1e-6 are set to zero.
pub fn overlap_add(
    frames: &[Vec<f64>],
    grid: &FrameGrid,
    cfg: &FramingConfig,
    out_len: usize,
) -> Result<Vec<f64>, SignalError> {
    if frames.len() != grid.len() {
        return Err(SignalError::GridMismatch(format!(
            "{} frames for a grid of {}",
            frames.len(),
            grid.len()
        )));
    }
    if let Some((i, f)) = frames
        .iter()
        .enumerate()
        .find(|(_, f)| f.len() != grid.frame_len)
    {
        return Err(SignalError::GridMismatch(format!(
            "frame {i} has {} samples, expected {}",
            f.len(),
            grid.frame_len
        )));
    }

    let window = cfg.window_kind.coefficients(grid.frame_len);
    let mut acc = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];
    for (frame, &start) in frames.iter().zip(&grid.starts) {
        for (i, (&x, &w)) in frame.iter().zip(&window).enumerate() {
            let Some(slot) = acc.get_mut(start + i) else {
                break;
            };
            *slot += x;
            norm[start + i] += w;
        }
    }
    for (a, n) in acc.iter_mut().zip(&norm) {
        *a = if *n < WINDOW_SUM_FLOOR { 0.0 } else { *a / n };
    }
    Ok(acc)
}

pub fn peak_abs(samples: &[f64]) -> f64 {
    samples.iter().fold(0.0, |m, s| m.max(s.abs()))
}

pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Rescales `samples` so their peak is `limit` if it currently exceeds it.
/// Returns whether rescaling happened.
pub fn limit_peak(samples: &mut [f64], limit: f64) -> bool {
    let peak = peak_abs(samples);
    if peak <= limit {
        return false;
    }
    let gain = limit / peak;
    for s in samples.iter_mut() {
        *s = (*s * gain).clamp(-limit, limit);
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn buffer(samples: Vec<f64>, rate: u32) -> AudioBuffer {
        AudioBuffer::new(samples, rate).unwrap()
    }

    fn write_int_wav(path: &Path, channels: u16, bits: u16, data: &[i32]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: 16000,
            bits_per_sample: bits,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &d in data {
            w.write_sample(d).unwrap();
        }
        w.finalize().unwrap();
    }

    fn interior_rel_rms(a: &[f64], b: &[f64], margin: usize) -> f64 {
        let range = margin..a.len() - margin;
        let err: f64 = range.clone().map(|i| (a[i] - b[i]).powi(2)).sum();
        let refe: f64 = range.map(|i| b[i].powi(2)).sum();
        (err / refe).sqrt()
    }

    #[test]
    fn buffer_rejects_bad_input() {
        assert!(AudioBuffer::new(vec![0.0], 0).is_err());
        assert!(AudioBuffer::new(vec![f64::NAN], 16000).is_err());
        assert!(AudioBuffer::new(vec![f64::INFINITY], 16000).is_err());
    }

    #[test]
    fn load_16_bit_scales_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_int_wav(&p, 1, 16, &[16384]);
        let b = load_wav(&p).unwrap();
        assert_eq!(b.samples(), &[0.5]);
        assert_eq!(b.sample_rate(), 16000);
    }

    #[test]
    fn load_stereo_averages_channels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        // 0.2 and 0.4 full scale at 24-bit
        let scale = (1 << 23) as f64;
        write_int_wav(&p, 2, 24, &[(0.2 * scale) as i32, (0.4 * scale) as i32]);
        let b = load_wav(&p).unwrap();
        assert_eq!(b.len(), 1);
        assert!((b.samples()[0] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn load_float_wav() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(-0.25f32).unwrap();
        w.write_sample(0.75f32).unwrap();
        w.finalize().unwrap();
        let b = load_wav(&p).unwrap();
        assert_eq!(b.samples(), &[-0.25, 0.75]);
    }

    #[test]
    fn load_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.wav");
        assert!(matches!(load_wav(&missing), Err(SignalError::NotFound(_))));

        let empty = dir.path().join("empty.wav");
        write_int_wav(&empty, 1, 16, &[]);
        assert!(matches!(load_wav(&empty), Err(SignalError::Empty(_))));

        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"definitely not a riff file").unwrap();
        assert!(matches!(
            load_wav(&junk),
            Err(SignalError::UnsupportedEncoding { .. })
        ));
    }

    #[test]
    fn save_round_trip_within_quantization_step() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sine.wav");
        let sine: Vec<f64> = (0..16000)
            .map(|n| 0.8 * (2.0 * PI * 1000.0 * n as f64 / 16000.0).sin())
            .collect();
        let b = buffer(sine, 16000);
        save_wav(&b, &p).unwrap();
        let back = load_wav(&p).unwrap();
        let max_err = b
            .samples()
            .iter()
            .zip(back.samples())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 2f64.powi(-15), "max err {max_err}");
    }

    #[test]
    fn save_clips_without_wraparound() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("peak.wav");
        save_wav(&buffer(vec![1.0, -1.0, 1.5, -1.5, 0.0], 16000), &p).unwrap();
        let raw: Vec<i16> = hound::WavReader::open(&p)
            .unwrap()
            .into_samples::<i16>()
            .map(Result::unwrap)
            .collect();
        assert_eq!(raw, vec![32767, -32768, 32767, -32768, 0]);
    }

    #[test]
    fn save_zero_buffer() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.wav");
        save_wav(&buffer(vec![0.0; 64], 16000), &p).unwrap();
        assert!(load_wav(&p).unwrap().samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn hamming_endpoints_and_symmetry() {
        for len in [2usize, 3, 320, 321] {
            let w = hamming(len);
            assert!((w[0] - 0.08).abs() < 1e-12);
            assert!((w[len - 1] - 0.08).abs() < 1e-12);
            assert!(w.iter().all(|&v| v > 0.0 && v <= 1.0));
            for i in 0..len {
                assert!((w[i] - w[len - 1 - i]).abs() < 1e-12);
            }
        }
        let odd = hamming(321);
        assert!((odd[160] - 1.0).abs() < 1e-12);
        let even = hamming(320);
        assert!((even[159] - even[160]).abs() < 1e-12);
    }

    #[test]
    fn frame_grid_arithmetic() {
        let b = buffer(vec![0.1; 480], 16000);
        let f = frame_signal(&b, &FramingConfig::default()).unwrap();
        assert_eq!(f.grid.frame_len, 320);
        assert_eq!(f.grid.hop, 160);
        assert_eq!(f.grid.starts, vec![0, 160]);

        let b = buffer(vec![0.1; 481], 16000);
        let f = frame_signal(&b, &FramingConfig::default()).unwrap();
        assert_eq!(f.grid.starts, vec![0, 160, 320]);
        // third frame covers samples 320..481, then padding
        assert!(f.frames[2][160] != 0.0);
        assert!(f.frames[2][161..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constant_signal_frame_is_the_window() {
        let b = buffer(vec![1.0; 800], 16000);
        let f = frame_signal(&b, &FramingConfig::default()).unwrap();
        assert_eq!(f.frames[0], hamming(320));
    }

    #[test]
    fn too_short_signal() {
        let b = buffer(vec![0.0; 319], 16000);
        assert!(matches!(
            frame_signal(&b, &FramingConfig::default()),
            Err(SignalError::TooShort {
                len: 319,
                window: 320
            })
        ));
    }

    #[test]
    fn framing_config_validation() {
        let bad = FramingConfig {
            hop_ms: 30.0,
            ..FramingConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = FramingConfig {
            hop_ms: 0.0,
            ..FramingConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_frame_is_divided_by_window() {
        let cfg = FramingConfig::default();
        let grid = FrameGrid::new(320, 320, 160).unwrap();
        let frame: Vec<f64> = (0..320).map(|i| (i as f64 * 0.01).sin()).collect();
        let out = overlap_add(std::slice::from_ref(&frame), &grid, &cfg, 320).unwrap();
        let w = hamming(320);
        for i in 0..320 {
            assert!((out[i] - frame[i] / w[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_frames_give_zero_output() {
        let cfg = FramingConfig::default();
        let grid = FrameGrid::new(1000, 320, 160).unwrap();
        let frames = vec![vec![0.0; 320]; grid.len()];
        let out = overlap_add(&frames, &grid, &cfg, 1000).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn overlap_add_rejects_mismatch() {
        let cfg = FramingConfig::default();
        let grid = FrameGrid::new(1000, 320, 160).unwrap();
        assert!(overlap_add(&[vec![0.0; 320]], &grid, &cfg, 1000).is_err());
        let frames = vec![vec![0.0; 300]; grid.len()];
        assert!(overlap_add(&frames, &grid, &cfg, 1000).is_err());
    }

    #[test]
    fn limit_peak_rescales_only_when_needed() {
        let mut quiet = vec![0.5, -0.2];
        assert!(!limit_peak(&mut quiet, 0.999));
        assert_eq!(quiet, vec![0.5, -0.2]);
        let mut loud = vec![2.0, -1.0];
        assert!(limit_peak(&mut loud, 0.999));
        assert!((peak_abs(&loud) - 0.999).abs() < 1e-15);
        assert!((loud[1] + 0.4995).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn analysis_round_trip_is_exact(
            samples in prop::collection::vec(-1.0f64..1.0, 960..4000),
            hop_ms in prop::sample::select(vec![5.0, 10.0, 15.0, 20.0]),
        ) {
            prop_assume!(rms(&samples) > 1e-3);
            let b = buffer(samples.clone(), 16000);
            let cfg = FramingConfig { hop_ms, ..FramingConfig::default() };
            let f = frame_signal(&b, &cfg).unwrap();
            let expected = (samples.len() - 320).div_ceil(cfg.hop_len(16000)) + 1;
            prop_assert_eq!(f.grid.len(), expected);
            let out = overlap_add(&f.frames, &f.grid, &cfg, samples.len()).unwrap();
            prop_assert_eq!(out.len(), samples.len());
            prop_assert!(interior_rel_rms(&out, &samples, 160) < 1e-10);
        }
    }
}
