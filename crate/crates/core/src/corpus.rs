//! Manifest-driven corpus expansion and formant-shift analysis.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{augment_with_plan, AugmentConfig, AugmentError, UtteranceSeed};
use crate::lpc::{
    autocorrelate, compute_lpc_order, levinson_durbin, lpc_envelope, pick_formant_peaks, LpcError,
    SpectralEnvelope,
};
use crate::poles::{sample_warp_factors, write_pole_dump, PairWarp, WarpPlan};
use crate::signal::{frame_signal, load_wav, rms, save_wav, AudioBuffer, SignalError};

pub const OUTPUT_MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read manifest {path}: {source}")]
    ManifestIo {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("manifest line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("duplicate utterance id {id:?} on lines {first} and {second}")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },
    #[error("output directory {path} is not writable: {source}")]
    OutDir {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("no frame above the silence threshold in {0}")]
    NoVoicedFrame(String),
    #[error("frame {index} out of range ({frames} frames)")]
    FrameOutOfRange { index: usize, frames: usize },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Lpc(#[from] LpcError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    /// Resolved against the manifest's directory when relative.
    pub path: PathBuf,
    pub text: Option<String>,
    /// 1-based line number in the source manifest.
    pub line: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

/// Parses a JSON-lines manifest of `{"id", "path", "text"?}` objects.
/// Blank lines are skipped.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, CorpusError> {
    let path = path.as_ref();
    let manifest_io = |source| CorpusError::ManifestIo {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(manifest_io)?;
    let base = path.parent().unwrap_or(Path::new(""));

    let mut entries = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(manifest_io)?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                line: line_no,
                reason: e.to_string(),
            })?;
        if row.id.is_empty() || row.path.is_empty() {
            return Err(CorpusError::MalformedLine {
                line: line_no,
                reason: "`id` and `path` must be non-empty".into(),
            });
        }
        if let Some(&first) = seen.get(&row.id) {
            return Err(CorpusError::DuplicateId {
                id: row.id,
                first,
                second: line_no,
            });
        }
        seen.insert(row.id.clone(), line_no);
        entries.push(ManifestEntry {
            id: row.id,
            path: base.join(row.path),
            text: row.text,
            line: line_no,
        });
    }
    Ok(entries)
}

/// Name of the `copy`-th augmented file for `id`.
pub fn copy_file_name(id: &str, copy: u32) -> String {
    format!("{id}_lpcaug{copy}.wav")
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub copies: u32,
    pub global_seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses rayon's default.
    pub workers: usize,
    /// Write `{id}_lpcaug{n}.poles.csv` next to each copy.
    pub dump_poles: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub utterance_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub processed: usize,
    pub succeeded: usize,
    pub files_written: usize,
    pub passthrough_frames: usize,
    pub clipped_utterances: usize,
    pub failures: Vec<Failure>,
    pub copies: u32,
    pub global_seed: u64,
    pub config_echo: AugmentConfig,
    pub elapsed_secs: f64,
}

impl BatchReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let io_err = |source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        };
        let json = serde_json::to_string_pretty(self).map_err(|e| io_err(e.into()))?;
        fs::write(path, json + "\n").map_err(io_err)
    }
}

struct EntryResult {
    rows: Vec<ManifestRow>,
    passthrough_frames: usize,
    clipped: usize,
    files: usize,
}

/// Writes `copies` perturbed versions of every entry into `out_dir` plus an
/// output manifest listing originals and copies. Per-utterance failures are
/// recorded in the report and skipped; they never stop the run.
///
/// Originals appear in the output manifest with absolute paths, copies with
/// paths relative to `out_dir`, so the manifest is byte-identical across
/// reruns and worker counts.
pub fn batch_augment(
    entries: &[ManifestEntry],
    cfg: &AugmentConfig,
    opts: &BatchOptions,
) -> Result<BatchReport, CorpusError> {
    let start = Instant::now();
    cfg.validate()?;
    let out_dir_err = |source| CorpusError::OutDir {
        path: opts.out_dir.clone(),
        source,
    };
    fs::create_dir_all(&opts.out_dir).map_err(out_dir_err)?;
    let probe = opts.out_dir.join(".lpcaug-write-probe");
    fs::write(&probe, b"").map_err(out_dir_err)?;
    fs::remove_file(&probe).map_err(out_dir_err)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| CorpusError::OutDir {
            path: opts.out_dir.clone(),
            source: io::Error::other(e.to_string()),
        })?;
    let results: Vec<Result<EntryResult, String>> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| process_entry(e, cfg, opts).map_err(|err| err.to_string()))
            .collect()
    });

    let mut report = BatchReport {
        processed: entries.len(),
        succeeded: 0,
        files_written: 0,
        passthrough_frames: 0,
        clipped_utterances: 0,
        failures: Vec::new(),
        copies: opts.copies,
        global_seed: opts.global_seed,
        config_echo: *cfg,
        elapsed_secs: 0.0,
    };
    let manifest_path = opts.out_dir.join(OUTPUT_MANIFEST_NAME);
    let io_err = |source| CorpusError::Io {
        path: manifest_path.clone(),
        source,
    };
    let mut out = BufWriter::new(File::create(&manifest_path).map_err(io_err)?);
    for (entry, result) in entries.iter().zip(results) {
        match result {
            Ok(r) => {
                report.succeeded += 1;
                report.files_written += r.files;
                report.passthrough_frames += r.passthrough_frames;
                report.clipped_utterances += r.clipped;
                for row in r.rows {
                    let line = serde_json::to_string(&row).map_err(|e| io_err(e.into()))?;
                    writeln!(out, "{line}").map_err(io_err)?;
                }
            }
            Err(reason) => {
                log::warn!("{}: {reason}", entry.id);
                report.failures.push(Failure {
                    utterance_id: entry.id.clone(),
                    reason,
                });
            }
        }
    }
    out.flush().map_err(io_err)?;
    report.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

fn process_entry(
    entry: &ManifestEntry,
    cfg: &AugmentConfig,
    opts: &BatchOptions,
) -> Result<EntryResult, CorpusError> {
    let original = std::path::absolute(&entry.path).map_err(|source| CorpusError::Io {
        path: entry.path.clone(),
        source,
    })?;
    let mut result = EntryResult {
        rows: vec![ManifestRow {
            id: entry.id.clone(),
            path: original.to_string_lossy().into_owned(),
            text: entry.text.clone(),
        }],
        passthrough_frames: 0,
        clipped: 0,
        files: 0,
    };
    if opts.copies == 0 {
        return Ok(result);
    }

    let buffer = load_wav(&entry.path)?;
    let order = compute_lpc_order(buffer.sample_rate());
    for copy in 1..=opts.copies {
        let seed = UtteranceSeed::new(opts.global_seed, entry.id.clone(), copy);
        let plan = sample_warp_factors(cfg.warp_lo, cfg.warp_hi, order / 2, &seed.seed_material())
            .map_err(AugmentError::from)?;
        let aug = augment_with_plan(&buffer, cfg, &plan, opts.dump_poles)?;
        result.passthrough_frames += aug.passthrough_frames;
        result.clipped += usize::from(aug.clipped);

        let name = copy_file_name(&entry.id, copy);
        let wav_path = opts.out_dir.join(&name);
        save_wav(&aug.buffer, &wav_path)?;
        result.files += 1;
        if let Some(trace) = &aug.trace {
            let dump_path = opts
                .out_dir
                .join(format!("{}_lpcaug{copy}.poles.csv", entry.id));
            let rows: Vec<(usize, Vec<PairWarp>)> = trace
                .iter()
                .map(|t| (t.frame_index, t.warps.clone()))
                .collect();
            let io_err = |source| CorpusError::Io {
                path: dump_path.clone(),
                source,
            };
            let file = BufWriter::new(File::create(&dump_path).map_err(io_err)?);
            write_pole_dump(file, &rows).map_err(io_err)?;
        }
        result.rows.push(ManifestRow {
            id: format!("{}_lpcaug{copy}", entry.id),
            path: name,
            text: entry.text.clone(),
        });
    }
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    /// Frame to inspect; defaults to the highest-RMS frame.
    pub frame_index: Option<usize>,
    pub n_bins: usize,
    pub max_peaks: usize,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            frame_index: None,
            n_bins: 1024,
            max_peaks: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakShift {
    pub peak_index: usize,
    pub freq_before_hz: f64,
    pub freq_after_hz: f64,
}

impl PeakShift {
    pub fn shift_hz(&self) -> f64 {
        self.freq_after_hz - self.freq_before_hz
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub frame_index: usize,
    pub plan: WarpPlan,
    pub before: SpectralEnvelope,
    pub after: SpectralEnvelope,
    /// Peaks matched by rank in ascending frequency.
    pub peaks: Vec<PeakShift>,
}

impl Analysis {
    pub fn write_peak_table<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "peak_index,freq_before_hz,freq_after_hz,shift_hz")?;
        for p in &self.peaks {
            writeln!(
                out,
                "{},{},{},{}",
                p.peak_index,
                p.freq_before_hz,
                p.freq_after_hz,
                p.shift_hz()
            )?;
        }
        Ok(())
    }
}

/// Perturbs `buffer` with `plan` and compares LPC envelopes of one frame
/// before and after. The after-envelope is re-estimated from the perturbed
/// audio, not taken from the warped model.
pub fn analyze_buffer(
    buffer: &AudioBuffer,
    cfg: &AugmentConfig,
    plan: &WarpPlan,
    opts: &AnalyzeOptions,
    label: &str,
) -> Result<Analysis, CorpusError> {
    let framing = cfg.framing();
    let rate = buffer.sample_rate();
    let order = compute_lpc_order(rate);
    let before = frame_signal(buffer, &framing)?;
    let frame_index = match opts.frame_index {
        Some(i) if i >= before.frames.len() => {
            return Err(CorpusError::FrameOutOfRange {
                index: i,
                frames: before.frames.len(),
            })
        }
        Some(i) => i,
        None => (0..before.frames.len())
            .max_by(|&a, &b| rms(&before.frames[a]).total_cmp(&rms(&before.frames[b])))
            .unwrap_or(0),
    };
    if rms(&before.frames[frame_index]) < cfg.silence_rms_threshold {
        return Err(CorpusError::NoVoicedFrame(label.to_string()));
    }

    let augmented = augment_with_plan(buffer, cfg, plan, false)?;
    let after = frame_signal(&augmented.buffer, &framing)?;

    let envelope = |frame: &[f64]| -> Result<SpectralEnvelope, CorpusError> {
        let model = levinson_durbin(&autocorrelate(frame, order))?;
        Ok(lpc_envelope(&model, rate, opts.n_bins)?)
    };
    let env_before = envelope(&before.frames[frame_index])?;
    let env_after = envelope(&after.frames[frame_index])?;
    let peaks = pick_formant_peaks(&env_before, opts.max_peaks)
        .into_iter()
        .zip(pick_formant_peaks(&env_after, opts.max_peaks))
        .enumerate()
        .map(|(i, (b, a))| PeakShift {
            peak_index: i,
            freq_before_hz: b.freq_hz,
            freq_after_hz: a.freq_hz,
        })
        .collect();
    Ok(Analysis {
        frame_index,
        plan: plan.clone(),
        before: env_before,
        after: env_after,
        peaks,
    })
}

/// File outputs of [`analyze`].
#[derive(Debug, Clone)]
pub struct AnalysisFiles {
    pub envelope_before: PathBuf,
    pub envelope_after: PathBuf,
    pub peak_table: PathBuf,
}

/// Analyzes one WAV file and writes `{stem}_envelope_before.csv`,
/// `{stem}_envelope_after.csv` and `{stem}_peaks.csv` into `out_dir`.
///
/// `forced_factors`, when given, replace the random draw; a vector shorter
/// than the pair count is cycled.
pub fn analyze(
    path: impl AsRef<Path>,
    cfg: &AugmentConfig,
    forced_factors: Option<&[f64]>,
    seed: &UtteranceSeed,
    opts: &AnalyzeOptions,
    out_dir: impl AsRef<Path>,
) -> Result<(Analysis, AnalysisFiles), CorpusError> {
    let path = path.as_ref();
    let out_dir = out_dir.as_ref();
    cfg.validate()?;
    let buffer = load_wav(path)?;
    let plan = match forced_factors {
        Some(f) => WarpPlan::forced(f.to_vec()).map_err(AugmentError::from)?,
        None => sample_warp_factors(
            cfg.warp_lo,
            cfg.warp_hi,
            compute_lpc_order(buffer.sample_rate()) / 2,
            &seed.seed_material(),
        )
        .map_err(AugmentError::from)?,
    };
    let analysis = analyze_buffer(&buffer, cfg, &plan, opts, &path.display().to_string())?;

    fs::create_dir_all(out_dir).map_err(|source| CorpusError::OutDir {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "analysis".into());
    let files = AnalysisFiles {
        envelope_before: out_dir.join(format!("{stem}_envelope_before.csv")),
        envelope_after: out_dir.join(format!("{stem}_envelope_after.csv")),
        peak_table: out_dir.join(format!("{stem}_peaks.csv")),
    };
    write_with(&files.envelope_before, |w| analysis.before.write_csv(w))?;
    write_with(&files.envelope_after, |w| analysis.after.write_csv(w))?;
    write_with(&files.peak_table, |w| analysis.write_peak_table(w))?;
    Ok((analysis, files))
}

fn write_with(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    f(&mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthetic_vowel, VowelSpec};

    fn write_manifest(dir: &Path, lines: &[&str]) -> PathBuf {
        let p = dir.join("m.jsonl");
        fs::write(&p, lines.join("\n") + "\n").unwrap();
        p
    }

    #[test]
    fn reads_entries_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(
            dir.path(),
            &[
                r#"{"id": "a", "path": "a.wav", "text": "hello, world"}"#,
                "",
                r#"{"id": "b", "path": "/abs/b.wav"}"#,
            ],
        );
        let m = read_manifest(&p).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].id, "a");
        assert_eq!(m[0].path, dir.path().join("a.wav"));
        assert_eq!(m[0].text.as_deref(), Some("hello, world"));
        assert_eq!(m[1].path, PathBuf::from("/abs/b.wav"));
        assert_eq!(m[1].line, 3);
        assert_eq!(m[1].text, None);
    }

    #[test]
    fn missing_path_cites_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(
            dir.path(),
            &[r#"{"id": "a", "path": "a.wav"}"#, r#"{"id": "b"}"#],
        );
        match read_manifest(&p) {
            Err(CorpusError::MalformedLine { line, reason }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("path"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let p = write_manifest(dir.path(), &["not json"]);
        assert!(matches!(
            read_manifest(&p),
            Err(CorpusError::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_id_cites_both_lines() {
        let dir = tempfile::tempdir().unwrap();
        let lines: Vec<String> = (1..=7)
            .map(|i| {
                let id = if i == 3 || i == 7 {
                    "dup".to_string()
                } else {
                    format!("u{i}")
                };
                format!(r#"{{"id": "{id}", "path": "{id}.wav"}}"#)
            })
            .collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let p = write_manifest(dir.path(), &refs);
        match read_manifest(&p) {
            Err(CorpusError::DuplicateId { id, first, second }) => {
                assert_eq!((id.as_str(), first, second), ("dup", 3, 7));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn copies_zero_echoes_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(
            dir.path(),
            &[r#"{"id": "a", "path": "missing.wav", "text": "t"}"#],
        );
        let entries = read_manifest(&p).unwrap();
        let out = dir.path().join("out");
        let report = batch_augment(
            &entries,
            &AugmentConfig::default(),
            &BatchOptions {
                copies: 0,
                global_seed: 0,
                out_dir: out.clone(),
                workers: 1,
                dump_poles: false,
            },
        )
        .unwrap();
        assert_eq!(report.files_written, 0);
        let back = read_manifest(out.join(OUTPUT_MANIFEST_NAME)).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].id, "a");
        assert_eq!(back[0].path, dir.path().join("missing.wav"));
        assert_eq!(back[0].text.as_deref(), Some("t"));
    }

    #[test]
    fn unwritable_out_dir_aborts() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let err = batch_augment(
            &[],
            &AugmentConfig::default(),
            &BatchOptions {
                copies: 2,
                global_seed: 0,
                out_dir: blocker.join("sub"),
                workers: 1,
                dump_poles: false,
            },
        );
        assert!(matches!(err, Err(CorpusError::OutDir { .. })));
    }

    #[test]
    fn identity_analysis_has_no_shift() {
        let v = synthetic_vowel(&VowelSpec::with_formants(&[500.0, 1500.0, 2500.0]));
        let a = analyze_buffer(
            &v,
            &AugmentConfig::default(),
            &WarpPlan::forced(vec![1.0]).unwrap(),
            &AnalyzeOptions::default(),
            "v",
        )
        .unwrap();
        assert_eq!(a.peaks.len(), 3);
        let bin = a.before.bin_width_hz();
        assert!(a.peaks.iter().all(|p| p.shift_hz().abs() <= bin));
    }

    #[test]
    fn silent_file_has_no_voiced_frame() {
        let b = AudioBuffer::new(vec![0.0; 1600], 16000).unwrap();
        let err = analyze_buffer(
            &b,
            &AugmentConfig::default(),
            &WarpPlan::identity(9),
            &AnalyzeOptions::default(),
            "z",
        );
        assert!(matches!(err, Err(CorpusError::NoVoicedFrame(_))));
    }

    #[test]
    fn peak_table_format() {
        let a = Analysis {
            frame_index: 0,
            plan: WarpPlan::identity(1),
            before: SpectralEnvelope {
                freqs_hz: vec![],
                magnitude_db: vec![],
            },
            after: SpectralEnvelope {
                freqs_hz: vec![],
                magnitude_db: vec![],
            },
            peaks: vec![PeakShift {
                peak_index: 0,
                freq_before_hz: 500.0,
                freq_after_hz: 450.5,
            }],
        };
        let mut buf = Vec::new();
        a.write_peak_table(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "peak_index,freq_before_hz,freq_after_hz,shift_hz\n0,500,450.5,-49.5\n"
        );
    }
}
