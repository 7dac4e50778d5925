//! Command-line front end.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on runtime failures
//! (including batches where some utterances failed; the report is still
//! written).

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::augment::{augment_with_plan, AugmentConfig, UtteranceSeed};
use crate::corpus::{analyze, batch_augment, read_manifest, AnalyzeOptions, BatchOptions};
use crate::lpc::compute_lpc_order;
use crate::poles::{sample_warp_factors, write_pole_dump, PairWarp};
use crate::signal::{load_wav, save_wav};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Environment variable supplying a default `--out-dir`.
pub const OUT_DIR_ENV: &str = "LPCAUG_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "lpcaug",
    version,
    about = "Formant-perturbing data augmentation by warping LPC pole phases"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Expand a JSON-lines manifest with augmented copies.
    Augment(AugmentCmd),
    /// Compare LPC envelopes and formant peaks before and after warping.
    Analyze(AnalyzeCmd),
    /// Augment one file.
    Single(SingleCmd),
}

#[derive(Debug, Args)]
struct WarpArgs {
    /// Global seed; per-utterance streams derive from (seed, id, copy).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    warp_lo: f64,
    #[arg(long, default_value_t = 1.2)]
    warp_hi: f64,
    #[arg(long, default_value_t = 20.0)]
    window_ms: f64,
    #[arg(long, default_value_t = 10.0)]
    hop_ms: f64,
    /// Rescale each perturbed frame to the source frame's energy.
    #[arg(long)]
    energy_match: bool,
}

impl WarpArgs {
    fn config(&self) -> AugmentConfig {
        AugmentConfig {
            warp_lo: self.warp_lo,
            warp_hi: self.warp_hi,
            window_ms: self.window_ms,
            hop_ms: self.hop_ms,
            energy_match: self.energy_match,
            ..AugmentConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct AugmentCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, env = OUT_DIR_ENV)]
    out_dir: PathBuf,
    /// Augmented copies per utterance (2 gives a 3x corpus with originals).
    #[arg(long, default_value_t = 2)]
    copies: u32,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Write a per-copy pole CSV next to each output file.
    #[arg(long)]
    dump_poles: bool,
    /// Write the JSON batch report here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    warp: WarpArgs,
}

#[derive(Debug, Args)]
struct AnalyzeCmd {
    input: PathBuf,
    #[arg(long, env = OUT_DIR_ENV)]
    out_dir: PathBuf,
    /// Comma-separated warp factors replacing the random draw; cycled over
    /// the pole pairs when shorter than the pair count.
    #[arg(long, value_delimiter = ',')]
    factors: Option<Vec<f64>>,
    /// Frame to inspect (default: loudest).
    #[arg(long)]
    frame: Option<usize>,
    #[arg(long, default_value_t = 3)]
    max_peaks: usize,
    #[command(flatten)]
    warp: WarpArgs,
}

#[derive(Debug, Args)]
struct SingleCmd {
    input: PathBuf,
    output: PathBuf,
    /// Write `<output>.poles.csv`.
    #[arg(long)]
    dump_poles: bool,
    #[command(flatten)]
    warp: WarpArgs,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };

    let warp = match &cli.command {
        Command::Augment(c) => &c.warp,
        Command::Analyze(c) => &c.warp,
        Command::Single(c) => &c.warp,
    };
    if let Err(e) = warp.config().validate() {
        eprintln!("error: {e}\n");
        eprintln!("{}", Cli::command().render_usage());
        return EXIT_USAGE;
    }

    let result = match cli.command {
        Command::Augment(c) => run_augment(c),
        Command::Analyze(c) => run_analyze(c),
        Command::Single(c) => run_single(c),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

type CmdResult = Result<i32, Box<dyn std::error::Error>>;

fn run_augment(cmd: AugmentCmd) -> CmdResult {
    let cfg = cmd.warp.config();
    let entries = read_manifest(&cmd.manifest)?;
    let report = batch_augment(
        &entries,
        &cfg,
        &BatchOptions {
            copies: cmd.copies,
            global_seed: cmd.warp.seed,
            out_dir: cmd.out_dir.clone(),
            workers: cmd.workers,
            dump_poles: cmd.dump_poles,
        },
    )?;
    if let Some(path) = &cmd.report {
        report.write_json(path)?;
    }
    eprintln!(
        "processed {} utterances: {} files written, {} failures, {} passthrough frames, {:.2}s",
        report.processed,
        report.files_written,
        report.failures.len(),
        report.passthrough_frames,
        report.elapsed_secs
    );
    Ok(if report.failures.is_empty() {
        EXIT_OK
    } else {
        EXIT_RUNTIME
    })
}

fn run_analyze(cmd: AnalyzeCmd) -> CmdResult {
    let cfg = cmd.warp.config();
    let id = utterance_id(&cmd.input);
    let opts = AnalyzeOptions {
        frame_index: cmd.frame,
        max_peaks: cmd.max_peaks,
        ..AnalyzeOptions::default()
    };
    let (analysis, files) = analyze(
        &cmd.input,
        &cfg,
        cmd.factors.as_deref(),
        &UtteranceSeed::new(cmd.warp.seed, id, 1),
        &opts,
        &cmd.out_dir,
    )?;
    println!("frame {}", analysis.frame_index);
    println!("peak_index,freq_before_hz,freq_after_hz,shift_hz");
    for p in &analysis.peaks {
        println!(
            "{},{:.1},{:.1},{:+.1}",
            p.peak_index,
            p.freq_before_hz,
            p.freq_after_hz,
            p.shift_hz()
        );
    }
    eprintln!(
        "wrote {}, {}, {}",
        files.envelope_before.display(),
        files.envelope_after.display(),
        files.peak_table.display()
    );
    Ok(EXIT_OK)
}

fn run_single(cmd: SingleCmd) -> CmdResult {
    let cfg = cmd.warp.config();
    let buffer = load_wav(&cmd.input)?;
    let seed = UtteranceSeed::new(cmd.warp.seed, utterance_id(&cmd.input), 1);
    let plan = sample_warp_factors(
        cfg.warp_lo,
        cfg.warp_hi,
        compute_lpc_order(buffer.sample_rate()) / 2,
        &seed.seed_material(),
    )?;
    let out = augment_with_plan(&buffer, &cfg, &plan, cmd.dump_poles)?;
    save_wav(&out.buffer, &cmd.output)?;
    if let Some(trace) = &out.trace {
        let mut dump = cmd.output.clone().into_os_string();
        dump.push(".poles.csv");
        let rows: Vec<(usize, Vec<PairWarp>)> = trace
            .iter()
            .map(|t| (t.frame_index, t.warps.clone()))
            .collect();
        write_pole_dump(BufWriter::new(File::create(PathBuf::from(dump))?), &rows)?;
    }
    if out.too_short {
        eprintln!("warning: input shorter than one window; copied unmodified");
    }
    Ok(EXIT_OK)
}

/// Utterance id for single-file commands: the file stem.
fn utterance_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
