//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 bad or unreadable input.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::config::{parse_synth_config, parse_tracker_config};
use crate::evaluation::{evaluate_sequence, image_based_items, track_based_items, MetricsReport, VoteScheme};
use crate::geometry::{parse_gt_file, parse_jsonl_detections, parse_mot_detections, parse_result_file, write_track_line, Detection};
use crate::pipeline::track_sequence;
use crate::synth::generate_synthetic_sequence;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "tiertrack", version, about = "Confidence-tier multi-object tracker and MOT evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Track a detection file and write MOT-format results.
    Track {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Detection file format; guessed from the extension when omitted.
        #[arg(long, value_enum)]
        format: Option<InputFormat>,
    },
    /// Score tracking results against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou_thresh: f64,
        /// Also write the report as JSON to this file.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Score species classification, per track or per detection.
    Infer {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum)]
        scheme: Scheme,
        #[arg(long, default_value_t = 0.5)]
        iou_thresh: f64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Generate a synthetic sequence (gt.txt and dets.jsonl).
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InputFormat {
    Mot,
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scheme {
    Majority,
    Logitsum,
    Image,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {detail}", path.display())]
    Input { path: PathBuf, detail: String },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn input(path: &Path, detail: impl ToString) -> Self {
        Self::Input { path: path.to_path_buf(), detail: detail.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input { .. } => EXIT_INPUT,
            Self::Usage(_) => EXIT_USAGE,
        }
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(stdout, "{text}");
                EXIT_OK
            };
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Track { dets, config, out, format } => track(&dets, &config, &out, format, stderr),
        Command::Eval { gt, pred, iou_thresh, json } => eval(&gt, &pred, iou_thresh, json.as_deref(), stdout),
        Command::Infer { tracks, dets, gt, scheme, iou_thresh, json } => {
            infer(&tracks, &dets, &gt, scheme, iou_thresh, json.as_deref(), stdout)
        }
        Command::Synth { config, out_dir } => synth(&config, &out_dir, stderr),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::input(path, e))
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(contents).and_then(|_| f.sync_all()))
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::input(path, e));
    }
    Ok(())
}

fn load_detections(path: &Path, format: Option<InputFormat>) -> Result<Vec<Detection>, CliError> {
    let format = format.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => InputFormat::Jsonl,
        _ => InputFormat::Mot,
    });
    let text = read(path)?;
    match format {
        InputFormat::Mot => parse_mot_detections(&text),
        InputFormat::Jsonl => parse_jsonl_detections(&text),
    }
    .map_err(|e| CliError::input(path, e))
}

fn track(dets: &Path, config: &Path, out: &Path, format: Option<InputFormat>, stderr: &mut dyn Write) -> Result<(), CliError> {
    let cfg = parse_tracker_config(&read(config)?).map_err(|e| CliError::input(config, e))?;
    let detections = load_detections(dets, format)?;
    let frames = detections.iter().map(|d| d.frame).max().unwrap_or(0);

    let start = Instant::now();
    let rows = track_sequence(detections, &cfg).map_err(|e| CliError::input(dets, e))?;
    let secs = start.elapsed().as_secs_f64();

    let text: String = rows.iter().map(|r| write_track_line(r) + "\n").collect();
    write_atomic(out, text.as_bytes())?;
    let fps = if secs > 0.0 { frames as f64 / secs } else { f64::INFINITY };
    let _ = writeln!(stderr, "tracked {frames} frames, {} rows in {secs:.3}s ({fps:.0} fps)", rows.len());
    Ok(())
}

fn emit_report(report: &MetricsReport, json: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    let _ = write!(stdout, "{report}");
    if let Some(path) = json {
        let mut text = report.to_json();
        text.push('\n');
        write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}

fn check_threshold(t: f64) -> Result<(), CliError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--iou-thresh {t} must lie in (0, 1]")))
    }
}

fn eval(gt: &Path, pred: &Path, iou_thresh: f64, json: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    check_threshold(iou_thresh)?;
    let gt_boxes = parse_gt_file(&read(gt)?).map_err(|e| CliError::input(gt, e))?;
    let rows = parse_result_file(&read(pred)?).map_err(|e| CliError::input(pred, e))?;
    let metrics = evaluate_sequence(&gt_boxes, &rows, iou_thresh).map_err(|e| CliError::input(gt, e))?;
    emit_report(&MetricsReport::from_sequence(&metrics), json, stdout)
}

fn infer(
    tracks: &Path,
    dets: &Path,
    gt: &Path,
    scheme: Scheme,
    iou_thresh: f64,
    json: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    check_threshold(iou_thresh)?;
    let gt_boxes = parse_gt_file(&read(gt)?).map_err(|e| CliError::input(gt, e))?;
    let detections = parse_jsonl_detections(&read(dets)?).map_err(|e| CliError::input(dets, e))?;
    let items = match scheme {
        Scheme::Image => image_based_items(&gt_boxes, &detections, iou_thresh),
        Scheme::Majority | Scheme::Logitsum => {
            let vote = if scheme == Scheme::Majority { VoteScheme::MajorityVote } else { VoteScheme::LogitSum };
            let rows = parse_result_file(&read(tracks)?).map_err(|e| CliError::input(tracks, e))?;
            track_based_items(&gt_boxes, &rows, &detections, vote, iou_thresh).map_err(|e| CliError::input(tracks, e))?
        }
    };
    let report = items.report();
    let _ = writeln!(stdout, "items: {}", report.items);
    emit_report(&MetricsReport::from_classification(&report), json, stdout)
}

fn synth(config: &Path, out_dir: &Path, stderr: &mut dyn Write) -> Result<(), CliError> {
    let cfg = parse_synth_config(&read(config)?).map_err(|e| CliError::input(config, e))?;
    let seq = generate_synthetic_sequence(&cfg).map_err(|e| CliError::input(config, e))?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::input(out_dir, e))?;
    write_atomic(&out_dir.join("gt.txt"), seq.gt_text().as_bytes())?;
    write_atomic(&out_dir.join("dets.jsonl"), seq.jsonl_text().as_bytes())?;
    let _ = writeln!(
        stderr,
        "wrote {} frames: {} ground-truth boxes, {} detections",
        cfg.n_frames,
        seq.ground_truth.len(),
        seq.detections.len()
    );
    Ok(())
}
