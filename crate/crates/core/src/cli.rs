//! Command-line front end (`mocap-calib`).
//!
//! Exit codes: 0 success, 2 insufficient RANSAC consensus, 3 input or processing
//! error, 64 usage error. Diagnostics go to stderr; stdout only carries the
//! requested artifact. `RPGD_THREADS` caps the worker count (0 or unset = auto).

use std::ffi::OsString;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::io::{load_report, parse_extrinsic_numbers, parse_report, parse_session, report_to_string, write_session, LoadedSession};
use crate::pipeline::{calibrate, compute_mpjpe, CalibrationReport};
use crate::ransac::RansacConfig;
use crate::refine::RefineConfig;
use crate::synth::{generate, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NO_CONSENSUS: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

pub const THREADS_ENV: &str = "RPGD_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mocap-calib", version, about = "MoCap-to-camera extrinsic calibration from human joints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the MoCap→world transform of a session and write a report.
    Calibrate {
        /// Session file, or `-` for stdin.
        #[arg(long)]
        session: PathBuf,
        /// Inlier threshold in pixels.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        ransac_iters: Option<usize>,
        #[arg(long)]
        coarse_stride: Option<usize>,
        #[arg(long)]
        min_inlier_ratio: Option<f64>,
        #[arg(long)]
        fine_stride: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr_rot: Option<f64>,
        #[arg(long)]
        lr_trans: Option<f64>,
        #[arg(long, action = ArgAction::Set)]
        inliers_only: Option<bool>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path, or `-` for stdout.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the MPJPE of a session under a given extrinsic.
    Eval {
        #[arg(long)]
        session: PathBuf,
        /// A report file, or 12 numbers (rotation row-major, then translation).
        #[arg(long, allow_hyphen_values = true)]
        extrinsic: String,
    },
    /// Write a synthetic session with embedded ground truth.
    Synth {
        /// Session path, or `-` for stdout.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        cams: usize,
        #[arg(long, default_value_t = 17)]
        joints: usize,
        #[arg(long, default_value_t = 300)]
        frames: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.0)]
        outliers: f64,
        #[arg(long, default_value_t = 0.0)]
        invalid: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a report (or a directory of reports) as a table or CSV.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        csv: bool,
    },
}

/// Runs the CLI with explicit streams; returns the process exit code.
pub fn run<I, T>(args: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    configure_threads(stderr);
    match dispatch(cli.command, stdin, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InsufficientConsensus { .. } => EXIT_NO_CONSENSUS,
        _ => EXIT_INPUT,
    }
}

fn configure_threads(stderr: &mut dyn Write) {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return };
    match raw.trim().parse::<usize>() {
        Ok(0) => {}
        Ok(n) => {
            // Fails only if a global pool already exists; the existing one is kept.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        Err(_) => {
            let _ = writeln!(stderr, "warning: ignoring {THREADS_ENV}={raw:?}");
        }
    }
}

fn is_stdio(p: &Path) -> bool {
    p.as_os_str() == "-"
}

fn read_session(path: &Path, stdin: &mut dyn Read) -> Result<LoadedSession> {
    let text = if is_stdio(path) {
        let mut s = String::new();
        stdin.read_to_string(&mut s)?;
        s
    } else {
        fs::read_to_string(path)?
    };
    parse_session(&text)
}

fn write_artifact(path: &Path, bytes: &[u8], stdout: &mut dyn Write) -> Result<()> {
    if is_stdio(path) {
        stdout.write_all(bytes)?;
        stdout.flush()?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

fn dispatch(cmd: Command, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Calibrate {
            session,
            tau,
            ransac_iters,
            coarse_stride,
            min_inlier_ratio,
            fine_stride,
            steps,
            lr_rot,
            lr_trans,
            inliers_only,
            seed,
            out,
        } => {
            let loaded = read_session(&session, stdin)?;
            let d = RansacConfig::default();
            let ransac = RansacConfig {
                tau: tau.unwrap_or(d.tau),
                iterations: ransac_iters.unwrap_or(d.iterations),
                seed,
                coarse_stride: coarse_stride.unwrap_or(d.coarse_stride),
                min_inlier_ratio: min_inlier_ratio.unwrap_or(d.min_inlier_ratio),
            };
            let d = RefineConfig::default();
            let refine = RefineConfig {
                steps: steps.unwrap_or(d.steps),
                lr_rotation: lr_rot.unwrap_or(d.lr_rotation),
                lr_translation: lr_trans.unwrap_or(d.lr_translation),
                fine_stride: fine_stride.unwrap_or(d.fine_stride),
                inliers_only: inliers_only.unwrap_or(d.inliers_only),
                ..d
            };
            let mut report = calibrate(&loaded.set, &ransac, &refine, loaded.gt_extrinsic())?;
            report.warnings = loaded.warnings.clone();
            writeln!(
                stderr,
                "mpjpe init {:.4} px -> refined {:.4} px, inliers {:.1}%, {:.3} ms/frame",
                report.mpjpe_init,
                report.mpjpe_refined,
                100.0 * report.inlier_ratio,
                report.timing.ms_per_frame
            )?;
            write_artifact(&out, report_to_string(&report)?.as_bytes(), stdout)
        }
        Command::Eval { session, extrinsic } => {
            let loaded = read_session(&session, stdin)?;
            let transform = resolve_extrinsic(&extrinsic)?;
            let mpjpe = compute_mpjpe(&loaded.set, &transform)?;
            writeln!(stdout, "mpjpe_px = {mpjpe}")?;
            if let Some(gt) = loaded.gt_extrinsic() {
                let rot = crate::geometry::rotation_geodesic_deg(transform.rotation(), gt.rotation());
                let trans = (transform.translation() - gt.translation()).norm();
                writeln!(stdout, "rotation_error_deg = {rot}")?;
                writeln!(stdout, "translation_error_m = {trans}")?;
                if let Ok(g) = compute_mpjpe(&loaded.set, gt) {
                    writeln!(stdout, "mpjpe_gt_px = {g}")?;
                }
            }
            Ok(())
        }
        Command::Synth {
            out,
            cams,
            joints,
            frames,
            sigma,
            outliers,
            invalid,
            seed,
        } => {
            let cfg = SynthConfig {
                n_cameras: cams,
                n_joints: joints,
                n_frames: frames,
                noise_sigma: sigma,
                outlier_fraction: outliers,
                invalid_fraction: invalid,
                seed,
                ..Default::default()
            };
            let session = generate(&cfg)?;
            let mut buf = Vec::new();
            write_session(&session.data, &mut buf)?;
            write_artifact(&out, &buf, stdout)
        }
        Command::Report { input, csv } => {
            let reports = collect_reports(&input)?;
            let text = if csv {
                render_csv(&reports)
            } else if input.is_dir() {
                render_summary(&reports)
            } else {
                render_table(&reports[0].1)
            };
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn resolve_extrinsic(arg: &str) -> Result<RigidTransform> {
    let path = Path::new(arg);
    if path.is_file() {
        Ok(load_report(path)?.transform)
    } else {
        parse_extrinsic_numbers(arg)
    }
}

/// `(name, report)` pairs; a directory yields every `*.json` in name order.
fn collect_reports(input: &Path) -> Result<Vec<(String, CalibrationReport)>> {
    let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if input.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(input)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Parse {
                location: input.display().to_string(),
                message: "directory contains no .json reports".into(),
            });
        }
        paths
            .iter()
            .map(|p| Ok((stem(p), parse_report(&fs::read_to_string(p)?)?)))
            .collect()
    } else {
        Ok(vec![(stem(input), load_report(input)?)])
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn render_table(r: &CalibrationReport) -> String {
    let e = &r.euler;
    let t = r.transform.translation();
    let rows: Vec<(&str, String)> = vec![
        ("mpjpe_gt_px", opt(r.mpjpe_gt)),
        ("mpjpe_init_px", format!("{:.6}", r.mpjpe_init)),
        ("mpjpe_refined_px", format!("{:.6}", r.mpjpe_refined)),
        ("rotation_error_deg", opt(r.rotation_error_deg)),
        ("translation_error_m", opt(r.translation_error_m)),
        ("inlier_ratio", format!("{:.6}", r.inlier_ratio)),
        ("inlier_count", r.inlier_count.to_string()),
        ("refinement_rejected", r.refinement_rejected.to_string()),
        (
            "euler_deg",
            format!("{:.6} {:.6} {:.6}", e.alpha.to_degrees(), e.beta.to_degrees(), e.gamma.to_degrees()),
        ),
        ("translation_m", format!("{:.6} {:.6} {:.6}", t.x, t.y, t.z)),
        ("total_ms", format!("{:.3}", r.timing.total_ms)),
        ("ms_per_frame", format!("{:.4}", r.timing.ms_per_frame)),
        ("seed", r.seed.to_string()),
    ];
    let mut out = String::new();
    for (k, v) in rows {
        out.push_str(&format!("{k:<22}{v}\n"));
    }
    for w in &r.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

const CSV_HEADER: &str =
    "name,mpjpe_gt_px,mpjpe_init_px,mpjpe_refined_px,rotation_error_deg,translation_error_m,inlier_ratio,ms_per_frame";

fn csv_row(name: &str, r: &CalibrationReport) -> String {
    format!(
        "{name},{},{:.6},{:.6},{},{},{:.6},{:.4}",
        opt(r.mpjpe_gt),
        r.mpjpe_init,
        r.mpjpe_refined,
        opt(r.rotation_error_deg),
        opt(r.translation_error_m),
        r.inlier_ratio,
        r.timing.ms_per_frame
    )
}

/// Mean of per-sequence means; `None` values are skipped.
fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (s, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

struct Aggregate {
    gt: Option<f64>,
    init: Option<f64>,
    refined: Option<f64>,
    ms_per_frame: Option<f64>,
}

fn aggregate(reports: &[(String, CalibrationReport)]) -> Aggregate {
    Aggregate {
        gt: mean_of(reports.iter().map(|(_, r)| r.mpjpe_gt)),
        init: mean_of(reports.iter().map(|(_, r)| Some(r.mpjpe_init))),
        refined: mean_of(reports.iter().map(|(_, r)| Some(r.mpjpe_refined))),
        ms_per_frame: mean_of(reports.iter().map(|(_, r)| Some(r.timing.ms_per_frame))),
    }
}

fn render_csv(reports: &[(String, CalibrationReport)]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (name, r) in reports {
        out.push_str(&csv_row(name, r));
        out.push('\n');
    }
    if reports.len() > 1 {
        let a = aggregate(reports);
        out.push_str(&format!(
            "mean,{},{},{},,,,{}\n",
            opt(a.gt),
            opt(a.init),
            opt(a.refined),
            a.ms_per_frame.map(|x| format!("{x:.4}")).unwrap_or_default()
        ));
    }
    out
}

fn render_summary(reports: &[(String, CalibrationReport)]) -> String {
    let mut out = format!("{:<24}{:>14}{:>14}{:>14}\n", "sequence", "gt_px", "init_px", "refined_px");
    for (name, r) in reports {
        out.push_str(&format!(
            "{name:<24}{:>14}{:>14.6}{:>14.6}\n",
            opt(r.mpjpe_gt),
            r.mpjpe_init,
            r.mpjpe_refined
        ));
    }
    let a = aggregate(reports);
    out.push_str(&format!(
        "{:<24}{:>14}{:>14}{:>14}\n",
        "mean of sequences",
        opt(a.gt),
        opt(a.init),
        opt(a.refined)
    ));
    out
}
