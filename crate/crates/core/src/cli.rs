//! Command-line workflows: generate a synthetic suite, fit it analytically,
//! refine initial poses with ICP, evaluate record files and inspect the
//! training loss.
//!
//! A dataset directory holds `manifest.csv` plus `scans/`, `poses/` (ground
//! truth) and `scenes/`. Every output is byte-stable for a fixed config and
//! seed; rows are sorted by scan id and runtimes are written as 0 unless
//! `--timing` is given.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::analytic::{estimate_pose_analytic, AnalyticParams};
use crate::icp::{refine_icp, IcpParams};
use crate::kv::{KvError, KvMap, KvWriter};
use crate::metrics::{
    build_curve, default_rotation_thresholds, default_translation_thresholds, pose_errors,
    read_records, summarize, write_records, EvalRecord, Metric,
};
use crate::pose::{load_pose, save_pose, Pose, PoseError};
use crate::rotparam::{joint_loss, joint_loss_gradient, joint_loss_terms, LossConfig, PoseVectors};
use crate::scan::{load_scan, save_scan, ScanError};
use crate::synth::{generate_suite, perturb_pose, render_scan, SuiteConfig, SuiteKind, SuiteScene};

pub const DEFAULT_SEED: u64 = 7;
pub const MANIFEST_HEADER: &str = "scan_id,tag,scan,pose,scene";
const FULL_RES: (usize, usize) = (2064, 1544);
const FD_STEP: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. } => 2,
        }
    }

    fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            msg: err.to_string(),
        }
    }
}

impl From<KvError> for CliError {
    fn from(e: KvError) -> Self {
        CliError::Usage(format!("config: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "binpose",
    version,
    about = "Bin pose estimation in organized 3D scans"
)]
pub struct Cli {
    #[command(flatten)]
    pub shared: SharedArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct SharedArgs {
    /// key = value file with suite.*, analytic.*, icp.*, refine.* and loss.* keys
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for per-scan work
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Record wall-clock runtimes (makes outputs run-dependent)
    #[arg(long, global = true)]
    pub timing: bool,
    /// Override one config entry, e.g. `--set icp.rejection_radius=10`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic suite with ground-truth poses
    Generate {
        #[arg(long)]
        count: Option<usize>,
        /// visible-rim or occluded
        #[arg(long)]
        kind: Option<SuiteKind>,
        /// Along-ray noise sigma in mm
        #[arg(long)]
        noise: Option<f64>,
        /// Render at 2064x1544 instead of the configured size
        #[arg(long)]
        full_res: bool,
    },
    /// Run the analytic fitter on a dataset
    Fit {
        /// Dataset directory
        #[arg(long)]
        input: PathBuf,
    },
    /// Refine initial poses with ICP
    Refine {
        /// Dataset directory
        #[arg(long)]
        input: PathBuf,
        /// Directory of `<scan_id>.pose` initial poses; perturbed ground truth when absent
        #[arg(long)]
        initial: Option<PathBuf>,
        /// Perturbation angle in degrees
        #[arg(long)]
        perturb_angle: Option<f64>,
        /// Perturbation offset in mm
        #[arg(long)]
        perturb_offset: Option<f64>,
    },
    /// Summaries and cumulative curves from record CSVs
    Eval {
        #[arg(required = true)]
        records: Vec<PathBuf>,
    },
    /// Joint loss terms and gradient check for a prediction/target pair
    Loss {
        /// Pose file (4x4) or nine numbers `z y t`
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
}

/// Parameters gathered from the config file and flags.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub timing: bool,
    pub suite: SuiteConfig,
    pub analytic: AnalyticParams,
    pub icp: IcpParams,
    pub perturb_angle_deg: f64,
    pub perturb_offset_mm: f64,
    pub loss_lambda: f64,
    pub loss_epsilon: f64,
}

const TOP_KEYS: &[&str] = &["seed"];
const KNOWN_PREFIXES: &[&str] = &["suite.", "analytic.", "icp.", "refine.", "loss."];
const REFINE_KEYS: &[&str] = &["perturb_angle_deg", "perturb_offset_mm"];
const LOSS_KEYS: &[&str] = &["lambda", "epsilon"];

impl RunConfig {
    pub fn from_kv(m: &KvMap, shared: &SharedArgs) -> Result<Self, CliError> {
        for k in m.keys() {
            if !TOP_KEYS.contains(&k) && !KNOWN_PREFIXES.iter().any(|p| k.starts_with(p)) {
                return Err(KvError::Unknown(k.to_string()).into());
            }
        }
        m.check_known("refine.", REFINE_KEYS)?;
        m.check_known("loss.", LOSS_KEYS)?;
        let suite = SuiteConfig::from_kv(m).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        let analytic = AnalyticParams::from_kv(m)?;
        analytic
            .validate()
            .map_err(|e| CliError::Usage(format!("config: {e}")))?;
        let icp = IcpParams::from_kv(m)?;
        icp.validate()
            .map_err(|e| CliError::Usage(format!("config: {e}")))?;
        let seed = match shared.seed {
            Some(s) => s,
            None => m.get("seed")?.unwrap_or(DEFAULT_SEED),
        };
        if shared.jobs == Some(0) {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        Ok(Self {
            seed,
            out: shared.out.clone(),
            jobs: shared.jobs,
            timing: shared.timing,
            suite,
            analytic,
            icp,
            perturb_angle_deg: m.get("refine.perturb_angle_deg")?.unwrap_or(5.0),
            perturb_offset_mm: m.get("refine.perturb_offset_mm")?.unwrap_or(20.0),
            loss_lambda: m.get("loss.lambda")?.unwrap_or(1.0),
            loss_epsilon: m.get("loss.epsilon")?.unwrap_or(1e-8),
        })
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("--out <dir> is required".into()))
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.jobs {
            b = b.num_threads(n);
        }
        b.build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
    }

    fn runtime(&self, start: Instant) -> f64 {
        if self.timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Reports go to `stdout`, errors to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut kv = match &cli.shared.config {
        None => KvMap::default(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            KvMap::parse(&text)?
        }
    };
    for o in &cli.shared.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        kv.set(k, v);
    }
    let mut cfg = RunConfig::from_kv(&kv, &cli.shared)?;
    match &cli.command {
        Command::Generate {
            count,
            kind,
            noise,
            full_res,
        } => {
            if let Some(c) = count {
                cfg.suite.count = *c;
            }
            if let Some(k) = kind {
                cfg.suite.kind = *k;
            }
            if let Some(n) = noise {
                cfg.suite.noise_sigma = *n;
            }
            if *full_res {
                let scale = FULL_RES.0 as f64 / cfg.suite.image_width as f64;
                cfg.suite.focal_length *= scale;
                cfg.suite.image_width = FULL_RES.0;
                cfg.suite.image_height = FULL_RES.1;
            }
            cfg.suite
                .validate()
                .map_err(|e| CliError::Usage(format!("suite: {e}")))?;
            cmd_generate(&cfg, stdout)
        }
        Command::Fit { input } => cmd_fit(&cfg, input, stdout),
        Command::Refine {
            input,
            initial,
            perturb_angle,
            perturb_offset,
        } => {
            if let Some(a) = perturb_angle {
                cfg.perturb_angle_deg = *a;
            }
            if let Some(o) = perturb_offset {
                cfg.perturb_offset_mm = *o;
            }
            if !(cfg.perturb_angle_deg.is_finite() && cfg.perturb_angle_deg >= 0.0)
                || !(cfg.perturb_offset_mm.is_finite() && cfg.perturb_offset_mm >= 0.0)
            {
                return Err(CliError::Usage(
                    "perturbation must be finite and >= 0".into(),
                ));
            }
            cmd_refine(&cfg, input, initial.as_deref(), stdout)
        }
        Command::Eval { records } => cmd_eval(&cfg, records, stdout),
        Command::Loss {
            pred,
            gt,
            lambda,
            epsilon,
        } => {
            if let Some(l) = lambda {
                cfg.loss_lambda = *l;
            }
            if let Some(e) = epsilon {
                cfg.loss_epsilon = *e;
            }
            cmd_loss(&cfg, pred, gt, stdout)
        }
    }
}

// ---------------------------------------------------------------------------
// dataset layout

/// One manifest row; paths are relative to the dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub scan_id: String,
    pub tag: SuiteKind,
    pub scan: String,
    pub pose: String,
    pub scene: String,
}

pub fn scan_id(index: usize) -> String {
    format!("scene_{index:04}")
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), CliError> {
    let mut text = String::new();
    let _ = writeln!(text, "{MANIFEST_HEADER}");
    for e in entries {
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            e.scan_id, e.tag, e.scan, e.pose, e.scene
        );
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    let path = dir.join("manifest.csv");
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
        return Err(CliError::io(&path, "missing manifest header"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(CliError::io(
                &path,
                format!("line {}: expected 5 fields", i + 2),
            ));
        }
        let tag = f[1]
            .parse()
            .map_err(|e| CliError::io(&path, format!("line {}: {e}", i + 2)))?;
        out.push(ManifestEntry {
            scan_id: f[0].to_string(),
            tag,
            scan: f[2].to_string(),
            pose: f[3].to_string(),
            scene: f[4].to_string(),
        });
    }
    out.sort_by(|a, b| a.scan_id.cmp(&b.scan_id));
    Ok(out)
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn scan_err(path: &Path, e: ScanError) -> CliError {
    CliError::io(path, e)
}

fn pose_err(path: &Path, e: PoseError) -> CliError {
    CliError::io(path, e)
}

struct Sample {
    entry: ManifestEntry,
    scene: SuiteScene,
    scan: crate::scan::StructuredScan,
    gt: Pose,
}

fn load_sample(dir: &Path, entry: &ManifestEntry) -> Result<Sample, CliError> {
    let scene_path = dir.join(&entry.scene);
    let text = fs::read_to_string(&scene_path).map_err(|e| CliError::io(&scene_path, e))?;
    let scene = SuiteScene::parse(&text).map_err(|e| CliError::io(&scene_path, e))?;
    let scan_path = dir.join(&entry.scan);
    let scan = load_scan(&scan_path).map_err(|e| scan_err(&scan_path, e))?;
    let pose_path = dir.join(&entry.pose);
    let gt = load_pose(&pose_path).map_err(|e| pose_err(&pose_path, e))?;
    Ok(Sample {
        entry: entry.clone(),
        scene,
        scan,
        gt,
    })
}

fn write_record_file(path: &Path, records: &mut [EvalRecord]) -> Result<(), CliError> {
    records.sort_by(|a, b| (&a.scan_id, &a.method).cmp(&(&b.scan_id, &b.method)));
    let mut buf = Vec::new();
    write_records(&mut buf, records).map_err(|e| CliError::io(path, e))?;
    fs::write(path, buf).map_err(|e| CliError::io(path, e))
}

// ---------------------------------------------------------------------------
// generate

pub fn cmd_generate(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let suite =
        generate_suite(&cfg.suite, cfg.seed).map_err(|e| CliError::Usage(format!("suite: {e}")))?;
    for sub in ["scans", "poses", "scenes"] {
        create_dir(&out.join(sub))?;
    }
    let pool = cfg.pool()?;
    let results: Vec<Result<ManifestEntry, CliError>> = pool.install(|| {
        suite
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let id = scan_id(i);
                let entry = ManifestEntry {
                    scan_id: id.clone(),
                    tag: s.tag,
                    scan: format!("scans/{id}.scan"),
                    pose: format!("poses/{id}.pose"),
                    scene: format!("scenes/{id}.scene"),
                };
                let (scan, gt) = render_scan(&s.scene, &s.camera)
                    .map_err(|e| CliError::Usage(format!("{id}: {e}")))?;
                let p = out.join(&entry.scan);
                save_scan(&scan, &p).map_err(|e| scan_err(&p, e))?;
                let p = out.join(&entry.pose);
                save_pose(&gt, &p).map_err(|e| pose_err(&p, e))?;
                let p = out.join(&entry.scene);
                fs::write(&p, s.to_kv_string()).map_err(|e| CliError::io(&p, e))?;
                Ok(entry)
            })
            .collect()
    });
    let entries = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    write_manifest(&out.join("manifest.csv"), &entries)?;
    let mut w = KvWriter::new();
    w.put("seed", cfg.seed);
    cfg.suite.write_kv(&mut w);
    let p = out.join("suite.cfg");
    fs::write(&p, w.finish()).map_err(|e| CliError::io(&p, e))?;
    let _ = writeln!(
        stdout,
        "generated {} scenes in {}",
        entries.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit

pub const FIT_DIAG_HEADER: &str = "scan_id,failed_stage,cuts,plane_inliers,corners,message";

pub fn cmd_fit(cfg: &RunConfig, input: &Path, stdout: &mut dyn Write) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let manifest = read_manifest(input)?;
    let pose_dir = out.join("fit_poses");
    create_dir(&pose_dir)?;
    let pool = cfg.pool()?;
    let results: Vec<Result<(EvalRecord, String), CliError>> = pool.install(|| {
        manifest
            .par_iter()
            .map(|entry| {
                let s = load_sample(input, entry)?;
                let start = Instant::now();
                let report = estimate_pose_analytic(&s.scan, &s.scene.scene.bin, &cfg.analytic);
                let ms = cfg.runtime(start);
                let d = &report.diagnostics;
                let diag = format!(
                    "{},{},{},{},{},{}",
                    s.entry.scan_id,
                    d.failed_stage.map_or(String::new(), |st| st.to_string()),
                    d.cuts_extracted,
                    d.plane_inliers,
                    d.corners_found,
                    d.message.as_deref().unwrap_or("").replace(',', ";"),
                );
                let rec = match report.pose() {
                    Some(pose) => {
                        let p = pose_dir.join(format!("{}.pose", s.entry.scan_id));
                        save_pose(pose, &p).map_err(|e| pose_err(&p, e))?;
                        let (te, re) = pose_errors(&s.gt, pose);
                        EvalRecord::success(&s.entry.scan_id, "analytic", te, re)
                    }
                    None => EvalRecord::failure(&s.entry.scan_id, "analytic"),
                };
                Ok((rec.with_runtime(ms), diag))
            })
            .collect()
    });
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let (mut records, diags): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    write_record_file(&out.join("fit.csv"), &mut records)?;
    let mut text = format!("{FIT_DIAG_HEADER}\n");
    for d in &diags {
        let _ = writeln!(text, "{d}");
    }
    let p = out.join("fit_diagnostics.csv");
    fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
    let failed = records.iter().filter(|r| r.failed()).count();
    let _ = writeln!(stdout, "fit {} scans, {} failed", records.len(), failed);
    Ok(())
}

// ---------------------------------------------------------------------------
// refine

pub const ICP_DETAIL_HEADER: &str =
    "scan_id,iterations,final_mean_distance,paired_points,confident,error";

pub fn cmd_refine(
    cfg: &RunConfig,
    input: &Path,
    initial: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let manifest = read_manifest(input)?;
    if let Some(dir) = initial {
        if !dir.is_dir() {
            return Err(CliError::io(dir, "initial pose directory not found"));
        }
    }
    let pose_dir = out.join("refine_poses");
    create_dir(&pose_dir)?;
    let angle = cfg.perturb_angle_deg.to_radians();
    let pool = cfg.pool()?;
    let results: Vec<Result<(Vec<EvalRecord>, String), CliError>> = pool.install(|| {
        manifest
            .par_iter()
            .enumerate()
            .map(|(i, entry)| {
                let s = load_sample(input, entry)?;
                let id = &s.entry.scan_id;
                let init = match initial {
                    Some(dir) => {
                        // A missing file means the upstream method failed on this scan.
                        let p = dir.join(format!("{id}.pose"));
                        if p.exists() {
                            Some(load_pose(&p).map_err(|e| pose_err(&p, e))?)
                        } else {
                            None
                        }
                    }
                    None => {
                        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                        rng.set_stream(i as u64);
                        Some(perturb_pose(&s.gt, angle, cfg.perturb_offset_mm, &mut rng))
                    }
                };
                let Some(init) = init else {
                    let recs = ["initial", "icp", "icp_gated"]
                        .iter()
                        .map(|m| EvalRecord::failure(id, *m))
                        .collect();
                    return Ok((recs, format!("{id},0,inf,0,false,no initial pose")));
                };
                let (te0, re0) = pose_errors(&s.gt, &init);
                let start = Instant::now();
                let res = refine_icp(&s.scan, &init, &s.scene.scene.bin, &cfg.icp);
                let ms = cfg.runtime(start);
                let (refined, confident, detail) = match &res {
                    Ok(r) => (
                        r.pose,
                        r.confident,
                        format!(
                            "{id},{},{},{},{},",
                            r.iterations_used, r.final_mean_distance, r.paired_points, r.confident
                        ),
                    ),
                    // The initial pose is kept when ICP cannot run.
                    Err(e) => (init, false, format!("{id},0,inf,0,false,{e}")),
                };
                let gated = if confident { refined } else { init };
                let p = pose_dir.join(format!("{id}.pose"));
                save_pose(&gated, &p).map_err(|e| pose_err(&p, e))?;
                let (te1, re1) = pose_errors(&s.gt, &refined);
                let (te2, re2) = pose_errors(&s.gt, &gated);
                let recs = vec![
                    EvalRecord::success(id, "initial", te0, re0),
                    EvalRecord::success(id, "icp", te1, re1)
                        .with_confidence(Some(confident))
                        .with_runtime(ms),
                    EvalRecord::success(id, "icp_gated", te2, re2)
                        .with_confidence(Some(confident))
                        .with_runtime(ms),
                ];
                Ok((recs, detail.replace(['\n'], " ")))
            })
            .collect()
    });
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut details: Vec<String> = Vec::new();
    let mut records: Vec<EvalRecord> = Vec::new();
    for (recs, d) in rows {
        records.extend(recs);
        details.push(d);
    }
    write_record_file(&out.join("refine.csv"), &mut records)?;
    let mut text = format!("{ICP_DETAIL_HEADER}\n");
    for d in &details {
        let _ = writeln!(text, "{d}");
    }
    let p = out.join("icp_details.csv");
    fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
    let improved = manifest
        .iter()
        .filter(|e| {
            let pick = |m: &str| {
                records
                    .iter()
                    .find(|r| r.scan_id == e.scan_id && r.method == m)
            };
            match (pick("initial"), pick("icp_gated")) {
                (Some(a), Some(b)) => b.e_te() < a.e_te(),
                _ => false,
            }
        })
        .count();
    let _ = writeln!(
        stdout,
        "refined {} scans, gated result improved translation on {}",
        manifest.len(),
        improved
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

pub const SUMMARY_HEADER: &str =
    "method,total,failed,failure_rate,mean_te_mm,std_te_mm,mean_re_rad,std_re_rad";

pub fn cmd_eval(
    cfg: &RunConfig,
    inputs: &[PathBuf],
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let mut by_method: BTreeMap<String, Vec<EvalRecord>> = BTreeMap::new();
    for path in inputs {
        let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let records = read_records(BufReader::new(file)).map_err(|e| CliError::io(path, e))?;
        for r in records {
            by_method.entry(r.method.clone()).or_default().push(r);
        }
    }
    if by_method.is_empty() {
        return Err(CliError::Usage("no records in input".into()));
    }
    let curve_dir = out.join("curves");
    create_dir(&curve_dir)?;
    let mut csv = format!("{SUMMARY_HEADER}\n");
    let mut table = format!(
        "{:<12} {:>8} {:>8} {:>10} {:>10} {:>10} {:>10}\n",
        "method", "total", "fail", "mean_te", "mean_re", "std_te", "std_re"
    );
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
    for (method, records) in &mut by_method {
        records.sort_by(|a, b| a.scan_id.cmp(&b.scan_id));
        let s = summarize(records);
        let _ = writeln!(
            csv,
            "{method},{},{},{},{},{},{},{}",
            s.total,
            s.failed,
            s.failure_rate(),
            cell(s.translation.map(|m| m.mean)),
            cell(s.translation.map(|m| m.std)),
            cell(s.rotation.map(|m| m.mean)),
            cell(s.rotation.map(|m| m.std)),
        );
        let _ = writeln!(table, "{method:<12} {s}");
        for (metric, grid) in [
            (Metric::Translation, default_translation_thresholds()),
            (Metric::Rotation, default_rotation_thresholds()),
        ] {
            let curve =
                build_curve(records, metric, &grid).map_err(|e| CliError::Usage(e.to_string()))?;
            let p = curve_dir.join(format!("{method}_{}.csv", metric.short_name()));
            let mut buf = Vec::new();
            curve.write_csv(&mut buf).map_err(|e| CliError::io(&p, e))?;
            fs::write(&p, buf).map_err(|e| CliError::io(&p, e))?;
        }
    }
    let p = out.join("summary.csv");
    fs::write(&p, csv).map_err(|e| CliError::io(&p, e))?;
    let p = out.join("summary.txt");
    fs::write(&p, &table).map_err(|e| CliError::io(&p, e))?;
    let _ = write!(stdout, "{table}");
    Ok(())
}

// ---------------------------------------------------------------------------
// loss

/// Reads a 4x4 pose (converted to its training target) or nine numbers in
/// `z y t` order.
pub fn read_pose_vectors(path: &Path) -> Result<PoseVectors, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let values: Vec<f64> = text
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("{}: not a list of numbers", path.display())))?;
    match values.len() {
        9 => {
            let mut a = [0.0; 9];
            a.copy_from_slice(&values);
            Ok(PoseVectors::from_array(&a))
        }
        16 => {
            let pose = Pose::from_row_major(&values)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            Ok(PoseVectors::target_from_pose(
                pose.rotation(),
                pose.translation(),
            ))
        }
        n => Err(CliError::Usage(format!(
            "{}: expected 9 or 16 numbers, found {n}",
            path.display()
        ))),
    }
}

/// Largest relative difference between the analytic gradient and central
/// finite differences, or `None` where the loss has no gradient.
pub fn gradient_check(pred: &PoseVectors, gt: &PoseVectors, cfg: &LossConfig) -> Option<f64> {
    let grad = joint_loss_gradient(pred, gt, cfg).ok()?;
    let base = pred.to_array();
    let mut worst: f64 = 0.0;
    for i in 0..9 {
        let mut hi = base;
        let mut lo = base;
        hi[i] += FD_STEP;
        lo[i] -= FD_STEP;
        let fd = (joint_loss(&PoseVectors::from_array(&hi), gt, cfg)
            - joint_loss(&PoseVectors::from_array(&lo), gt, cfg))
            / (2.0 * FD_STEP);
        let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Some(worst)
}

pub fn cmd_loss(
    cfg: &RunConfig,
    pred: &Path,
    gt: &Path,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let loss_cfg = LossConfig::new(cfg.loss_lambda, cfg.loss_epsilon)
        .map_err(|e| CliError::Usage(format!("loss config: {e}")))?;
    let p = read_pose_vectors(pred)?;
    let g = read_pose_vectors(gt)?;
    let zero = |v: &Vector3<f64>| !(v.norm() > 0.0) || !v.iter().all(|x| x.is_finite());
    if zero(&p.z) || zero(&p.y) || zero(&g.z) || zero(&g.y) {
        return Err(CliError::Usage(
            "direction vectors must be nonzero and finite".into(),
        ));
    }
    let terms = joint_loss_terms(&p, &g, &loss_cfg);
    let mut report = String::new();
    let _ = writeln!(report, "L = {}", terms.total);
    let _ = writeln!(report, "L_r^z = {}", terms.rot_z);
    let _ = writeln!(report, "L_r^y = {}", terms.rot_y);
    let _ = writeln!(report, "L1 = {}", terms.translation_l1);
    match gradient_check(&p, &g, &loss_cfg) {
        Some(e) => {
            let _ = writeln!(report, "gradient_check_max_rel_error = {e}");
        }
        None => {
            let reason = joint_loss_gradient(&p, &g, &loss_cfg)
                .err()
                .map(|e| e.to_string());
            let _ = writeln!(
                report,
                "gradient_check_max_rel_error = undefined ({})",
                reason.unwrap_or_default()
            );
        }
    }
    if let Some(out) = &cfg.out {
        create_dir(out)?;
        let path = out.join("loss.txt");
        fs::write(&path, &report).map_err(|e| CliError::io(&path, e))?;
    }
    stdout
        .write_all(report.as_bytes())
        .map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

/// Entry point used by the `binpose` binary.
pub fn main_with_env() -> i32 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
