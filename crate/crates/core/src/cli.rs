//! The `ppc` command line: dataset generation, proposal sampling,
//! refinement, evaluation, patch rendering and a self test.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{extract_patch, ZoomedCamera};
use crate::critic::{Critic, ExternalCritic, GroundTruth, NoisyCritic, NoisyCriticConfig, OracleCritic};
use crate::datagen::{config_hash, generate_dataset, read_json, write_json, Dataset, DatagenConfig};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::image::{save_gray16_png, save_gray8_png, RgbImage};
use crate::metrics::{evaluate_instance, summarize, write_csv, EvalRow, EvalSummary, SymmetrySet, Thresholds};
use crate::model::{model_points, ObjectSpec, TriangleMesh, DEFAULT_MAX_POINTS};
use crate::objective::Scene;
use crate::optimizer::{refine_with_symmetries, RefinementConfig, RefinementTrace};
use crate::proposals::{correct_negative_depth, load_pose_records, save_pose_records, PoseRecord, ProposalSampler, ProposalSamplerConfig};
use crate::rasterizer::{render, ShadingParams};

#[derive(Parser, Debug)]
#[command(name = "ppc", version, about = "Render-and-compare 6-DoF pose refinement")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Perturb ground-truth poses into proposals.
    SampleProposals(SampleArgs),
    /// Refine proposals against a dataset.
    Refine(RefineArgs),
    /// Score estimated poses against ground truth.
    Eval(EvalArgs),
    /// Render a zoomed patch of a mesh at a pose.
    Render(RenderArgs),
    /// Run quick internal consistency checks.
    Selftest,
}

#[derive(Args, Debug, Clone)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated objects: builtin names, mesh paths or id=path.
    #[arg(long, value_delimiter = ',', default_value = "l_block,wedge,stepped_block")]
    pub objects: Vec<String>,
    #[arg(long, default_value_t = 50)]
    pub frames: usize,
    /// Datagen config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "PPC_SEED")]
    pub seed: Option<u64>,
    /// Rebuild from an existing manifest instead of a config.
    #[arg(long, conflicts_with_all = ["config", "objects", "frames"])]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct SampleArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Sampler config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub per_frame: usize,
    #[arg(long, env = "PPC_SEED")]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticKind {
    Oracle,
    Noisy,
    External,
}

#[derive(Args, Debug, Clone)]
pub struct RefineArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub proposals: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Refinement config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CriticKind::Oracle)]
    pub critic: CriticKind,
    /// Shell command of the external critic.
    #[arg(long, required_if_eq("critic", "external"))]
    pub critic_command: Option<String>,
    /// Seconds to wait for each external critic reply.
    #[arg(long, default_value_t = 10.0)]
    pub critic_timeout: f64,
    /// Noisy critic config JSON.
    #[arg(long)]
    pub noisy_config: Option<PathBuf>,
    /// Directory for per-branch trace files.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long, env = "PPC_SEED")]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Pose file: a list of records or a refine output.
    #[arg(long)]
    pub estimates: PathBuf,
    /// Output directory for metrics.csv, summary.json and table.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// Threshold config JSON.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct RenderArgs {
    /// Mesh source (builtin name, path, or id=path); taken from the frame
    /// when rendering a dataset frame.
    #[arg(long)]
    pub mesh: Option<String>,
    /// Pose JSON file ({"R": ..., "t": ...}).
    #[arg(long)]
    pub pose: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub frame: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = crate::rasterizer::DEFAULT_RENDER_RESOLUTION)]
    pub resolution: usize,
    #[arg(long, default_value_t = crate::camera::DEFAULT_PATCH_RESOLUTION)]
    pub patch: usize,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<i32> {
    match command {
        Command::Gen(a) => cmd_gen(&a).map(|_| 0),
        Command::SampleProposals(a) => cmd_sample_proposals(&a).map(|_| 0),
        Command::Refine(a) => {
            let report = cmd_refine(&a)?;
            Ok(if report.failures > 0 { 1 } else { 0 })
        }
        Command::Eval(a) => {
            let summary = cmd_eval(&a)?;
            print!("{}", summary.to_table());
            Ok(0)
        }
        Command::Render(a) => cmd_render(&a).map(|_| 0),
        Command::Selftest => {
            let ok = cmd_selftest();
            Ok(if ok { 0 } else { 1 })
        }
    }
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => read_json(p).map_err(|e| match e {
            Error::Json { path, source } => Error::Config(format!("{}: {source}", path.display())),
            other => other,
        }),
    }
}

fn thread_pool(parallelism: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = parallelism {
        if n == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))
}

/// Provenance written next to outputs that have no room for it.
#[derive(Serialize)]
struct Provenance<'a, C: Serialize> {
    command: &'a str,
    config_hash: String,
    config: &'a C,
}

fn provenance_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".provenance.json");
    out.with_file_name(name)
}

pub fn cmd_gen(a: &GenArgs) -> Result<crate::datagen::DatasetManifest> {
    let pool = thread_pool(a.parallelism)?;
    if let Some(manifest) = &a.manifest {
        let mut m: crate::datagen::DatasetManifest = read_json(manifest)?;
        if let Some(seed) = a.seed {
            m.config.seed = seed;
        }
        return pool.install(|| generate_dataset(&a.out, &m.objects, m.n_frames, &m.config));
    }
    let mut cfg: DatagenConfig = read_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let objects: Vec<ObjectSpec> = a.objects.iter().map(|o| ObjectSpec::parse(o)).collect();
    let m = pool.install(|| generate_dataset(&a.out, &objects, a.frames, &cfg))?;
    info!("wrote {} frames to {}", m.n_frames, a.out.display());
    Ok(m)
}

pub fn cmd_sample_proposals(a: &SampleArgs) -> Result<Vec<PoseRecord>> {
    let ds = Dataset::open(&a.dataset)?;
    let mut cfg: ProposalSamplerConfig = read_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let library = crate::datagen::load_object_library(&ds.manifest.objects)?;
    let mut sampler = ProposalSampler::new(cfg.clone())?;
    let mut out = Vec::new();
    for f in &ds.frames {
        let mesh = library
            .get(&f.object_id)
            .ok_or_else(|| Error::Config(format!("frame {} uses unknown object {}", f.frame_id, f.object_id)))?;
        for _ in 0..a.per_frame {
            let p = sampler.sample(&f.pose, mesh.diameter)?;
            out.push(PoseRecord {
                frame_id: f.frame_id,
                object_id: f.object_id.clone(),
                pose: p.pose,
                perturbation: Some(p.kind),
            });
        }
    }
    save_pose_records(&a.out, &out)?;
    write_json(
        &provenance_path(&a.out),
        &Provenance {
            command: "sample-proposals",
            config_hash: config_hash(&(&cfg, a.per_frame, &ds.manifest.config_hash)),
            config: &cfg,
        },
    )?;
    Ok(out)
}

/// One refined proposal.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefinedRecord {
    pub frame_id: usize,
    pub object_id: String,
    /// Refined pose; the corrected proposal when refinement failed.
    pub pose: Pose,
    pub initial_pose: Pose,
    pub objective: Option<f64>,
    pub branch: Option<usize>,
    /// Critic evaluations per branch.
    pub evaluations: Vec<u64>,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimingSummary {
    pub total_seconds: f64,
    pub mean_seconds_per_proposal: f64,
    pub evaluations: u64,
    pub evaluations_per_second: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefineReport {
    pub config_hash: String,
    pub critic: CriticKind,
    pub seed: u64,
    pub config: RefinementConfig,
    pub results: Vec<RefinedRecord>,
    pub failures: usize,
    pub timing: TimingSummary,
}

fn build_critic(a: &RefineArgs, seed: u64, patch_resolution: usize) -> Result<(Arc<dyn Critic>, serde_json::Value)> {
    Ok(match a.critic {
        CriticKind::Oracle => (Arc::new(OracleCritic), serde_json::json!({"kind": "oracle"})),
        CriticKind::Noisy => {
            let mut cfg: NoisyCriticConfig = read_config(a.noisy_config.as_deref())?;
            if a.seed.is_some() || a.noisy_config.is_none() {
                cfg.seed = seed;
            }
            let json = serde_json::json!({"kind": "noisy", "config": &cfg});
            (Arc::new(NoisyCritic::new(cfg)?), json)
        }
        CriticKind::External => {
            let cmd = a
                .critic_command
                .as_deref()
                .ok_or_else(|| Error::Config("--critic-command is required for the external critic".into()))?;
            if !(a.critic_timeout > 0.0) {
                return Err(Error::Config("critic timeout must be positive".into()));
            }
            let c = ExternalCritic::spawn(cmd, patch_resolution, Duration::from_secs_f64(a.critic_timeout))?;
            (Arc::new(c), serde_json::json!({"kind": "external", "command": cmd}))
        }
    })
}

/// Loads estimates from a plain record list or a refine report.
pub fn load_estimates(path: &Path) -> Result<Vec<PoseRecord>> {
    let value: serde_json::Value = read_json(path)?;
    let list = match value {
        serde_json::Value::Array(_) => value,
        serde_json::Value::Object(mut map) => map
            .remove("results")
            .ok_or_else(|| Error::Config(format!("{}: expected a list or a refine report", path.display())))?,
        _ => return Err(Error::Config(format!("{}: expected a list of poses", path.display()))),
    };
    serde_json::from_value(list).map_err(|e| Error::json(path, e))
}

pub fn cmd_refine(a: &RefineArgs) -> Result<RefineReport> {
    let ds = Dataset::open(&a.dataset)?;
    let mut cfg: RefinementConfig = read_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let proposals = load_pose_records(&a.proposals)?;
    let library = crate::datagen::load_object_library(&ds.manifest.objects)?;
    let points: BTreeMap<&String, Vec<_>> = library
        .iter()
        .map(|(id, m)| (id, model_points(m, DEFAULT_MAX_POINTS)))
        .collect();
    let frames: BTreeMap<usize, &crate::datagen::FrameRecord> =
        ds.frames.iter().map(|f| (f.frame_id, f)).collect();
    for p in &proposals {
        match frames.get(&p.frame_id) {
            Some(f) if f.object_id == p.object_id => {}
            Some(f) => {
                return Err(Error::KeyMismatch(format!(
                    "proposal for frame {} names object {}, frame shows {}",
                    p.frame_id, p.object_id, f.object_id
                )))
            }
            None => return Err(Error::KeyMismatch(format!("proposal for unknown frame {}", p.frame_id))),
        }
    }
    let (critic, critic_json) = build_critic(a, cfg.seed, cfg.objective.patch_resolution)?;
    if let Some(dir) = &a.trace {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let hash = config_hash(&(&cfg, &critic_json, &ds.manifest.config_hash));
    let pool = thread_pool(a.parallelism)?;
    let start = Instant::now();

    let refine_one = |p: &PoseRecord| -> (RefinedRecord, bool) {
        let t0 = Instant::now();
        let frame = frames[&p.frame_id];
        let mesh = &library[&p.object_id];
        let mut rec = RefinedRecord {
            frame_id: p.frame_id,
            object_id: p.object_id.clone(),
            pose: p.pose.clone(),
            initial_pose: p.pose.clone(),
            objective: None,
            branch: None,
            evaluations: Vec::new(),
            seconds: 0.0,
            error: None,
        };
        let result = (|| -> std::result::Result<(), (Error, Vec<RefinementTrace>)> {
            let proposal = correct_negative_depth(&p.pose).map_err(|e| (e, vec![]))?;
            rec.pose = proposal.clone();
            let image = ds.load_image(frame).map_err(|e| (e, vec![]))?;
            let scene = Scene {
                observed: &image,
                mesh,
                intrinsics: ds.camera,
                shading: ShadingParams::default(),
                critic: critic.as_ref(),
                truth: Some(GroundTruth {
                    pose: frame.pose.clone(),
                    points: points[&p.object_id].clone(),
                }),
            };
            let out = refine_with_symmetries(&scene, &proposal, &mesh.symmetries, &cfg)
                .map_err(|e| (e.error, vec![e.trace]))?;
            let traces: Vec<RefinementTrace> = out
                .branches
                .iter()
                .map(|b| match b {
                    Ok(o) => o.trace.clone(),
                    Err(s) => s.trace.clone(),
                })
                .collect();
            rec.pose = out.pose;
            rec.objective = Some(out.objective);
            rec.branch = Some(out.branch);
            rec.evaluations = traces.iter().map(|t| t.eval_count).collect();
            write_traces(a.trace.as_deref(), p, &traces).map_err(|e| (e, vec![]))?;
            Ok(())
        })();
        let ok = match result {
            Ok(()) => true,
            Err((e, traces)) => {
                error!("frame {} object {}: {e}", p.frame_id, p.object_id);
                rec.evaluations = traces.iter().map(|t| t.eval_count).collect();
                if let Err(te) = write_traces(a.trace.as_deref(), p, &traces) {
                    warn!("{te}");
                }
                rec.error = Some(format!("frame {}: {e}", p.frame_id));
                false
            }
        };
        rec.seconds = t0.elapsed().as_secs_f64();
        (rec, ok)
    };
    let outcomes: Vec<(RefinedRecord, bool)> = pool.install(|| proposals.par_iter().map(refine_one).collect());

    let total = start.elapsed().as_secs_f64();
    let failures = outcomes.iter().filter(|(_, ok)| !ok).count();
    let results: Vec<RefinedRecord> = outcomes.into_iter().map(|(r, _)| r).collect();
    let evaluations: u64 = results.iter().flat_map(|r| r.evaluations.iter()).sum();
    let report = RefineReport {
        config_hash: hash,
        critic: a.critic,
        seed: cfg.seed,
        config: cfg,
        failures,
        timing: TimingSummary {
            total_seconds: total,
            mean_seconds_per_proposal: if results.is_empty() { 0.0 } else { total / results.len() as f64 },
            evaluations,
            evaluations_per_second: if total > 0.0 { evaluations as f64 / total } else { 0.0 },
        },
        results,
    };
    write_json(&a.out, &report)?;
    info!(
        "refined {} proposals in {:.1}s ({} failed)",
        report.results.len(),
        total,
        failures
    );
    Ok(report)
}

fn write_traces(dir: Option<&Path>, p: &PoseRecord, traces: &[RefinementTrace]) -> Result<()> {
    let Some(dir) = dir else { return Ok(()) };
    for t in traces {
        let name = format!("frame{:06}_{}_branch{}.json", p.frame_id, p.object_id, t.branch);
        write_json(&dir.join(name), t)?;
    }
    Ok(())
}

type Key = (usize, String);

fn check_keys(est: &[PoseRecord], gt: &[crate::datagen::FrameRecord]) -> Result<()> {
    let mut est_keys = BTreeSet::new();
    let mut dups = Vec::new();
    for e in est {
        let k: Key = (e.frame_id, e.object_id.clone());
        if !est_keys.insert(k.clone()) {
            dups.push(k);
        }
    }
    let gt_keys: BTreeSet<Key> = gt.iter().map(|f| (f.frame_id, f.object_id.clone())).collect();
    let missing: Vec<_> = gt_keys.difference(&est_keys).collect();
    let extra: Vec<_> = est_keys.difference(&gt_keys).collect();
    if missing.is_empty() && extra.is_empty() && dups.is_empty() {
        return Ok(());
    }
    let show = |v: &[&Key]| -> String {
        let mut s: Vec<String> = v.iter().take(10).map(|(f, o)| format!("({f}, {o})")).collect();
        if v.len() > 10 {
            s.push(format!("… {} more", v.len() - 10));
        }
        s.join(", ")
    };
    let mut msg = Vec::new();
    if !missing.is_empty() {
        msg.push(format!("{} ground-truth keys without estimate: {}", missing.len(), show(&missing)));
    }
    if !extra.is_empty() {
        msg.push(format!("{} estimate keys not in ground truth: {}", extra.len(), show(&extra)));
    }
    if !dups.is_empty() {
        let d: Vec<&Key> = dups.iter().collect();
        msg.push(format!("{} duplicate estimate keys: {}", dups.len(), show(&d)));
    }
    Err(Error::KeyMismatch(msg.join("; ")))
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    config_hash: String,
    thresholds: &'a Thresholds,
    #[serde(flatten)]
    summary: &'a EvalSummary,
}

/// Evaluates every ground-truth instance of `ds` against `estimates`.
pub fn evaluate_estimates(ds: &Dataset, estimates: &[PoseRecord], th: &Thresholds) -> Result<Vec<EvalRow>> {
    check_keys(estimates, &ds.frames)?;
    let library = crate::datagen::load_object_library(&ds.manifest.objects)?;
    let mut by_key: BTreeMap<Key, &PoseRecord> = BTreeMap::new();
    for e in estimates {
        by_key.insert((e.frame_id, e.object_id.clone()), e);
    }
    let mut rows = Vec::with_capacity(ds.frames.len());
    let mut cache: BTreeMap<&str, (Vec<nalgebra::Vector3<f64>>, SymmetrySet)> = BTreeMap::new();
    for f in &ds.frames {
        let mesh: &TriangleMesh = &library[&f.object_id];
        let (points, syms) = cache
            .entry(f.object_id.as_str())
            .or_insert_with(|| (model_points(mesh, DEFAULT_MAX_POINTS), SymmetrySet::new(&mesh.symmetries)));
        let est = &by_key[&(f.frame_id, f.object_id.clone())].pose;
        let est = correct_negative_depth(est)?;
        let verdict = evaluate_instance(&est, &f.pose, points, mesh.diameter, &ds.camera, syms, th)?;
        rows.push(EvalRow {
            frame_id: f.frame_id,
            object_id: f.object_id.clone(),
            verdict,
        });
    }
    Ok(rows)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<EvalSummary> {
    let ds = Dataset::open(&a.dataset)?;
    let th: Thresholds = read_config(a.thresholds.as_deref())?;
    let estimates = load_estimates(&a.estimates)?;
    let rows = evaluate_estimates(&ds, &estimates, &th)?;
    let summary = summarize(&rows)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_csv(&a.out.join("metrics.csv"), &rows)?;
    write_json(
        &a.out.join("summary.json"),
        &SummaryFile {
            config_hash: config_hash(&(&th, &ds.manifest.config_hash)),
            thresholds: &th,
            summary: &summary,
        },
    )?;
    let table = a.out.join("table.txt");
    std::fs::write(&table, summary.to_table()).map_err(|e| Error::io(&table, e))?;
    Ok(summary)
}

/// What `render` wrote.
#[derive(Clone, Debug, Serialize)]
pub struct RenderSummary {
    pub zoom: ZoomedCamera,
    pub foreground_pixels: usize,
    pub silhouette_centroid: Option<(f64, f64)>,
}

pub fn cmd_render(a: &RenderArgs) -> Result<RenderSummary> {
    let (mesh, pose, intr, observed) = match (&a.dataset, a.frame) {
        (Some(root), Some(id)) => {
            let ds = Dataset::open(root)?;
            let frame = ds
                .frame(id)
                .ok_or_else(|| Error::Config(format!("dataset has no frame {id}")))?;
            let mesh = match &a.mesh {
                Some(m) => ObjectSpec::parse(m).load()?,
                None => crate::datagen::load_object_library(&ds.manifest.objects)?
                    .remove(&frame.object_id)
                    .ok_or_else(|| Error::Config(format!("unknown object {}", frame.object_id)))?,
            };
            let pose = match &a.pose {
                Some(p) => read_json(p)?,
                None => frame.pose.clone(),
            };
            (mesh, pose, ds.camera, Some(ds.load_image(frame)?))
        }
        (None, None) => {
            let mesh = ObjectSpec::parse(
                a.mesh
                    .as_deref()
                    .ok_or_else(|| Error::Config("--mesh is required without --dataset".into()))?,
            )
            .load()?;
            let pose: Pose = read_json(
                a.pose
                    .as_deref()
                    .ok_or_else(|| Error::Config("--pose is required without --dataset".into()))?,
            )?;
            (mesh, pose, crate::camera::CameraIntrinsics::linemod(), None)
        }
        _ => return Err(Error::Config("--dataset and --frame go together".into())),
    };
    let zoom = ZoomedCamera::around(&intr, &pose, mesh.diameter, a.patch)?;
    let out = render(&mesh, &pose, &zoom, &ShadingParams::default(), a.resolution)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    out.color.pixels.save_png(&a.out.join("rendered.png"))?;
    let n = out.resolution();
    let mask: Vec<u8> = out.mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    save_gray8_png(&a.out.join("mask.png"), n, n, &mask)?;
    // millimeters, 0 for background
    let depth: Vec<u16> = out
        .depth
        .iter()
        .map(|&d| if d.is_finite() { (d * 1000.0).round().clamp(0.0, 65535.0) as u16 } else { 0 })
        .collect();
    save_gray16_png(&a.out.join("depth.png"), n, n, &depth)?;
    if let Some(img) = observed {
        extract_patch(&img, &zoom)?.pixels.save_png(&a.out.join("observed.png"))?;
    }
    let summary = RenderSummary {
        zoom,
        foreground_pixels: out.foreground_count(),
        silhouette_centroid: out.silhouette_centroid(),
    };
    write_json(&a.out.join("render.json"), &summary)?;
    Ok(summary)
}

/// Prints one line per check; true when all pass.
pub fn cmd_selftest() -> bool {
    let checks: Vec<(&str, fn() -> Result<bool>)> = vec![
        ("so3 exp/log round trip", selftest_so3),
        ("render centered at ground truth", selftest_render),
        ("oracle zero at ground truth", selftest_oracle),
        ("short refinement reduces error", selftest_refine),
    ];
    let mut all = true;
    for (name, f) in checks {
        let ok = matches!(f(), Ok(true));
        all &= ok;
        println!("{} {name}", if ok { "PASS" } else { "FAIL" });
    }
    all
}

fn selftest_pose() -> Result<Pose> {
    Pose::from_axis_angle(nalgebra::Vector3::new(0.4, -0.3, 0.2), nalgebra::Vector3::new(0.02, -0.01, 0.8))
}

fn selftest_so3() -> Result<bool> {
    let v = nalgebra::Vector3::new(0.3, -1.2, 2.0);
    let r = crate::geometry::so3_exp(&v)?;
    Ok((crate::geometry::so3_log(&r) - v).norm() < 1e-12)
}

fn selftest_render() -> Result<bool> {
    let mesh = crate::model::primitives::cuboid(0.1, 0.1, 0.1);
    let pose = selftest_pose()?;
    let zoom = ZoomedCamera::around(&crate::camera::CameraIntrinsics::linemod(), &pose, mesh.diameter, 128)?;
    let out = render(&mesh, &pose, &zoom, &ShadingParams::default(), 64)?;
    let Some((cx, cy)) = out.silhouette_centroid() else { return Ok(false) };
    let c = zoom.project_to_patch(&pose, &nalgebra::Vector3::zeros())?;
    Ok((cx - c.x).abs() < 2.0 && (cy - c.y).abs() < 2.0)
}

fn selftest_oracle() -> Result<bool> {
    let mesh = crate::model::primitives::l_block(0.15);
    let pose = selftest_pose()?;
    let zoom = ZoomedCamera::around(&crate::camera::CameraIntrinsics::linemod(), &pose, mesh.diameter, 512)?;
    Ok(crate::critic::oracle_error(&pose, &pose, &mesh.vertices, &zoom)? == 0.0)
}

fn selftest_refine() -> Result<bool> {
    let mesh = crate::model::primitives::l_block(0.15);
    let truth = selftest_pose()?;
    let intr = crate::camera::CameraIntrinsics::linemod();
    let image = RgbImage::new(intr.width, intr.height);
    let scene = Scene {
        observed: &image,
        mesh: &mesh,
        intrinsics: intr,
        shading: ShadingParams::default(),
        critic: &OracleCritic,
        truth: Some(GroundTruth {
            pose: truth.clone(),
            points: mesh.vertices.clone(),
        }),
    };
    let start = Pose::new(truth.rotation, truth.translation + nalgebra::Vector3::new(0.01, -0.005, 0.0));
    let cfg = RefinementConfig {
        iterations: 20,
        objective: crate::objective::ObjectiveConfig {
            render_resolution: 32,
            ..Default::default()
        },
        ..Default::default()
    };
    let before = crate::metrics::reproj_value(&start, &truth, &mesh.vertices, &intr)?;
    let out = crate::optimizer::refine(&scene, &start, &cfg)?;
    let after = crate::metrics::reproj_value(&out.pose, &truth, &mesh.vertices, &intr)?;
    Ok(after < 0.5 * before)
}
