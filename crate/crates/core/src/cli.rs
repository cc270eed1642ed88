//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 property-check failure.
//! Every subcommand accepts `--config FILE` (TOML with optional `[descriptor]`,
//! `[training]`, `[synth]` and `[eval]` tables); explicit flags win over it.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::benchmark::{evaluate_pair, keypoints, reference_spacing, rotate_pairs, EvalConfig};
use crate::checks::{conv_equivariance, descriptor_invariance, synthetic_patches, volume_equivariance};
use crate::descriptor::{read_descriptors, write_descriptors, DescriptorConfig, Network};
use crate::engine::ParamStore;
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::io::{read_cloud, write_cloud, PairEntry, PairManifest};
use crate::registration::{mutual_nn, recall_from_ratios, EvalReport, EvalThresholds};
use crate::synth::{synth_pair, SyntheticSceneSpec};
use crate::training::{train, TrainConfig};
use crate::transformer::TransformerConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "spinkit", version, about = "Rotation-invariant patch descriptors and registration")]
struct Cli {
    /// Worker threads (falls back to SPINKIT_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML configuration file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic fragment pairs and manifest rows.
    Synth(SynthArgs),
    /// Train a descriptor network on a pair manifest.
    Train(TrainArgs),
    /// Describe anchors of a cloud.
    Describe(DescribeArgs),
    /// Mutual nearest-neighbour matching of two descriptor files.
    Match(MatchArgs),
    /// Register two clouds.
    Register(RegisterArgs),
    /// Evaluate matching and registration over a manifest.
    Eval(EvalArgs),
    /// Run the equivariance and invariance property suites.
    CheckEquivariance(CheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// Small grid and network used for the synthetic benchmark.
    Desk,
    /// Full-size grid and network.
    Paper,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CloudExt {
    Bin,
    Xyz,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Number of pairs, with seeds `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    /// Noise standard deviation in meters.
    #[arg(long)]
    noise: Option<f64>,
    /// Noise as a multiple of the median point spacing (overrides --noise).
    #[arg(long)]
    noise_spacing: Option<f64>,
    #[arg(long)]
    density_variation: Option<f64>,
    #[arg(long)]
    resample: Option<f64>,
    #[arg(long)]
    max_rotation: Option<f64>,
    #[arg(long)]
    max_translation: Option<f64>,
    #[arg(long)]
    planes: Option<usize>,
    #[arg(long)]
    spheres: Option<usize>,
    #[arg(long)]
    boxes: Option<usize>,
    #[arg(long)]
    cylinders: Option<usize>,
    /// Rotate each fragment by an independent random rotation.
    #[arg(long)]
    rotate: bool,
    #[arg(long, value_enum, default_value_t = CloudExt::Bin)]
    format: CloudExt,
    #[arg(long, default_value = "pair")]
    prefix: String,
    #[arg(long)]
    out_dir: PathBuf,
    /// Manifest to append to (created with a header when missing).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    anchors: Option<usize>,
}

#[derive(Debug, Args)]
struct NetworkArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Debug, Args)]
struct DescribeArgs {
    #[arg(long)]
    cloud: PathBuf,
    /// File with one anchor index per line.
    #[arg(long, conflicts_with = "num_anchors")]
    anchors: Option<PathBuf>,
    /// Number of seeded random anchors.
    #[arg(long)]
    num_anchors: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    network: NetworkArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MatchArgs {
    #[arg(long)]
    desc_a: PathBuf,
    #[arg(long)]
    desc_b: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Default)]
struct EvalFlags {
    /// Keypoints described per fragment.
    #[arg(long)]
    keypoints: Option<usize>,
    /// Inlier distance τ₁ in meters (also the RANSAC inlier distance).
    #[arg(long)]
    tau1: Option<f64>,
    /// Inlier ratio τ₂.
    #[arg(long)]
    tau2: Option<f64>,
    /// Success bound on translation error, meters.
    #[arg(long)]
    max_rte: Option<f64>,
    /// Success bound on rotation error, degrees.
    #[arg(long)]
    max_rre: Option<f64>,
    #[arg(long)]
    ransac_iterations: Option<usize>,
    /// Thresholds scaled to the synthetic scenes.
    #[arg(long)]
    synthetic_thresholds: bool,
}

#[derive(Debug, Args)]
struct RegisterArgs {
    #[arg(long)]
    cloud_a: PathBuf,
    #[arg(long)]
    cloud_b: PathBuf,
    #[command(flatten)]
    network: NetworkArgs,
    /// Ground truth: 12 numbers, row-major rotation then translation.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    eval: EvalFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    network: NetworkArgs,
    /// JSON report; a per-pair CSV and a `_sweep.csv` are written next to it.
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    eval: EvalFlags,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Patches per suite.
    #[arg(long, default_value_t = 20)]
    patches: usize,
}

/// Structured configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigFile {
    pub descriptor: Option<DescriptorConfig>,
    pub training: Option<TrainConfig>,
    pub synth: Option<SyntheticSceneSpec>,
    pub eval: Option<EvalConfig>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            message: e.message().to_string(),
        })
    }
}

/// Runs the command line `argv` (including the program name) and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
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
    let threads = cli
        .threads
        .or_else(|| std::env::var("SPINKIT_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        // A pool may already exist when dispatch runs more than once in a process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let config = match cli.config.as_deref().map(ConfigFile::load).transpose() {
        Ok(c) => c.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_DATA;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => run_synth(a, &config),
        Command::Train(a) => run_train(a, &config),
        Command::Describe(a) => run_describe(a, &config),
        Command::Match(a) => run_match(a),
        Command::Register(a) => run_register(a, &config),
        Command::Eval(a) => run_eval(a, &config),
        Command::CheckEquivariance(a) => run_check(a, &config),
    };
    match result {
        Ok(code) => code,
        Err(Error::InvalidInput(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn run_synth(a: SynthArgs, config: &ConfigFile) -> Result<i32> {
    let mut spec = config.synth.clone().unwrap_or_default();
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(if let Some(v) = a.$flag { spec.$field = v; })*};
    }
    set!(seed => seed, overlap => overlap, points => points_per_fragment, noise => noise_sigma,
         density_variation => density_variation, resample => resample_fraction,
         max_rotation => max_rotation_deg, max_translation => max_translation,
         planes => planes, spheres => spheres, boxes => boxes, cylinders => cylinders);
    if let Some(f) = a.noise_spacing {
        spec.noise_sigma = f * reference_spacing(spec.points_per_fragment);
    }
    spec.validate()?;
    fs::create_dir_all(&a.out_dir)?;
    let ext = match a.format {
        CloudExt::Bin => "bin",
        CloudExt::Xyz => "xyz",
    };
    let mut manifest = match &a.manifest {
        Some(m) if m.exists() => PairManifest::read(m)?,
        Some(m) => PairManifest::new(m.parent().unwrap_or(Path::new("."))),
        None => PairManifest::new(&a.out_dir),
    };
    for k in 0..a.count {
        let mut pair_spec = spec.clone();
        pair_spec.seed = spec.seed + k;
        let mut pair = synth_pair(&pair_spec)?;
        if a.rotate {
            pair = rotate_pairs(std::slice::from_ref(&pair), pair_spec.seed).remove(0);
        }
        let name = format!("{}_{:04}", a.prefix, pair_spec.seed);
        let (pa, pb) = (a.out_dir.join(format!("{name}_a.{ext}")), a.out_dir.join(format!("{name}_b.{ext}")));
        write_cloud(&pa, &pair.frag_a)?;
        write_cloud(&pb, &pair.frag_b)?;
        fs::write(a.out_dir.join(format!("{name}_gt.txt")), format_transform(&pair.transform))?;
        let rel = |p: &Path| -> PathBuf {
            p.canonicalize()
                .ok()
                .and_then(|abs| {
                    let root = manifest.root.canonicalize().ok()?;
                    abs.strip_prefix(&root).ok().map(Path::to_path_buf)
                })
                .unwrap_or_else(|| p.to_path_buf())
        };
        manifest.pairs.push(PairEntry {
            frag_a: rel(&pa),
            frag_b: rel(&pb),
            overlap: pair.overlap_fraction(),
            transform: pair.transform,
        });
        println!(
            "{name}: {} + {} points, overlap {:.3}",
            pair.frag_a.len(),
            pair.frag_b.len(),
            pair.overlap_fraction()
        );
    }
    if let Some(m) = &a.manifest {
        manifest.write(m)?;
    }
    Ok(EXIT_OK)
}

fn descriptor_from(config: &ConfigFile, preset: Option<Preset>) -> DescriptorConfig {
    match (preset, &config.descriptor) {
        (Some(Preset::Paper), _) => DescriptorConfig::default(),
        (Some(Preset::Desk), _) | (None, None) => DescriptorConfig::desk(),
        (None, Some(d)) => d.clone(),
    }
}

fn run_train(a: TrainArgs, config: &ConfigFile) -> Result<i32> {
    let descriptor = descriptor_from(config, a.preset);
    let mut cfg = config.training.clone().unwrap_or_else(|| {
        if descriptor == DescriptorConfig::desk() {
            TrainConfig::desk()
        } else {
            TrainConfig::default()
        }
    });
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.anchors {
        cfg.anchors_per_pair = v;
    }
    let manifest = PairManifest::read(&a.manifest)?;
    let outcome = train(&manifest, descriptor, &cfg, &a.out)?;
    for (e, l) in outcome.epoch_losses.iter().enumerate() {
        match outcome.validation_losses.get(e) {
            Some(v) => println!("epoch {:2}: train {l:.4} validation {v:.4}", e + 1),
            None => println!("epoch {:2}: train {l:.4}", e + 1),
        }
    }
    println!(
        "best epoch {}, checkpoint {}",
        outcome.best_epoch + 1,
        a.out.join("best.ckpt").display()
    );
    Ok(EXIT_OK)
}

/// Binds a checkpoint to its configuration: the `[descriptor]` table of
/// `--config`, else the `config.toml` written next to the checkpoint by
/// training, else the desk preset.
fn load_network(checkpoint: &Path, config: &ConfigFile) -> Result<Network> {
    let params = ParamStore::load_checkpoint(checkpoint)?;
    let descriptor = match &config.descriptor {
        Some(d) => d.clone(),
        None => {
            let sidecar = checkpoint.with_file_name("config.toml");
            if sidecar.exists() {
                ConfigFile::load(&sidecar)?.descriptor.unwrap_or_else(DescriptorConfig::desk)
            } else {
                DescriptorConfig::desk()
            }
        }
    };
    Network::from_params(descriptor, params)
}

fn run_describe(a: DescribeArgs, config: &ConfigFile) -> Result<i32> {
    let net = load_network(&a.network.checkpoint, config)?;
    let cloud = read_cloud(&a.cloud)?;
    let anchors = match (&a.anchors, a.num_anchors) {
        (Some(path), _) => read_indices(path)?,
        (None, Some(n)) => keypoints(&cloud, n, a.seed, &[0]),
        (None, None) => return Err(Error::invalid("one of --anchors or --num-anchors is required")),
    };
    let set = crate::benchmark::describe_keypoints(&net, &cloud, &anchors)?;
    for (idx, reason) in &set.skipped {
        eprintln!("skipped anchor {idx}: {reason}");
    }
    write_descriptors(&a.out, &set)?;
    println!("{} descriptors of dimension {} written", set.len(), set.dim);
    Ok(EXIT_OK)
}

fn read_indices(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.split('#').next().unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        out.push(t.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("{t:?} is not an index"),
        })?);
    }
    Ok(out)
}

fn run_match(a: MatchArgs) -> Result<i32> {
    let da = read_descriptors(&a.desc_a)?;
    let db = read_descriptors(&a.desc_b)?;
    if da.dim != db.dim {
        return Err(Error::ShapeMismatch(format!("descriptor dimensions {} and {}", da.dim, db.dim)));
    }
    let corr = mutual_nn(&da.values, &db.values, da.dim).remap(&da.anchors, &db.anchors);
    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record(["a", "b", "distance"])?;
    for (&(i, j), d) in corr.pairs.iter().zip(&corr.distances) {
        w.write_record([i.to_string(), j.to_string(), d.to_string()])?;
    }
    w.flush()?;
    println!("{} mutual matches", corr.len());
    Ok(EXIT_OK)
}

fn eval_config(flags: &EvalFlags, config: &ConfigFile, net: &Network, seed: u64) -> EvalConfig {
    let mut cfg = match (&config.eval, flags.synthetic_thresholds) {
        (_, true) => EvalConfig::synthetic(net.config().transformer.support_radius),
        (Some(c), false) => c.clone(),
        (None, false) => EvalConfig::default(),
    };
    if let Some(v) = flags.keypoints {
        cfg.keypoints = v;
    }
    if let Some(v) = flags.tau1 {
        cfg.thresholds.inlier_distance = v;
        cfg.ransac.inlier_distance = v;
    }
    if let Some(v) = flags.tau2 {
        cfg.thresholds.inlier_ratio = v;
    }
    if let Some(v) = flags.max_rte {
        cfg.thresholds.max_translation_error = v;
    }
    if let Some(v) = flags.max_rre {
        cfg.thresholds.max_rotation_error = v;
    }
    if let Some(v) = flags.ransac_iterations {
        cfg.ransac.iterations = v;
    }
    cfg.seed = seed;
    cfg.ransac.seed = seed;
    cfg
}

fn format_transform(t: &RigidTransform) -> String {
    let v = t.to_row_major();
    let row = |r: &[f64]| r.iter().map(|x| format!("{x:.17e}")).collect::<Vec<_>>().join(" ");
    format!("{}\n{}\n{}\n{}\n", row(&v[0..3]), row(&v[3..6]), row(&v[6..9]), row(&v[9..12]))
}

fn read_transform(path: &Path) -> Result<RigidTransform> {
    let text = fs::read_to_string(path)?;
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
    let arr: [f64; 12] = values.try_into().map_err(|v: Vec<f64>| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: format!("expected 12 numbers, found {}", v.len()),
    })?;
    Ok(RigidTransform::from_row_major(&arr))
}

#[derive(Serialize)]
struct RegisterReport {
    correspondences: usize,
    transform: [f64; 12],
    registered: bool,
    inlier_ratio: Option<f64>,
    rre: Option<f64>,
    rte: Option<f64>,
    success: Option<bool>,
    thresholds: EvalThresholds,
}

fn run_register(a: RegisterArgs, config: &ConfigFile) -> Result<i32> {
    let net = load_network(&a.network.checkpoint, config)?;
    let cfg = eval_config(&a.eval, config, &net, a.seed);
    cfg.thresholds.validate()?;
    let (ca, cb) = (read_cloud(&a.cloud_a)?, read_cloud(&a.cloud_b)?);
    let gt = a.gt.as_deref().map(read_transform).transpose()?;
    let e = evaluate_pair(&net, &ca, &cb, &gt.unwrap_or_default(), &cfg, 0)?;
    let success = gt.map(|_| {
        matches!(e.errors, Some((rre, rte)) if rte < cfg.thresholds.max_translation_error
            && rre < cfg.thresholds.max_rotation_error)
    });
    let report = RegisterReport {
        correspondences: e.correspondences.len(),
        transform: e.estimate.unwrap_or_default().to_row_major(),
        registered: e.estimate.is_some(),
        inlier_ratio: gt.and(e.inlier_ratio),
        rre: gt.and(e.errors.map(|x| x.0)),
        rte: gt.and(e.errors.map(|x| x.1)),
        success,
        thresholds: cfg.thresholds,
    };
    let text = serde_json::to_string_pretty(&report)?;
    fs::write(&a.report, format!("{text}\n"))?;
    println!("{text}");
    Ok(EXIT_OK)
}

fn run_eval(a: EvalArgs, config: &ConfigFile) -> Result<i32> {
    let net = load_network(&a.network.checkpoint, config)?;
    let cfg = eval_config(&a.eval, config, &net, a.seed);
    cfg.thresholds.validate()?;
    let manifest = PairManifest::read(&a.manifest)?;
    let mut clouds = Vec::with_capacity(manifest.len());
    let mut entries = Vec::with_capacity(manifest.len());
    for i in 0..manifest.len() {
        let (ca, cb) = manifest.load_pair(i)?;
        let gt = manifest.pairs[i].transform;
        let e = evaluate_pair(&net, &ca, &cb, &gt, &cfg, i as u64)?;
        let name = manifest.pairs[i]
            .frag_a
            .file_stem()
            .map_or_else(|| format!("pair_{i}"), |s| s.to_string_lossy().into_owned());
        entries.push((name, e.correspondences.len(), e.inlier_ratio, e.errors));
        clouds.push((ca, cb, gt, e.correspondences));
    }
    let report = EvalReport::new(cfg.thresholds, entries);
    report.write_json(&a.report)?;
    report.write_csv(&a.report.with_extension("csv"))?;

    // Recall over a grid of inlier distances and ratios.
    let stem = a.report.file_stem().map_or("report".into(), |s| s.to_string_lossy().into_owned());
    let sweep_path = a.report.with_file_name(format!("{stem}_sweep.csv"));
    let mut w = csv::Writer::from_path(&sweep_path)?;
    w.write_record(["tau1", "tau2", "fmr"])?;
    let base = cfg.thresholds.inlier_distance;
    for step in 1..=12 {
        let tau1 = base * step as f64 / 4.0;
        let ratios: Vec<Option<f64>> = clouds
            .iter()
            .map(|(ca, cb, gt, corr)| crate::registration::inlier_ratio(corr, ca, cb, gt, tau1))
            .collect();
        for k in 1..=20 {
            let tau2 = k as f64 * 0.01;
            w.write_record([tau1.to_string(), tau2.to_string(), recall_from_ratios(&ratios, tau2).to_string()])?;
        }
    }
    w.flush()?;
    println!(
        "FMR {:.3}  SR {:.3}  RRE {:?}  RTE {:?}",
        report.fmr, report.success_rate, report.rre_mean, report.rte_mean
    );
    Ok(EXIT_OK)
}

fn run_check(a: CheckArgs, config: &ConfigFile) -> Result<i32> {
    let net = match &a.checkpoint {
        Some(c) => load_network(c, config)?,
        None => Network::new(config.descriptor.clone().unwrap_or_else(DescriptorConfig::desk), a.seed)?,
    };
    let small = TransformerConfig {
        radial_bins: 3,
        elevation_bins: 6,
        voxel_radius: 0.08,
        samples_per_voxel: 4,
        seed: a.seed,
        ..TransformerConfig::default()
    };
    let mut failed = false;
    let mut line = |name: &str, value: f64, bound: f64| {
        let ok = value < bound;
        failed |= !ok;
        println!("{:<32} {value:.3e}  (bound {bound:.0e})  {}", name, if ok { "ok" } else { "FAIL" });
    };
    for l in [8, 80] {
        let cfg = TransformerConfig {
            azimuth_bins: l,
            ..small.clone()
        };
        line(&format!("volume shift, L = {l}"), volume_equivariance(&cfg, a.seed, a.patches, 300)?, 1e-9);
    }
    line("convolution shift", conv_equivariance(a.seed, a.patches)?, 1e-12);
    let patches = synthetic_patches(a.seed, a.patches, net.config().transformer.support_radius)?;
    let inv = descriptor_invariance(&net, &patches, a.seed)?;
    line("descriptor, period rotations", inv.grid_deviation, 1e-9);
    println!("{:<32} {:.3e}", "descriptor, other grid rotations", inv.off_period_deviation);
    println!(
        "{:<32} mean {:.4}  min {:.4}",
        "descriptor, random rotations",
        inv.mean_cosine(),
        inv.min_cosine()
    );
    Ok(if failed { EXIT_CHECK } else { EXIT_OK })
}
