//! Subcommands: `eval-det`, `eval-id`, `plan-batches`, `check-losses` and
//! `convert-emb`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::bail;
use bodymetric_core::defaults;
use bodymetric_core::detect::evaluate_detections;
use bodymetric_core::identify::{
    build_gallery, cmc, default_roc_targets, fnir_fpir, mate_ranks, Aggregation, Metric, ProbeSet, ScoreSplit, Scorer,
    ThresholdSpec,
};
use bodymetric_core::model::{validate_protocol, LossConfig, MediaIndex};
use bodymetric_core::rng::{PlanRng, GENERATOR_NAME};
use bodymetric_core::sampling::{
    default_test_stride, frame_window_with, pk_batches_with, sample_media_with, DatasetWeights, WindowMode,
};
use bodymetric_core::selfcheck::{run_self_checks, SelfCheckOptions};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::config::{Overrides, RunConfig};
use crate::formats::{self, BoxFormat, EmbeddingFormat};
use crate::parallel::score_parallel;
use crate::report::{self, num};

#[derive(Debug, Parser)]
#[command(name = "bodymetric", version, about = "Detection, loss and identification metrics for whole-body biometrics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Precision/recall/F1 per dataset tag and pooled, at several IoU thresholds.
    EvalDet(EvalDetArgs),
    /// CMC, TAR@FAR and FNIR/FPIR over a gallery/probe protocol.
    EvalId(EvalIdArgs),
    /// Deterministic identity-balanced batches and frame windows.
    PlanBatches(PlanArgs),
    /// Loss identities and gradient checks.
    CheckLosses(CheckArgs),
    /// Convert embeddings between the text and binary formats.
    ConvertEmb(ConvertArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct CommonArgs {
    /// TOML file with default values for any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for scoring (0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            config: self.config.clone(),
            seed: self.seed,
            out: self.out.clone(),
            threads: self.threads,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalDetArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Detections, JSON lines.
    #[arg(long)]
    pub det: Option<PathBuf>,
    /// Ground truth, JSON lines.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Optional media listing supplying dataset tags.
    #[arg(long)]
    pub media: Option<PathBuf>,
    /// IoU threshold (repeatable).
    #[arg(long = "iou")]
    pub iou: Vec<f64>,
    #[arg(long, value_enum)]
    pub box_format: Option<BoxFormat>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalIdArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub emb: Option<PathBuf>,
    #[arg(long)]
    pub protocol: Option<PathBuf>,
    /// Target false accept rate (repeatable).
    #[arg(long = "far")]
    pub far: Vec<f64>,
    /// Reported rank (repeatable).
    #[arg(long = "rank")]
    pub ranks: Vec<usize>,
    /// Embedding file format; detected from the file when omitted.
    #[arg(long, value_enum)]
    pub format: Option<EmbeddingFormat>,
    #[arg(long, value_enum, default_value = "mean")]
    pub aggregate: AggregateArg,
    #[arg(long, value_enum, default_value = "cosine")]
    pub metric: MetricArg,
    /// Count a mate ranked beyond this as a miss in FNIR.
    #[arg(long)]
    pub rank_cap: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregateArg {
    Mean,
    MaxScore,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    Cosine,
    NegEuclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Train,
    Test,
    UniformSubset,
}

impl From<ModeArg> for WindowMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Train => WindowMode::Train,
            ModeArg::Test => WindowMode::Test,
            ModeArg::UniformSubset => WindowMode::UniformSubset,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Media listing, JSON lines.
    #[arg(long)]
    pub media: Option<PathBuf>,
    /// Subjects per batch.
    #[arg(long, default_value_t = defaults::BATCH_SUBJECTS)]
    pub n: usize,
    /// Media per subject.
    #[arg(long, default_value_t = defaults::MEDIA_PER_SUBJECT)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub batches: usize,
    /// Frame stride; defaults to 300 for struct/rand/close_range and 150 otherwise.
    #[arg(long)]
    pub stride: Option<u64>,
    /// Window length T.
    #[arg(long = "window", default_value_t = 16)]
    pub window: usize,
    #[arg(long, value_enum, default_value = "train")]
    pub mode: ModeArg,
    /// Also emit this many dataset-balanced media draws.
    #[arg(long)]
    pub draws: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    /// Scale the smooth-L1 analytic gradient by this factor (harness negative control).
    #[arg(long, hide = true)]
    pub inject_gradient_fault: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ConvertArgs {
    /// Input embeddings (format detected from the file).
    #[arg(long)]
    pub emb: PathBuf,
    /// Output file.
    #[arg(long)]
    pub out: PathBuf,
    /// Output format.
    #[arg(long, value_enum)]
    pub format: EmbeddingFormat,
}

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::EvalDet(a) => {
            let cfg = RunConfig::resolve(Overrides {
                det: a.det,
                gt: a.gt,
                media: a.media,
                iou: a.iou,
                box_format: a.box_format,
                ..a.common.overrides()
            })?;
            eval_det(&cfg)?;
        }
        Command::EvalId(a) => {
            let cfg = RunConfig::resolve(Overrides {
                emb: a.emb,
                protocol: a.protocol,
                far: a.far,
                ranks: a.ranks,
                format: a.format,
                ..a.common.overrides()
            })?;
            let opts = IdOptions {
                aggregation: match a.aggregate {
                    AggregateArg::Mean => Aggregation::Mean,
                    AggregateArg::MaxScore => Aggregation::MaxScore,
                },
                metric: match a.metric {
                    MetricArg::Cosine => Metric::Cosine,
                    MetricArg::NegEuclidean => Metric::NegEuclidean,
                },
                rank_cap: a.rank_cap,
            };
            eval_id(&cfg, &opts)?;
        }
        Command::PlanBatches(a) => {
            let cfg = RunConfig::resolve(Overrides { media: a.media.clone(), ..a.common.overrides() })?;
            plan_batches(&cfg, &a)?;
        }
        Command::CheckLosses(a) => {
            let ok = check_losses(&a, &mut std::io::stdout())?;
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::ConvertEmb(a) => convert_emb(&a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn config_json(cfg: &RunConfig) -> Value {
    serde_json::to_value(cfg).expect("config serialises")
}

/// Writes the detection report, a text summary and the run manifest.
pub fn eval_det(cfg: &RunConfig) -> anyhow::Result<Vec<PathBuf>> {
    let det_path = cfg.require(&cfg.det, "--det")?;
    let gt_path = cfg.require(&cfg.gt, "--gt")?;
    let dets = formats::load_detections(det_path, cfg.box_format)?;
    let gts = formats::load_ground_truth(gt_path, cfg.box_format)?;
    let mut index = match &cfg.media {
        Some(p) => MediaIndex::from_media(&formats::load_media(p)?)
            .map_err(|source| crate::Error::Invalid { path: p.clone(), source })?,
        None => MediaIndex::new(),
    };
    index.absorb(&dets, &gts)?;
    let rep = evaluate_detections(&dets, &gts, &cfg.iou_thresholds, &index)?;

    cfg.ensure_out_dir()?;
    let mut inputs = vec![report::digest("det", det_path)?, report::digest("gt", gt_path)?];
    if let Some(p) = &cfg.media {
        inputs.push(report::digest("media", p)?);
    }
    let report_path = cfg.out.join("detection_report.json");
    let summary_path = cfg.out.join("detection_summary.txt");
    let manifest_path = cfg.out.join("run_manifest.json");
    report::write_json(&report_path, &report::detection_json(&rep))?;
    report::write_file(&summary_path, report::detection_summary(&rep).as_bytes())?;
    report::write_json(
        &manifest_path,
        &report::run_manifest(
            "eval-det",
            config_json(cfg),
            &inputs,
            &["detection_report.json", "detection_summary.txt"],
        ),
    )?;
    Ok(vec![report_path, summary_path, manifest_path])
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdOptions {
    pub aggregation: Aggregation,
    pub metric: Metric,
    pub rank_cap: Option<usize>,
}

/// Writes identification metrics, the CMC/ROC/open-set curves and the run
/// manifest.
pub fn eval_id(cfg: &RunConfig, opts: &IdOptions) -> anyhow::Result<Vec<PathBuf>> {
    let emb_path = cfg.require(&cfg.emb, "--emb")?;
    let protocol_path = cfg.require(&cfg.protocol, "--protocol")?;
    let store = formats::load_embeddings(emb_path, cfg.format)?;
    let manifest = formats::load_protocol(protocol_path)?;

    let check = validate_protocol(&manifest, &store);
    if !check.missing_media.is_empty() {
        bail!("protocol references media without embeddings: {}", check.missing_media.join(", "));
    }
    if !check.duplicate_gallery_subjects.is_empty() {
        bail!("duplicate gallery subjects: {}", check.duplicate_gallery_subjects.join(", "));
    }
    if !check.duplicate_probe_ids.is_empty() {
        bail!("duplicate probe ids: {}", check.duplicate_probe_ids.join(", "));
    }
    if manifest.probes.is_empty() {
        bail!(bodymetric_core::Error::Protocol("the protocol has no probes".into()));
    }

    let gallery = build_gallery(&manifest, &store, opts.aggregation)?;
    let probes = ProbeSet::from_manifest(&manifest, &store)?;
    let scorer = Scorer::new(&gallery, opts.metric)?;
    let matrix = score_parallel(&scorer, &probes, cfg.threads)?;

    let mates = matrix.mate_rows(&manifest)?;
    let ranks = mate_ranks(&mates, &manifest)?;
    let rank_acc: Vec<Value> = cfg
        .ranks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|&&r| r <= k).count();
            json!({"rank": k, "accuracy": num(hits as f64 / ranks.len() as f64)})
        })
        .collect();
    let cmc_curve = cmc(&mates, &manifest, gallery.len())?;

    let split = ScoreSplit::new(&matrix, &manifest)?;
    let tar = split.tar_at_far(&cfg.far_targets)?;
    let roc = split.roc(&default_roc_targets(split.impostor_count()))?;

    let open_set = if check.non_mate_probes.is_empty() {
        None
    } else {
        Some(fnir_fpir(&matrix, &manifest, &ThresholdSpec::Sweep, opts.rank_cap)?)
    };

    cfg.ensure_out_dir()?;
    let metrics = json!({
        "protocol": {
            "gallery_subjects": check.gallery_subjects,
            "distractors": check.distractor_count,
            "mate_searches": check.mate_probes.len(),
            "non_mate_searches": check.non_mate_probes.len(),
            "genuine_scores": split.genuine_count(),
            "impostor_scores": split.impostor_count(),
        },
        "metric": opts.metric,
        "aggregation": opts.aggregation,
        "ranks": cfg.ranks,
        "rank_accuracy": rank_acc,
        "far_targets": cfg.far_targets,
        "tar_at_far": tar.iter().map(|p| json!({
            "far_target": p.far_target,
            "threshold": num(p.threshold),
            "tar": num(p.tar),
            "achieved_far": num(p.achieved_far),
        })).collect::<Vec<_>>(),
        "open_set": open_set.as_ref().map(|c| json!({
            "rank_cap": opts.rank_cap,
            "points": c.points.len(),
        })),
    });
    let out = |name: &str| cfg.out.join(name);
    report::write_json(&out("identification_report.json"), &metrics)?;
    report::write_file(&out("cmc.csv"), report::cmc_csv(&cmc_curve).as_bytes())?;
    report::write_file(&out("roc.csv"), report::curve_csv(&roc, ["far", "tar", "threshold"]).as_bytes())?;
    let open_csv = match &open_set {
        Some(c) => report::curve_csv(c, ["fpir", "fnir", "threshold"]),
        None => "# x: False positive identification rate; y: False negative identification rate\nfpir,fnir,threshold\n"
            .to_string(),
    };
    report::write_file(&out("open_set.csv"), open_csv.as_bytes())?;

    let inputs = [report::digest("emb", emb_path)?, report::digest("protocol", protocol_path)?];
    let mut config = config_json(cfg);
    config["aggregation"] = json!(opts.aggregation);
    config["metric"] = json!(opts.metric);
    config["rank_cap"] = json!(opts.rank_cap);
    let outputs = ["identification_report.json", "cmc.csv", "roc.csv", "open_set.csv"];
    report::write_json(&out("run_manifest.json"), &report::run_manifest("eval-id", config, &inputs, &outputs))?;
    Ok(outputs.iter().map(|n| out(n)).chain([out("run_manifest.json")]).collect())
}

/// Builds the batch plan JSON for a media listing.
pub fn build_plan(cfg: &RunConfig, args: &PlanArgs) -> anyhow::Result<Value> {
    let media_path = cfg.require(&cfg.media, "--media")?;
    let media = formats::load_media(media_path)?;
    let mut by_subject: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for m in &media {
        by_subject.entry(m.subject_id.clone()).or_default().push(m.media_id.clone());
    }
    let mut rng = PlanRng::new(cfg.seed);
    let plan = pk_batches_with(&by_subject, args.n, args.k, args.batches, &mut rng)?;

    let referenced: BTreeSet<&str> = plan.batches.iter().flatten().map(String::as_str).collect();
    let mode = WindowMode::from(args.mode);
    let mut windows = BTreeMap::new();
    let mut strides = BTreeMap::new();
    let mut sorted: Vec<_> = media.iter().filter(|m| referenced.contains(m.media_id.as_str())).collect();
    sorted.sort_by(|a, b| a.media_id.cmp(&b.media_id));
    for m in sorted {
        let stride = args.stride.unwrap_or_else(|| default_test_stride(&m.dataset_tag));
        strides.insert(m.dataset_tag.clone(), stride);
        let w = frame_window_with(m.frame_count, stride, args.window, mode, &mut rng)?;
        windows.insert(m.media_id.clone(), w);
    }

    let draws = match args.draws {
        Some(count) => {
            let weights = DatasetWeights::from_media(&media)?;
            Some(json!({
                "per_dataset": weights.per_dataset(),
                "media": sample_media_with(&weights, count, &mut rng),
            }))
        }
        None => None,
    };

    Ok(json!({
        "generator": GENERATOR_NAME,
        "seed": cfg.seed,
        "n": plan.n,
        "k": plan.k,
        "batch_size": plan.batch_size(),
        "mode": mode,
        "window": args.window,
        "strides": strides,
        "batches": plan.batches.iter().zip(&plan.subjects).map(|(b, s)| json!({"subjects": s, "media": b})).collect::<Vec<_>>(),
        "windows": windows,
        "draws": draws,
    }))
}

pub fn plan_batches(cfg: &RunConfig, args: &PlanArgs) -> anyhow::Result<Vec<PathBuf>> {
    let plan = build_plan(cfg, args)?;
    cfg.ensure_out_dir()?;
    let media_path = cfg.require(&cfg.media, "--media")?;
    let plan_path = cfg.out.join("plan.json");
    let manifest_path = cfg.out.join("run_manifest.json");
    report::write_json(&plan_path, &plan)?;
    let mut config = config_json(cfg);
    config["n"] = json!(args.n);
    config["k"] = json!(args.k);
    config["batches"] = json!(args.batches);
    config["stride"] = json!(args.stride);
    config["window"] = json!(args.window);
    config["mode"] = json!(WindowMode::from(args.mode));
    config["draws"] = json!(args.draws);
    report::write_json(
        &manifest_path,
        &report::run_manifest("plan-batches", config, &[report::digest("media", media_path)?], &["plan.json"]),
    )?;
    Ok(vec![plan_path, manifest_path])
}

/// Runs the loss self-checks, printing one line per check. Returns whether
/// every check passed.
pub fn check_losses(args: &CheckArgs, w: &mut impl std::io::Write) -> anyhow::Result<bool> {
    let config = LossConfig::default();
    let opts = SelfCheckOptions {
        seed: args.seed,
        config,
        points: args.points,
        gradient_fault: args.inject_gradient_fault,
        ..Default::default()
    };
    writeln!(w, "beta = {} (1/9)", report::cell(config.beta))?;
    writeln!(w, "margin = {}", report::cell(config.margin))?;
    writeln!(w, "epsilon = {:e}", config.epsilon)?;
    let results = run_self_checks(&opts);
    let mut all_ok = true;
    let mut max_grad = 0.0f64;
    for r in &results {
        if r.name.ends_with("gradient") {
            max_grad = max_grad.max(r.max_error);
        }
        all_ok &= r.passed;
        writeln!(
            w,
            "{} {}: max error {:.3e} (tolerance {:e})",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.max_error,
            r.tolerance
        )?;
    }
    writeln!(w, "max gradient relative error = {max_grad:.3e}")?;
    if !all_ok {
        let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
        writeln!(w, "failed: {}", failed.join(", "))?;
    }
    Ok(all_ok)
}

pub fn convert_emb(args: &ConvertArgs) -> anyhow::Result<()> {
    let store = formats::load_embeddings(&args.emb, None)?;
    formats::write_embeddings(&args.out, &store, args.format)?;
    Ok(())
}

/// Parses and runs an argument vector, returning the process exit code.
/// Errors are printed to standard error.
pub fn run_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    match run(cli) {
        Ok(code) if code == ExitCode::SUCCESS => 0,
        Ok(_) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
