//! `patchdisc`: discover mid-level discriminative patches in an unlabeled
//! image corpus, rank them, mine doublets, and evaluate.

mod config;
mod viz;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use patchdisc::artifacts::{self, RunPaths};
use patchdisc::corpus::{build_manifest, scene_labels, DatasetManifest, SynthConfig};
use patchdisc::discovery::score_and_rank;
use patchdisc::run::{self, with_pool};
use patchdisc::svm::detect;

use config::{check_or_write_lock, RunConfig};

#[derive(Parser)]
#[command(
    name = "patchdisc",
    version,
    about = "Unsupervised discovery of mid-level discriminative image patches"
)]
struct Cli {
    /// Run configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Override the worker thread count (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Verbose progress logging.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a dataset manifest from image files or directories.
    Manifest {
        /// Discovery-role images (files or directories).
        #[arg(long, num_args = 1.., required = true)]
        discovery: Vec<PathBuf>,
        /// Natural-world images (files or directories).
        #[arg(long, num_args = 1.., required = true)]
        natural: Vec<PathBuf>,
        #[arg(long, default_value = "manifest.json")]
        out: PathBuf,
    },
    /// Generate a synthetic planted-pattern corpus.
    Synth {
        /// SynthConfig JSON; defaults apply when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full discovery loop and write the run directory.
    Discover,
    /// Recompute final/ranked.json from the stored final models.
    Rank,
    /// Mine and rank spatial doublets from the final detectors.
    Doublets,
    /// Apply the final detectors and write detections.jsonl.
    Detect {
        /// Image id to scan; all manifest images when omitted.
        #[arg(long)]
        image: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Purity/coverage curves against ground-truth annotations.
    Eval,
    /// Spatial-pyramid max-pooled detector features per image.
    Features,
    /// Detector-based scene classification (optionally with the
    /// visual-words baseline).
    Classify {
        /// JSON map image_id -> scene label; derived from annotations
        /// when omitted.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Also run the visual-words baseline on the same folds.
        #[arg(long)]
        baseline: bool,
    },
    /// Visualization artifacts.
    Viz {
        #[command(subcommand)]
        what: VizCmd,
    },
}

#[derive(Subcommand)]
enum VizCmd {
    /// PNG grid of a cluster's member patches.
    Montage {
        #[arg(long)]
        cluster: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PNG with high-scoring detections replaced by score-weighted
    /// average member patches.
    Overlay {
        #[arg(long)]
        image: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        top: usize,
    },
}

/// Exit codes: 2 config schema violation, 3 missing inputs, 1 other.
struct CliError {
    code: u8,
    err: anyhow::Error,
}

type CliResult = Result<(), CliError>;

fn config_violation(err: anyhow::Error) -> CliError {
    CliError { code: 2, err }
}

fn classify_error(err: anyhow::Error) -> CliError {
    let code = if let Some(e) = err.downcast_ref::<patchdisc::Error>() {
        match e {
            patchdisc::Error::Io { source, .. }
                if source.kind() == std::io::ErrorKind::NotFound =>
            {
                3
            }
            patchdisc::Error::UnreadablePath { .. } => 3,
            patchdisc::Error::InvalidConfig(_) => 2,
            _ => 1,
        }
    } else if let Some(e) = err.downcast_ref::<std::io::Error>() {
        if e.kind() == std::io::ErrorKind::NotFound {
            3
        } else {
            1
        }
    } else {
        1
    };
    CliError { code, err }
}

fn missing_input(msg: String) -> CliError {
    CliError {
        code: 3,
        err: anyhow::anyhow!(msg),
    }
}

trait IntoCli<T> {
    fn cli(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> IntoCli<T> for Result<T, E> {
    fn cli(self) -> Result<T, CliError> {
        self.map_err(|e| classify_error(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.err);
            ExitCode::from(e.code)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| {
        config_violation(anyhow::anyhow!("--config PATH is required for this command"))
    })?;
    if !path.exists() {
        return Err(missing_input(format!("config not found: {}", path.display())));
    }
    let mut cfg = RunConfig::load(path).map_err(config_violation)?;
    if let Some(out) = &cli.output {
        cfg.output_dir = out.clone();
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest, CliError> {
    if !cfg.manifest.exists() {
        return Err(missing_input(format!(
            "manifest not found: {}",
            cfg.manifest.display()
        )));
    }
    DatasetManifest::load(&cfg.manifest).cli()
}

fn expand_images(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    const EXTS: [&str; 4] = ["png", "jpg", "jpeg", "pgm"];
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| missing_input(format!("cannot read {}: {e}", p.display())))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|f| {
                    f.extension()
                        .and_then(|e| e.to_str())
                        .map(|e| EXTS.contains(&e.to_ascii_lowercase().as_str()))
                        .unwrap_or(false)
                })
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn require_run_file(path: &Path, produced_by: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(missing_input(format!(
            "{} not found; run `patchdisc {produced_by}` first",
            path.display()
        )))
    }
}

fn dispatch(cli: Cli) -> CliResult {
    match &cli.command {
        Cmd::Manifest {
            discovery,
            natural,
            out,
        } => {
            let d = expand_images(discovery)?;
            let n = expand_images(natural)?;
            let seed = cli.seed.unwrap_or(0);
            let manifest = build_manifest(&d, &n, seed).cli()?;
            manifest.save(out).cli()?;
            println!(
                "wrote {} ({} discovery, {} natural)",
                out.display(),
                d.len(),
                n.len()
            );
            Ok(())
        }
        Cmd::Synth { params, out } => {
            let mut synth_cfg: SynthConfig = match params {
                Some(p) => {
                    if !p.exists() {
                        return Err(missing_input(format!("params not found: {}", p.display())));
                    }
                    serde_json::from_slice(&std::fs::read(p).cli()?)
                        .map_err(|e| config_violation(anyhow::anyhow!("synth params: {e}")))?
                }
                None => SynthConfig::default(),
            };
            if let Some(seed) = cli.seed {
                synth_cfg.seed = seed;
            }
            let manifest = patchdisc::corpus::gen_synthetic(&synth_cfg, out).cli()?;
            println!(
                "wrote synthetic corpus to {} ({} images, manifest.json, annotations.json)",
                out.display(),
                manifest.entries.len()
            );
            Ok(())
        }
        Cmd::Discover => cmd_discover(&load_config(&cli)?),
        Cmd::Rank => cmd_rank(&load_config(&cli)?),
        Cmd::Doublets => cmd_doublets(&load_config(&cli)?),
        Cmd::Detect { image, out } => cmd_detect(&load_config(&cli)?, image.as_deref(), out.as_deref()),
        Cmd::Eval => cmd_eval(&load_config(&cli)?),
        Cmd::Features => cmd_features(&load_config(&cli)?),
        Cmd::Classify { labels, baseline } => {
            cmd_classify(&load_config(&cli)?, labels.as_deref(), *baseline)
        }
        Cmd::Viz { what } => cmd_viz(&load_config(&cli)?, what),
    }
}

fn cmd_discover(cfg: &RunConfig) -> CliResult {
    let paths = RunPaths::new(&cfg.output_dir);
    check_or_write_lock(&paths.lock(), cfg).map_err(classify_error)?;
    if paths.ranked().exists() && paths.run_meta().exists() {
        println!("discover: outputs up to date, skipping");
        return Ok(());
    }
    let manifest = load_manifest(cfg)?;
    artifacts::write_json(&paths.config(), cfg).cli()?;
    let result = with_pool(cfg.threads, || {
        run::execute_discovery(
            &manifest,
            &cfg.features,
            &cfg.discovery,
            &cfg.rank,
            cfg.seed,
            &cfg.output_dir,
        )
    })
    .cli()?;
    let alive = result.outcome.alive().count();
    println!(
        "discover: {} iterations, {alive} alive clusters, {} ranked; wrote {}",
        result.outcome.iterations.len(),
        result.ranked.len(),
        paths.ranked().display()
    );
    Ok(())
}

fn load_run_state(
    cfg: &RunConfig,
) -> Result<
    (
        patchdisc::discovery::CorpusData,
        patchdisc::discovery::DiscoveryOutcome,
    ),
    CliError,
> {
    let paths = RunPaths::new(&cfg.output_dir);
    require_run_file(&paths.final_models(), "discover")?;
    require_run_file(&paths.run_meta(), "discover")?;
    let manifest = load_manifest(cfg)?;
    run::load_run(&manifest, &cfg.features, &cfg.output_dir, &cfg.discovery).cli()
}

fn cmd_rank(cfg: &RunConfig) -> CliResult {
    let paths = RunPaths::new(&cfg.output_dir);
    check_or_write_lock(&paths.lock(), cfg).map_err(classify_error)?;
    if paths.ranked().exists() {
        println!("rank: {} up to date, skipping", paths.ranked().display());
        return Ok(());
    }
    let (corpus, outcome) = load_run_state(cfg)?;
    let ranked = with_pool(cfg.threads, || {
        score_and_rank(&corpus, &outcome, &cfg.discovery, &cfg.rank)
    })
    .cli()?;
    artifacts::write_ranked(&paths.ranked(), &ranked).cli()?;
    println!("rank: wrote {} ({} clusters)", paths.ranked().display(), ranked.len());
    Ok(())
}

fn load_ranked(paths: &RunPaths) -> Result<Vec<patchdisc::discovery::RankedClusterFull>, CliError> {
    require_run_file(&paths.ranked(), "discover")?;
    artifacts::read_ranked(&paths.ranked()).cli()
}

fn cmd_doublets(cfg: &RunConfig) -> CliResult {
    let paths = RunPaths::new(&cfg.output_dir);
    check_or_write_lock(&paths.lock(), cfg).map_err(classify_error)?;
    if paths.doublets().exists() {
        println!("doublets: {} up to date, skipping", paths.doublets().display());
        return Ok(());
    }
    let ranked = load_ranked(&paths)?;
    let (corpus, outcome) = load_run_state(cfg)?;
    let doublets = with_pool(cfg.threads, || {
        run::mine_and_rank_doublets(&corpus, &outcome, &ranked, &cfg.doublets, &cfg.discovery)
    })
    .cli()?;
    artifacts::write_doublets(&paths.doublets(), &doublets).cli()?;
    println!(
        "doublets: wrote {} ({} candidates)",
        paths.doublets().display(),
        doublets.len()
    );
    Ok(())
}

fn cmd_detect(cfg: &RunConfig, image: Option<&str>, out: Option<&Path>) -> CliResult {
    let paths = RunPaths::new(&cfg.output_dir);
    check_or_write_lock(&paths.lock(), cfg).map_err(classify_error)?;
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("detections.jsonl"));
    let (corpus, outcome) = load_run_state(cfg)?;

    let ids: Vec<String> = match image {
        Some(id) => vec![id.to_string()],
        None => corpus.manifest.entries.iter().map(|e| e.id.clone()).collect(),
    };
    let mut records = Vec::new();
    with_pool(cfg.threads, || -> patchdisc::Result<()> {
        for id in &ids {
            let pyr = corpus.pyramid(id)?;
            for (_, model) in outcome.models.iter() {
                for d in detect(model, pyr, cfg.discovery.svm.score_floor, cfg.discovery.nms_iou) {
                    records.push(artifacts::DetectionRecord::from_detection(&d));
                }
            }
        }
        Ok(())
    })
    .cli()?;
    artifacts::write_jsonl(&out_path, records.iter()).cli()?;
    println!(
        "detect: wrote {} ({} detections over {} image(s))",
        out_path.display(),
        records.len(),
        ids.len()
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> CliResult {
    let paths = RunPaths::new(&cfg.output_dir);
    check_or_write_lock(&paths.lock(), cfg).map_err(classify_error)?;
    if paths.curves().exists() {
        println!("eval: {} up to date, skipping", paths.curves().display());
        return Ok(());
    }
    let ranked = load_ranked(&paths)?;
    let (corpus, outcome) = load_run_state(cfg)?;
    let pc = with_pool(cfg.threads, || {
        run::evaluate_ranked(
            &corpus,
            &outcome,
            &ranked,
            cfg.rank.r,
            cfg.eval.label_overlap,
        )
    })
    .cli()?;
    artifacts::write_curves_csv(&paths.curves(), &pc.points).cli()?;
    artifacts::merge_summary(&paths.summary(), |s| {
        s.auc_purity = Some(pc.auc_purity);
        s.auc_coverage = Some(pc.auc_coverage);
    })
    .cli()?;
    println!(
        "eval: auc_purity {:.4}, auc_coverage {:.4}; wrote {} and {}",
        pc.auc_purity,
        pc.auc_coverage,
        paths.curves().display(),
        paths.summary().display()
    );
    Ok(())
}

fn cmd_features(cfg: &RunConfig) -> CliResult {
    let paths = RunPaths::new(&cfg.output_dir);
    check_or_write_lock(&paths.lock(), cfg).map_err(classify_error)?;
    if paths.features().exists() {
        println!("features: {} up to date, skipping", paths.features().display());
        return Ok(());
    }
    let ranked = load_ranked(&paths)?;
    let (corpus, outcome) = load_run_state(cfg)?;
    let models: Vec<(u32, &patchdisc::svm::LinearModel)> = ranked
        .iter()
        .filter_map(|r| outcome.models.get(&r.cluster_id).map(|m| (r.cluster_id, m)))
        .take(cfg.eval.top_detectors)
        .collect();
    let mut records = Vec::new();
    with_pool(cfg.threads, || -> patchdisc::Result<()> {
        for fold in [patchdisc::corpus::Fold::One, patchdisc::corpus::Fold::Two] {
            for (id, values) in run::scene_features(
                &corpus,
                &models,
                fold,
                &cfg.eval.sp,
                cfg.discovery.svm.score_floor,
                cfg.discovery.nms_iou,
            )? {
                records.push(artifacts::FeatureRecord {
                    image_id: id.to_string(),
                    values,
                });
            }
        }
        Ok(())
    })
    .cli()?;
    artifacts::write_json(&paths.features(), &records).cli()?;
    println!(
        "features: wrote {} ({} images x {} dims)",
        paths.features().display(),
        records.len(),
        records.first().map(|r| r.values.len()).unwrap_or(0)
    );
    Ok(())
}

fn cmd_classify(cfg: &RunConfig, labels_path: Option<&Path>, baseline: bool) -> CliResult {
    let paths = RunPaths::new(&cfg.output_dir);
    check_or_write_lock(&paths.lock(), cfg).map_err(classify_error)?;
    let ranked = load_ranked(&paths)?;
    let (corpus, outcome) = load_run_state(cfg)?;

    let labels: BTreeMap<String, String> = match labels_path {
        Some(p) => {
            if !p.exists() {
                return Err(missing_input(format!("labels not found: {}", p.display())));
            }
            serde_json::from_slice(&std::fs::read(p).cli()?)
                .map_err(|e| config_violation(anyhow::anyhow!("labels file: {e}")))?
        }
        None => {
            let derived = scene_labels(&corpus.manifest);
            if derived.is_empty() {
                return Err(missing_input(
                    "no --labels given and the manifest has no annotations to derive them from"
                        .into(),
                ));
            }
            derived
        }
    };

    let result = with_pool(cfg.threads, || {
        run::classify_scenes(
            &corpus,
            &outcome,
            &ranked,
            &labels,
            &cfg.eval,
            &cfg.discovery,
            baseline,
            cfg.seed,
        )
    })
    .cli()?;
    artifacts::merge_summary(&paths.summary(), |s| {
        s.accuracy = Some(result.accuracy);
        s.per_class_accuracy = Some(result.per_class_accuracy.clone());
        if result.baseline_accuracy.is_some() {
            s.baseline_accuracy = result.baseline_accuracy;
        }
    })
    .cli()?;
    match result.baseline_accuracy {
        Some(b) => println!(
            "classify: accuracy {:.4} (visual-words baseline {:.4}); wrote {}",
            result.accuracy,
            b,
            paths.summary().display()
        ),
        None => println!(
            "classify: accuracy {:.4}; wrote {}",
            result.accuracy,
            paths.summary().display()
        ),
    }
    Ok(())
}

fn cmd_viz(cfg: &RunConfig, what: &VizCmd) -> CliResult {
    let paths = RunPaths::new(&cfg.output_dir);
    check_or_write_lock(&paths.lock(), cfg).map_err(classify_error)?;
    let ranked = load_ranked(&paths)?;
    let manifest = load_manifest(cfg)?;
    let viz_dir = cfg.output_dir.join("viz");

    match what {
        VizCmd::Montage { cluster, out } => {
            let c = ranked
                .iter()
                .find(|r| r.cluster_id == *cluster)
                .ok_or_else(|| missing_input(format!("cluster {cluster} not in ranked.json")))?;
            let out = out
                .clone()
                .unwrap_or_else(|| viz_dir.join(format!("montage_{cluster}.png")));
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent).cli()?;
            }
            viz::montage(&manifest, &cfg.features, c, &out).map_err(classify_error)?;
            println!("viz: wrote {}", out.display());
        }
        VizCmd::Overlay { image, out, top } => {
            require_run_file(&paths.final_models(), "discover")?;
            let models: BTreeMap<u32, patchdisc::svm::LinearModel> =
                artifacts::read_models(&paths.final_models())
                    .cli()?
                    .into_iter()
                    .map(|m| (m.meta.cluster_id, m))
                    .collect();
            let out = out
                .clone()
                .unwrap_or_else(|| viz_dir.join(format!("overlay_{image}.png")));
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent).cli()?;
            }
            viz::overlay(
                &manifest,
                &cfg.features,
                &models,
                &ranked,
                image,
                cfg.discovery.svm.score_floor,
                cfg.discovery.nms_iou,
                *top,
                &out,
            )
            .map_err(classify_error)?;
            println!("viz: wrote {}", out.display());
        }
    }
    Ok(())
}
