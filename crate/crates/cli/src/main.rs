//! `salaug`: saliency-derived datasets and sum-rule ensembles from the shell.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric non-convergence. Logs go to standard error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Args, Command, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use salaug_core::config::Config;
use salaug_core::dataset::{
    apply_splits, compute_saliency, derive_datasets, failures_tsv, materialize_training_set, scan_dataset, split,
    truth_labels, DatasetManifest, Method, VariantId,
};
use salaug_core::fusion::{
    accuracy_table, ensemble_report, evaluate_matrix, load_scores, load_truth, predict, report_json, report_tsv,
    sum_rule, EnsembleSpec, LabelVector, MetricsReport, ScoreMatrix,
};
use salaug_core::imaging::{load_image, save_image, save_map};
use salaug_core::mask::derive_images;
use salaug_core::Error;

#[derive(Parser, Debug)]
#[command(name = "salaug", version, about = "Saliency-derived pest datasets and sum-rule ensembles")]
struct Cli {
    /// Master seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// `key = value` file applied on top of the defaults; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Compute one saliency map and write it as an 8-bit grayscale image.
    Saliency(SaliencyArgs),
    /// Write the 0/255 saliency mask of an image, and optionally its FG, ROI and FG_ROI images.
    Mask(MaskArgs),
    /// Derive all nine saliency variants of a class-per-directory dataset.
    Derive(DeriveArgs),
    /// Assign train/val/test roles for every repetition.
    Split(SplitArgs),
    /// Materialize one repetition with offline augmentation of the training images.
    Augment(AugmentArgs),
    /// Sum-rule fusion of score files.
    Fuse(FuseArgs),
    /// Accuracy, weighted F-score and weighted G-mean of one score file.
    Evaluate(EvaluateArgs),
    /// Ensemble report over a set of score files.
    Report(ReportArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MethodArg {
    Gbvs,
    Spe,
    Cos,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gbvs => Method::Gbvs,
            MethodArg::Spe => Method::Spe,
            MethodArg::Cos => Method::Cos,
        }
    }
}

#[derive(Args, Debug)]
struct SaliencyArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Input image.
    #[arg(long = "in", value_name = "IMAGE")]
    input: PathBuf,
    /// Output map (.pgm or .png).
    #[arg(long, value_name = "MAP")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MaskArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Input image.
    #[arg(long = "in", value_name = "IMAGE")]
    input: PathBuf,
    /// Output mask, 0 or 255 per pixel.
    #[arg(long, value_name = "MASK")]
    out: PathBuf,
    /// Also write the masked image.
    #[arg(long, value_name = "IMAGE")]
    fg: Option<PathBuf>,
    /// Also write the masked image cropped to the mask bounds.
    #[arg(long, value_name = "IMAGE")]
    roi: Option<PathBuf>,
    /// Also write the original image cropped to the mask bounds.
    #[arg(long = "fg-roi", value_name = "IMAGE")]
    fg_roi: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DeriveArgs {
    /// Dataset root with one directory per class.
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Output root; receives `manifest.tsv`, `failures.tsv` and one tree per variant.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Worker threads; output does not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Manifest written by `derive` (or a plain scan).
    #[arg(long, value_name = "TSV")]
    manifest: PathBuf,
    /// Output manifest with split and repetition columns.
    #[arg(long, value_name = "TSV")]
    out: PathBuf,
    /// Also write `truth_rep<r>.tsv` (test labels per repetition) here.
    #[arg(long = "truth-dir", value_name = "DIR")]
    truth_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    /// Split manifest written by `split`.
    #[arg(long, value_name = "TSV")]
    manifest: PathBuf,
    /// Output root; receives `rep<r>/...` and `manifest.tsv`.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    repetition: usize,
    /// Worker threads; output does not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct FuseArgs {
    /// Score files to fuse.
    #[arg(long, num_args = 1.., required = true, value_name = "TSV")]
    scores: Vec<PathBuf>,
    /// Fused score file; standard output when absent.
    #[arg(long, value_name = "TSV")]
    out: Option<PathBuf>,
    /// Ground truth; prints the fused metrics when given.
    #[arg(long, value_name = "TSV")]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long, value_name = "TSV")]
    scores: PathBuf,
    #[arg(long, value_name = "TSV")]
    truth: PathBuf,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Score files, or directories whose `.tsv` files are all loaded.
    #[arg(long, num_args = 1.., required = true, value_name = "PATH")]
    scores: Vec<PathBuf>,
    #[arg(long, value_name = "TSV")]
    truth: PathBuf,
    /// Named ensemble such as `AllSum`, `AllSum\Spectral` or `FusionSum(DN)\FG_ROI`. Repeatable.
    #[arg(long = "ensemble", value_name = "NAME")]
    ensembles: Vec<String>,
    /// Print the method-by-architecture accuracy table instead of the row report.
    #[arg(long)]
    table: bool,
    /// Also write the row report as JSON.
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
}

/// Parameter groups exposed as `--<group>-<name>` flags.
const SALIENCY_GROUPS: &[&str] = &["gbvs", "spe", "cos"];
const PARAM_HELP: &[(&str, &str)] = &[
    ("gbvs.work_size", "GBVS working resolution (longer side)"),
    ("gbvs.sigma", "GBVS distance falloff; derived from the working size when unset"),
    ("gbvs.epsilon", "GBVS feature floor inside the logarithm"),
    ("gbvs.lambda", "GBVS weight floor"),
    ("gbvs.tol", "GBVS power-iteration L1 tolerance"),
    ("gbvs.max_iter", "GBVS power-iteration cap"),
    ("spe.work_height", "Spectral residual working height"),
    ("spe.work_width", "Spectral residual working width"),
    ("spe.mean_filter_size", "Spectral residual box filter side (odd)"),
    ("spe.gauss_sigma", "Spectral residual output blur"),
    ("spe.eps_log", "Spectral residual amplitude floor inside the logarithm"),
    ("cos.k_single", "Co-saliency clusters for a single image"),
    ("cos.k_multi", "Co-saliency clusters for an image group"),
    ("cos.sigma_s", "Co-saliency center-prior width"),
    ("cos.max_iter", "Co-saliency k-means iteration cap"),
    ("cos.max_side", "Co-saliency downsampling limit (longer side)"),
    ("roi.alpha", "Mask threshold as a multiple of the mean saliency"),
    ("roi.rho", "Minimum row/column support fraction of the bounding box"),
    ("roi.min_coverage", "Minimum mask area fraction before falling back"),
    ("split.train_per_class", "Training images per class"),
    ("split.repetitions", "Number of random repetitions"),
    ("split.mode", "random_per_class or fixed_lists"),
    ("split.train_list", "Training ids, one per line (fixed_lists)"),
    ("split.val_list", "Validation ids, one per line (fixed_lists)"),
    ("split.test_list", "Test ids, one per line (fixed_lists)"),
    ("augment.multiplier", "Augmented copies per training image"),
];

fn groups_for(subcommand: &str) -> Vec<&'static str> {
    match subcommand {
        "saliency" => SALIENCY_GROUPS.to_vec(),
        "mask" | "derive" => [SALIENCY_GROUPS, &["roi"]].concat(),
        "split" => vec!["split"],
        "augment" => vec!["augment"],
        _ => Vec::new(),
    }
}

fn flag_name(key: &str) -> String {
    key.replace(['.', '_'], "-")
}

/// Default value of every config key, rendered the way the config file takes it.
fn config_defaults() -> BTreeMap<String, String> {
    Config::default()
        .to_text()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// The full command, with one flag per config key of each subcommand.
fn command() -> Command {
    let defaults = config_defaults();
    let mut cmd = Cli::command();
    for sub in ["saliency", "mask", "derive", "split", "augment"] {
        let groups = groups_for(sub);
        cmd = cmd.mut_subcommand(sub, |mut sc| {
            for (key, help) in PARAM_HELP {
                if !groups.iter().any(|g| key.split('.').next() == Some(*g)) {
                    continue;
                }
                let mut arg = Arg::new(*key).long(flag_name(key)).value_name("VALUE").allow_negative_numbers(true).help(*help);
                if let Some(d) = defaults.get(*key) {
                    arg = arg.default_value(d.clone());
                }
                sc = sc.arg(arg);
            }
            sc
        });
    }
    cmd
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_numeric() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    }
}

fn write_file(path: &Path, text: &str) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

/// Defaults, then the config file, then flags given on the command line.
fn build_config(cli: &Cli, sub: &ArgMatches) -> Result<Config, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).map_err(|e| Failure::usage(e.to_string()))?,
        None => Config::default(),
    };
    cfg.set_seed(cli.seed);
    for (key, _) in PARAM_HELP {
        let Ok(Some(raw)) = sub.try_get_one::<String>(key) else {
            continue;
        };
        if sub.value_source(key) == Some(ValueSource::CommandLine) {
            cfg.set(key, raw)
                .map_err(|e| Failure::usage(format!("--{}: {e}", flag_name(key))))?;
        }
    }
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

fn run_saliency(cfg: &Config, a: &SaliencyArgs) -> Outcome {
    let img = load_image(&a.input)?;
    let map = compute_saliency(a.method.into(), &img, &cfg.saliency())
        .map_err(|e| Failure::from(e).context(&a.input))?;
    save_map(&map, &a.out)?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

impl Failure {
    fn context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

fn run_mask(cfg: &Config, a: &MaskArgs) -> Outcome {
    let img = load_image(&a.input)?;
    let map = compute_saliency(a.method.into(), &img, &cfg.saliency())
        .map_err(|e| Failure::from(e).context(&a.input))?;
    let derived = derive_images(&img, &map, &cfg.roi)?;
    save_map(&derived.mask.to_map(), &a.out)?;
    log::info!(
        "{}: mask covers {:.1}% of the image",
        a.input.display(),
        100.0 * derived.mask.area_fraction()
    );
    for (path, image) in [(&a.fg, &derived.fg), (&a.roi, &derived.roi), (&a.fg_roi, &derived.fg_roi)] {
        if let Some(p) = path {
            save_image(image, p)?;
        }
    }
    Ok(())
}

fn run_derive(cfg: &Config, a: &DeriveArgs) -> Outcome {
    let (scanned, warnings) = scan_dataset(&a.input)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    log::info!("{} images in {} classes", scanned.records.len(), scanned.classes().len());
    let (derived, failures) = derive_datasets(&scanned, &a.out, &cfg.saliency(), &cfg.roi, a.jobs)?;
    derived.save(&a.out.join("manifest.tsv"))?;
    write_file(&a.out.join("failures.tsv"), &failures_tsv(&failures))?;
    for f in &failures {
        log::warn!("{} ({}): {}", f.sample_id, f.method.as_str(), f.message);
    }
    log::info!("{} records, {} failures", derived.records.len(), failures.len());
    Ok(())
}

fn write_truth(path: &Path, labels: std::collections::HashMap<String, String>) -> Outcome {
    let mut ids: Vec<String> = labels.keys().cloned().collect();
    ids.sort();
    let values = ids.iter().map(|id| labels[id].clone()).collect();
    write_file(path, &LabelVector::new(ids, values)?.to_tsv())
}

fn run_split(cfg: &Config, a: &SplitArgs) -> Outcome {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let splits = split(&manifest, &cfg.split)?;
    let applied = apply_splits(&manifest, &splits)?;
    applied.save(&a.out)?;
    if let Some(dir) = &a.truth_dir {
        for s in &splits {
            let labels = truth_labels(&applied, s.repetition, VariantId::ORIGINAL);
            write_truth(&dir.join(format!("truth_rep{}.tsv", s.repetition)), labels)?;
        }
    }
    log::info!("{} repetitions written to {}", splits.len(), a.out.display());
    Ok(())
}

fn run_augment(cli: &Cli, cfg: &Config, a: &AugmentArgs) -> Outcome {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let out = materialize_training_set(&manifest, a.repetition, &a.out, cfg.augment_multiplier, cli.seed, a.jobs)?;
    out.save(&a.out.join("manifest.tsv"))?;
    log::info!("{} records written below {}", out.records.len(), a.out.display());
    Ok(())
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<ScoreMatrix>, Failure> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| io_failure(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "tsv"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Failure::usage("no score files given"));
    }
    let mut out: Vec<ScoreMatrix> = Vec::with_capacity(files.len());
    for f in &files {
        let m = load_scores(f)?;
        if let Some(prev) = out.iter().position(|o| o.model_id == m.model_id) {
            return Err(Failure {
                code: 2,
                message: format!(
                    "{}: model id `{}` already used by {}",
                    f.display(),
                    m.model_id,
                    files[prev].display()
                ),
            });
        }
        out.push(m);
    }
    Ok(out)
}

/// Names the files behind the model ids an alignment error mentions.
fn with_sources(e: Error, paths: &[PathBuf], matrices: &[ScoreMatrix]) -> Failure {
    let mut f = Failure::from(e);
    let sources: Vec<String> = matrices
        .iter()
        .zip(paths)
        .map(|(m, p)| format!("`{}` = {}", m.model_id, p.display()))
        .collect();
    f.message = format!("{} ({})", f.message, sources.join(", "));
    f
}

fn metrics_text(m: &MetricsReport) -> String {
    format!(
        "accuracy\t{:.6}\nweighted_f_score\t{:.6}\nweighted_g_mean\t{:.6}\n",
        m.accuracy, m.weighted_f_score, m.weighted_g_mean
    )
}

fn run_fuse(a: &FuseArgs) -> Outcome {
    let matrices = load_all(&a.scores)?;
    let refs: Vec<&ScoreMatrix> = matrices.iter().collect();
    let fused = sum_rule(&refs).map_err(|e| with_sources(e, &a.scores, &matrices))?;
    let truth = a.truth.as_deref().map(load_truth).transpose()?;
    let metrics = match &truth {
        Some(t) => Some(
            evaluate_matrix(&fused, t)
                .map_err(|e| Failure::from(e).context(a.truth.as_deref().expect("truth given")))?,
        ),
        None => None,
    };
    match &a.out {
        Some(p) => write_file(p, &fused.to_tsv())?,
        None => print!("{}", fused.to_tsv()),
    }
    if let Some(m) = metrics {
        if a.out.is_some() {
            print!("{}", metrics_text(&m));
        } else {
            eprint!("{}", metrics_text(&m));
        }
    }
    Ok(())
}

fn run_evaluate(a: &EvaluateArgs) -> Outcome {
    let m = load_scores(&a.scores)?;
    let truth = load_truth(&a.truth)?;
    let report = evaluate_matrix(&m, &truth).map_err(|e| Failure::from(e).context(&a.scores))?;
    if a.json {
        println!("{}", report_json(&[salaug_core::fusion::ReportRow {
            name: m.model_id.clone(),
            members: vec![m.model_id.clone()],
            metrics: report,
        }]));
    } else {
        print!("{}", metrics_text(&report));
        let predicted = predict(&m);
        log::info!("{} samples scored by `{}`", predicted.len(), m.model_id);
    }
    Ok(())
}

fn run_report(a: &ReportArgs) -> Outcome {
    let matrices = load_all(&a.scores)?;
    let truth = load_truth(&a.truth)?;
    let mut specs = Vec::new();
    for name in &a.ensembles {
        specs.push(EnsembleSpec::parse(name).map_err(|e| Failure::usage(format!("--ensemble `{name}`: {e}")))?);
    }
    if a.table {
        print!("{}", accuracy_table(&matrices, &truth, &specs)?);
        return Ok(());
    }
    if specs.is_empty() {
        specs.push(EnsembleSpec::all("AllSum"));
    }
    let rows = ensemble_report(&specs, &matrices, &truth)?;
    print!("{}", report_tsv(&rows));
    if let Some(p) = &a.json {
        write_file(p, &report_json(&rows))?;
    }
    Ok(())
}

fn run(cli: &Cli, matches: &ArgMatches) -> Outcome {
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    let cfg = build_config(cli, sub)?;
    match &cli.command {
        Cmd::Saliency(a) => run_saliency(&cfg, a),
        Cmd::Mask(a) => run_mask(&cfg, a),
        Cmd::Derive(a) => run_derive(&cfg, a),
        Cmd::Split(a) => run_split(&cfg, a),
        Cmd::Augment(a) => run_augment(cli, &cfg, a),
        Cmd::Fuse(a) => run_fuse(a),
        Cmd::Evaluate(a) => run_evaluate(a),
        Cmd::Report(a) => run_report(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let parsed = command()
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m).map(|cli| (cli, m)));
    let (cli, matches) = match parsed {
        Ok(p) => p,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log::error!("{}", f.message);
            ExitCode::from(f.code)
        }
    }
}
