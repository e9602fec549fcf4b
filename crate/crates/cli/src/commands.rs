//! The six subcommands: dataset generation, training, attack, sweep,
//! transfer, and report.

use crate::config::{ConfigFile, ATTACK_KEYS};
use crate::runner::{
    csv_row, fmt_mean_ci, fmt_opt, run_repeat, summarize, with_jobs, RunSpec, Summary,
    VideoOutcome, CSV_HEADER,
};
use anyhow::{bail, Context, Result};
use clap::Args;
use savt::attack::{AblationMode, AttackConfig, AttackResult, Budget, Perturbation};
use savt::data::{
    generate_synthetic_dataset, read_dataset, write_dataset, write_tensor, SynthConfig,
};
use savt::metrics::{aap, asp, average_iterations, fooling_rate, transfer_matrix, DistanceKind};
use savt::models::{load_model, save_model, train, Arch, ClassifierSpec, TrainConfig};
use savt::selector::{BoConfig, FramePolicy};
use savt::tensor::Tensor;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

/// Flags for `savt gen`.
#[derive(Args, Debug)]
pub struct GenArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of videos (labels assigned round-robin).
    #[arg(long, default_value_t = 200)]
    pub videos: usize,
    /// Frames per video.
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    /// Frame height in pixels.
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    /// Frame width in pixels.
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    /// Channels per pixel (1 = gray, 3 = RGB).
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    /// Number of motion-direction classes.
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Side length of the moving square.
    #[arg(long, default_value_t = 5)]
    pub shape_size: usize,
    /// Upper bound of the uniform background noise.
    #[arg(long, default_value_t = 0.05)]
    pub noise_level: f64,
    /// Comma-separated frame indices that carry all class evidence
    /// (default: every frame).
    #[arg(long)]
    pub informative: Option<String>,
    /// Generator seed.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Generates a synthetic dataset directory.
pub fn cmd_gen(args: GenArgs) -> Result<()> {
    let cfg = SynthConfig {
        num_videos: args.videos,
        frames: args.frames,
        height: args.height,
        width: args.width,
        channels: args.channels,
        num_classes: args.classes,
        shape_size: args.shape_size,
        noise_level: args.noise_level,
        informative_frames: args.informative.as_deref().map(parse_index_list).transpose()?,
        seed: args.seed,
    };
    let records = generate_synthetic_dataset(&cfg).context("generating the dataset")?;
    write_dataset(&args.out, &records)
        .with_context(|| format!("writing dataset to {}", args.out.display()))?;
    let [t, h, w, c] = cfg.input_shape();
    println!(
        "wrote {} videos ({t} frames of {h}x{w}x{c}, {} classes) to {}",
        records.len(),
        cfg.num_classes,
        args.out.display()
    );
    Ok(())
}

fn parse_index_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .with_context(|| format!("bad frame index {tok:?} in {s:?}"))
        })
        .collect()
}

/// Flags for `savt train`.
#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory to train on.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Architecture: frame_cnn_recurrent, conv3d, or frame_cnn_meanpool.
    #[arg(long)]
    pub arch: String,
    /// Output model directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Training epochs.
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Minibatch size.
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Initialization and shuffling seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Trains a classifier and saves it as a model directory.
pub fn cmd_train(args: TrainArgs) -> Result<()> {
    let records = read_dataset(&args.dataset)
        .with_context(|| format!("loading dataset {}", args.dataset.display()))?;
    let arch = Arch::from_name(&args.arch)?;
    let num_classes = records.iter().map(|r| r.label).max().context("empty dataset")? + 1;
    let shape: [usize; 4] = records[0]
        .video
        .shape()
        .try_into()
        .map_err(|_| anyhow::anyhow!("dataset videos are not rank-4 tensors"))?;
    let mut spec = ClassifierSpec::init(arch, num_classes, shape, args.seed)?;
    let train_cfg =
        TrainConfig { epochs: args.epochs, lr: args.lr, batch: args.batch, seed: args.seed };
    let history = train(&mut spec, &records, &train_cfg).context("training")?;
    for (epoch, acc) in history.iter().enumerate() {
        println!("epoch {}: accuracy {}", epoch + 1, acc);
    }
    save_model(&args.out, &spec)
        .with_context(|| format!("saving model to {}", args.out.display()))?;
    println!("saved {} model ({} classes) to {}", arch.name(), num_classes, args.out.display());
    Ok(())
}

/// Flags for `savt attack` (also flattened into `sweep`).
#[derive(Args, Debug)]
pub struct AttackArgs {
    /// `key = value` config file; explicit flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory to attack.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Trained model directory.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Frame policy: bo, first, brute, or fixed:<index> (default bo).
    #[arg(long)]
    pub frames: Option<String>,
    /// Frames to perturb per video (default 1).
    #[arg(long)]
    pub k: Option<usize>,
    /// Perturbation mode: noise, spatial, or combined (default combined).
    #[arg(long)]
    pub mode: Option<String>,
    /// Similarity weight (default depends on the model architecture).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Optimizer learning rate (default 0.01).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Iteration cap per video (default 100).
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Hard perturbation budget, l21:<v> or ssim:<v>.
    #[arg(long)]
    pub budget: Option<String>,
    /// Times to repeat the whole run with shifted seeds (default 1).
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Base seed; every (repeat, video) pair derives its own (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: one per logical core).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Result CSV path (default: rows to stdout, summaries to stderr).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for adversarial tensors: <id>.savt, repeats <id>_r<n>.savt.
    #[arg(long)]
    pub save_adv: Option<PathBuf>,
    /// Record wall time per video (off by default; timing makes output
    /// nondeterministic).
    #[arg(long)]
    pub timing: bool,
}

/// Attack flags after merging config-file values and defaults.
struct AttackSettings {
    dataset: PathBuf,
    model: PathBuf,
    policy: FramePolicy,
    k: usize,
    mode: AblationMode,
    lambda: Option<f64>,
    lr: f64,
    max_iters: usize,
    budget: Option<Budget>,
    repeats: usize,
    seed: u64,
    jobs: Option<usize>,
    out: Option<PathBuf>,
}

fn resolve_attack(args: &AttackArgs) -> Result<AttackSettings> {
    let cfg = match &args.config {
        Some(path) => ConfigFile::load(path, ATTACK_KEYS)?,
        None => ConfigFile::empty(),
    };
    let dataset = args
        .dataset
        .clone()
        .or_else(|| cfg.get("dataset").map(PathBuf::from))
        .context("--dataset is required (flag or config file)")?;
    let model = args
        .model
        .clone()
        .or_else(|| cfg.get("model").map(PathBuf::from))
        .context("--model is required (flag or config file)")?;
    let policy = match args.frames.as_deref().or_else(|| cfg.get("frames")) {
        Some(s) => FramePolicy::parse(s)?,
        None => FramePolicy::Bo,
    };
    let mode = match args.mode.as_deref().or_else(|| cfg.get("mode")) {
        Some(s) => AblationMode::from_name(s)?,
        None => AblationMode::Combined,
    };
    let budget = match args.budget.as_deref().or_else(|| cfg.get("budget")) {
        Some(s) => Some(Budget::parse(s)?),
        None => None,
    };
    let repeats = args.repeats.or(cfg.parse("repeats")?).unwrap_or(1);
    if repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    Ok(AttackSettings {
        dataset,
        model,
        policy,
        k: args.k.or(cfg.parse("k")?).unwrap_or(1),
        mode,
        lambda: args.lambda.or(cfg.parse("lambda")?),
        lr: args.lr.or(cfg.parse("lr")?).unwrap_or(0.01),
        max_iters: args.max_iters.or(cfg.parse("max-iters")?).unwrap_or(100),
        budget,
        repeats,
        seed: args.seed.or(cfg.parse("seed")?).unwrap_or(0),
        jobs: args.jobs.or(cfg.parse("jobs")?),
        out: args.out.clone().or_else(|| cfg.get("out").map(PathBuf::from)),
    })
}

fn path_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_inputs(settings: &AttackSettings) -> Result<(Vec<savt::data::VideoRecord>, ClassifierSpec)> {
    let records = read_dataset(&settings.dataset)
        .with_context(|| format!("loading dataset {}", settings.dataset.display()))?;
    let spec = load_model(&settings.model)
        .with_context(|| format!("loading model {}", settings.model.display()))?;
    Ok((records, spec))
}

fn build_run(settings: &AttackSettings, spec: &ClassifierSpec, timing: bool) -> RunSpec {
    let lambda =
        settings.lambda.unwrap_or_else(|| AttackConfig::default_lambda(spec.arch()));
    RunSpec {
        model_name: path_stem(&settings.model),
        policy: settings.policy,
        k: settings.k,
        attack: AttackConfig {
            lambda,
            lr: settings.lr,
            max_iters: settings.max_iters,
            budget: settings.budget,
            mode: settings.mode,
            seed: settings.seed,
            ..AttackConfig::default()
        },
        timing,
    }
}

/// Attacks a dataset and emits one result row per (repeat, video), plus
/// per-repeat summaries and — over several repeats — a mean with a 99%
/// confidence half-width.
pub fn cmd_attack(args: AttackArgs) -> Result<()> {
    let settings = resolve_attack(&args)?;
    let (records, spec) = load_inputs(&settings)?;
    let run = build_run(&settings, &spec, args.timing);

    let per_repeat: Vec<Vec<VideoOutcome>> = with_jobs(settings.jobs, || {
        (0..settings.repeats)
            .map(|repeat| run_repeat(&spec, &records, &run, repeat))
            .collect()
    })?;

    let mut lines = vec![CSV_HEADER.to_string()];
    let mut summaries: Vec<Summary> = Vec::new();
    for (repeat, outcomes) in per_repeat.iter().enumerate() {
        for outcome in outcomes {
            lines.push(csv_row(&run, outcome));
        }
        if let Some(dir) = &args.save_adv {
            fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))?;
            for outcome in outcomes {
                let name = if repeat == 0 {
                    format!("{}.savt", outcome.id)
                } else {
                    format!("{}_r{}.savt", outcome.id, repeat)
                };
                let path = dir.join(name);
                write_tensor(&path, &outcome.result.adversarial)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        let results: Vec<AttackResult> =
            outcomes.iter().map(|o| o.result.clone()).collect();
        summaries.push(summarize(&results, run.attack.budget.as_ref())?);
    }

    let csv = lines.join("\n") + "\n";
    let summaries_to_stdout = settings.out.is_some();
    match &settings.out {
        Some(path) => fs::write(path, csv)
            .with_context(|| format!("writing results to {}", path.display()))?,
        None => print!("{csv}"),
    }
    let emit = |line: String| {
        if summaries_to_stdout {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    };
    for (repeat, summary) in summaries.iter().enumerate() {
        emit(format!("repeat {repeat}: {}", summary.line()));
    }
    if settings.repeats > 1 {
        let frs: Vec<f64> = summaries.iter().map(|s| s.fr).collect();
        let anis: Vec<f64> = summaries.iter().filter_map(|s| s.ani).collect();
        let aaps: Vec<f64> = summaries.iter().filter_map(|s| s.aap).collect();
        let asps: Vec<f64> = summaries.iter().filter_map(|s| s.asp).collect();
        emit(format!(
            "over {} repeats: fr {} ani {} aap {} asp {}",
            settings.repeats,
            fmt_mean_ci(&frs),
            fmt_mean_ci(&anis),
            fmt_mean_ci(&aaps),
            fmt_mean_ci(&asps)
        ));
    }
    Ok(())
}

/// Flags for `savt sweep`.
#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub attack: AttackArgs,
    /// Quantity to sweep: lambda or budget.
    #[arg(long)]
    pub sweep: String,
    /// Comma-separated sweep values (e.g. `0.5,1,1.5` or
    /// `l21:0.02,l21:0.08`).
    #[arg(long)]
    pub values: String,
}

/// Attacks the dataset once per sweep value and tabulates the summaries.
pub fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let settings = resolve_attack(&args.attack)?;
    let (records, spec) = load_inputs(&settings)?;
    let tokens: Vec<&str> =
        args.values.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
    if tokens.is_empty() {
        bail!("--values must list at least one sweep value");
    }

    let mut lines = vec!["value\tn\tfr\tani\taap\tasp".to_string()];
    let rows: Vec<(String, Summary)> = with_jobs(settings.jobs, || {
        let mut rows = Vec::new();
        for token in &tokens {
            let mut run = build_run(&settings, &spec, false);
            match args.sweep.as_str() {
                "lambda" => {
                    run.attack.lambda = token
                        .parse()
                        .with_context(|| format!("bad lambda value {token:?}"))?;
                }
                "budget" => run.attack.budget = Some(Budget::parse(token)?),
                other => bail!("unknown sweep kind {other:?}; expected lambda or budget"),
            }
            let mut results: Vec<AttackResult> = Vec::new();
            for repeat in 0..settings.repeats {
                results.extend(
                    run_repeat(&spec, &records, &run, repeat)?
                        .into_iter()
                        .map(|o| o.result),
                );
            }
            rows.push((token.to_string(), summarize(&results, run.attack.budget.as_ref())?));
        }
        Ok(rows)
    })?;
    for (token, summary) in rows {
        lines.push(format!(
            "{token}\t{}\t{}\t{}\t{}\t{}",
            summary.n,
            summary.fr,
            fmt_opt(summary.ani),
            fmt_opt(summary.aap),
            fmt_opt(summary.asp)
        ));
    }
    let table = lines.join("\n") + "\n";
    match &settings.out {
        Some(path) => fs::write(path, table)
            .with_context(|| format!("writing sweep table to {}", path.display()))?,
        None => print!("{table}"),
    }
    Ok(())
}

/// Flags for `savt transfer`.
#[derive(Args, Debug)]
pub struct TransferArgs {
    /// `key = value` config file; explicit flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory to attack.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Comma-separated trained model directories.
    #[arg(long)]
    pub models: Option<String>,
    /// Frame policy: bo, first, brute, or fixed:<index> (default bo).
    #[arg(long)]
    pub frames: Option<String>,
    /// Frames to perturb per video (default 1).
    #[arg(long)]
    pub k: Option<usize>,
    /// Perturbation mode (default combined).
    #[arg(long)]
    pub mode: Option<String>,
    /// Similarity weight (default 1).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Optimizer learning rate (default 0.01).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Iteration cap per video (default 100).
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Hard perturbation budget, l21:<v> or ssim:<v>.
    #[arg(long)]
    pub budget: Option<String>,
    /// Seed for frame selection.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output TSV path (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Attacks the dataset once per generator model and tabulates how often each
/// generator's successful adversarial videos fool every other model.
pub fn cmd_transfer(args: TransferArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => ConfigFile::load(path, ATTACK_KEYS)?,
        None => ConfigFile::empty(),
    };
    let dataset = args
        .dataset
        .clone()
        .or_else(|| cfg.get("dataset").map(PathBuf::from))
        .context("--dataset is required (flag or config file)")?;
    let models_raw = args
        .models
        .clone()
        .or_else(|| cfg.get("models").map(str::to_string))
        .context("--models is required (flag or config file)")?;
    let model_dirs: Vec<PathBuf> = models_raw
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(PathBuf::from)
        .collect();
    if model_dirs.is_empty() {
        bail!("--models must list at least one model directory");
    }
    let policy = match args.frames.as_deref().or_else(|| cfg.get("frames")) {
        Some(s) => FramePolicy::parse(s)?,
        None => FramePolicy::Bo,
    };
    let mode = match args.mode.as_deref().or_else(|| cfg.get("mode")) {
        Some(s) => AblationMode::from_name(s)?,
        None => AblationMode::Combined,
    };
    let budget = match args.budget.as_deref().or_else(|| cfg.get("budget")) {
        Some(s) => Some(Budget::parse(s)?),
        None => None,
    };
    let k = args.k.or(cfg.parse("k")?).unwrap_or(1);
    let seed = args.seed.or(cfg.parse("seed")?).unwrap_or(0);

    let records = read_dataset(&dataset)
        .with_context(|| format!("loading dataset {}", dataset.display()))?;
    if records.is_empty() {
        bail!("dataset {} holds no videos", dataset.display());
    }
    let mut specs = Vec::with_capacity(model_dirs.len());
    for dir in &model_dirs {
        specs.push(
            load_model(dir).with_context(|| format!("loading model {}", dir.display()))?,
        );
    }
    let names: Vec<String> = model_dirs.iter().map(|d| path_stem(d)).collect();
    let atk = AttackConfig {
        lambda: args.lambda.or(cfg.parse("lambda")?).unwrap_or(1.0),
        lr: args.lr.or(cfg.parse("lr")?).unwrap_or(0.01),
        max_iters: args.max_iters.or(cfg.parse("max-iters")?).unwrap_or(100),
        budget,
        mode,
        seed,
        ..AttackConfig::default()
    };
    let bo = BoConfig { seed, ..BoConfig::default_for(records[0].video.shape()[0]) };
    let matrix = transfer_matrix(&specs, &records, &policy, k, &bo, &atk)?;

    let mut lines = vec![format!("model\t{}", names.join("\t"))];
    for (i, row) in matrix.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| fmt_opt(*c)).collect();
        lines.push(format!("{}\t{}", names[i], cells.join("\t")));
    }
    let table = lines.join("\n") + "\n";
    match args.out.clone().or_else(|| cfg.get("out").map(PathBuf::from)) {
        Some(path) => fs::write(&path, table)
            .with_context(|| format!("writing transfer matrix to {}", path.display()))?,
        None => print!("{table}"),
    }
    Ok(())
}

/// Flags for `savt report`.
#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Result CSV produced by `savt attack`.
    #[arg(long)]
    pub results: PathBuf,
    /// Directory for summary.csv and fr_vs_k.tsv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

struct ResultRow {
    model: String,
    frame_policy: String,
    mode: String,
    k: usize,
    success: bool,
    iterations: usize,
    ssim_distance: f64,
    l21_distance: f64,
    pred_label: usize,
}

fn parse_row(line: &str) -> Result<ResultRow> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 12 {
        bail!("expected 12 fields, got {}", fields.len());
    }
    let success = match fields[5] {
        "1" => true,
        "0" => false,
        other => bail!("bad success flag {other:?}"),
    };
    Ok(ResultRow {
        model: fields[1].to_string(),
        frame_policy: fields[2].to_string(),
        mode: fields[3].to_string(),
        k: fields[4].parse().with_context(|| format!("bad k {:?}", fields[4]))?,
        success,
        iterations: fields[6]
            .parse()
            .with_context(|| format!("bad iterations {:?}", fields[6]))?,
        ssim_distance: fields[7]
            .parse()
            .with_context(|| format!("bad ssim_distance {:?}", fields[7]))?,
        l21_distance: fields[8]
            .parse()
            .with_context(|| format!("bad l21_distance {:?}", fields[8]))?,
        pred_label: fields[9]
            .parse()
            .with_context(|| format!("bad pred_label {:?}", fields[9]))?,
    })
}

fn row_to_result(row: &ResultRow) -> AttackResult {
    AttackResult {
        success: row.success,
        iterations: row.iterations,
        perturbation: Perturbation::zeros(&[1, 1, 1, 1]).expect("static shape"),
        adversarial: Tensor::zeros(&[1, 1, 1, 1]),
        ssim_distance: row.ssim_distance,
        l21_distance: row.l21_distance,
        pred_label: row.pred_label,
        objective: 0.0,
    }
}

/// Aggregates result rows into per-configuration summaries and a
/// frames-attacked-versus-fooling-rate curve.
pub fn cmd_report(args: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&args.results)
        .with_context(|| format!("reading results {}", args.results.display()))?;
    let mut line_iter = text.lines();
    let header = line_iter
        .next()
        .with_context(|| format!("{} is empty", args.results.display()))?;
    if header != CSV_HEADER {
        bail!("{}: unexpected header {header:?}", args.results.display());
    }
    let mut rows = Vec::new();
    for (lineno, line) in line_iter.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            parse_row(line)
                .with_context(|| format!("{}:{}", args.results.display(), lineno + 2))?,
        );
    }
    if rows.is_empty() {
        bail!("{}: no result rows to report", args.results.display());
    }

    let mut groups: BTreeMap<(String, String, String, usize), Vec<AttackResult>> =
        BTreeMap::new();
    for row in &rows {
        groups
            .entry((row.model.clone(), row.frame_policy.clone(), row.mode.clone(), row.k))
            .or_default()
            .push(row_to_result(row));
    }
    let mut summary_lines = vec!["model,frame_policy,mode,k,n,fr,ani,aap,asp".to_string()];
    for ((model, policy, mode, k), results) in &groups {
        let fr = fooling_rate(results)?;
        let ani = average_iterations(results)?;
        let aap = aap(results, 1.0, DistanceKind::SsimDistance)?;
        let asp = asp(results, DistanceKind::SsimDistance)?;
        summary_lines.push(format!(
            "{model},{policy},{mode},{k},{},{fr},{},{aap},{}",
            results.len(),
            fmt_opt(ani),
            fmt_opt(asp)
        ));
    }

    let mut by_k: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for row in &rows {
        let (hits, total) = by_k.entry(row.k).or_insert((0, 0));
        if row.success {
            *hits += 1;
        }
        *total += 1;
    }
    let mut curve_lines = vec!["k\tfr".to_string()];
    for (k, (hits, total)) in &by_k {
        curve_lines.push(format!("{k}\t{}", *hits as f64 / *total as f64));
    }

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let summary_path = args.out_dir.join("summary.csv");
    fs::write(&summary_path, summary_lines.join("\n") + "\n")
        .with_context(|| format!("writing {}", summary_path.display()))?;
    let curve_path = args.out_dir.join("fr_vs_k.tsv");
    fs::write(&curve_path, curve_lines.join("\n") + "\n")
        .with_context(|| format!("writing {}", curve_path.display()))?;
    println!(
        "wrote {} configuration groups to {}",
        groups.len(),
        args.out_dir.display()
    );
    Ok(())
}
