use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use xsd_core::data::SubjectId;
use xsd_core::decoders::{DecoderSpec, Method};
use xsd_core::evaluation::{loso, permutation_check, EvalOptions};
use xsd_core::glm::LambdaRule;
use xsd_core::io::{self, DatasetMeta, Payload};
use xsd_core::shift::{ShiftOptions, ShiftSpace};
use xsd_core::stacking::fit_stacked;
use xsd_core::standardize::Standardizer;
use xsd_core::synth::{bayes_accuracy, generate, mu_for_bayes, SynthConfig};

/// Cross-subject decoding experiments.
#[derive(Parser, Debug)]
#[command(name = "xsd", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-subject dataset.
    Synth(SynthArgs),
    /// Convert epoched tensors into the dataset format.
    Ingest(IngestArgs),
    /// Leave-one-subject-out evaluation plus within-subject k-fold.
    Evaluate(EvaluateArgs),
    /// Importance weights of the training trials for one target subject.
    Weights(WeightsArgs),
    /// Accuracy under label permutations (should sit at chance).
    Permcheck(PermcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    subjects: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 60)]
    dim: usize,
    /// Class separation; defaults to the value giving Bayes accuracy 0.85.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.3)]
    gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = PayloadArg::Binary)]
    payload: PayloadArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Directory of `.hdr` tensor headers with their payload files.
    #[arg(long)]
    tensor_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    decimate: usize,
    /// Free-text epoch window recorded in the manifest.
    #[arg(long)]
    window: Option<String>,
    #[arg(long, value_enum, default_value_t = PayloadArg::Binary)]
    payload: PayloadArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "single,pool,sg,sg_cs")]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 6)]
    k: usize,
    #[arg(long, value_enum, default_value_t = LambdaMode::Fixed)]
    lambda_mode: LambdaMode,
    #[arg(long, default_value = "second_level")]
    shift_space: ShiftSpace,
    #[arg(long, default_value = "0.1,10", value_parser = parse_clip)]
    clip: (f64, f64),
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip train-side feature standardization.
    #[arg(long)]
    no_standardize: bool,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_txt: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WeightsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    target_subject: SubjectId,
    #[arg(long, default_value = "second_level")]
    shift_space: ShiftSpace,
    #[arg(long, default_value = "0.1,10", value_parser = parse_clip)]
    clip: (f64, f64),
    #[arg(long, default_value_t = 6)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PermcheckArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "pool")]
    method: Method,
    #[arg(long, default_value_t = 20)]
    n_perm: usize,
    #[arg(long, default_value_t = 6)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LambdaMode {
    /// 0.01 * lambda_max of each problem.
    Fixed,
    /// Inner stratified 3-fold selection on training data.
    Cv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PayloadArg {
    Binary,
    Csv,
}

impl From<PayloadArg> for Payload {
    fn from(p: PayloadArg) -> Self {
        match p {
            PayloadArg::Binary => Payload::Binary,
            PayloadArg::Csv => Payload::Csv,
        }
    }
}

fn parse_clip(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected lo,hi (e.g. 0.1,10), got {s:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower clip {lo:?}"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper clip {hi:?}"))?;
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
        return Err(format!("clip range needs finite 0 < lo <= hi, got {lo},{hi}"));
    }
    Ok((lo, hi))
}

/// Prints the resolved configuration as `key = value` lines.
fn echo(command: &str, entries: &[(&str, String)]) {
    println!("[{command}]");
    for (k, v) in entries {
        println!("{k} = {v}");
    }
    println!();
}

fn write_out(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load(path: &Path) -> Result<io::LoadedDataset> {
    let loaded = io::load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))?;
    if !loaded.fingerprint_matches {
        eprintln!("warning: {}: fingerprint does not match manifest", path.display());
    }
    Ok(loaded)
}

fn shift_options(space: ShiftSpace, clip: (f64, f64), seed: u64) -> ShiftOptions {
    ShiftOptions {
        clip_lo: clip.0,
        clip_hi: clip.1,
        space,
        seed,
        ..ShiftOptions::default()
    }
}

fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_subjects: a.subjects,
        trials_per_subject: a.trials,
        d: a.dim,
        mu: a.mu.unwrap_or_else(|| mu_for_bayes(0.85, a.sigma)),
        sigma: a.sigma,
        gamma: a.gamma,
        tau: a.tau,
        seed: a.seed,
    };
    cfg.validate()?;
    echo(
        "synth",
        &[
            ("subjects", cfg.n_subjects.to_string()),
            ("trials", cfg.trials_per_subject.to_string()),
            ("dim", cfg.d.to_string()),
            ("mu", format!("{:?}", cfg.mu)),
            ("sigma", format!("{:?}", cfg.sigma)),
            ("gamma", format!("{:?}", cfg.gamma)),
            ("tau", format!("{:?}", cfg.tau)),
            ("seed", cfg.seed.to_string()),
            ("payload", Payload::from(a.payload).to_string()),
            ("out", a.out.display().to_string()),
        ],
    );
    let (dataset, params) = generate(&cfg)?;
    let meta = DatasetMeta {
        payload: a.payload.into(),
        ..DatasetMeta::default()
    };
    let manifest = io::save_dataset(&dataset, &a.out, &meta)?;
    io::write_params(&a.out.join("params"), &params)?;
    let bayes = bayes_accuracy(&params[0], &cfg)?;
    println!("wrote {} subjects, {} trials", manifest.subjects.len(), dataset.n_trials());
    println!("bayes accuracy = {bayes:.4}");
    println!("fingerprint = {}", manifest.fingerprint);
    Ok(())
}

fn ingest(a: &IngestArgs) -> Result<()> {
    echo(
        "ingest",
        &[
            ("tensor_dir", a.tensor_dir.display().to_string()),
            ("decimate", a.decimate.to_string()),
            ("window", a.window.clone().unwrap_or_else(|| "unspecified".into())),
            ("payload", Payload::from(a.payload).to_string()),
            ("out", a.out.display().to_string()),
        ],
    );
    let (dataset, shape) = io::ingest_dir(&a.tensor_dir, a.decimate)?;
    let meta = DatasetMeta {
        factorization: Some(shape),
        window: a.window.clone(),
        prefiltered: true,
        payload: a.payload.into(),
    };
    let manifest = io::save_dataset(&dataset, &a.out, &meta)?;
    println!(
        "wrote {} subjects, d = {} ({} channels x {} timepoints)",
        manifest.subjects.len(),
        manifest.d,
        shape.0,
        shape.1
    );
    println!("fingerprint = {}", manifest.fingerprint);
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    if a.methods.is_empty() {
        bail!("--methods needs at least one of single, pool, sg, sg_cs");
    }
    let loaded = load(&a.data)?;
    let mut methods = a.methods.clone();
    methods.sort();
    methods.dedup();
    let rule = match a.lambda_mode {
        LambdaMode::Fixed => LambdaRule::default(),
        LambdaMode::Cv => LambdaRule::CrossValidated,
    };
    let specs: Vec<DecoderSpec> = methods
        .iter()
        .map(|&m| {
            let mut spec = DecoderSpec::new(m);
            spec.lambda = rule;
            spec.stacking.k = a.k;
            spec.stacking.first_level = rule;
            spec.stacking.second_level = rule;
            spec.shift = shift_options(a.shift_space, a.clip, a.seed);
            spec
        })
        .collect();
    let opts = EvalOptions {
        k: a.k,
        standardize: !a.no_standardize,
    };
    let names: Vec<&str> = methods.iter().map(Method::as_str).collect();
    let lambda_mode = match a.lambda_mode {
        LambdaMode::Fixed => "fixed",
        LambdaMode::Cv => "cv",
    };
    let clip = format!("{},{}", a.clip.0, a.clip.1);
    echo(
        "evaluate",
        &[
            ("data", a.data.display().to_string()),
            ("fingerprint", loaded.dataset.fingerprint()),
            ("subjects", loaded.dataset.subjects().len().to_string()),
            ("methods", names.join(",")),
            ("k", a.k.to_string()),
            ("lambda_mode", lambda_mode.into()),
            ("shift_space", a.shift_space.as_str().into()),
            ("clip", clip.clone()),
            ("standardize", opts.standardize.to_string()),
            ("seed", a.seed.to_string()),
        ],
    );
    let mut table = loso(&loaded.dataset, &specs, &opts, a.seed)?;
    table.meta.options.extend([
        ("lambda_mode".to_string(), lambda_mode.to_string()),
        ("shift_space".to_string(), a.shift_space.as_str().to_string()),
        ("clip".to_string(), clip),
    ]);
    let text = table.to_text();
    print!("{text}");
    if let Some(p) = &a.out_csv {
        write_out(p, &table.to_csv())?;
    }
    if let Some(p) = &a.out_txt {
        write_out(p, &text)?;
    }
    Ok(())
}

fn weights(a: &WeightsArgs) -> Result<()> {
    let loaded = load(&a.data)?;
    let dataset = &loaded.dataset;
    let target = dataset
        .subject(a.target_subject)
        .ok_or_else(|| anyhow!("target subject {} is not in the dataset (have {:?})", a.target_subject, dataset.subject_ids()))?;
    let train = dataset.without(a.target_subject)?;
    echo(
        "weights",
        &[
            ("data", a.data.display().to_string()),
            ("target_subject", a.target_subject.to_string()),
            ("training_subjects", format!("{:?}", train.subject_ids())),
            ("shift_space", a.shift_space.as_str().into()),
            ("clip", format!("{},{}", a.clip.0, a.clip.1)),
            ("k", a.k.to_string()),
            ("seed", a.seed.to_string()),
            ("out", a.out.display().to_string()),
        ],
    );
    let params = Standardizer::fit(&train)?;
    let train = params.apply(&train)?;
    let target = params.apply_matrix(&target.design_matrix())?;
    let mut spec = DecoderSpec::new(Method::SgCs).with_seed(a.seed);
    spec.stacking.k = a.k;
    spec.shift = shift_options(a.shift_space, a.clip, a.seed);
    spec.validate()?;
    let model = fit_stacked(&train, Some(&target), &spec.stacking, &spec.shift, a.seed)?;
    let w = model.weights.context("stacked fit produced no weights")?;
    write_out(&a.out, &w.to_csv())?;
    println!(
        "{} weights: min {:.4}, max {:.4}, raw mean {:.4}",
        w.len(),
        w.min(),
        w.max(),
        w.raw_mean
    );
    Ok(())
}

fn permcheck(a: &PermcheckArgs) -> Result<()> {
    let loaded = load(&a.data)?;
    echo(
        "permcheck",
        &[
            ("data", a.data.display().to_string()),
            ("method", a.method.as_str().into()),
            ("n_perm", a.n_perm.to_string()),
            ("k", a.k.to_string()),
            ("seed", a.seed.to_string()),
        ],
    );
    let mut spec = DecoderSpec::new(a.method);
    spec.stacking.k = a.k;
    let opts = EvalOptions {
        k: a.k,
        ..EvalOptions::default()
    };
    let accs = permutation_check(&loaded.dataset, &spec, a.n_perm, &opts, a.seed)?;
    for (p, acc) in accs.iter().enumerate() {
        println!("permutation {p}: {acc:.4}");
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    println!("null mean = {mean:.4}");
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("XSD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("XSD_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring thread pool")
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Weights(a) => weights(a),
        Command::Permcheck(a) => permcheck(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            eprintln!("{}", rendered.lines().next().unwrap_or("error: invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
