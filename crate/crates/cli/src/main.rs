use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use face_aging::config::TrainingConfig;
use face_aging::data::toy::{generate_toy_corpus, materialize};
use face_aging::data::{load_manifest, normalize_age, LabeledSample};
use face_aging::error::{Category, Error, Result};
use face_aging::evaluation::{
    default_groups, evaluate_age_fidelity, evaluate_identity_preservation, generate_aging_strip, strip_ages,
    CachedClient, ClientRegistry, VerifierClient, VERIFICATION_THRESHOLD,
};
use face_aging::image::{horizontal_strip, ImageTensor};
use face_aging::training::{self, RunDir, TrainingState};

#[derive(Parser)]
#[command(name = "faceage", version, about = "Continuous face aging: training, translation and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic corpus to PNG files plus a manifest.
    MakeToy(MakeToyArgs),
    /// Train (or resume) a model; writes config, history, checkpoints and samples.
    Train(TrainArgs),
    /// Translate one image to one age.
    Translate(TranslateArgs),
    /// Translate one image to a range of ages.
    Strip(StripArgs),
    /// Age fidelity and identity preservation reports on a test manifest.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct MakeToyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    identities: usize,
    #[arg(long, default_value_t = 32)]
    per_identity: usize,
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    #[arg(long, default_value = "data/toy")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 32x32 images, three levels, C = 64.
    Toy,
    /// 128x128 images, four levels, C = 256.
    Full,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "data/toy/manifest.csv")]
    manifest: PathBuf,
    /// Architecture preset the config file and overrides are applied to.
    #[arg(long, value_enum, default_value = "toy")]
    preset: Preset,
    /// key=value file; any subset of the configuration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set lambda_age=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Same as `--set total_steps=N`.
    #[arg(long)]
    steps: Option<u64>,
    /// Same as `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    runs: PathBuf,
    #[arg(long, default_value = "default")]
    name: String,
    /// Continue from the latest checkpoint in the run directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ModelArgs {
    /// Checkpoint to load; defaults to the latest one of `--run`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "runs/default")]
    run: PathBuf,
}

#[derive(Args)]
struct TranslateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    age: f64,
    #[arg(long, default_value = "translated.png")]
    output: PathBuf,
}

#[derive(Args)]
struct StripArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    from: f64,
    #[arg(long)]
    to: f64,
    #[arg(long, default_value_t = 2.0)]
    step: f64,
    #[arg(long, default_value = "strip")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Test manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Registered verifier client.
    #[arg(long, default_value = "toy-oracle")]
    client: String,
    /// Cache client answers here.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = VERIFICATION_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "reports")]
    out_dir: PathBuf,
}

fn exit_code(c: Category) -> u8 {
    match c {
        Category::Usage => 2,
        Category::Data => 3,
        Category::Runtime => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}: {first}", Category::Usage.name());
            return ExitCode::from(exit_code(Category::Usage));
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {}", e.category().name(), e.to_string().replace('\n', " "));
            ExitCode::from(exit_code(e.category()))
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::MakeToy(a) => make_toy(a),
        Command::Train(a) => train(a),
        Command::Translate(a) => translate(a),
        Command::Strip(a) => strip(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn make_toy(a: MakeToyArgs) -> Result<()> {
    let samples = generate_toy_corpus(a.seed, a.identities, a.per_identity, a.resolution)?;
    let manifest = materialize(&samples, &a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn effective_config(a: &TrainArgs) -> Result<TrainingConfig> {
    let mut cfg = match a.preset {
        Preset::Toy => TrainingConfig::toy(),
        Preset::Full => TrainingConfig::default(),
    };
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        cfg.apply_text(&text)?;
    }
    for kv in &a.overrides {
        let (k, v) =
            kv.split_once('=').ok_or_else(|| Error::InvalidConfig(format!("override `{kv}` is not key=value")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(s) = a.steps {
        cfg.total_steps = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_samples(manifest: &Path, resolution: usize) -> Result<Vec<LabeledSample>> {
    let (rows, _) = load_manifest(manifest)?;
    rows.iter().map(|r| r.load(resolution)).collect()
}

fn train(a: TrainArgs) -> Result<()> {
    let root = a.runs.join(&a.name);
    let mut state = if a.resume {
        let ck = RunDir { root: root.clone() }
            .latest_checkpoint()
            .ok_or_else(|| Error::InvalidConfig(format!("no checkpoint to resume under {}", root.display())))?;
        log::info!("resuming from {}", ck.display());
        let mut state = TrainingState::load(&ck)?;
        if let Some(s) = a.steps {
            state.config.total_steps = s;
        }
        state
    } else {
        let cfg = effective_config(&a)?;
        let samples = load_samples(&a.manifest, cfg.resolution)?;
        let stats = face_aging::data::DatasetStats::from_samples(&samples)?;
        TrainingState::new(cfg, stats)?
    };
    let samples = load_samples(&a.manifest, state.config.resolution)?;
    let run = RunDir::create(&root, &state.config)?;
    let until = state.config.total_steps;
    training::train(&mut state, &samples, until, Some(&run))?;
    println!("{}", run.root.display());
    Ok(())
}

fn load_model(m: &ModelArgs) -> Result<TrainingState> {
    let path = match &m.checkpoint {
        Some(p) => p.clone(),
        None => RunDir { root: m.run.clone() }
            .latest_checkpoint()
            .ok_or_else(|| Error::InvalidConfig(format!("no checkpoint found under {}", m.run.display())))?,
    };
    TrainingState::load(&path)
}

fn save(img: &ImageTensor, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    img.save_png(path)
}

fn translate(a: TranslateArgs) -> Result<()> {
    let state = load_model(&a.model)?;
    let target = normalize_age(a.age, &state.stats)?;
    let x = ImageTensor::load(&a.input, state.config.resolution)?;
    let out = state.networks.generator().translate(&[x], &[target])?;
    save(&out[0], &a.output)?;
    println!("{}", a.output.display());
    Ok(())
}

fn strip(a: StripArgs) -> Result<()> {
    let state = load_model(&a.model)?;
    let ages = strip_ages(a.from, a.to, a.step)?;
    let x = ImageTensor::load(&a.input, state.config.resolution)?;
    let frames = generate_aging_strip(&state.networks.generator(), &x, &ages, &state.stats)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(format!("creating {}", a.out_dir.display()), e))?;
    for (age, f) in ages.iter().zip(&frames) {
        save(f, &a.out_dir.join(format!("age_{age:06.2}.png")))?;
    }
    let path = a.out_dir.join("strip.png");
    horizontal_strip(&frames)?
        .save(&path)
        .map_err(|e| Error::io(format!("writing {}", path.display()), std::io::Error::other(e)))?;
    println!("{} frames in {}", frames.len(), a.out_dir.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let state = load_model(&a.model)?;
    let test = load_samples(&a.manifest, state.config.resolution)?;
    let registry = ClientRegistry::default();
    let mut client: Box<dyn VerifierClient> = registry.create(&a.client)?;
    if let Some(dir) = &a.cache_dir {
        client = Box::new(CachedClient::new(client, dir)?);
    }
    let groups = default_groups();
    let g = state.networks.generator();
    let ages = evaluate_age_fidelity(&g, &test, &groups, client.as_ref(), &state.stats, a.seed)?;
    let ver = evaluate_identity_preservation(&g, &test, &groups, client.as_ref(), a.threshold, &state.stats)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(format!("creating {}", a.out_dir.display()), e))?;
    ages.write_csv(&a.out_dir.join("age_report.csv"))?;
    ver.write_csv(&a.out_dir.join("verification_report.csv"))?;
    let text = format!("{}\n{}", ages.to_table(), ver.to_table());
    let path = a.out_dir.join("report.txt");
    std::fs::write(&path, &text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    print!("{text}");
    Ok(())
}
