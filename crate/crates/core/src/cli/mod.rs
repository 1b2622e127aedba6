//! The `fdn` command line.
//!
//! Exit status is 0 on success, 1 when arguments, configuration or input
//! files fail validation, and 2 when work fails at runtime.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::audio::{generate_synthetic_corpus, read_wav, CorpusManifest, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_protocol, extract_embedding, perturbation_sweep, read_trials, sweep_table,
};
use crate::gradsuite::{gradient_suite, max_error};
use crate::model::{checkpoint, count_parameters, FdnModel, ModelConfig, Variant};
use crate::numfmt::sig6;
use crate::train::{train, CropMode, TrainConfig, TrainingData};

/// Published parameter counts (millions) of the light network with 6112
/// output speakers, keyed by reduction ratio.
pub const PUBLISHED_PARAMS: [(usize, f64); 5] =
    [(2, 13.33), (4, 13.15), (8, 13.06), (16, 13.01), (32, 12.99)];

/// Gradient checks pass below this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub const DEFAULT_FACTORS: &str = "0.5,0.7,0.9,1.0,1.1,1.5,2.0";

#[derive(Parser, Debug)]
#[command(
    name = "fdn",
    version,
    about = "Finite difference network speaker verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-speaker corpus with manifests and trials
    Synth(SynthArgs),
    /// Train a model on a manifest, writing checkpoints and an epoch log
    Train(TrainArgs),
    /// Write one embedding file per manifest utterance
    Extract(ExtractArgs),
    /// Score a trials file and report the equal error rate
    Eval(EvalArgs),
    /// Equal error rate under test-side speed perturbation
    Sweep(SweepArgs),
    /// Finite-difference gradient checks over layers and tiny networks
    Gradcheck(GradcheckArgs),
    /// Count trainable parameters for a configuration
    Params(ModelArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct ModelArgs {
    /// Flat key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Channel reduction ratio of the attention
    #[arg(long)]
    alpha: Option<usize>,
    /// light or heavy
    #[arg(long)]
    variant: Option<String>,
    /// Number of training speakers (classifier outputs)
    #[arg(long)]
    speakers: Option<usize>,
    /// Use the reduced-width desk-scale preset
    #[arg(long)]
    tiny: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    speakers: usize,
    #[arg(long, default_value_t = 10)]
    train_utts: usize,
    #[arg(long, default_value_t = 5)]
    test_utts: usize,
    /// Samples per utterance
    #[arg(long, default_value_t = 8000)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Training manifest
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for checkpoints and the log
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest of the utterances the trials refer to
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    trials: PathBuf,
    /// Also write the report here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    trials: PathBuf,
    /// Comma-separated speed factors in [0.5, 2]
    #[arg(long, default_value = DEFAULT_FACTORS)]
    factors: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Model and training settings after the preset, the config file and the
/// flags have been applied in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Whether the speaker count was given rather than defaulted.
    pub speakers_set: bool,
}

/// Reads a flat `key = value` file. Blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str, config: &mut RunConfig) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key=value", i + 1)));
        };
        apply_setting(config, key.trim(), value.trim()).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("line {}: {msg}", i + 1)),
            other => other,
        })?;
    }
    Ok(())
}

fn apply_setting(config: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
    }
    if key == "tiny" {
        if num::<bool>(key, value)? {
            let variant = config.model.variant;
            config.model = ModelConfig::tiny(variant);
        }
        return Ok(());
    }
    if config.model.set(key, value)? {
        if key == "num_speakers" {
            config.speakers_set = true;
        }
        return Ok(());
    }
    let t = &mut config.train;
    match key {
        "epochs" => t.epochs = num(key, value)?,
        "batch_size" => t.batch_size = num(key, value)?,
        "seed" => t.seed = num(key, value)?,
        "checkpoint_every" => t.checkpoint_every = num(key, value)?,
        "lr" => t.optimizer.lr = num(key, value)?,
        "beta1" => t.optimizer.beta1 = num(key, value)?,
        "beta2" => t.optimizer.beta2 = num(key, value)?,
        "eps" => t.optimizer.eps = num(key, value)?,
        "weight_decay" => t.optimizer.weight_decay = num(key, value)?,
        "crop" => {
            t.crop = match value {
                "random" => CropMode::Random,
                "center" => CropMode::Center,
                _ => {
                    return Err(Error::Config(format!(
                        "crop must be random or center, got '{value}'"
                    )))
                }
            }
        }
        _ => return Err(Error::Config(format!("unknown configuration key '{key}'"))),
    }
    Ok(())
}

fn resolve(args: &ModelArgs) -> Result<RunConfig> {
    let variant = match &args.variant {
        Some(v) => v.parse()?,
        None => Variant::Light,
    };
    let mut config = RunConfig {
        model: if args.tiny {
            ModelConfig::tiny(variant)
        } else {
            ModelConfig::new(variant)
        },
        train: TrainConfig::default(),
        speakers_set: false,
    };
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        parse_config_text(&text, &mut config)?;
    }
    if let Some(v) = &args.variant {
        config.model.variant = v.parse()?;
    }
    if let Some(a) = args.alpha {
        config.model.alpha = a;
    }
    if let Some(n) = args.speakers {
        config.model.num_speakers = n;
        config.speakers_set = true;
    }
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    config.model.validate()?;
    Ok(config)
}

/// True for errors caused by bad input rather than failures while working.
pub fn is_validation_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_)
            | Error::InvalidArgument(_)
            | Error::MissingUtterance(_)
            | Error::Trials { .. }
            | Error::Manifest { .. }
            | Error::SpeakerMismatch { .. }
            | Error::MinimumLength { .. }
            | Error::DegenerateScores { .. }
    )
}

/// Parses `argv` (including the program name), runs the command, and
/// returns the process exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(rendered.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(rendered.as_bytes());
                    1
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if is_validation_error(&e) {
                1
            } else {
                2
            }
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Extract(a) => extract(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Sweep(a) => sweep(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Params(a) => params(a, out),
    }
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let spec = SynthSpec {
        num_speakers: a.speakers,
        train_utts: a.train_utts,
        test_utts: a.test_utts,
        length: a.length,
        seed: a.seed,
        ..SynthSpec::default()
    };
    let corpus = generate_synthetic_corpus(&spec, &a.out)?;
    writeln!(out, "train\t{}", corpus.train_manifest.display())?;
    if let (Some(test), Some(trials)) = (&corpus.test_manifest, &corpus.trials) {
        writeln!(out, "test\t{}", test.display())?;
        writeln!(out, "trials\t{}", trials.display())?;
    }
    Ok(())
}

fn config_text(config: &RunConfig) -> String {
    let mut s = String::new();
    for (k, v) in config.model.to_pairs() {
        let _ = writeln!(s, "{k}={v}");
    }
    let t = &config.train;
    let o = &t.optimizer;
    let crop = match t.crop {
        CropMode::Random => "random",
        CropMode::Center => "center",
    };
    for (k, v) in [
        ("epochs", t.epochs.to_string()),
        ("batch_size", t.batch_size.to_string()),
        ("seed", t.seed.to_string()),
        ("checkpoint_every", t.checkpoint_every.to_string()),
        ("crop", crop.to_string()),
        ("lr", format!("{:?}", o.lr)),
        ("beta1", format!("{:?}", o.beta1)),
        ("beta2", format!("{:?}", o.beta2)),
        ("eps", format!("{:?}", o.eps)),
        ("weight_decay", format!("{:?}", o.weight_decay)),
    ] {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut config = resolve(&a.model)?;
    if let Some(e) = a.epochs {
        config.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        config.train.batch_size = b;
    }
    let manifest = CorpusManifest::read(&a.manifest, Split::Train)?;
    if !config.speakers_set {
        config.model.num_speakers = manifest.speakers().len();
        config.model.validate()?;
    }
    let data = TrainingData::from_manifest(&manifest)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.txt"), config_text(&config))?;

    let mut model = FdnModel::new(config.model.clone(), config.train.seed)?;
    let mut log_lines = Vec::new();
    let log = train(&mut model, &data, &config.train, Some(&a.out), |e| {
        log_lines.push(format!(
            "{}\t{}\t{}",
            e.epoch,
            sig6(e.mean_loss),
            sig6(e.accuracy)
        ));
    })?;
    for line in &log_lines {
        writeln!(out, "{line}")?;
    }
    fs::write(a.out.join("train.log"), log.to_text())?;
    let final_path = a.out.join("model.ckpt");
    checkpoint::save(&model, &final_path)?;
    writeln!(out, "checkpoint\t{}", final_path.display())?;
    Ok(())
}

/// `id<TAB>dim` followed by the values on one whitespace-separated line.
pub fn embedding_file_text(id: &str, embedding: &[f64]) -> String {
    let values: Vec<String> = embedding.iter().map(|&v| sig6(v)).collect();
    format!("{id}\t{}\n{}\n", embedding.len(), values.join(" "))
}

fn extract(a: ExtractArgs, out: &mut dyn Write) -> Result<()> {
    let model = checkpoint::load(&a.checkpoint)?;
    let manifest = CorpusManifest::read(&a.manifest, Split::Test)?;
    fs::create_dir_all(&a.out)?;
    for u in &manifest.utterances {
        let emb = extract_embedding(&model, &read_wav(&u.path)?)?;
        let path = a.out.join(format!("{}.emb", u.id));
        fs::write(&path, embedding_file_text(&u.id, &emb))?;
        writeln!(out, "{}\t{}", u.id, path.display())?;
    }
    Ok(())
}

fn write_report(path: Option<&Path>, text: &str, out: &mut dyn Write) -> Result<()> {
    out.write_all(text.as_bytes())?;
    if let Some(p) = path {
        fs::write(p, text)?;
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let manifest = CorpusManifest::read(&a.manifest, Split::Test)?;
    let trials = read_trials(&a.trials, &manifest)?;
    let model = checkpoint::load(&a.checkpoint)?;
    let report = evaluate_protocol(&model, &manifest, &trials)?;
    write_report(a.out.as_deref(), &report.to_text(), out)
}

/// Parses a comma-separated factor list; an empty string gives no factors.
pub fn parse_factors(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|f| !f.is_empty())
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("invalid speed factor '{f}'")))
        })
        .collect()
}

fn sweep(a: SweepArgs, out: &mut dyn Write) -> Result<()> {
    let factors = parse_factors(&a.factors)?;
    let manifest = CorpusManifest::read(&a.manifest, Split::Test)?;
    let trials = read_trials(&a.trials, &manifest)?;
    let model = checkpoint::load(&a.checkpoint)?;
    let rows = perturbation_sweep(&model, &manifest, &trials, &factors)?;
    write_report(a.out.as_deref(), &sweep_table(&rows), out)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let cases = gradient_suite(a.seed)?;
    writeln!(out, "case\tmax_rel_err\tcoordinates\tone_sided\tstraddled")?;
    for c in &cases {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            c.name,
            sig6(c.max_rel_err),
            c.coordinates,
            c.one_sided,
            c.straddled
        )?;
    }
    let worst = max_error(&cases);
    writeln!(out, "max_rel_err\t{}", sig6(worst))?;
    if worst.is_nan() || worst >= GRADCHECK_TOLERANCE {
        return Err(Error::GradientCheck {
            max: worst,
            tolerance: GRADCHECK_TOLERANCE,
        });
    }
    Ok(())
}

fn params(a: ModelArgs, out: &mut dyn Write) -> Result<()> {
    let config = resolve(&a)?.model;
    let count = count_parameters(&config);
    writeln!(out, "parameters\t{count}")?;
    writeln!(out, "millions\t{}", sig6(count as f64 / 1e6))?;
    let comparable = config.variant == Variant::Light
        && config.num_speakers == 6112
        && config.channel_divisor == 1;
    if let Some(&(_, published)) = PUBLISHED_PARAMS
        .iter()
        .find(|(alpha, _)| *alpha == config.alpha)
    {
        if comparable {
            let rel = (count as f64 / 1e6 - published) / published;
            writeln!(out, "published_millions\t{}", sig6(published))?;
            writeln!(out, "relative_difference\t{}", sig6(rel))?;
        }
    }
    Ok(())
}
