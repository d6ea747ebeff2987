use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lifespan::data::write_manifest;
use lifespan::evaluation::{
    emit_report, EmbeddingBackend, ExternalEmbedding, ExternalPerceptual, PerceptualBackend,
    EXTERNAL_THRESHOLD,
};
use lifespan::image_io::{load_image, save_image};
use lifespan::synthesis::write_outputs;
use lifespan::toy::toy_face;
use lifespan::{
    evaluate, load_checkpoint, load_manifest, FallbackEmbedding, FallbackPerceptual, Gender,
    ManifestSource, Mode, SynthesisRequest, Synthesizer, TrainConfig, Trainer, NUM_GROUPS,
};

#[derive(Parser)]
#[command(
    name = "lifespan",
    version,
    about = "Train, run and evaluate age-conditioned face synthesis models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a labelled image manifest
    Train(TrainArgs),
    /// Render a reference image at one or more target ages
    Synthesize(SynthArgs),
    /// Identity preservation and reconfiguration metrics over a manifest
    Evaluate(EvalArgs),
    /// Write a small procedural face dataset with a manifest
    ToyData(ToyArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Tab-separated `path<TAB>group<TAB>gender` rows
    #[arg(long)]
    manifest: PathBuf,
    /// Keep only rows of this gender
    #[arg(long)]
    gender: Option<Gender>,
    /// Directory for `checkpoint.lfs` and the resolved config
    #[arg(long)]
    out: PathBuf,
    /// TOML file with training settings; flags take precedence
    #[arg(long)]
    config: PathBuf,
    /// Continue from this checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Print losses every this many steps
    #[arg(long, default_value_t = 10)]
    log_every: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// single, lifespan, interpolate, shape-only, texture-swap or entangled
    #[arg(long)]
    mode: Mode,
    /// Target group, or the start group for interpolation
    #[arg(long)]
    group: Option<usize>,
    /// Number of interpolation frames
    #[arg(long)]
    steps: Option<usize>,
    /// Texture donor for texture-swap
    #[arg(long)]
    donor: Option<PathBuf>,
    /// Use the live weights instead of the moving average
    #[arg(long)]
    no_ema: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Fallback,
    External,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    gender: Option<Gender>,
    #[arg(long, value_enum, default_value = "fallback")]
    backend: Backend,
    /// Embedding program: PNG paths on stdin, one vector per line on stdout
    #[arg(long)]
    embed_cmd: Option<String>,
    /// Distance program: tab-separated PNG path pairs on stdin, one number per line on stdout
    #[arg(long)]
    dist_cmd: Option<String>,
    /// Verification threshold on embedding cosine similarity
    #[arg(long)]
    threshold: Option<f64>,
    /// JSON-lines report path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long)]
    out: PathBuf,
    /// Groups to include
    #[arg(long, value_delimiter = ',', default_values_t = [0usize, 2, 4, 5])]
    groups: Vec<usize>,
    /// Identities per group
    #[arg(long, default_value_t = 2)]
    per_group: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Synthesize(a) => synthesize(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::ToyData(a) => toy_data(a),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg =
        TrainConfig::load(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    if let Some(s) = a.image_size {
        cfg.image_size = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let manifest = load_manifest(&a.manifest, a.gender)?;
    let counts = manifest.group_counts();
    eprintln!("{} images, per group {counts:?}", manifest.len());

    let mut trainer = match &a.resume {
        Some(path) => {
            let mut bundle = load_checkpoint::<f32>(path)
                .with_context(|| format!("loading {}", path.display()))?;
            if bundle.config.model() != cfg.model() {
                bail!(
                    "model settings in {} differ from the checkpoint",
                    a.config.display()
                );
            }
            bundle.config = cfg.clone();
            let t = Trainer::from_checkpoint(bundle)?;
            eprintln!("resuming at epoch {}, step {}", t.epoch, t.step);
            t
        }
        None => Trainer::<f32>::new(cfg.clone())?,
    };

    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("config.toml"), cfg.to_toml_string())?;
    let source = ManifestSource {
        manifest,
        image_size: cfg.image_size,
    };
    let start = Instant::now();
    let every = a.log_every.max(1);
    trainer.fit(&source, &a.out, |t, r| {
        if t.step % every == 0 {
            let l = &r.losses;
            eprintln!(
                "epoch {:>4} step {:>7} {:>8.1}s lr {:.1e} | total {:.4} adv {:.4} rec {:.4} cyc {:.4} id {:.4} shape {:.4} | d {:.4} r1 {:.4}",
                t.epoch,
                t.step,
                start.elapsed().as_secs_f64(),
                r.lr,
                l.total,
                l.adv,
                l.rec,
                l.cyc,
                l.id,
                l.shape,
                r.disc,
                r.r1
            );
        }
    })?;
    println!("{}", a.out.join("checkpoint.lfs").display());
    Ok(())
}

fn synthesize(a: SynthArgs) -> Result<()> {
    let bundle =
        load_checkpoint::<f32>(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let size = bundle.config.image_size;
    let synth = Synthesizer::from_checkpoint(&bundle)?;
    let mut req = SynthesisRequest::new(load_image(&a.image, size)?, a.mode);
    if let Some(g) = a.group {
        req = req.group(g);
    }
    if let Some(k) = a.steps {
        req = req.steps(k);
    }
    if let Some(d) = &a.donor {
        req = req.donor(load_image(d, size)?);
    }
    if a.no_ema {
        req = req.live();
    }
    let outputs = synth.run(&req)?;
    let stem = a
        .image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("out")
        .to_string();
    for path in write_outputs(&outputs, &stem, &a.out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn evaluate_cmd(a: EvalArgs) -> Result<()> {
    let bundle =
        load_checkpoint::<f32>(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let source = ManifestSource {
        manifest: load_manifest(&a.manifest, a.gender)?,
        image_size: bundle.config.image_size,
    };
    let synth = Synthesizer::from_checkpoint(&bundle)?;
    let (embedding, perceptual): (
        Box<dyn EmbeddingBackend<f32>>,
        Box<dyn PerceptualBackend<f32>>,
    ) = match a.backend {
        Backend::Fallback => {
            if a.embed_cmd.is_some() || a.dist_cmd.is_some() {
                bail!("--embed-cmd and --dist-cmd need --backend external");
            }
            let mut e = FallbackEmbedding::default();
            if let Some(t) = a.threshold {
                e.threshold = t;
            }
            (Box::new(e), Box::new(FallbackPerceptual))
        }
        Backend::External => {
            let (Some(embed), Some(dist)) = (a.embed_cmd, a.dist_cmd) else {
                bail!("--backend external needs both --embed-cmd and --dist-cmd");
            };
            (
                Box::new(ExternalEmbedding {
                    command: embed,
                    threshold: a.threshold.unwrap_or(EXTERNAL_THRESHOLD),
                }),
                Box::new(ExternalPerceptual { command: dist }),
            )
        }
    };
    let report = evaluate(&synth, &source, embedding.as_ref(), perceptual.as_ref())?;
    emit_report(&report, &a.out)?;
    if let Some(agg) = &report.aggregate {
        println!(
            "images {}  identity rate {:.2}%  reconfiguration {:.4} +/- {:.4}",
            agg.images,
            agg.id_rate * 100.0,
            agg.reconfig_mean,
            agg.reconfig_std
        );
    }
    Ok(())
}

fn toy_data(a: ToyArgs) -> Result<()> {
    if a.groups.is_empty() || a.groups.iter().any(|&g| g >= NUM_GROUPS) {
        bail!("groups must be non-empty and below {NUM_GROUPS}");
    }
    std::fs::create_dir_all(&a.out)?;
    let mut rows = Vec::new();
    for (gi, &group) in a.groups.iter().enumerate() {
        for k in 0..a.per_group {
            let identity = (gi * a.per_group + k) as u64;
            let img = toy_face::<f32>(identity, group, a.size)?;
            let name = format!("face{identity:03}_g{group}.png");
            save_image(&img, &a.out.join(&name))?;
            let gender = if identity.is_multiple_of(2) {
                Gender::Female
            } else {
                Gender::Male
            };
            rows.push((name, group, gender));
        }
    }
    let manifest = write_manifest(&a.out, &rows)?;
    println!("{}", manifest.display());
    Ok(())
}
