mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gensplat_core::harness::{AblationConfig, EfficiencyConfig};
use gensplat_core::HarnessError;

use commands::*;

#[derive(Parser)]
#[command(name = "gensplat", version, about = "Language fields on Gaussian splats with a shared feature autoencoder")]
struct Cli {
    /// Worker threads; defaults to one per core. Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set field.lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a concept dictionary and synthetic worlds.
    SynthGen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        worlds: Option<usize>,
        #[arg(long)]
        objects: Option<usize>,
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        concepts: Option<usize>,
        #[arg(long)]
        intrinsic_dim: Option<usize>,
    },
    /// Sample an embedding corpus around a dictionary's concepts.
    GenCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        dictionary: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        jitter: Option<f64>,
    },
    /// Train and freeze an autoencoder on a corpus.
    TrainAe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Latent width k.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit per-splat latents of a world against targets from a frozen autoencoder.
    TrainField {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Render a scene from a world's cameras.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        views: Option<Vec<usize>>,
    },
    /// Query a trained scene with each planted concept and write maps and masks.
    Query {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Score a trained scene against the world's masks and boxes.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        ae: PathBuf,
        /// Metrics JSON path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Sweep the latent width and report reconstruction quality.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Compare per-scene autoencoders against one shared autoencoder.
    Efficiency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        /// World directory; repeat for each world.
        #[arg(long = "world", required = true)]
        worlds: Vec<PathBuf>,
        /// The shared, already trained autoencoder.
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        repetitions: Option<usize>,
        /// Per-scene AE steps; calibrated against field time when absent.
        #[arg(long)]
        ae_steps: Option<usize>,
        /// Wall-clock of the shared AE; read from its timing sidecar when absent.
        #[arg(long)]
        shared_ae_seconds: Option<f64>,
    },
}

fn load<T>(c: &Common) -> Result<T, HarnessError>
where
    T: serde::Serialize + serde::de::DeserializeOwned + Default,
{
    config::load(c.config.as_deref(), &c.set)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn run(cmd: Command) -> Result<(String, bool), HarnessError> {
    let ok = |s: String| Ok((s, false));
    match cmd {
        Command::SynthGen { common, seed, out, worlds, objects, views, concepts, intrinsic_dim } => {
            let mut cfg: SynthGenConfig = load(&common)?;
            cfg.seed = seed;
            set(&mut cfg.worlds, worlds);
            set(&mut cfg.world.n_objects, objects);
            set(&mut cfg.world.n_views, views);
            set(&mut cfg.dictionary.concepts, concepts);
            set(&mut cfg.dictionary.intrinsic_dim, intrinsic_dim);
            ok(synth_gen(&cfg, &out)?)
        }
        Command::GenCorpus { common, seed, dictionary, out, samples, jitter } => {
            let mut cfg: GenCorpusConfig = load(&common)?;
            cfg.seed = seed;
            set(&mut cfg.samples_per_concept, samples);
            set(&mut cfg.jitter, jitter);
            ok(gen_corpus_cmd(&cfg, &dictionary, &out)?)
        }
        Command::TrainAe { common, seed, corpus, out, k, epochs } => {
            let mut cfg: TrainAeConfig = load(&common)?;
            cfg.train.seed = seed;
            set(&mut cfg.latent_dim, k);
            set(&mut cfg.train.epochs, epochs);
            ok(train_ae(&cfg, &corpus, &out)?)
        }
        Command::TrainField { common, seed, world, ae, out, iterations, lr } => {
            let mut cfg: TrainFieldConfig = load(&common)?;
            cfg.field.seed = seed;
            set(&mut cfg.field.iterations, iterations);
            set(&mut cfg.field.lr, lr);
            ok(train_field(&cfg, &world, &ae, &out)?)
        }
        Command::Render { common, scene, world, out, views } => {
            let mut cfg: RenderConfig = load(&common)?;
            if views.is_some() {
                cfg.views = views;
            }
            ok(render_cmd(&cfg, &scene, &world, &out)?)
        }
        Command::Query { common, scene, world, ae, out, threshold } => {
            let mut cfg: QueryConfig = load(&common)?;
            set(&mut cfg.threshold, threshold);
            ok(query_cmd(&cfg, &scene, &world, &ae, &out)?)
        }
        Command::Eval { common, scene, world, ae, out, threshold } => {
            let mut cfg: QueryConfig = load(&common)?;
            set(&mut cfg.threshold, threshold);
            ok(eval_cmd(&cfg, &scene, &world, &ae, &out)?)
        }
        Command::Ablate { common, seed, corpus, out, ks, epochs } => {
            let mut cfg: AblationConfig = load(&common)?;
            cfg.seed = seed;
            set(&mut cfg.ks, ks);
            set(&mut cfg.train.epochs, epochs);
            ablate(&cfg, &corpus, &out)
        }
        Command::Efficiency { common, seed, worlds, ae, out, iterations, repetitions, ae_steps, shared_ae_seconds } => {
            let mut cfg: EfficiencyConfig = load(&common)?;
            cfg.seed = seed;
            set(&mut cfg.field.iterations, iterations);
            set(&mut cfg.repetitions, repetitions);
            if ae_steps.is_some() {
                cfg.ae_steps = ae_steps;
            }
            ok(efficiency(&cfg, &worlds, &ae, shared_ae_seconds, &out)?)
        }
    }
}

fn init_threads(n: Option<usize>) -> Result<(), HarnessError> {
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(HarnessError::Config("--threads must be ≥ 1".into()));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| HarnessError::Config(format!("thread pool: {e}")))
}

fn report_error(e: &HarnessError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads(cli.threads) {
        return report_error(&e);
    }
    match run(cli.command) {
        Ok((msg, false)) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Ok((msg, true)) => {
            println!("{msg}");
            eprintln!("error: at least one training diverged");
            ExitCode::from(3)
        }
        Err(e) => report_error(&e),
    }
}
