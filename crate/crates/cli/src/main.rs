//! `silh`: one binary for the whole silhouette pipeline.

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use silhouette_core::{
    extract_silhouette, load_wav, mel_spectrogram, parse_silhouette, save_wav, serialize_mel,
    serialize_silhouette, silhouette_mse, QuantizationKind, QuantizationScheme, SilhouetteTrack,
    DEFAULT_HOP, DEFAULT_WINDOW,
};
use silhouette_nn::{synthesizer_from_checkpoint, Checkpoint};
use silhouette_service::{Registry, DEFAULT_PORT};
use silhouette_train::config::{EvalConfig, TrainConfig};
use silhouette_train::overlay::render_overlay;
use silhouette_train::{evaluate_from_config, train_from_config, Control, StepRecord, TrainState};

#[derive(Parser)]
#[command(name = "silh", version, about = "Silhouette-conditioned waveform synthesis")]
struct Cli {
    /// Seed for every stochastic step (overrides config files).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract the min/max silhouette of a WAV file.
    Extract {
        wav: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
        #[arg(long, default_value_t = DEFAULT_HOP)]
        hop: usize,
        #[arg(short)]
        o: PathBuf,
    },
    /// Quantize a silhouette to bin centers.
    Quantize {
        silh: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        kind: QuantizationKind,
        #[arg(long)]
        bins: u32,
        #[arg(short)]
        o: PathBuf,
    },
    /// Print the silhouette MSE between two unquantized silhouettes.
    Mse { a: PathBuf, b: PathBuf },
    /// Dump the log-mel spectrogram of a WAV file as JSON.
    Mel {
        wav: PathBuf,
        #[arg(short)]
        o: PathBuf,
    },
    /// Synthesize a waveform from a silhouette.
    Synth {
        ckpt: PathBuf,
        silh: PathBuf,
        /// Quantization applied before synthesis; defaults to the checkpoint's.
        #[arg(long)]
        quantization: Option<QuantizationScheme>,
        #[arg(short)]
        o: PathBuf,
    },
    /// Pretrain (or resume) the run described by a config file.
    Train {
        config: PathBuf,
        /// Print a progress line every this many steps.
        #[arg(long, default_value_t = 100)]
        log_every: u64,
    },
    /// Fine-tune from a pretrained checkpoint.
    Finetune {
        config: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long, default_value_t = 100)]
        log_every: u64,
    },
    /// Run an evaluation config and print the report table.
    Eval { config: PathBuf },
    /// Render an input/achieved silhouette overlay as PNG.
    PlotOverlay {
        input: PathBuf,
        output: PathBuf,
        #[arg(short)]
        o: PathBuf,
    },
    /// Serve the HTTP API with `ckpt` loaded.
    Serve {
        ckpt: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Directory listed by the model inventory (default: the checkpoint's).
        #[arg(long)]
        models_dir: Option<PathBuf>,
    },
    /// Write a parameter-free replay checkpoint for pipeline checks.
    DebugCheckpoint {
        #[arg(short)]
        o: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<QuantizationKind, String> {
    s.parse().map_err(|e: silhouette_core::Error| e.to_string())
}

fn read_silhouette(path: &Path) -> Result<SilhouetteTrack> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_silhouette(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn progress(every: u64) -> impl FnMut(&TrainState, &StepRecord) -> silhouette_train::Result<Control> {
    move |_, r| {
        if every > 0 && r.step % every == 0 {
            eprintln!(
                "step {} loss_g {:.4} loss_d {:.4} mel {:.4} lr {:.3e}",
                r.step, r.loss_g, r.loss_d, r.mel, r.lr
            );
        }
        Ok(Control::Continue)
    }
}

fn train(config: &Path, init: Option<&Path>, seed: Option<u64>, log_every: u64) -> Result<()> {
    let mut cfg = TrainConfig::load(config)?;
    if let Some(s) = seed {
        cfg.plan.rng_seed = s;
    }
    let mut observer = progress(log_every);
    let out = train_from_config(&cfg, init, Some(&mut observer))?;
    if let Some(step) = out.resumed_from {
        eprintln!("resumed from step {step}");
    }
    println!("{}", out.checkpoint.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Extract { wav, window, hop, o } => {
            let w = load_wav(&wav)?;
            write(&o, &serialize_silhouette(&extract_silhouette(&w, window, hop)?))
        }
        Command::Quantize { silh, kind, bins, o } => {
            let scheme = QuantizationScheme { kind, num_bins: bins };
            write(&o, &serialize_silhouette(&read_silhouette(&silh)?.quantize(scheme)?))
        }
        Command::Mse { a, b } => {
            println!("{:?}", silhouette_mse(&read_silhouette(&a)?, &read_silhouette(&b)?)?);
            Ok(())
        }
        Command::Mel { wav, o } => {
            let m = mel_spectrogram(&load_wav(&wav)?, 1024, 256, 80)?;
            write(&o, &serialize_mel(&m))
        }
        Command::Synth { ckpt, silh, quantization, o } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let track = read_silhouette(&silh)?;
            let conditioning = match quantization.or(ckpt.quantization) {
                Some(s) if track.quantization() != Some(s) => track.without_tag().quantize(s)?,
                _ => track,
            };
            let w = synthesizer_from_checkpoint(&ckpt)?.synthesize(&conditioning)?;
            save_wav(&w, &o)?;
            Ok(())
        }
        Command::Train { config, log_every } => train(&config, None, cli.seed, log_every),
        Command::Finetune { config, init, log_every } => train(&config, Some(&init), cli.seed, log_every),
        Command::Eval { config } => {
            let mut cfg = EvalConfig::load(&config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let out = evaluate_from_config(&cfg)?;
            print!("{}", out.report.to_table());
            eprintln!("wrote {} and {}", out.json_path.display(), out.table_path.display());
            Ok(())
        }
        Command::PlotOverlay { input, output, o } => {
            render_overlay(&read_silhouette(&input)?, &read_silhouette(&output)?, &o)?;
            Ok(())
        }
        Command::Serve { ckpt, port, host, models_dir } => {
            let info = Checkpoint::inspect(&ckpt)?;
            let dir = match models_dir {
                Some(d) => d,
                None => ckpt.parent().map(Path::to_path_buf).unwrap_or_else(|| ".".into()),
            };
            let registry = Registry::new(dir).pinned_to(info.fingerprint);
            if let Err(e) = registry.load(&ckpt) {
                bail!("cannot load {}: {e}", ckpt.display());
            }
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| "info".into()),
                )
                .with_writer(std::io::stderr)
                .init();
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(silhouette_service::serve(Arc::new(registry), SocketAddr::new(host, port)))?;
            Ok(())
        }
        Command::DebugCheckpoint { o } => Ok(Checkpoint::replay_debug().save(&o)?),
    }
}

/// One JSON object on stderr, so scripts can parse failures.
fn report_error(kind: &str, message: &str) {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let message = rendered
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ");
            report_error("usage", message);
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error("runtime", &format!("{e:#}"));
            ExitCode::from(1)
        }
    }
}
