use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tristream_core::dataio::pipeline::{self, MaskSource};
use tristream_core::dataio::{generate_synthetic, load_checkpoint, load_manifest, save_checkpoint, RunConfig, Split};
use tristream_core::trainer::Stage;
use tristream_core::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(name = "tristream", version, about = "Three-stream fusion classifier pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a balanced synthetic dataset with a manifest.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pseudo-label the unlabeled training rows with the self-training segmenter.
    SegmentPseudo {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Images pseudo-labelled per round.
        #[arg(long)]
        k: Option<usize>,
        /// Segmenter epochs per round.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to `pseudo/` next to the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the classifier (whole protocol or one stage).
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// all, I, II-heatmap, II-infected, III or joint.
        #[arg(long, default_value = "all")]
        stage: String,
        /// Segmenter checkpoint; without it the segmenter is trained first.
        #[arg(long)]
        segmenter: Option<PathBuf>,
        /// Checkpoint to continue from.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the metrics report of one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Report path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Heat map, binary region, crop and CAM overlay for one image.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 0.75)]
        tau: f32,
        #[arg(long)]
        out: PathBuf,
    },
    /// 3-D t-SNE of the fusion features of one split, as CSV.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        perplexity: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn parse_stages(s: &str) -> Result<Vec<Stage>> {
    if s.eq_ignore_ascii_case("all") {
        Ok(Stage::PROTOCOL.to_vec())
    } else {
        Ok(vec![s.parse()?])
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { n, size, seed, out } => {
            let m = generate_synthetic(n, size, seed, &out)?;
            eprintln!("wrote {} images to {}", m.rows.len(), out.display());
        }
        Command::SegmentPseudo {
            manifest,
            config,
            k,
            epochs,
            seed,
            out,
        } => {
            let mut cfg = load_config(config.as_deref(), seed)?;
            if let Some(k) = k {
                cfg.semisup.k = k;
            }
            if let Some(e) = epochs {
                cfg.semisup.epochs_per_round = e;
            }
            let m = load_manifest(&manifest)?;
            let out = out.unwrap_or_else(|| m.dir.join("pseudo"));
            let outcome = pipeline::pseudo_label(&m, &cfg.semisup, cfg.model.backbone.input_size)?;
            pipeline::write_pseudo_outputs(&m, &outcome, cfg.semisup.seed, &out)?;
            eprintln!(
                "{} rounds, {} masks; wrote {}",
                outcome.report.rounds.len(),
                outcome.masks.len(),
                out.display()
            );
        }
        Command::Train {
            manifest,
            config,
            stage,
            segmenter,
            init,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let stages = parse_stages(&stage)?;
            let m = load_manifest(&manifest)?;
            let init_ck = init.as_deref().map(load_checkpoint).transpose()?;
            let seg_source = match (segmenter, &init_ck) {
                (Some(p), _) => load_checkpoint(&p)?.segmenter,
                (None, Some(ck)) => ck.segmenter.clone(),
                (None, None) => None,
            };
            let masks = match seg_source {
                Some(s) => MaskSource::Segmenter(s),
                None => MaskSource::Algorithm1,
            };
            let init_model = init_ck.and_then(|ck| ck.model);
            let outcome = pipeline::train(&m, &cfg, &stages, masks, init_model, |s| {
                eprintln!(
                    "stage {}: {} epochs, best epoch {} (val accuracy {:.4}){}",
                    s.stage,
                    s.history.len(),
                    s.best_epoch,
                    s.best_val_accuracy,
                    if s.stopped_early { ", stopped early" } else { "" }
                );
            })?;
            let out = out.unwrap_or(cfg.output_dir);
            save_checkpoint(&outcome.checkpoint(), &out.join("model.ckpt"))?;
            write(&out.join("history.jsonl"), &outcome.history_jsonl())?;
            eprintln!("wrote {}", out.join("model.ckpt").display());
        }
        Command::Eval {
            checkpoint,
            manifest,
            split,
            out,
        } => {
            let ck = pipeline::load_full_checkpoint(&checkpoint)?;
            let m = load_manifest(&manifest)?;
            let split: Split = split.parse()?;
            let report = pipeline::evaluate(&ck, &m, split)?.render();
            match out {
                Some(p) => write(&p, &report)?,
                None => print!("{report}"),
            }
        }
        Command::Heatmap {
            checkpoint,
            image,
            tau,
            out,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let files = pipeline::heatmap_artifacts(&ck, &image, tau, &out)?;
            if files.fallback {
                eprintln!("no region above tau; the crop is the whole image");
            }
            eprintln!("wrote artifacts to {}", out.display());
        }
        Command::Embed {
            checkpoint,
            manifest,
            out,
            split,
            config,
            perplexity,
            iterations,
        } => {
            let mut tsne = load_config(config.as_deref(), None)?.tsne;
            if let Some(p) = perplexity {
                tsne.perplexity = p;
            }
            if let Some(i) = iterations {
                tsne.iterations = i;
            }
            let ck = pipeline::load_full_checkpoint(&checkpoint)?;
            let m = load_manifest(&manifest)?;
            let (rows, e) = pipeline::embed(&ck, &m, split.parse()?, &tsne)?;
            write(&out, &pipeline::embedding_csv(&m, &rows, &e))?;
            eprintln!("KL {:.4} -> {:.4}; wrote {}", e.initial_kl, e.kl, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Validation => 2,
                ErrorClass::Io => 3,
                ErrorClass::Numerical => 4,
            })
        }
    }
}
