use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use attn_transducer::checkpoint::Checkpoint;
use attn_transducer::config::RunConfig;
use attn_transducer::features::{load_manifest, read_vocab, write_dataset, write_vocab, LoadedUtterance};
use attn_transducer::report::{error_breakdown_report, format_breakdown, stream_benchmark, transcribe_all};
use attn_transducer::trainer::train;
use attn_transducer_core::data::generate_synthetic_dataset;
use attn_transducer_core::decode::SearchConfig;
use attn_transducer_core::metrics::{edit_counts, EditCounts};
use attn_transducer_core::model::{Model, Vocabulary};
use attn_transducer_core::stream::StreamConfig;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "attn-transducer", version, about = "Attention-based transducer: training, decoding and streaming benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary file (one unit per line, line 0 is blank).
    #[arg(long)]
    vocab: PathBuf,
    /// Quantize weights to 8 bits before inference.
    #[arg(long)]
    quantized: bool,
    /// Override the self-attention context.
    #[arg(long)]
    tau: Option<usize>,
    /// Override the joint chunk width.
    #[arg(long)]
    chunk_width: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the synthetic task and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output checkpoint path.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output vocabulary path.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        tau: Option<usize>,
        #[arg(long)]
        chunk_width: Option<usize>,
        /// Overrides the training seed (model initialization and batching).
        #[arg(long)]
        seed: Option<u64>,
        /// Reduce per-utterance gradients in a fixed order.
        #[arg(long)]
        deterministic: bool,
    },
    /// Decode every utterance of a manifest.
    Decode {
        #[command(flatten)]
        model: ModelArgs,
        /// Utterance manifest.
        manifest: PathBuf,
        /// Beam size; greedy decoding when omitted.
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Stream a manifest in 100 ms chunks and print the RTF / latency table.
    StreamBench {
        #[command(flatten)]
        model: ModelArgs,
        manifest: PathBuf,
        #[arg(long, default_value_t = 4)]
        beam: usize,
        /// Write the table here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write an 8-bit copy of a checkpoint.
    Quantize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run the built-in oracle checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare insertion / deletion / substitution totals of checkpoints.
    ReportErrors {
        /// Checkpoints to compare (repeatable).
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        vocab: PathBuf,
        manifest: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        quantized: bool,
    },
    /// Write a synthetic test set (features + manifest + vocabulary).
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the utterance seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the number of utterances.
        #[arg(long)]
        utterances: Option<usize>,
        /// Output directory.
        dir: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn load_model(a: &ModelArgs) -> Result<(Model, Vocabulary)> {
    let mut model = load_checkpoint(&a.checkpoint, a.quantized)?;
    if let Some(t) = a.tau {
        model = model.with_context(t)?;
    }
    if let Some(w) = a.chunk_width {
        model = model.with_chunk_width(w)?;
    }
    let vocab = read_vocab(&a.vocab)?;
    if vocab.units() != model.config.vocab_size {
        bail!("vocabulary has {} units but the model has {}", vocab.units(), model.config.vocab_size);
    }
    Ok((model, vocab))
}

fn load_checkpoint(path: &Path, quantized: bool) -> Result<Model> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let ck = if quantized && !ck.is_quantized() { Checkpoint::quantized(&ck.into_model()?)? } else { ck };
    Ok(ck.into_model()?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, checkpoint, vocab, tau, chunk_width, seed, deterministic } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(t) = tau {
                cfg.model.context = t;
            }
            if let Some(w) = chunk_width {
                cfg.model.chunk_width = w;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.train.deterministic |= deterministic;
            cfg.validate()?;
            let data = generate_synthetic_dataset(&cfg.task)?;
            let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
            let every = cfg.train.checkpoint_every;
            eprintln!("training on {} utterances, {} parameters", data.len(), model.params().num_elements());
            let outcome = train(&mut model, &data, cfg.train.clone(), |log, m| {
                println!("step {}\tloss {:.6}\tgrad_norm {:.4}\tutterances {}\tframes {}", log.step, log.loss, log.grad_norm, log.utterances, log.frames);
                if every > 0 && log.step % every == 0 {
                    let path = checkpoint.with_extension(format!("step{}.ckpt", log.step));
                    Checkpoint::from_model(m).save(&path)?;
                }
                Ok(())
            })?;
            Checkpoint::from_model(&model).save(&checkpoint)?;
            if let Some(v) = vocab {
                write_vocab(&v, &Vocabulary::synthetic(cfg.model.vocab_size))?;
            }
            eprintln!("{} steps in {:.1}s, wrote {}", outcome.steps.len(), outcome.seconds, checkpoint.display());
        }
        Command::Decode { model, manifest, beam } => {
            let (m, vocab) = load_model(&model)?;
            let utts = load_manifest(&manifest, m.config.feature_dim, &vocab)?;
            let inputs: Vec<_> = utts.iter().map(|u| &u.features[..]).collect();
            if beam == Some(0) {
                bail!("beam size must be at least 1");
            }
            let hyps = transcribe_all(&m, &inputs, beam)?;
            let mut total = EditCounts::default();
            let mut scored = false;
            for (u, h) in utts.iter().zip(&hyps) {
                println!("{}\t{}", u.id, vocab.decode(h)?.join(" "));
                if let Some(r) = &u.reference {
                    total += edit_counts(h, r);
                    scored = true;
                }
            }
            if scored {
                eprintln!(
                    "TER {:.2}% (ins {}, del {}, sub {}, ref {})",
                    100.0 * total.rate(),
                    total.insertions,
                    total.deletions,
                    total.substitutions,
                    total.reference
                );
            }
        }
        Command::StreamBench { model, manifest, beam, output } => {
            let (m, vocab) = load_model(&model)?;
            let utts: Vec<_> = load_manifest(&manifest, m.config.feature_dim, &vocab)?
                .into_iter()
                .map(|LoadedUtterance { id, features, .. }| (id, features))
                .collect();
            let cfg = StreamConfig { search: SearchConfig::new(beam), ..Default::default() };
            let report = stream_benchmark(&m, &utts, cfg, &vocab)?;
            match output {
                Some(p) => std::fs::write(&p, report.to_tsv()).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{}", report.to_tsv()),
            }
            if let (Some(rtf), Some(lat)) = (report.mean_rtf(), report.mean_latency_ms()) {
                eprintln!("mean RTF {rtf:.4}, mean latency {lat:.1} ms (lookahead {} ms)", report.lookahead_ms);
            }
        }
        Command::Quantize { checkpoint, output } => {
            let model = load_checkpoint(&checkpoint, false)?;
            let q = Checkpoint::quantized(&model)?;
            q.save(&output)?;
            let before = std::fs::metadata(&checkpoint)?.len();
            let after = std::fs::metadata(&output)?.len();
            eprintln!("{before} -> {after} bytes ({:.2}x smaller)", before as f64 / after as f64);
        }
        Command::Selftest { seed } => {
            let results = attn_transducer::selftest::run_all(seed);
            let mut failed = 0;
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                bail!("{failed} of {} checks failed", results.len());
            }
        }
        Command::ReportErrors { checkpoint, vocab, manifest, beam, quantized } => {
            let vocab = read_vocab(&vocab)?;
            let models = checkpoint
                .iter()
                .map(|p| Ok((p.display().to_string(), load_checkpoint(p, quantized)?)))
                .collect::<Result<Vec<_>>>()?;
            let dim = models[0].1.config.feature_dim;
            if models.iter().any(|(_, m)| m.config.feature_dim != dim || m.config.vocab_size != vocab.units()) {
                bail!("checkpoints disagree on feature or vocabulary size");
            }
            let utts = load_manifest(&manifest, dim, &vocab)?;
            let pairs = utts
                .iter()
                .map(|u| Ok((&u.features[..], u.reference.as_deref().context("manifest entry has no reference")?)))
                .collect::<Result<Vec<_>>>()?;
            let named: Vec<_> = models.iter().map(|(n, m)| (n.clone(), m)).collect();
            print!("{}", format_breakdown(&error_breakdown_report(&named, &pairs, beam)?));
        }
        Command::GenData { config, seed, utterances, dir } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.task.seed = s;
            }
            if let Some(n) = utterances {
                cfg.task.utterances = n;
            }
            let data = generate_synthetic_dataset(&cfg.task)?;
            let vocab = Vocabulary::synthetic(cfg.task.vocab_size);
            let manifest = write_dataset(&dir, &data, &vocab)?;
            write_vocab(&dir.join("vocab.txt"), &vocab)?;
            eprintln!("wrote {} utterances to {}", data.len(), manifest.display());
        }
    }
    Ok(())
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
