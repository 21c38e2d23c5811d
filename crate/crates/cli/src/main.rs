//! `sc-denoise`: data preparation, training, the self-collaboration loop,
//! evaluation, ablations and plotting.

mod plot;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use sc_denoise::branches::Variant;
use sc_denoise::config::{load_config, parse_config, RunConfig, EFFECTIVE_CONFIG};
use sc_denoise::data::validation_pairs;
use sc_denoise::train::{
    ablation_table, dry_run, evaluate, load_denoiser, prepare_run_dir, read_jsonl, run_ablation, run_baseline, run_sc,
    AblationRecord, IterationSummary, ScOptions, ScOutcome, ValidationSet, HISTORY_LOG,
};

/// Relative output directories are resolved under this directory when it is set.
const OUTPUT_ROOT_ENV: &str = "SC_DENOISE_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "sc-denoise", version, about = "Unpaired real-noise denoising with self-collaboration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the corpus and write its manifest and images.
    PrepareData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the baseline (first iteration only).
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Validate, build the networks and run one step without writing anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run the full self-collaboration loop.
    RunSc {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue the run stored in this directory.
        #[arg(long, value_name = "DIR")]
        resume: Option<PathBuf>,
        /// Stop after writing this many checkpoints.
        #[arg(long, hide = true)]
        interrupt_after: Option<usize>,
    },
    /// Score a checkpointed denoiser on the validation pairs of a config.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one ablation variant (or all of them) and update the comparison table.
    Ablate {
        #[arg(long, value_enum)]
        variant: VariantArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot the per-iteration history of a run.
    Plot {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    #[value(name = "V1")]
    V1,
    #[value(name = "V2")]
    V2,
    #[value(name = "V3")]
    V3,
    #[value(name = "V4")]
    V4,
    #[value(name = "V5")]
    V5,
    All,
}

impl VariantArg {
    fn variants(self) -> Vec<Variant> {
        match self {
            VariantArg::V1 => vec![Variant::V1],
            VariantArg::V2 => vec![Variant::V2],
            VariantArg::V3 => vec![Variant::V3],
            VariantArg::V4 => vec![Variant::V4],
            VariantArg::V5 => vec![Variant::V5],
            VariantArg::All => Variant::ALL.to_vec(),
        }
    }
}

fn config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(parse_config("")?),
    }
}

fn output_dir(out: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir,
    }
}

fn report(outcome: &ScOutcome, dir: &Path) {
    for h in &outcome.history {
        let delta = h.delta_db.map_or_else(|| "-".to_string(), |d| format!("{d:+.3}"));
        println!("iteration {}: {:?} psnr {:.3} dB ssim {:.4} delta {delta}", h.k, h.status, h.psnr_val, h.ssim_val);
    }
    println!("stopped: {:?}", outcome.stop);
    if let Some(b) = outcome.best_iteration {
        println!("best iteration: {b}");
    }
    println!("run directory: {}", dir.display());
}

fn prepare_data(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let data = prepare_run_dir(cfg, dir)?;
    let images = dir.join("data");
    for (sub, entries) in [("clean", &data.corpus.clean), ("noisy", &data.corpus.noisy)] {
        let d = images.join(sub);
        std::fs::create_dir_all(&d)?;
        for e in entries {
            e.image.save_png(&d.join(format!("{:04}.png", e.id)))?;
        }
    }
    let d = images.join("validation");
    std::fs::create_dir_all(&d)?;
    for p in validation_pairs(&cfg.corpus, &cfg.noise, cfg.seed)? {
        p.noisy.save_png(&d.join(format!("{:04}_noisy.png", p.id)))?;
        p.clean.save_png(&d.join(format!("{:04}_clean.png", p.id)))?;
    }
    println!(
        "{} clean, {} noisy, {} validation images in {}",
        data.corpus.clean.len(),
        data.corpus.noisy.len(),
        data.validation.len(),
        images.display()
    );
    Ok(())
}

fn ablate(cfg: &RunConfig, variants: &[Variant], dir: &Path) -> Result<()> {
    let records_dir = dir.join("ablation");
    std::fs::create_dir_all(&records_dir)?;
    for v in variants {
        let record = run_ablation(cfg, *v)?;
        println!("{v}: psnr {:.3} dB ssim {:.4} (noisy input {:.3} dB)", record.psnr_val, record.ssim_val, record.noisy_psnr);
        std::fs::write(records_dir.join(format!("{v}.json")), serde_json::to_string_pretty(&record)?)?;
    }
    let mut records: Vec<AblationRecord> = Vec::new();
    for v in Variant::ALL {
        let path = records_dir.join(format!("{v}.json"));
        if path.is_file() {
            records.push(serde_json::from_str(&std::fs::read_to_string(&path)?)?);
        }
    }
    let table = ablation_table(&records);
    std::fs::write(dir.join("ablation.md"), &table)?;
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PrepareData { config: c, out } => {
            let cfg = config(c.as_deref())?;
            prepare_data(&cfg, &output_dir(out, &cfg))
        }
        Command::Train { config: c, dry_run: true, .. } => {
            let losses = dry_run(&config(c.as_deref())?)?;
            println!(
                "dry run ok: d {:.5} g_adv {:.5} g_bgm {:.5} dn {:.5}",
                losses.d, losses.g_adv, losses.g_bgm, losses.dn
            );
            Ok(())
        }
        Command::Train { config: c, out, dry_run: false } => {
            let cfg = config(c.as_deref())?;
            let dir = output_dir(out, &cfg);
            let outcome = run_baseline(&cfg, &dir, &ScOptions::default())?;
            report(&outcome, &dir);
            Ok(())
        }
        Command::RunSc { config: c, out, resume, interrupt_after } => {
            let resuming = resume.is_some();
            let (cfg, dir) = match resume {
                Some(dir) => {
                    if out.is_some() {
                        bail!("--out cannot be combined with --resume; the run directory is the resume target");
                    }
                    let cfg = match c {
                        Some(p) => config(Some(&p))?,
                        None => config(Some(&dir.join(EFFECTIVE_CONFIG)))?,
                    };
                    (cfg, dir)
                }
                None => {
                    let cfg = config(c.as_deref())?;
                    let dir = output_dir(out, &cfg);
                    (cfg, dir)
                }
            };
            let opts = ScOptions { resume: resuming, interrupt_after_checkpoints: interrupt_after };
            let outcome = run_sc(&cfg, &dir, &opts)?;
            report(&outcome, &dir);
            Ok(())
        }
        Command::Evaluate { checkpoint, config: c } => {
            let cfg = config(c.as_deref())?;
            let dtype = cfg.train.precision.dtype();
            let dn = load_denoiser(&checkpoint, dtype)
                .with_context(|| format!("loading a denoiser from {}", checkpoint.display()))?;
            let set = ValidationSet::new(&validation_pairs(&cfg.corpus, &cfg.noise, cfg.seed)?, dtype)?;
            let ssim = &cfg.train.weights.ssim;
            let noisy = set.noisy_baseline(ssim)?;
            let eval = evaluate(&dn, &set, ssim)?;
            println!("validation images: {}", set.len());
            println!("noisy input: psnr {:.2} dB ssim {:.4}", noisy.psnr, noisy.ssim);
            println!("denoised:    psnr {:.2} dB ssim {:.4}", eval.psnr, eval.ssim);
            Ok(())
        }
        Command::Ablate { variant, config: c, out } => {
            let cfg = config(c.as_deref())?;
            ablate(&cfg, &variant.variants(), &output_dir(out, &cfg))
        }
        Command::Plot { run, out } => {
            let history: Vec<IterationSummary> = read_jsonl(&run.join(HISTORY_LOG))?;
            let csv = plot::plot_history(&history, &out)?;
            println!("wrote {} and {}", out.display(), csv.display());
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
