use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use hashlearn::checkpoint;
use hashlearn::data::generate_bimodal;
use hashlearn::experiment::{
    self, gradient_suite, prepare, run_ablation_suite, run_crossmodal, run_margin_sweep, run_pipeline, stage_eval,
    stage_image, stage_semantic, DataSource, ExperimentConfig,
};
use hashlearn::gradcheck::GradCheckConfig;
use hashlearn::semantic::{build_dictionaries, SemanticDictionary};
use hashlearn::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "hashlearn", version, about = "Two-stage supervised hashing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set image.variant=sym`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set output_dir=...`.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        let mut cfg = base.with_overrides(&self.overrides)?;
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset as CSV.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also write a `text_features.csv` view for cross-modal runs.
        #[arg(long)]
        bimodal: bool,
    },
    /// Train the label network and save its checkpoint.
    TrainSemantic {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Build the code and feature dictionaries from a label-network checkpoint.
    BuildDict {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        semantic: PathBuf,
    },
    /// Train the feature network against saved dictionaries.
    TrainImage {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dictionary: PathBuf,
    },
    /// Evaluate a feature-network checkpoint on the configured split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        image: PathBuf,
    },
    /// Full two-stage run with metrics.
    Pipeline {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare the full, sym, mars and cos variants.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// MAP of both networks across constant margins.
    SweepMargin {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Image/text retrieval with one network per modality.
    Crossmodal {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Finite-difference check of every loss on small random networks.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn out(cfg: &ExperimentConfig, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    Ok(cfg.output_dir.join(name))
}

fn load_dictionary(path: &Path) -> Result<SemanticDictionary> {
    SemanticDictionary::load(path)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { cfg, bimodal } => {
            let cfg = cfg.load()?;
            let DataSource::Synthetic(spec) = &cfg.data else {
                return Err(Error::Config("gen-data needs a synthetic data source".into()));
            };
            let dir = &cfg.output_dir;
            if bimodal {
                let data = generate_bimodal(spec, cfg.crossmodal.text_dim)?;
                let (_, image) = &data.modalities()[0];
                let (_, text) = &data.modalities()[1];
                image.save(dir)?;
                let tmp = dir.join("text");
                text.save(&tmp)?;
                std::fs::rename(tmp.join("features.csv"), dir.join("text_features.csv"))?;
                std::fs::remove_dir_all(tmp)?;
            } else {
                experiment::load_dataset(&cfg)?.save(dir)?;
            }
            println!("wrote {}", dir.display());
        }
        Command::TrainSemantic { cfg } => {
            let cfg = cfg.load()?;
            let (data, split) = prepare(&cfg)?;
            let (t, _) = stage_semantic(&cfg, &data, &split)?;
            let path = out(&cfg, "semantic.ckpt")?;
            checkpoint::save(&t.net, &path)?;
            println!("final loss {:.6}; wrote {}", t.history.last().map_or(f64::NAN, |e| e.total), path.display());
        }
        Command::BuildDict { cfg, semantic } => {
            let cfg = cfg.load()?;
            let (data, split) = prepare(&cfg)?;
            let net = checkpoint::load(&semantic)?;
            let dict = build_dictionaries(&net, &data.label_rows(&split.train))?;
            let path = out(&cfg, "dictionary.csv")?;
            dict.save(&path)?;
            println!("{} entries; wrote {}", dict.len(), path.display());
        }
        Command::TrainImage { cfg, dictionary } => {
            let cfg = cfg.load()?;
            let (data, split) = prepare(&cfg)?;
            let dict = load_dictionary(&dictionary)?;
            let t = stage_image(&cfg, &data, &split, &dict)?;
            let path = out(&cfg, "image.ckpt")?;
            checkpoint::save(&t.net, &path)?;
            println!("final loss {:.6}; wrote {}", t.history.last().map_or(f64::NAN, |e| e.total), path.display());
        }
        Command::Eval { cfg, image } => {
            let cfg = cfg.load()?;
            let (data, split) = prepare(&cfg)?;
            let net = checkpoint::load(&image)?;
            let run = stage_eval(&cfg, &net, &data, &split)?;
            run.write(&cfg.output_dir.join("metrics"), cfg.eval.pr_sweep)?;
            println!("MAP@{} {:.4} ({} queries, {} excluded)", run.cutoff, run.map, run.evaluable_queries, run.excluded_queries);
        }
        Command::Pipeline { cfg } => {
            let cfg = cfg.load()?;
            let o = run_pipeline(&cfg)?;
            println!("MAP@{} {:.4}; run directory {}", o.run.cutoff, o.run.map, o.dir.display());
        }
        Command::Ablate { cfg } => {
            let cfg = cfg.load()?;
            for r in run_ablation_suite(&cfg)? {
                println!("{:<10} {:<26} {:.4}", r.variant, r.loss, r.mean_map);
            }
        }
        Command::SweepMargin { cfg } => {
            let cfg = cfg.load()?;
            println!("margin  semantic  image");
            for r in run_margin_sweep(&cfg)? {
                println!("{:<7} {:.4}    {:.4}", r.margin, r.semantic_mean, r.image_mean);
            }
        }
        Command::Crossmodal { cfg } => {
            let cfg = cfg.load()?;
            for d in run_crossmodal(&cfg)?.directions {
                println!("{} -> {}: MAP {:.4} (random {:.4})", d.query, d.database, d.map, d.random_baseline);
            }
        }
        Command::Gradcheck { seed, tolerance } => {
            let check = GradCheckConfig { tolerance, seed, ..GradCheckConfig::default() };
            let mut failed = Vec::new();
            for case in gradient_suite(seed, &check)? {
                let r = &case.report;
                println!(
                    "{:<28} {} max rel err {:.2e} (raw {:.2e}; {} checked, {} skipped)",
                    case.name,
                    if r.passed { "ok  " } else { "FAIL" },
                    r.max_relative_error,
                    r.max_raw_relative_error,
                    r.checked,
                    r.skipped
                );
                if !r.passed {
                    failed.push(case.name);
                }
            }
            if !failed.is_empty() {
                return Err(Error::Domain(format!("gradient check failed for {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
        ErrorKind::Other => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
