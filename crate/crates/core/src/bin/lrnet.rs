//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lrnet::checkpoint::Checkpoint;
use lrnet::data::{
    load_split, split_dataset, synth_generate, synth_samples, tile_dataset, DatasetManifest, PadPolicy,
    Split, SplitSpec, SynthConfig,
};
use lrnet::train::{
    ablate, evaluate, parse_variant, predict_files, table4_csv, table4_variants, table5_csv, table5_variants,
    train, write_report, PredictOptions, Variant,
};
use lrnet::{Error, LossMode, Result, TrainConfig};

#[derive(Parser)]
#[command(name = "lrnet", version, about = "Bi-temporal change detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// VGG16 widths, batch 16, 200 epochs.
    Paper,
    /// Narrow widths, batch 4, 50 epochs.
    Desk,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` file; `LRNET_<KEY>` variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults the file is applied on top of.
    #[arg(long, value_enum, default_value = "paper")]
    preset: Preset,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        let base = match self.preset {
            Preset::Paper => TrainConfig::default(),
            Preset::Desk => TrainConfig::desk(),
        };
        TrainConfig::load_onto(base, self.config.as_deref())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Cut `src/{A,B,label}/*.png` into non-overlapping tiles.
    Tile {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        tile_size: usize,
        /// `ceil` zero-pads the remainder, `floor` drops it.
        #[arg(long, default_value = "ceil")]
        pad: PadPolicy,
    },
    /// Assign manifest records to train/val/test.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// `train,val,test` record counts.
        #[arg(long, value_delimiter = ',', conflicts_with = "ratios", required_unless_present = "ratios")]
        counts: Option<Vec<usize>>,
        /// `train,val,test` fractions summing to 1.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to overwriting the input manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset of change pairs.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Split counts applied after generation.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
    /// Train a model on the manifest named in the config.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Overrides the manifest recorded in the checkpoint.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Predict a change map for one image pair.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        t1: PathBuf,
        #[arg(long)]
        t2: PathBuf,
        #[arg(long, default_value = "prediction")]
        out: PathBuf,
        /// Ground truth for the TP/TN/FP/FN overlay.
        #[arg(long)]
        label: Option<PathBuf>,
        /// Also write attention maps, the deep map and block norms.
        #[arg(long)]
        debug: bool,
    },
    /// Train and evaluate a grid of variants.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// `table4`, `table5`, or comma-separated variant names
        /// (`base+LOP+C2A`) and loss modes (`bce`, `iou`, `bce+iou`).
        #[arg(long, default_value = "table4")]
        grid: String,
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
    },
}

fn grid_variants(grid: &str, base: &TrainConfig) -> Result<Vec<Variant>> {
    match grid {
        "table4" => Ok(table4_variants(base)),
        "table5" => Ok(table5_variants(base)),
        list => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|item| match item.parse::<LossMode>() {
                Ok(mode) => {
                    let mut v = table5_variants(base).remove(0);
                    v.config.loss_mode = mode;
                    v.name = mode.to_string();
                    Ok(v)
                }
                Err(_) => parse_variant(item, base),
            })
            .collect(),
    }
}

fn triple<T: Copy>(flag: &str, v: &[T]) -> Result<[T; 3]> {
    v.try_into()
        .map_err(|_| Error::InvalidInput(format!("--{flag} takes three comma-separated values")))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Internal(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Error::Internal(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Tile { src, out, tile_size, pad } => {
            let report = tile_dataset(&src, &out, tile_size, pad)?;
            let path = report.manifest.save(None)?;
            println!("{} tiles -> {}", report.manifest.len(), path.display());
            for (name, err) in &report.errors {
                eprintln!("skipped {name}: {err}");
            }
        }
        Command::Split { manifest, counts, ratios, seed, out } => {
            let spec = match (counts, ratios) {
                (Some(c), _) => SplitSpec::Counts(triple("counts", &c)?),
                (_, Some(r)) => SplitSpec::Ratios(triple("ratios", &r)?),
                _ => unreachable!("clap requires one of --counts/--ratios"),
            };
            let m = split_dataset(&DatasetManifest::load(&manifest)?, spec, seed)?;
            let path = m.save(Some(out.as_deref().unwrap_or(&manifest)))?;
            let [a, b, c] = m.split_counts();
            println!("train {a}, val {b}, test {c} -> {}", path.display());
        }
        Command::Synth { config, out, counts } => {
            let cfg = match config {
                Some(p) => SynthConfig::from_text(
                    &fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
                )?,
                None => SynthConfig::default(),
            };
            let mut m = synth_generate(&cfg, &out)?;
            if let Some(c) = counts {
                m = split_dataset(&m, SplitSpec::Counts(triple("counts", &c)?), cfg.seed)?;
            }
            let path = m.save(None)?;
            println!("{} pairs -> {}", m.len(), path.display());
        }
        Command::Train { config } => {
            let cfg = config.load()?;
            let trainer = train(cfg)?;
            if let Some(last) = trainer.log.last() {
                println!("epoch {} loss {:.6}", last.epoch, last.loss);
            }
        }
        Command::Eval { ckpt, split, manifest, out } => {
            let ck = Checkpoint::load(&ckpt)?;
            let m = manifest.map(|p| DatasetManifest::load(&p)).transpose()?;
            let report = evaluate(&ck, m.as_ref(), split)?;
            let (json, _) = write_report(&report, &out, &format!("report_{split}"))?;
            println!("{}", report.to_json()?);
            log::info!("report written to {}", json.display());
        }
        Command::Predict { ckpt, t1, t2, out, label, debug } => {
            let ck = Checkpoint::load(&ckpt)?;
            let model = ck.restore_model()?;
            let files = predict_files(&model, ck.config.normalize, &t1, &t2, &out, &PredictOptions { label, debug })?;
            println!("{}", files.mask.display());
        }
        Command::Ablate { config, grid, out } => {
            let base = config.load()?;
            let variants = grid_variants(&grid, &base)?;
            let (train_set, eval_set) = match &base.manifest {
                Some(p) => {
                    let m = DatasetManifest::load(p)?;
                    (load_split(&m, Split::Train)?, load_split(&m, Split::Test)?)
                }
                None => {
                    log::info!("no manifest configured; using synthetic pairs (seed 0 train, seed 1 eval)");
                    let seed1 = SynthConfig { seed: 1, ..SynthConfig::default() };
                    (synth_samples(&SynthConfig::default())?, synth_samples(&seed1)?)
                }
            };
            let report = ablate(&variants, &train_set, &eval_set)?;
            let loss_grid = grid == "table5" || report.rows.iter().all(|r| r.name == r.loss_mode.to_string());
            let csv = if loss_grid { table5_csv(&report.rows) } else { table4_csv(&report.rows) };
            write(&out.join(if loss_grid { "table5.csv" } else { "table4.csv" }), &csv)?;
            write(&out.join("ablation.json"), &serde_json::to_string_pretty(&report)?)?;
            print!("{csv}");
            for (name, why) in &report.rejected {
                eprintln!("rejected {name}: {why}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
