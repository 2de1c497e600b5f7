use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use icu_risk::cohort::{generate_synthetic_cohort, save_cohort, SyntheticCohortSpec};
use icu_risk::model::LogisticModel;
use icu_risk::nomogram::{build_nomogram, load_bundle, render_svg, Bundle, GoldenFile};
use icu_risk::pipeline::{self, PipelineConfig, Stage, StageRecord};
use icu_risk::resample::NoiseDelta;
use icu_risk::Patient;

/// Short-term ICU mortality risk pipeline.
#[derive(Parser)]
#[command(name = "icu-risk", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration, TOML or JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cohort CSV.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Data dictionary JSON; inferred from the CSV header when absent.
    #[arg(long, global = true)]
    dictionary: Option<PathBuf>,
    /// Directory for intermediates and artifacts.
    #[arg(long, short = 'o', global = true)]
    output_dir: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Default)]
struct PreprocessArgs {
    #[arg(long)]
    knn_k: Option<usize>,
    #[arg(long)]
    missing_threshold: Option<f64>,
    /// Outcome follow-up window in days.
    #[arg(long)]
    followup_days: Option<f64>,
}

#[derive(Args, Default)]
struct FilterArgs {
    #[arg(long)]
    min_age: Option<f64>,
    #[arg(long)]
    max_age: Option<f64>,
    #[arg(long)]
    min_icu_days: Option<f64>,
}

#[derive(Args, Default)]
struct SelectArgs {
    /// Features kept by the F-test filter.
    #[arg(long)]
    k: Option<usize>,
    /// Features kept by recursive elimination.
    #[arg(long)]
    target: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    force_include: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    force_exclude: Vec<String>,
    #[arg(long)]
    vif_max: Option<f64>,
}

#[derive(Args, Default)]
struct ResampleArgs {
    #[arg(long, value_delimiter = ',')]
    thresholds: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    weights: Vec<f64>,
    /// Number of synthetic rows.
    #[arg(long)]
    n: Option<usize>,
    /// Neighbours averaged per synthetic row.
    #[arg(long)]
    k: Option<usize>,
    /// Target noise half-width, or `auto`.
    #[arg(long)]
    delta: Option<String>,
    /// Draw the k neighbours at random from this many nearest rows.
    #[arg(long)]
    smote_pool_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the input CSV and copy it into the output directory.
    Ingest {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Apply the inclusion criteria.
    Filter {
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        args: FilterArgs,
    },
    /// Drop sparse features, impute and add derived scores.
    Preprocess {
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        args: PreprocessArgs,
    },
    /// Stratified train/test split and training normalization stats.
    Split {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        split_ratio: Option<f64>,
    },
    /// F-test filter, recursive elimination and VIF screen.
    Select {
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        args: SelectArgs,
    },
    /// Threshold-weighted SMOTE on the training rows.
    Resample {
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        args: ResampleArgs,
    },
    /// Fit the horizon logistic models and the Cox model.
    Train {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Test-set metrics, curves and bootstrap intervals.
    Evaluate {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Permutation importance and linear attributions.
    Explain {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Render nomograms and the calculator bundle. With `--model`, work on
    /// the given model files instead of the pipeline directory.
    Nomogram {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        model: Vec<PathBuf>,
        /// SVG path; `{h}` is replaced by the horizon when several models
        /// are given.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Risk at every horizon for one patient.
    Predict {
        /// Defaults to `bundle.json` in the output directory.
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// JSON object of feature values.
        #[arg(long)]
        patient: Option<PathBuf>,
        /// `name=value`, repeatable; overrides `--patient`.
        #[arg(long = "value")]
        values: Vec<String>,
        /// Use training means for features not given.
        #[arg(long)]
        fill_means: bool,
    },
    /// Run every stage.
    Run {
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        preprocess: PreprocessArgs,
        #[arg(long)]
        split_ratio: Option<f64>,
        #[arg(long)]
        smote_pool_size: Option<usize>,
    },
    /// Write a synthetic cohort with a planted logistic outcome model.
    Synth {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the generating model as JSON.
        #[arg(long)]
        oracle: Option<PathBuf>,
    },
    /// Reference predictions for random in-range patients.
    Golden {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the resolved configuration as TOML.
    Config,
}

fn base_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(p) = &common.input {
        cfg.paths.input = p.clone();
    }
    if let Some(p) = &common.dictionary {
        cfg.paths.dictionary = Some(p.clone());
    }
    if let Some(p) = &common.output_dir {
        cfg.paths.output_dir = p.clone();
    }
    if cfg.paths.output_dir.as_os_str().is_empty() {
        cfg.paths.output_dir = PathBuf::from("artifacts");
    }
    Ok(cfg)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_preprocess(cfg: &mut PipelineConfig, a: PreprocessArgs) {
    set(&mut cfg.knn_k, a.knn_k);
    set(&mut cfg.missing_threshold, a.missing_threshold);
    set(&mut cfg.followup_days, a.followup_days);
}

fn apply_resample(cfg: &mut PipelineConfig, a: ResampleArgs) -> Result<()> {
    if !a.thresholds.is_empty() {
        cfg.smote.thresholds = a.thresholds;
    }
    if !a.weights.is_empty() {
        cfg.smote.weights = a.weights;
    }
    set(&mut cfg.smote.n_synthetic, a.n);
    set(&mut cfg.smote.k_neighbors, a.k);
    if let Some(d) = a.delta {
        cfg.smote.delta = if d == "auto" {
            NoiseDelta::Auto
        } else {
            NoiseDelta::Fixed(d.parse().with_context(|| format!("--delta `{d}`"))?)
        };
    }
    if a.smote_pool_size.is_some() {
        cfg.smote.pool_size = a.smote_pool_size;
    }
    Ok(())
}

fn patient(path: Option<&Path>, values: &[String]) -> Result<Patient> {
    let mut p: Patient = match path {
        Some(path) => serde_json::from_str(
            &std::fs::read_to_string(path).with_context(|| path.display().to_string())?,
        )
        .with_context(|| format!("{}: expected an object of numbers", path.display()))?,
        None => Patient::new(),
    };
    for v in values {
        let (name, value) = v
            .split_once('=')
            .ok_or_else(|| anyhow!("--value `{v}` is not name=value"))?;
        let value: f64 = value
            .trim()
            .parse()
            .with_context(|| format!("--value `{v}`"))?;
        p.insert(name.trim().to_string(), value);
    }
    Ok(p)
}

fn read_model(path: &Path) -> Result<LogisticModel> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    serde_json::from_str(&text).with_context(|| path.display().to_string())
}

fn standalone_nomogram(models: &[PathBuf], out: Option<&Path>, bundle: Option<&Path>) -> Result<()> {
    let models = models.iter().map(|p| read_model(p)).collect::<Result<Vec<_>>>()?;
    if let Some(out) = out {
        let template = out.to_string_lossy();
        if models.len() > 1 && !template.contains("{h}") {
            bail!("--out needs a `{{h}}` placeholder when several models are given");
        }
        for m in &models {
            let spec = build_nomogram(m, &m.reference_ranges)?;
            let path = template.replace("{h}", &m.horizon_days.to_string());
            std::fs::write(&path, render_svg(&spec)).with_context(|| path.clone())?;
            println!("wrote {path}");
        }
    }
    if let Some(path) = bundle {
        let b = Bundle::from_models(&models)?;
        std::fs::write(path, b.to_json()).with_context(|| path.display().to_string())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn report(record: &StageRecord) {
    println!(
        "{}: {} -> {} rows, {} columns; wrote {}",
        record.stage,
        record.rows_in,
        record.rows_out,
        record.cols_out,
        record.outputs.join(", ")
    );
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let mut cfg = base_config(&cli.common)?;
    let stage = match cli.command {
        Command::Ingest { seed } => {
            set(&mut cfg.seed, seed);
            Stage::Ingest
        }
        Command::Filter { seed, args } => {
            set(&mut cfg.seed, seed);
            set(&mut cfg.inclusion.min_age, args.min_age);
            set(&mut cfg.inclusion.max_age, args.max_age);
            set(&mut cfg.inclusion.min_icu_days, args.min_icu_days);
            Stage::Filter
        }
        Command::Preprocess { seed, args } => {
            set(&mut cfg.seed, seed);
            apply_preprocess(&mut cfg, args);
            Stage::Preprocess
        }
        Command::Split { seed, split_ratio } => {
            set(&mut cfg.seed, seed);
            set(&mut cfg.split_ratio, split_ratio);
            Stage::Split
        }
        Command::Select { seed, args } => {
            set(&mut cfg.seed, seed);
            set(&mut cfg.select.k_best, args.k);
            set(&mut cfg.select.n_target, args.target);
            set(&mut cfg.select.vif_max, args.vif_max);
            if !args.force_include.is_empty() {
                cfg.select.include = args.force_include;
            }
            if !args.force_exclude.is_empty() {
                cfg.select.exclude = args.force_exclude;
            }
            Stage::Select
        }
        Command::Resample { seed, args } => {
            set(&mut cfg.seed, seed);
            apply_resample(&mut cfg, args)?;
            Stage::Resample
        }
        Command::Train { seed } => {
            set(&mut cfg.seed, seed);
            Stage::Train
        }
        Command::Evaluate {
            seed,
            bootstrap,
            threshold,
        } => {
            set(&mut cfg.seed, seed);
            set(&mut cfg.evaluate.bootstrap_replicates, bootstrap);
            set(&mut cfg.evaluate.threshold, threshold);
            Stage::Evaluate
        }
        Command::Explain { seed, repeats } => {
            set(&mut cfg.seed, seed);
            set(&mut cfg.explain.n_repeats, repeats);
            Stage::Explain
        }
        Command::Nomogram {
            seed,
            model,
            out,
            bundle,
        } => {
            if !model.is_empty() {
                return standalone_nomogram(&model, out.as_deref(), bundle.as_deref());
            }
            if out.is_some() || bundle.is_some() {
                bail!("--out and --bundle apply only together with --model");
            }
            set(&mut cfg.seed, seed);
            Stage::Nomogram
        }
        Command::Predict {
            bundle,
            patient: patient_file,
            values,
            fill_means,
        } => {
            let path = bundle.unwrap_or_else(|| cfg.paths.output_dir.join(pipeline::BUNDLE));
            let b = load_bundle(&path).with_context(|| path.display().to_string())?;
            let mut p = patient(patient_file.as_deref(), &values)?;
            if fill_means {
                for (name, v) in b.default_patient() {
                    p.entry(name).or_insert(v);
                }
            }
            let predictions = b.predict(&p)?;
            println!("{}", serde_json::to_string_pretty(&predictions)?);
            return Ok(());
        }
        Command::Run {
            seed,
            preprocess,
            split_ratio,
            smote_pool_size,
        } => {
            cfg.seed = seed;
            apply_preprocess(&mut cfg, preprocess);
            set(&mut cfg.split_ratio, split_ratio);
            if smote_pool_size.is_some() {
                cfg.smote.pool_size = smote_pool_size;
            }
            let manifest = pipeline::run_pipeline(&cfg)?;
            let dir = &cfg.paths.output_dir;
            let text = std::fs::read_to_string(dir.join(pipeline::METRICS_TEXT))?;
            print!("{text}");
            println!(
                "config {} seed {}; {} artifacts in {}",
                &manifest.config_hash[..12],
                manifest.seed,
                manifest.artifacts.len(),
                dir.display()
            );
            return Ok(());
        }
        Command::Synth {
            n,
            seed,
            out,
            oracle,
        } => {
            let spec = SyntheticCohortSpec::benchmark(n, seed);
            let (table, model) = generate_synthetic_cohort(&spec)?;
            save_cohort(&table, &out)?;
            if let Some(path) = oracle {
                std::fs::write(&path, serde_json::to_string_pretty(&model)? + "\n")?;
            }
            println!("wrote {} patients to {}", table.len(), out.display());
            return Ok(());
        }
        Command::Golden { bundle, out, n, seed } => {
            let text = std::fs::read_to_string(&bundle).with_context(|| bundle.display().to_string())?;
            let b = Bundle::from_json(&text)?;
            let golden = GoldenFile::generate(&b, &text, n, seed)?;
            std::fs::write(&out, golden.to_json()).with_context(|| out.display().to_string())?;
            println!("wrote {n} cases to {}", out.display());
            return Ok(());
        }
        Command::Config => {
            cfg.validate()?;
            print!("{}", cfg.to_toml());
            return Ok(());
        }
    };
    report(&pipeline::run_stage(&cfg, stage)?);
    Ok(())
}
