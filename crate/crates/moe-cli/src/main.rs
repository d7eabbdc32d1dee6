//! `moe` — command-line front end for the mixture-of-experts experiment
//! library: ground-truth/data generation, SGD fitting, parameter-space loss
//! evaluation, sample-size sweeps with log-log rate fits, gating comparisons,
//! identifiability diagnostics, and slow-sequence constructions.

use clap::{Parser, Subcommand, ValueEnum};
use moe_core::harness::{
    aggregate_csv, compare_gates, gate_comparison_report, parse_activation, plot_data_csv,
    rate_csv, rate_report, raw_csv, run_sweep, LossSpec, PerNStat, SweepConfig,
};
use moe_core::ident::{
    build_derivative_class, default_sample_count, independence_test, slow_sequence_activation,
    slow_sequence_linear, IdentMode, DEFAULT_SV_TOL,
};
use moe_core::model::{ExpertActivation, MixingMeasure};
use moe_core::rng::{child_seed, Rng64};
use moe_core::synth::{generate_dataset, sample_ground_truth, Dataset, GroundTruthConfig, Regime};
use moe_core::train::{fit, init_near_truth};
use moe_core::voronoi::{l2_distance, loss_d1, loss_d2, loss_d3};
use moe_core::{MoeError, Result};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "moe",
    about = "Sigmoid/softmax-gated mixture-of-experts regression experiments",
    version
)]
struct Cli {
    /// TOML config file with [ground_truth], [train], [sweep] sections;
    /// omitted keys fall back to the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override every seed in the config (ground_truth.seed, train.seed,
    /// sweep.base_seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output path (or path stem for multi-file outputs); most commands
    /// print to stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Size of the worker thread pool (default: number of cores). Results
    /// are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the configured ground-truth mixing measure and print/write its
    /// text record.
    GenTruth,
    /// Generate a synthetic regression dataset from the configured truth;
    /// writes `<out>.truth.txt` and `<out>.csv`.
    GenData {
        /// Number of samples.
        #[arg(long)]
        n: usize,
    },
    /// Fit a measure to a dataset by mini-batch SGD from a near-truth start;
    /// writes `<out>.measure.txt` and `<out>.trace.csv`.
    Fit {
        /// Path stem of a dataset written by gen-data.
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate one parameter-space loss (or the Monte Carlo L2 distance)
    /// between two measure records.
    EvalLoss {
        /// Fitted measure record.
        #[arg(long)]
        fitted: PathBuf,
        /// Reference measure record.
        #[arg(long)]
        reference: PathBuf,
        /// Loss: d1, d2:R, d3, or l2.
        #[arg(long)]
        loss: String,
        /// Monte Carlo draws for l2.
        #[arg(long, default_value_t = 100_000)]
        mc_samples: usize,
    },
    /// Run the full (n, replicate) sweep; writes `<stem>.raw.csv`,
    /// `<stem>.agg.csv`, `<stem>.rate.csv`, `<stem>.plot.csv` and prints the
    /// rate table.
    Sweep,
    /// Fit log-log rates from an aggregate CSV produced by `sweep`
    /// (`n,loss_name,mean,std,two_sigma,count`).
    Rate {
        /// Aggregate CSV path.
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the identical sweep under sigmoid and softmax gating and report
    /// both rate fits side by side.
    CompareGates,
    /// Numerical linear-independence test of the gating/expert derivative
    /// family at the given atoms.
    IdentCheck {
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Expert activation: relu, gelu, identity, poly:P. Defaults to the
        /// activation recorded in the atoms file.
        #[arg(long)]
        activation: Option<String>,
        /// Measure record whose atoms anchor the derivative family.
        #[arg(long)]
        atoms: PathBuf,
        /// Sample points for the rank test (default: max(2000, 10 x family
        /// size)).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Construct a measure from one of the slow-converging sequences and
    /// print/write its record.
    SlowSeq {
        #[arg(long, value_enum)]
        kind: SeqKind,
        /// Sequence index n (>= 1).
        #[arg(long)]
        n: usize,
        /// Loss exponent r for the linear-expert sequence.
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        /// Expert-bias offset scale c for the split-activation sequence.
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        /// Truth measure record the sequence perturbs.
        #[arg(long)]
        truth: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Strong,
    Weak,
}

#[derive(Clone, Copy, ValueEnum)]
enum SeqKind {
    /// Weight-overshoot sequence for a linear (identity) first expert.
    Linear,
    /// Exact weight-splitting sequence with offset expert biases.
    Activation,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<SweepConfig> {
    let mut cfg = match &cli.config {
        Some(path) => SweepConfig::from_toml_str(&std::fs::read_to_string(path)?)?,
        None => SweepConfig::defaults(GroundTruthConfig::defaults(
            Regime::Regime1,
            ExpertActivation::ReLU,
        )),
    };
    if let Some(seed) = cli.seed {
        cfg.ground_truth.seed = seed;
        cfg.train.seed = seed;
        cfg.base_seed = seed;
    }
    Ok(cfg)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn required_out(out: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    out.clone()
        .ok_or_else(|| MoeError::InvalidArgument(format!("--out is required for {what}")))
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut name = stem.as_os_str().to_os_string();
    name.push(suffix);
    PathBuf::from(name)
}

fn read_measure(path: &Path) -> Result<MixingMeasure> {
    MixingMeasure::from_record(&std::fs::read_to_string(path)?)
}

/// Note attached to every report that evaluates D3: the reference is the
/// sampled truth, not the (uncomputable) best k-atom approximation.
const D3_NOTE: &str = "# note: d3 is evaluated against the sampled truth measure\n";

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| MoeError::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(&cli)?;

    match &cli.command {
        Command::GenTruth => {
            let truth = sample_ground_truth(
                &cfg.ground_truth,
                &mut Rng64::from_seed(cfg.ground_truth.seed),
            )?;
            emit(&cli.out, &truth.to_record())
        }
        Command::GenData { n } => {
            let stem = required_out(&cli.out, "gen-data")?;
            let truth = sample_ground_truth(
                &cfg.ground_truth,
                &mut Rng64::from_seed(cfg.ground_truth.seed),
            )?;
            let mut data_rng = Rng64::from_seed(child_seed(cfg.base_seed, 0));
            let data =
                generate_dataset(&truth, *n, cfg.ground_truth.nu, &cfg.ground_truth, &mut data_rng)?;
            data.write_files(&stem)?;
            eprintln!("wrote {} and {}", with_suffix(&stem, ".truth.txt").display(), with_suffix(&stem, ".csv").display());
            Ok(())
        }
        Command::Fit { data } => {
            let data = Dataset::read_files(data)?;
            let mut init_rng = Rng64::from_seed(child_seed(cfg.train.seed, 1));
            let mut fit_rng = Rng64::from_seed(child_seed(cfg.train.seed, 2));
            let init =
                init_near_truth(&data.truth, cfg.train.k, cfg.train.init_perturb, &mut init_rng)?;
            let result = fit(&data, &init, &cfg.train, &mut fit_rng)?;
            let mut trace = String::from("epoch,mean_loss\n");
            for (epoch, loss) in result.loss_trace.iter().enumerate() {
                trace.push_str(&format!("{epoch},{loss:.16e}\n"));
            }
            match &cli.out {
                Some(stem) => {
                    std::fs::write(with_suffix(stem, ".measure.txt"), result.fitted.to_record())?;
                    std::fs::write(with_suffix(stem, ".trace.csv"), trace)?;
                }
                None => print!("{}", result.fitted.to_record()),
            }
            eprintln!("final training loss: {:.6e}", result.final_loss);
            Ok(())
        }
        Command::EvalLoss { fitted, reference, loss, mc_samples } => {
            let fitted = read_measure(fitted)?;
            let reference = read_measure(reference)?;
            let spec = LossSpec::parse(loss)?;
            let text = match spec {
                LossSpec::L2 => {
                    let mut rng = Rng64::from_seed(cfg.base_seed);
                    format!("l2,{:.16e}\n", l2_distance(&fitted, &reference, *mc_samples, &mut rng)?)
                }
                LossSpec::D1 => header_and_row(&loss_d1(&fitted, &reference)?.csv_row("d1", None)),
                LossSpec::D2(r) => {
                    header_and_row(&loss_d2(&fitted, &reference, r)?.csv_row("d2", Some(r)))
                }
                LossSpec::D3 => header_and_row(&loss_d3(&fitted, &reference)?.csv_row("d3", None)),
            };
            emit(&cli.out, &text)
        }
        Command::Sweep => {
            let result = run_sweep(&cfg)?;
            let report = rate_report(&result)?;
            let stem = cli.out.clone().or_else(|| cfg.output_path.clone());
            if let Some(stem) = &stem {
                std::fs::write(with_suffix(stem, ".raw.csv"), raw_csv(&result))?;
                std::fs::write(with_suffix(stem, ".agg.csv"), aggregate_csv(&result))?;
                std::fs::write(with_suffix(stem, ".rate.csv"), rate_csv(&report))?;
                std::fs::write(with_suffix(stem, ".plot.csv"), plot_data_csv(&result))?;
            }
            if cfg.losses.contains(&LossSpec::D3) {
                print!("{D3_NOTE}");
            }
            print!("{}", rate_csv(&report));
            Ok(())
        }
        Command::Rate { input } => {
            let text = std::fs::read_to_string(input)?;
            let report = fit_rates_from_aggregate_csv(&text)?;
            emit(&cli.out, &report)
        }
        Command::CompareGates => {
            let cmp = compare_gates(&cfg)?;
            let mut text = String::new();
            if cfg.losses.contains(&LossSpec::D3) {
                text.push_str(D3_NOTE);
            }
            text.push_str(&gate_comparison_report(&cmp));
            emit(&cli.out, &text)
        }
        Command::IdentCheck { mode, activation, atoms, samples } => {
            let measure = read_measure(atoms)?;
            let activation = match activation {
                Some(s) => parse_activation(s)?,
                None => measure.activation,
            };
            let mode = match mode {
                ModeArg::Strong => IdentMode::Strong,
                ModeArg::Weak => IdentMode::Weak,
            };
            let cls = build_derivative_class(activation, &measure.atoms, mode)?;
            let samples = samples.unwrap_or_else(|| default_sample_count(cls.num_functions()));
            let report = independence_test(
                &cls,
                samples,
                DEFAULT_SV_TOL,
                &mut Rng64::from_seed(cfg.base_seed),
            )?;
            print!("{}", report.render(&cls));
            if let Some(out) = &cli.out {
                std::fs::write(out, report.singular_values_csv())?;
            }
            Ok(())
        }
        Command::SlowSeq { kind, n, r, c, truth } => {
            let truth = read_measure(truth)?;
            let measure = match kind {
                SeqKind::Linear => slow_sequence_linear(&truth, *n, *r)?,
                SeqKind::Activation => slow_sequence_activation(&truth, *n, *c)?,
            };
            eprintln!(
                "d2:{r} vs truth = {:.16e}",
                loss_d2(&measure, &truth, *r)?.total
            );
            emit(&cli.out, &measure.to_record())
        }
    }
}

fn header_and_row(row: &str) -> String {
    format!("loss_name,r,total,weight_term,over_term,exact_term,k_bar\n{row}\n")
}

/// Re-fit rates from an aggregate CSV (`n,loss_name,mean,std,two_sigma,count`),
/// one OLS fit per distinct loss_name in first-appearance order.
fn fit_rates_from_aggregate_csv(text: &str) -> Result<String> {
    let mut order: Vec<String> = Vec::new();
    let mut stats: Vec<(String, PerNStat)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(MoeError::Parse(format!(
                "aggregate CSV line {}: expected 6 fields, got {}",
                idx + 1,
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|e| MoeError::Parse(format!("line {}: {e}", idx + 1)))
        };
        let n: usize = fields[0]
            .parse()
            .map_err(|e| MoeError::Parse(format!("line {}: {e}", idx + 1)))?;
        let name = fields[1].to_string();
        let stat = PerNStat {
            n,
            mean: parse_f(fields[2])?,
            std: parse_f(fields[3])?,
            two_sigma: parse_f(fields[4])?,
            count: fields[5]
                .parse()
                .map_err(|e| MoeError::Parse(format!("line {}: {e}", idx + 1)))?,
        };
        if !order.contains(&name) {
            order.push(name.clone());
        }
        stats.push((name, stat));
    }
    let mut out = String::from("loss_name,slope,intercept,r_squared\n");
    for name in &order {
        let per_n: Vec<PerNStat> =
            stats.iter().filter(|(k, _)| k == name).map(|(_, s)| s.clone()).collect();
        let fit = moe_core::harness::fit_rate(&per_n)?;
        out.push_str(&format!(
            "{name},{:.6},{:.6},{:.6}\n",
            fit.slope, fit.intercept, fit.r_squared
        ));
    }
    Ok(out)
}
