//! Experiment orchestration: sample-size sweeps with replicated fits,
//! loss aggregation, log-log rate fitting, gating comparisons, and the
//! config-file / CSV formats the CLI exposes.

use crate::error::{MoeError, Result};
use crate::model::{ExpertActivation, GatingKind, MixingMeasure};
use crate::rng::{child_seed, Rng64};
use crate::synth::{generate_dataset, sample_ground_truth, GroundTruthConfig, Regime};
use crate::train::{fit, init_near_truth, TrainConfig};
use crate::voronoi::{l2_distance, loss_d1, loss_d2, loss_d3};
use rayon::prelude::*;
use serde::Deserialize;
use std::path::PathBuf;

/// One loss to evaluate per fitted measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    D1,
    D2(f64),
    D3,
    /// Monte Carlo L2(mu) distance between regression functions.
    L2,
}

impl LossSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::D1 => "d1",
            LossSpec::D2(_) => "d2",
            LossSpec::D3 => "d3",
            LossSpec::L2 => "l2",
        }
    }

    pub fn r(&self) -> Option<f64> {
        match self {
            LossSpec::D2(r) => Some(*r),
            _ => None,
        }
    }

    /// Unique key, also the config-file syntax: `d1`, `d2:1`, `d3`, `l2`.
    pub fn key(&self) -> String {
        match self {
            LossSpec::D2(r) => format!("d2:{r}"),
            other => other.name().to_string(),
        }
    }

    pub fn parse(s: &str) -> Result<LossSpec> {
        let s = s.trim();
        match s {
            "d1" => return Ok(LossSpec::D1),
            "d3" => return Ok(LossSpec::D3),
            "l2" => return Ok(LossSpec::L2),
            _ => {}
        }
        if let Some(r) = s.strip_prefix("d2:") {
            let r: f64 = r
                .parse()
                .map_err(|e| MoeError::Parse(format!("bad D2 exponent `{r}`: {e}")))?;
            return Ok(LossSpec::D2(r));
        }
        Err(MoeError::Parse(format!(
            "unknown loss `{s}` (expected d1, d2:R, d3, l2)"
        )))
    }
}

/// Full description of one sweep experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub ground_truth: GroundTruthConfig,
    pub train: TrainConfig,
    /// Strictly increasing sample sizes.
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub losses: Vec<LossSpec>,
    /// Monte Carlo draws for the L2 loss.
    pub mc_samples: usize,
    pub base_seed: u64,
    pub output_path: Option<PathBuf>,
}

/// 10 geometric points from 1e3 to 1e5, rounded to integers.
pub fn default_n_grid() -> Vec<usize> {
    geometric_n_grid(1_000, 100_000, 10)
}

pub fn geometric_n_grid(lo: usize, hi: usize, points: usize) -> Vec<usize> {
    assert!(points >= 2 && lo >= 1 && hi > lo);
    let (llo, lhi) = ((lo as f64).ln(), (hi as f64).ln());
    let mut grid: Vec<usize> = (0..points)
        .map(|i| {
            let t = i as f64 / (points - 1) as f64;
            (llo + t * (lhi - llo)).exp().round() as usize
        })
        .collect();
    grid.dedup();
    grid
}

impl SweepConfig {
    pub fn defaults(ground_truth: GroundTruthConfig) -> Self {
        let train = TrainConfig::defaults(ground_truth.k_star);
        SweepConfig {
            ground_truth,
            train,
            n_grid: default_n_grid(),
            replicates: 20,
            losses: vec![LossSpec::D1, LossSpec::D2(1.0), LossSpec::D3, LossSpec::L2],
            mc_samples: 100_000,
            base_seed: 0,
            output_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ground_truth.validate()?;
        self.train.validate()?;
        if self.n_grid.is_empty() || self.n_grid[0] < 1 {
            return Err(MoeError::InvalidArgument("n_grid must be non-empty, all >= 1".into()));
        }
        if !self.n_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(MoeError::InvalidArgument("n_grid must be strictly increasing".into()));
        }
        if self.replicates < 1 {
            return Err(MoeError::InvalidArgument("replicates must be >= 1".into()));
        }
        if self.losses.is_empty() {
            return Err(MoeError::InvalidArgument("losses must be non-empty".into()));
        }
        if self.losses.iter().any(|l| *l == LossSpec::L2) && self.mc_samples < 1 {
            return Err(MoeError::InvalidArgument("mc_samples must be >= 1 for l2".into()));
        }
        Ok(())
    }
}

// --- config file -----------------------------------------------------------

pub fn parse_regime(s: &str) -> Result<Regime> {
    match s {
        "regime1" => Ok(Regime::Regime1),
        "regime2" => Ok(Regime::Regime2),
        other => Err(MoeError::Parse(format!("unknown regime `{other}`"))),
    }
}

pub fn parse_gating(s: &str) -> Result<GatingKind> {
    match s {
        "sigmoid" => Ok(GatingKind::Sigmoid),
        "softmax" => Ok(GatingKind::Softmax),
        other => Err(MoeError::Parse(format!("unknown gating `{other}`"))),
    }
}

/// Accepts `relu`, `gelu`, `identity`, or `poly:P`.
pub fn parse_activation(s: &str) -> Result<ExpertActivation> {
    match s {
        "relu" => return Ok(ExpertActivation::ReLU),
        "gelu" => return Ok(ExpertActivation::Gelu),
        "identity" => return Ok(ExpertActivation::Identity),
        _ => {}
    }
    if let Some(p) = s.strip_prefix("poly:") {
        let p: u32 = p
            .parse()
            .map_err(|e| MoeError::Parse(format!("bad polynomial degree `{p}`: {e}")))?;
        return Ok(ExpertActivation::Polynomial(p));
    }
    Err(MoeError::Parse(format!(
        "unknown activation `{s}` (expected relu, gelu, identity, poly:P)"
    )))
}

pub fn regime_str(r: Regime) -> &'static str {
    match r {
        Regime::Regime1 => "regime1",
        Regime::Regime2 => "regime2",
    }
}

pub fn gating_str(g: GatingKind) -> &'static str {
    match g {
        GatingKind::Sigmoid => "sigmoid",
        GatingKind::Softmax => "softmax",
    }
}

pub fn activation_str(a: ExpertActivation) -> String {
    match a {
        ExpertActivation::ReLU => "relu".into(),
        ExpertActivation::Gelu => "gelu".into(),
        ExpertActivation::Identity => "identity".into(),
        ExpertActivation::Polynomial(p) => format!("poly:{p}"),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroundTruth {
    d: Option<usize>,
    k_star: Option<usize>,
    regime: Option<String>,
    gating: Option<String>,
    activation: Option<String>,
    nu: Option<f64>,
    nu_g: Option<f64>,
    nu_e: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    k: Option<usize>,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    init_perturb: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    n_grid: Option<Vec<usize>>,
    replicates: Option<usize>,
    losses: Option<Vec<String>>,
    mc_samples: Option<usize>,
    base_seed: Option<u64>,
    output_path: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    ground_truth: Option<RawGroundTruth>,
    train: Option<RawTrain>,
    sweep: Option<RawSweep>,
}

impl SweepConfig {
    /// Parse a `[ground_truth]` / `[train]` / `[sweep]` config file. Missing
    /// keys fall back to the defaults; `nu_g`/`nu_e` track an overridden `d`
    /// (0.01/d and 1/d) unless given explicitly.
    pub fn from_toml_str(text: &str) -> Result<SweepConfig> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| MoeError::Parse(format!("config: {e}")))?;

        let gt_raw = raw.ground_truth.unwrap_or_default();
        let regime = match &gt_raw.regime {
            Some(s) => parse_regime(s)?,
            None => Regime::Regime1,
        };
        let activation = match &gt_raw.activation {
            Some(s) => parse_activation(s)?,
            None => ExpertActivation::ReLU,
        };
        let mut gt = GroundTruthConfig::defaults(regime, activation);
        if let Some(d) = gt_raw.d {
            gt.d = d;
            gt.nu_g = 0.01 / d as f64;
            gt.nu_e = 1.0 / d as f64;
        }
        if let Some(k_star) = gt_raw.k_star {
            gt.k_star = k_star;
        }
        if let Some(s) = &gt_raw.gating {
            gt.gating = parse_gating(s)?;
        }
        if let Some(nu) = gt_raw.nu {
            gt.nu = nu;
        }
        if let Some(nu_g) = gt_raw.nu_g {
            gt.nu_g = nu_g;
        }
        if let Some(nu_e) = gt_raw.nu_e {
            gt.nu_e = nu_e;
        }
        if let Some(seed) = gt_raw.seed {
            gt.seed = seed;
        }

        let tr_raw = raw.train.unwrap_or_default();
        let mut train = TrainConfig::defaults(gt.k_star);
        if let Some(k) = tr_raw.k {
            train.k = k;
        }
        if let Some(epochs) = tr_raw.epochs {
            train.epochs = epochs;
        }
        if let Some(lr) = tr_raw.lr {
            train.lr = lr;
        }
        if let Some(batch_size) = tr_raw.batch_size {
            train.batch_size = batch_size;
        }
        if let Some(init_perturb) = tr_raw.init_perturb {
            train.init_perturb = init_perturb;
        }
        if let Some(seed) = tr_raw.seed {
            train.seed = seed;
        }

        let sw_raw = raw.sweep.unwrap_or_default();
        let mut cfg = SweepConfig::defaults(gt);
        cfg.train = train;
        if let Some(n_grid) = sw_raw.n_grid {
            cfg.n_grid = n_grid;
        }
        if let Some(replicates) = sw_raw.replicates {
            cfg.replicates = replicates;
        }
        if let Some(losses) = sw_raw.losses {
            cfg.losses = losses.iter().map(|s| LossSpec::parse(s)).collect::<Result<_>>()?;
        }
        if let Some(mc_samples) = sw_raw.mc_samples {
            cfg.mc_samples = mc_samples;
        }
        if let Some(base_seed) = sw_raw.base_seed {
            cfg.base_seed = base_seed;
        }
        if let Some(path) = sw_raw.output_path {
            cfg.output_path = Some(PathBuf::from(path));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

// --- sweep execution --------------------------------------------------------

/// One raw result row: a single loss of one replicate's fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub n: usize,
    pub replicate: usize,
    pub loss: LossSpec,
    /// NaN when the fit diverged.
    pub value: f64,
    pub diverged: bool,
    /// The replicate's child seed.
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub truth: MixingMeasure,
    /// Sorted by (n, replicate, loss position).
    pub rows: Vec<RawRow>,
}

/// Run the full (n, replicate) grid against one shared ground truth.
///
/// Cells are independent rayon jobs; each derives dataset/init/fit streams
/// from a per-cell child seed, so output is identical for any thread count.
/// Diverged fits yield NaN rows that aggregation skips; if more than 20% of
/// any sample size's replicates diverge, the sweep fails.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let truth = sample_ground_truth(&cfg.ground_truth, &mut Rng64::from_seed(cfg.ground_truth.seed))?;
    let mut cells: Vec<(usize, usize)> = Vec::with_capacity(cfg.n_grid.len() * cfg.replicates);
    for &n in &cfg.n_grid {
        for rep in 0..cfg.replicates {
            cells.push((n, rep));
        }
    }

    let mut rows: Vec<RawRow> = cells
        .par_iter()
        .map(|&(n, rep)| run_cell(cfg, &truth, n, rep))
        .collect::<Result<Vec<Vec<RawRow>>>>()?
        .into_iter()
        .flatten()
        .collect();
    rows.sort_by(|a, b| {
        (a.n, a.replicate, loss_position(cfg, a.loss)).cmp(&(b.n, b.replicate, loss_position(cfg, b.loss)))
    });

    // Divergence budget per sample size.
    for &n in &cfg.n_grid {
        let diverged = rows
            .iter()
            .filter(|row| row.n == n && row.loss == cfg.losses[0] && row.diverged)
            .count();
        if diverged as f64 > 0.2 * cfg.replicates as f64 {
            return Err(MoeError::InvalidArgument(format!(
                "sweep failed: {diverged}/{} replicates diverged at n={n}",
                cfg.replicates
            )));
        }
    }

    Ok(SweepResult { config: cfg.clone(), truth, rows })
}

fn loss_position(cfg: &SweepConfig, loss: LossSpec) -> usize {
    cfg.losses.iter().position(|l| *l == loss).unwrap_or(usize::MAX)
}

fn cell_index(cfg: &SweepConfig, n: usize, rep: usize) -> u64 {
    let ni = cfg.n_grid.iter().position(|&v| v == n).unwrap();
    (ni * cfg.replicates + rep) as u64
}

fn run_cell(
    cfg: &SweepConfig,
    truth: &MixingMeasure,
    n: usize,
    rep: usize,
) -> Result<Vec<RawRow>> {
    let cell_seed = child_seed(cfg.base_seed, cell_index(cfg, n, rep));
    let mut data_rng = Rng64::from_seed(child_seed(cell_seed, 0));
    let mut init_rng = Rng64::from_seed(child_seed(cell_seed, 1));
    let mut fit_rng = Rng64::from_seed(child_seed(cell_seed, 2));

    let data = generate_dataset(truth, n, cfg.ground_truth.nu, &cfg.ground_truth, &mut data_rng)?;
    let init = init_near_truth(truth, cfg.train.k, cfg.train.init_perturb, &mut init_rng)?;

    let fitted = match fit(&data, &init, &cfg.train, &mut fit_rng) {
        Ok(result) => Some(result.fitted),
        Err(MoeError::Diverged { .. }) => None,
        Err(e) => return Err(e),
    };

    let mut rows = Vec::with_capacity(cfg.losses.len());
    for &loss in &cfg.losses {
        let value = match &fitted {
            None => f64::NAN,
            Some(g) => match loss {
                LossSpec::D1 => loss_d1(g, truth)?.total,
                LossSpec::D2(r) => loss_d2(g, truth, r)?.total,
                LossSpec::D3 => loss_d3(g, truth)?.total,
                LossSpec::L2 => {
                    let mut mc_rng = Rng64::from_seed(child_seed(cell_seed, 3));
                    l2_distance(g, truth, cfg.mc_samples, &mut mc_rng)?
                }
            },
        };
        rows.push(RawRow { n, replicate: rep, loss, value, diverged: fitted.is_none(), seed: cell_seed });
    }
    Ok(rows)
}

// --- aggregation and rate fitting -------------------------------------------

/// Per-sample-size summary of one loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PerNStat {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over non-diverged replicates.
    pub std: f64,
    pub two_sigma: f64,
    pub count: usize,
}

/// Mean/std of one loss at every sample size, diverged rows excluded.
pub fn aggregate(rows: &[RawRow], loss: LossSpec) -> Vec<PerNStat> {
    let mut ns: Vec<usize> = rows.iter().filter(|r| r.loss == loss).map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.iter()
        .map(|&n| {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.loss == loss && r.n == n && !r.diverged)
                .map(|r| r.value)
                .collect();
            let count = values.len();
            let mean = values.iter().sum::<f64>() / count.max(1) as f64;
            let std = if count > 1 {
                (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            PerNStat { n, mean, std, two_sigma: 2.0 * std, count }
        })
        .collect()
}

/// Fitted log-log rate for one loss.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub per_n: Vec<PerNStat>,
}

/// Unweighted OLS of log(mean loss) on log(n).
pub fn fit_rate(per_n: &[PerNStat]) -> Result<RateFitResult> {
    if per_n.len() < 3 {
        return Err(MoeError::InvalidArgument(format!(
            "rate fit needs >= 3 points, got {}",
            per_n.len()
        )));
    }
    for stat in per_n {
        if !(stat.mean > 0.0) {
            return Err(MoeError::InvalidArgument(format!(
                "non-positive mean loss {} at n={}",
                stat.mean, stat.n
            )));
        }
    }
    let xs: Vec<f64> = per_n.iter().map(|s| (s.n as f64).ln()).collect();
    let ys: Vec<f64> = per_n.iter().map(|s| s.mean.ln()).collect();
    let m = xs.len() as f64;
    let x_bar = xs.iter().sum::<f64>() / m;
    let y_bar = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - x_bar) * (x - x_bar)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_bar) * (y - y_bar)).sum();
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    let ss_tot: f64 = ys.iter().map(|y| (y - y_bar) * (y - y_bar)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RateFitResult { slope, intercept, r_squared, per_n: per_n.to_vec() })
}

/// Rate fit of every configured loss from raw sweep rows.
pub fn rate_report(result: &SweepResult) -> Result<Vec<(LossSpec, RateFitResult)>> {
    result
        .config
        .losses
        .iter()
        .map(|&loss| Ok((loss, fit_rate(&aggregate(&result.rows, loss))?)))
        .collect()
}

/// Side-by-side rate fits from the identical sweep under each gating kind.
#[derive(Debug, Clone)]
pub struct GateComparison {
    pub sigmoid: Vec<(LossSpec, RateFitResult)>,
    pub softmax: Vec<(LossSpec, RateFitResult)>,
}

/// Run the sweep twice — sigmoid and softmax gating in both the ground truth
/// and the fitted model, same seeds — and report both slopes.
pub fn compare_gates(cfg: &SweepConfig) -> Result<GateComparison> {
    let mut sigmoid_cfg = cfg.clone();
    sigmoid_cfg.ground_truth.gating = GatingKind::Sigmoid;
    let mut softmax_cfg = cfg.clone();
    softmax_cfg.ground_truth.gating = GatingKind::Softmax;
    Ok(GateComparison {
        sigmoid: rate_report(&run_sweep(&sigmoid_cfg)?)?,
        softmax: rate_report(&run_sweep(&softmax_cfg)?)?,
    })
}

// --- CSV / report rendering --------------------------------------------------

fn fmt_r(loss: LossSpec) -> String {
    loss.r().map(|r| format!("{r}")).unwrap_or_default()
}

/// `regime,gating,activation,n,replicate,loss_name,r,value,diverged,seed`
pub fn raw_csv(result: &SweepResult) -> String {
    let gt = &result.config.ground_truth;
    let mut out = String::from("regime,gating,activation,n,replicate,loss_name,r,value,diverged,seed\n");
    for row in &result.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.16e},{},{}\n",
            regime_str(gt.regime),
            gating_str(gt.gating),
            activation_str(gt.activation),
            row.n,
            row.replicate,
            row.loss.name(),
            fmt_r(row.loss),
            row.value,
            row.diverged,
            row.seed
        ));
    }
    out
}

/// `n,loss_name,mean,std,two_sigma,count` — loss_name carries the D2 exponent
/// (`d2:1`) so multiple exponents stay distinct.
pub fn aggregate_csv(result: &SweepResult) -> String {
    let mut out = String::from("n,loss_name,mean,std,two_sigma,count\n");
    for &loss in &result.config.losses {
        for stat in aggregate(&result.rows, loss) {
            out.push_str(&format!(
                "{},{},{:.16e},{:.16e},{:.16e},{}\n",
                stat.n, loss.key(), stat.mean, stat.std, stat.two_sigma, stat.count
            ));
        }
    }
    out
}

/// `loss_name,slope,intercept,r_squared`
pub fn rate_csv(report: &[(LossSpec, RateFitResult)]) -> String {
    let mut out = String::from("loss_name,slope,intercept,r_squared\n");
    for (loss, fit) in report {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            loss.key(),
            fit.slope,
            fit.intercept,
            fit.r_squared
        ));
    }
    out
}

/// Log-log plot data with a two-sigma band:
/// `loss_name,log10_n,log10_mean,band_lower,band_upper` (band in log10; the
/// lower edge clamps at mean/10 when mean - 2*std is non-positive).
pub fn plot_data_csv(result: &SweepResult) -> String {
    let mut out = String::from("loss_name,log10_n,log10_mean,band_lower,band_upper\n");
    for &loss in &result.config.losses {
        for stat in aggregate(&result.rows, loss) {
            if !(stat.mean > 0.0) {
                continue;
            }
            let lower = (stat.mean - stat.two_sigma).max(stat.mean / 10.0);
            let upper = stat.mean + stat.two_sigma;
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                loss.key(),
                (stat.n as f64).log10(),
                stat.mean.log10(),
                lower.log10(),
                upper.log10()
            ));
        }
    }
    out
}

/// Human-readable paired report for [`compare_gates`].
pub fn gate_comparison_report(cmp: &GateComparison) -> String {
    let mut out = String::new();
    for (label, report) in [("sigmoid", &cmp.sigmoid), ("softmax", &cmp.softmax)] {
        out.push_str(&format!("[{label}]\n"));
        for (loss, fit) in report {
            out.push_str(&format!(
                "  {}: slope {:.4}, intercept {:.4}, r^2 {:.4}\n",
                loss.key(),
                fit.slope,
                fit.intercept,
                fit.r_squared
            ));
            for stat in &fit.per_n {
                out.push_str(&format!(
                    "    n={:<8} mean {:.6e} (2s {:.3e}, count {})\n",
                    stat.n, stat.mean, stat.two_sigma, stat.count
                ));
            }
        }
    }
    out
}
