//! Numerical diagnostics for the strong/weak identifiability conditions,
//! exact PDE dependency residuals, and the slow-convergence sequence
//! constructions.
//!
//! Everything here works with the weight-times-expert product
//! `F(x, beta1, beta0, eta) = sigma(beta1 . x + beta0) * phi(a . x + b)`.
//! Derivative entries are evaluated analytically; ReLU'' is taken to be
//! identically zero, and columns that are consequently zero almost
//! everywhere are dropped from the rank test and reported rather than
//! failing the class.

use crate::error::{MoeError, Result};
use crate::model::{dot, logit, sigmoid, Atom, ExpertActivation, GatingKind, MixingMeasure};
use crate::rng::Rng64;
use nalgebra::DMatrix;

/// Which derivative family the class enumerates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdentMode {
    /// First- and second-order derivatives in (beta1, eta) at beta1 = 0,
    /// plus the weak first-order family.
    Strong,
    /// First-order derivatives in (beta1, beta0, eta) at the atom's own
    /// parameters only.
    Weak,
}

/// A single derivative of F, identified by coordinate indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivKind {
    // Weak family, evaluated at (beta1_i, beta0_i, eta_i).
    WeakBeta1(usize),
    WeakBeta0,
    WeakA(usize),
    WeakB,
    // Strong family, evaluated at (0_d, beta0_i, eta_i).
    FirstBeta1(usize),
    FirstA(usize),
    FirstB,
    SecondBeta1Beta1(usize, usize),
    SecondBeta1A(usize, usize),
    SecondBeta1B(usize),
    SecondAA(usize, usize),
    SecondAB(usize),
    SecondBB,
}

impl DerivKind {
    pub fn order(&self) -> u8 {
        match self {
            DerivKind::WeakBeta1(_)
            | DerivKind::WeakBeta0
            | DerivKind::WeakA(_)
            | DerivKind::WeakB
            | DerivKind::FirstBeta1(_)
            | DerivKind::FirstA(_)
            | DerivKind::FirstB => 1,
            _ => 2,
        }
    }

    fn label(&self) -> String {
        match self {
            DerivKind::WeakBeta1(u) => format!("dF/dbeta1_{u}"),
            DerivKind::WeakBeta0 => "dF/dbeta0".into(),
            DerivKind::WeakA(u) => format!("dF/da_{u}"),
            DerivKind::WeakB => "dF/db".into(),
            DerivKind::FirstBeta1(u) => format!("dF/dbeta1_{u}@0"),
            DerivKind::FirstA(u) => format!("dF/da_{u}@0"),
            DerivKind::FirstB => "dF/db@0".into(),
            DerivKind::SecondBeta1Beta1(u, v) => format!("d2F/dbeta1_{u} dbeta1_{v}@0"),
            DerivKind::SecondBeta1A(u, v) => format!("d2F/dbeta1_{u} da_{v}@0"),
            DerivKind::SecondBeta1B(u) => format!("d2F/dbeta1_{u} db@0"),
            DerivKind::SecondAA(u, v) => format!("d2F/da_{u} da_{v}@0"),
            DerivKind::SecondAB(u) => format!("d2F/da_{u} db@0"),
            DerivKind::SecondBB => "d2F/db db@0".into(),
        }
    }
}

/// One labeled function evaluator `x -> scalar`.
#[derive(Debug, Clone)]
pub struct DerivEntry {
    pub atom: usize,
    pub kind: DerivKind,
    pub label: String,
}

/// The enumerated derivative family for a list of atoms.
#[derive(Debug, Clone)]
pub struct DerivativeClass {
    pub entries: Vec<DerivEntry>,
    pub params: Vec<Atom>,
    pub activation: ExpertActivation,
    pub mode: IdentMode,
}

/// Enumerate the derivative class for the given mode.
///
/// Strong mode per atom: d+q first-order entries in (beta1, eta) at beta1=0,
/// (d+q)(d+q+1)/2 symmetric second-order entries, plus the d+1+q weak-family
/// entries (q = d+1 for ridge experts). Weak mode holds only the latter.
pub fn build_derivative_class(
    activation: ExpertActivation,
    params: &[Atom],
    mode: IdentMode,
) -> Result<DerivativeClass> {
    if params.is_empty() {
        return Err(MoeError::InvalidArgument("empty parameter list".into()));
    }
    activation.validate()?;
    let d = params[0].dim();
    for atom in params {
        atom.validate()?;
        if atom.dim() != d {
            return Err(MoeError::DimensionMismatch(
                "atoms have inconsistent dimensions".into(),
            ));
        }
    }
    for i in 0..params.len() {
        for j in (i + 1)..params.len() {
            if params[i] == params[j] {
                return Err(MoeError::InvalidArgument(format!(
                    "atoms {i} and {j} are identical; parameters must be pairwise distinct"
                )));
            }
        }
    }

    let mut entries = Vec::new();
    for (idx, _) in params.iter().enumerate() {
        if mode == IdentMode::Strong {
            // First order in (beta1, eta) at beta1 = 0.
            let mut first = Vec::new();
            for u in 0..d {
                first.push(DerivKind::FirstBeta1(u));
            }
            for u in 0..d {
                first.push(DerivKind::FirstA(u));
            }
            first.push(DerivKind::FirstB);
            // Symmetric second order over the same coordinates; mixed
            // partials appear once.
            let coords = first.clone();
            let mut second = Vec::new();
            for p in 0..coords.len() {
                for q in p..coords.len() {
                    second.push(pair_kind(coords[p], coords[q]));
                }
            }
            for kind in first.into_iter().chain(second) {
                entries.push(DerivEntry { atom: idx, kind, label: entry_label(idx, kind) });
            }
        }
        // Weak family at the atom's own parameters (both modes).
        let mut weak = Vec::new();
        for u in 0..d {
            weak.push(DerivKind::WeakBeta1(u));
        }
        weak.push(DerivKind::WeakBeta0);
        for u in 0..d {
            weak.push(DerivKind::WeakA(u));
        }
        weak.push(DerivKind::WeakB);
        for kind in weak {
            entries.push(DerivEntry { atom: idx, kind, label: entry_label(idx, kind) });
        }
    }
    Ok(DerivativeClass { entries, params: params.to_vec(), activation, mode })
}

fn entry_label(atom: usize, kind: DerivKind) -> String {
    format!("atom{atom} {}", kind.label())
}

fn pair_kind(p: DerivKind, q: DerivKind) -> DerivKind {
    use DerivKind::*;
    match (p, q) {
        (FirstBeta1(u), FirstBeta1(v)) => SecondBeta1Beta1(u, v),
        (FirstBeta1(u), FirstA(v)) => SecondBeta1A(u, v),
        (FirstBeta1(u), FirstB) => SecondBeta1B(u),
        (FirstA(u), FirstA(v)) => SecondAA(u, v),
        (FirstA(u), FirstB) => SecondAB(u),
        (FirstB, FirstB) => SecondBB,
        _ => unreachable!("coordinates enumerated in beta1 < a < b order"),
    }
}

impl DerivativeClass {
    pub fn dim(&self) -> usize {
        self.params[0].dim()
    }

    pub fn num_functions(&self) -> usize {
        self.entries.len()
    }

    /// Evaluate one entry at x, analytically.
    pub fn eval_entry(&self, entry: &DerivEntry, x: &[f64]) -> f64 {
        let atom = &self.params[entry.atom];
        let act = self.activation;
        match entry.kind {
            DerivKind::WeakBeta1(_)
            | DerivKind::WeakBeta0
            | DerivKind::WeakA(_)
            | DerivKind::WeakB => {
                let l = dot(&atom.beta1, x) + atom.beta0;
                let s = sigmoid(l);
                let s1 = s * (1.0 - s);
                let z = dot(&atom.a, x) + atom.b;
                match entry.kind {
                    DerivKind::WeakBeta1(u) => s1 * x[u] * act.eval(z),
                    DerivKind::WeakBeta0 => s1 * act.eval(z),
                    DerivKind::WeakA(u) => s * act.deriv(z) * x[u],
                    DerivKind::WeakB => s * act.deriv(z),
                    _ => unreachable!(),
                }
            }
            kind => {
                // Strong family: gate evaluated at beta1 = 0, so the logit is
                // the constant beta0.
                let s = sigmoid(atom.beta0);
                let s1 = s * (1.0 - s);
                let s2 = s1 * (1.0 - 2.0 * s);
                let z = dot(&atom.a, x) + atom.b;
                match kind {
                    DerivKind::FirstBeta1(u) => s1 * x[u] * act.eval(z),
                    DerivKind::FirstA(u) => s * act.deriv(z) * x[u],
                    DerivKind::FirstB => s * act.deriv(z),
                    DerivKind::SecondBeta1Beta1(u, v) => s2 * x[u] * x[v] * act.eval(z),
                    DerivKind::SecondBeta1A(u, v) => s1 * x[u] * x[v] * act.deriv(z),
                    DerivKind::SecondBeta1B(u) => s1 * x[u] * act.deriv(z),
                    DerivKind::SecondAA(u, v) => s * act.second_deriv(z) * x[u] * x[v],
                    DerivKind::SecondAB(u) => s * act.second_deriv(z) * x[u],
                    DerivKind::SecondBB => s * act.second_deriv(z),
                    _ => unreachable!(),
                }
            }
        }
    }
}

/// Linear-independence verdict for a derivative class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndependenceVerdict {
    Independent,
    Dependent,
}

/// Result of the numerical rank test.
#[derive(Debug, Clone)]
pub struct IndependenceReport {
    pub num_functions: usize,
    pub num_samples: usize,
    /// Singular values of the sampled, RMS-normalized matrix, descending.
    pub singular_values: Vec<f64>,
    pub min_sv_ratio: f64,
    pub verdict: IndependenceVerdict,
    /// Entry-index groups whose columns are numerically collinear.
    pub dependent_subsets: Vec<Vec<usize>>,
    /// Entries whose sampled RMS fell below tolerance and were excluded.
    pub dropped_zero_columns: Vec<usize>,
}

pub const DEFAULT_SV_TOL: f64 = 1e-6;
const ZERO_COLUMN_RMS: f64 = 1e-10;
const SUBSET_COMPONENT_THRESHOLD: f64 = 0.1;

/// Default sample count for [`independence_test`].
pub fn default_sample_count(num_functions: usize) -> usize {
    2000.max(10 * num_functions)
}

/// Sample the class at `m` uniform points and test numerical linear
/// independence via singular values of the normalized design matrix.
pub fn independence_test(
    cls: &DerivativeClass,
    m: usize,
    tol: f64,
    rng: &mut Rng64,
) -> Result<IndependenceReport> {
    let k = cls.num_functions();
    if m < 3 * k {
        return Err(MoeError::InvalidArgument(format!(
            "need m >= 3 * num_functions = {}, got {m}",
            3 * k
        )));
    }
    let d = cls.dim();
    let mut columns = vec![vec![0.0f64; m]; k];
    let mut x = vec![0.0; d];
    for row in 0..m {
        for v in &mut x {
            *v = rng.uniform_symmetric();
        }
        for (col, entry) in cls.entries.iter().enumerate() {
            columns[col][row] = cls.eval_entry(entry, &x);
        }
    }

    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (col, values) in columns.iter().enumerate() {
        let rms = (values.iter().map(|v| v * v).sum::<f64>() / m as f64).sqrt();
        if rms < ZERO_COLUMN_RMS {
            dropped.push(col);
        } else {
            kept.push((col, rms));
        }
    }
    if kept.is_empty() {
        return Err(MoeError::DegenerateClass(
            "all derivative columns are numerically zero".into(),
        ));
    }

    let mat = DMatrix::from_fn(m, kept.len(), |row, j| {
        let (col, rms) = kept[j];
        columns[col][row] / rms
    });
    let svd = mat.svd(false, true);
    let mut svs: Vec<f64> = svd.singular_values.iter().cloned().collect();
    svs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let sv_max = svs[0];
    let sv_min = *svs.last().unwrap();
    let min_sv_ratio = sv_min / sv_max;
    let verdict = if min_sv_ratio < tol {
        IndependenceVerdict::Dependent
    } else {
        IndependenceVerdict::Independent
    };

    // Inspect right singular vectors of near-zero singular values for the
    // entries that participate in each collinearity.
    let mut dependent_subsets = Vec::new();
    if let Some(v_t) = &svd.v_t {
        for (row, &sv) in svd.singular_values.iter().enumerate() {
            if sv / sv_max < tol {
                let mut subset = Vec::new();
                for j in 0..kept.len() {
                    if v_t[(row, j)].abs() > SUBSET_COMPONENT_THRESHOLD {
                        subset.push(kept[j].0);
                    }
                }
                if !subset.is_empty() {
                    dependent_subsets.push(subset);
                }
            }
        }
    }

    Ok(IndependenceReport {
        num_functions: k,
        num_samples: m,
        singular_values: svs,
        min_sv_ratio,
        verdict,
        dependent_subsets,
        dropped_zero_columns: dropped,
    })
}

impl IndependenceReport {
    /// Human-readable report, mapped back to entry labels.
    pub fn render(&self, cls: &DerivativeClass) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "derivative class: {} functions, {} samples\n",
            self.num_functions, self.num_samples
        ));
        out.push_str(&format!(
            "min singular-value ratio: {:.3e}\nverdict: {:?}\n",
            self.min_sv_ratio, self.verdict
        ));
        if !self.dropped_zero_columns.is_empty() {
            out.push_str("dropped (zero a.e.):\n");
            for &idx in &self.dropped_zero_columns {
                out.push_str(&format!("  {}\n", cls.entries[idx].label));
            }
        }
        for (i, subset) in self.dependent_subsets.iter().enumerate() {
            out.push_str(&format!("dependent subset {}:\n", i + 1));
            for &idx in subset {
                out.push_str(&format!("  {}\n", cls.entries[idx].label));
            }
        }
        out
    }

    /// Singular values as a one-column CSV.
    pub fn singular_values_csv(&self) -> String {
        let mut out = String::from("singular_value\n");
        for sv in &self.singular_values {
            out.push_str(&format!("{sv:.16e}\n"));
        }
        out
    }
}

// --- PDE dependency residuals ---------------------------------------------

/// Residual of the gating/expert interaction at beta1 = 0, a = 0: checks
/// dF/dbeta1 = C * dF/da with C = (1 - sigma(beta0)) * phi(b) / phi'(b).
pub fn pde_residual_input_independent(
    activation: ExpertActivation,
    beta0: f64,
    b: f64,
    probe_xs: &[Vec<f64>],
) -> Result<f64> {
    let phi = activation.eval(b);
    let dphi = activation.deriv(b);
    if dphi == 0.0 {
        return Err(MoeError::SingularConstant(format!(
            "phi'({b}) = 0 for {activation:?}"
        )));
    }
    let c = (1.0 - sigmoid(beta0)) * phi / dphi;
    let s = sigmoid(beta0);
    let s1 = s * (1.0 - s);
    let mut max_res: f64 = 0.0;
    for x in probe_xs {
        // dF/dbeta1_u = s1 * phi(b) * x_u ; dF/da_u = s * phi'(b) * x_u
        let mut num = 0.0;
        let mut denom = 0.0;
        for &xu in x {
            let lhs = s1 * phi * xu;
            let rhs = c * s * dphi * xu;
            num += (lhs - rhs) * (lhs - rhs);
            denom += lhs * lhs;
        }
        max_res = max_res.max(num.sqrt() / (1.0 + denom.sqrt()));
    }
    Ok(max_res)
}

/// Residual of the mixed-partial identity for linear experts:
/// d2F/dbeta1 db - d2F/da dbeta0 at a general parameter point (both sides
/// equal sigma'(l) x).
pub fn pde_residual_polynomial(
    beta1: &[f64],
    beta0: f64,
    a: &[f64],
    b: f64,
    probe_xs: &[Vec<f64>],
) -> Result<f64> {
    if beta1.len() != a.len() {
        return Err(MoeError::DimensionMismatch(
            "beta1 and a must have the same length".into(),
        ));
    }
    let mut max_res: f64 = 0.0;
    for x in probe_xs {
        if x.len() != beta1.len() {
            return Err(MoeError::DimensionMismatch(
                "probe dimension does not match parameters".into(),
            ));
        }
        let l = dot(beta1, x) + beta0;
        let s = sigmoid(l);
        let s1 = s * (1.0 - s);
        let z = dot(a, x) + b;
        let act = ExpertActivation::Identity;
        // F = sigma(l) * phi(a.x + b):
        //   dF/db = sigma(l) phi'(z)      => d2F/dbeta1_u db  = sigma'(l) x_u phi'(z)
        //   dF/da_u = sigma(l) phi'(z) x_u => d2F/da_u dbeta0 = sigma'(l) phi'(z) x_u
        let mut num = 0.0;
        let mut denom = 0.0;
        for &xu in x {
            let lhs = s1 * xu * act.deriv(z);
            let rhs = s1 * act.deriv(z) * xu;
            num += (lhs - rhs) * (lhs - rhs);
            denom += lhs * lhs;
        }
        max_res = max_res.max(num.sqrt() / (1.0 + denom.sqrt()));
    }
    Ok(max_res)
}

// --- slow-convergence sequence constructions -------------------------------

fn check_slow_sequence_preconditions(truth: &MixingMeasure, n: usize) -> Result<()> {
    if truth.gating != GatingKind::Sigmoid {
        return Err(MoeError::InvalidArgument(
            "slow sequences are defined for sigmoid gating".into(),
        ));
    }
    if n == 0 {
        return Err(MoeError::InvalidArgument("sequence index n must be >= 1".into()));
    }
    let first = &truth.atoms[0];
    if first.a.iter().any(|&v| v != 0.0) || first.beta1.iter().any(|&v| v != 0.0) {
        return Err(MoeError::InvalidArgument(
            "construction requires a*_1 = 0 and beta*_11 = 0".into(),
        ));
    }
    Ok(())
}

/// The (k*+1)-atom sequence with a split-weight surplus pair whose expert
/// biases straddle the truth at distance 1/n; the weight sum overshoots by
/// n^{-(r+1)}. For linear experts this gives D_{2,r} = 1/n^{r+1} + 2/n^r
/// exactly while the regression residual is only n^{-(r+1)} * b*_1.
pub fn slow_sequence_linear(truth: &MixingMeasure, n: usize, r: f64) -> Result<MixingMeasure> {
    check_slow_sequence_preconditions(truth, n)?;
    if r < 1.0 {
        return Err(MoeError::InvalidArgument(format!("r={r} must be >= 1")));
    }
    let nf = n as f64;
    let first = &truth.atoms[0];
    let weight_sum = sigmoid(first.beta0) + nf.powf(-(r + 1.0));
    let beta0 = logit(weight_sum / 2.0);
    let d = truth.dim();

    let mut atoms = Vec::with_capacity(truth.len() + 1);
    for offset in 0..2 {
        atoms.push(Atom {
            beta0,
            beta1: vec![0.0; d],
            a: first.a.clone(),
            b: first.b + if offset == 0 { 1.0 / nf } else { -1.0 / nf },
        });
    }
    atoms.extend(truth.atoms[1..].iter().cloned());
    MixingMeasure::new(atoms, truth.gating, truth.activation)
}

/// The (k*+1)-atom sequence whose surplus pair splits the first true weight
/// exactly (sigma(beta0^n) = sigma(beta0*_1)/2) and perturbs the expert bias
/// by c/n and 2c/n.
pub fn slow_sequence_activation(truth: &MixingMeasure, n: usize, c: f64) -> Result<MixingMeasure> {
    check_slow_sequence_preconditions(truth, n)?;
    let nf = n as f64;
    let first = &truth.atoms[0];
    // exp(-beta0^n) = 1 + 2 exp(-beta0*_1)  <=>  sigma(beta0^n) = sigma(beta0*_1)/2
    let beta0 = -(1.0 + 2.0 * (-first.beta0).exp()).ln();
    let d = truth.dim();

    let mut atoms = Vec::with_capacity(truth.len() + 1);
    for copies in 1..=2 {
        atoms.push(Atom {
            beta0,
            beta1: vec![0.0; d],
            a: vec![0.0; d],
            b: first.b + copies as f64 * c / nf,
        });
    }
    atoms.extend(truth.atoms[1..].iter().cloned());
    MixingMeasure::new(atoms, truth.gating, truth.activation)
}
