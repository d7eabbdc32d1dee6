//! Gated mixture-of-experts regression model: types, evaluation and exact
//! analytic gradients of the least-squares batch loss.
//!
//! The regression function is `f_G(x) = sum_i w_i(x) * phi(a_i . x + b_i)`,
//! where the per-expert weight `w_i` is either an independent sigmoid of the
//! gating logit `beta1_i . x + beta0_i` (weights need not sum to one) or a
//! softmax across experts.

use crate::error::{MoeError, Result};
use statrs::function::erf::erfc;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.3989422804014326779399460599343818684;

/// Numerically stable logistic sigmoid.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`].
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Standard normal CDF via erfc (exact, not the tanh approximation).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Scalar activation applied to the ridge pre-activation `a . x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpertActivation {
    ReLU,
    Gelu,
    Identity,
    /// `z^p` with `p >= 1`. `Polynomial(1)` evaluates through the same code
    /// path as `Identity`.
    Polynomial(u32),
}

impl ExpertActivation {
    pub fn validate(&self) -> Result<()> {
        if let ExpertActivation::Polynomial(p) = self {
            if *p == 0 {
                return Err(MoeError::InvalidArgument(
                    "polynomial degree must be >= 1".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn eval(&self, z: f64) -> f64 {
        match self {
            ExpertActivation::ReLU => z.max(0.0),
            ExpertActivation::Gelu => z * normal_cdf(z),
            ExpertActivation::Identity | ExpertActivation::Polynomial(1) => z,
            ExpertActivation::Polynomial(p) => z.powi(*p as i32),
        }
    }

    /// First derivative. ReLU' at exactly 0 is defined as 0.
    pub fn deriv(&self, z: f64) -> f64 {
        match self {
            ExpertActivation::ReLU => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ExpertActivation::Gelu => normal_cdf(z) + z * normal_pdf(z),
            ExpertActivation::Identity | ExpertActivation::Polynomial(1) => 1.0,
            ExpertActivation::Polynomial(p) => *p as f64 * z.powi(*p as i32 - 1),
        }
    }

    /// Second derivative. ReLU'' is taken to be identically 0.
    pub fn second_deriv(&self, z: f64) -> f64 {
        match self {
            ExpertActivation::ReLU => 0.0,
            ExpertActivation::Gelu => (2.0 - z * z) * normal_pdf(z),
            ExpertActivation::Identity | ExpertActivation::Polynomial(1) => 0.0,
            ExpertActivation::Polynomial(2) => 2.0,
            ExpertActivation::Polynomial(p) => {
                (*p as f64) * (*p as f64 - 1.0) * z.powi(*p as i32 - 2)
            }
        }
    }
}

/// Gating network kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatingKind {
    /// Independent per-expert sigmoid weights in (0, 1); do not normalize.
    Sigmoid,
    /// Normalized exponential weights summing to 1 (comparison baseline).
    Softmax,
}

/// One mixture component: gating bias/slope and ridge expert parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub beta0: f64,
    pub beta1: Vec<f64>,
    pub a: Vec<f64>,
    pub b: f64,
}

impl Atom {
    pub fn dim(&self) -> usize {
        self.beta1.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta1.len() != self.a.len() {
            return Err(MoeError::DimensionMismatch(format!(
                "beta1 has length {} but a has length {}",
                self.beta1.len(),
                self.a.len()
            )));
        }
        let finite = self.beta0.is_finite()
            && self.b.is_finite()
            && self.beta1.iter().all(|v| v.is_finite())
            && self.a.iter().all(|v| v.is_finite());
        if !finite {
            return Err(MoeError::InvalidArgument("atom has non-finite entries".into()));
        }
        Ok(())
    }
}

/// A mixing measure: an ordered list of atoms plus gating and activation
/// choices. Fully determines the regression function `f_G`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMeasure {
    pub atoms: Vec<Atom>,
    pub gating: GatingKind,
    pub activation: ExpertActivation,
}

impl MixingMeasure {
    pub fn new(atoms: Vec<Atom>, gating: GatingKind, activation: ExpertActivation) -> Result<Self> {
        if atoms.is_empty() {
            return Err(MoeError::InvalidArgument("measure needs at least one atom".into()));
        }
        activation.validate()?;
        let d = atoms[0].dim();
        for atom in &atoms {
            atom.validate()?;
            if atom.dim() != d {
                return Err(MoeError::DimensionMismatch(
                    "atoms have inconsistent dimensions".into(),
                ));
            }
        }
        Ok(MixingMeasure { atoms, gating, activation })
    }

    /// Input dimension d.
    pub fn dim(&self) -> usize {
        self.atoms[0].dim()
    }

    /// Number of atoms k'.
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(MoeError::DimensionMismatch(format!(
                "input has length {} but measure has dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], x: &[f64]) -> f64 {
    a.iter().zip(x).map(|(ai, xi)| ai * xi).sum()
}

/// Per-expert mixture weights at `x`.
pub fn gate_weights(measure: &MixingMeasure, x: &[f64]) -> Result<Vec<f64>> {
    measure.check_input(x)?;
    let logits: Vec<f64> = measure
        .atoms
        .iter()
        .map(|atom| dot(&atom.beta1, x) + atom.beta0)
        .collect();
    Ok(weights_from_logits(measure.gating, &logits))
}

fn weights_from_logits(gating: GatingKind, logits: &[f64]) -> Vec<f64> {
    match gating {
        GatingKind::Sigmoid => logits.iter().map(|&l| sigmoid(l)).collect(),
        GatingKind::Softmax => {
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.iter().map(|&e| e / sum).collect()
        }
    }
}

/// Evaluate one ridge expert `phi(a . x + b)`.
pub fn expert_eval(activation: ExpertActivation, a: &[f64], b: f64, x: &[f64]) -> Result<f64> {
    if a.len() != x.len() {
        return Err(MoeError::DimensionMismatch(format!(
            "expert slope has length {} but input has length {}",
            a.len(),
            x.len()
        )));
    }
    Ok(activation.eval(dot(a, x) + b))
}

/// Evaluate the regression function `f_G(x)`.
pub fn regression_eval(measure: &MixingMeasure, x: &[f64]) -> Result<f64> {
    measure.check_input(x)?;
    let weights = gate_weights(measure, x)?;
    let mut f = 0.0;
    for (atom, w) in measure.atoms.iter().zip(&weights) {
        f += w * measure.activation.eval(dot(&atom.a, x) + atom.b);
    }
    Ok(f)
}

/// Gradient of the batch loss for one atom.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomGradient {
    pub d_beta0: f64,
    pub d_beta1: Vec<f64>,
    pub d_a: Vec<f64>,
    pub d_b: f64,
}

impl AtomGradient {
    fn zeros(d: usize) -> Self {
        AtomGradient {
            d_beta0: 0.0,
            d_beta1: vec![0.0; d],
            d_a: vec![0.0; d],
            d_b: 0.0,
        }
    }
}

/// Gradient of the batch loss with respect to all atom parameters.
///
/// Flattening is atom-major with field order (beta0, beta1, a, b), giving a
/// vector of length `k' * (2d + 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub atoms: Vec<AtomGradient>,
}

impl ParamGradient {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.atoms {
            out.push(g.d_beta0);
            out.extend_from_slice(&g.d_beta1);
            out.extend_from_slice(&g.d_a);
            out.push(g.d_b);
        }
        out
    }
}

/// Flatten a measure's parameters in the same layout as [`ParamGradient`].
pub fn flatten_params(measure: &MixingMeasure) -> Vec<f64> {
    let mut out = Vec::new();
    for atom in &measure.atoms {
        out.push(atom.beta0);
        out.extend_from_slice(&atom.beta1);
        out.extend_from_slice(&atom.a);
        out.push(atom.b);
    }
    out
}

/// Overwrite a measure's parameters from a flat vector (inverse of
/// [`flatten_params`]).
pub fn unflatten_params(measure: &mut MixingMeasure, flat: &[f64]) {
    let d = measure.dim();
    assert_eq!(flat.len(), measure.len() * (2 * d + 2));
    let mut it = flat.iter();
    for atom in &mut measure.atoms {
        atom.beta0 = *it.next().unwrap();
        for v in &mut atom.beta1 {
            *v = *it.next().unwrap();
        }
        for v in &mut atom.a {
            *v = *it.next().unwrap();
        }
        atom.b = *it.next().unwrap();
    }
}

/// Mean squared residual over the batch and its exact analytic gradient.
pub fn loss_and_grad(
    measure: &MixingMeasure,
    x_batch: &[Vec<f64>],
    y_batch: &[f64],
) -> Result<(f64, ParamGradient)> {
    if x_batch.is_empty() {
        return Err(MoeError::InvalidArgument("empty batch".into()));
    }
    if x_batch.len() != y_batch.len() {
        return Err(MoeError::DimensionMismatch(format!(
            "batch has {} inputs but {} responses",
            x_batch.len(),
            y_batch.len()
        )));
    }
    let d = measure.dim();
    let k = measure.len();
    let m = x_batch.len() as f64;
    let act = measure.activation;

    let mut loss = 0.0;
    let mut grad = ParamGradient {
        atoms: (0..k).map(|_| AtomGradient::zeros(d)).collect(),
    };

    let mut logits = vec![0.0; k];
    let mut zs = vec![0.0; k];
    let mut experts = vec![0.0; k];
    for (x, &y) in x_batch.iter().zip(y_batch) {
        measure.check_input(x)?;
        for (i, atom) in measure.atoms.iter().enumerate() {
            logits[i] = dot(&atom.beta1, x) + atom.beta0;
            zs[i] = dot(&atom.a, x) + atom.b;
            experts[i] = act.eval(zs[i]);
        }
        let weights = weights_from_logits(measure.gating, &logits);
        let f: f64 = weights.iter().zip(&experts).map(|(w, e)| w * e).sum();
        let resid = y - f;
        loss += resid * resid / m;
        // dL/df for this sample
        let coef = -2.0 * resid / m;

        for i in 0..k {
            let w = weights[i];
            // df/d(logit_i)
            let d_logit = match measure.gating {
                GatingKind::Sigmoid => w * (1.0 - w) * experts[i],
                GatingKind::Softmax => w * (experts[i] - f),
            };
            let d_expert = w * act.deriv(zs[i]);
            let g = &mut grad.atoms[i];
            g.d_beta0 += coef * d_logit;
            g.d_b += coef * d_expert;
            for u in 0..d {
                g.d_beta1[u] += coef * d_logit * x[u];
                g.d_a[u] += coef * d_expert * x[u];
            }
        }
    }
    Ok((loss, grad))
}

// --- flat text record format ---------------------------------------------

fn gating_name(g: GatingKind) -> &'static str {
    match g {
        GatingKind::Sigmoid => "sigmoid",
        GatingKind::Softmax => "softmax",
    }
}

fn activation_name(a: ExpertActivation) -> (&'static str, u32) {
    match a {
        ExpertActivation::ReLU => ("relu", 1),
        ExpertActivation::Gelu => ("gelu", 1),
        ExpertActivation::Identity => ("identity", 1),
        ExpertActivation::Polynomial(p) => ("poly", p),
    }
}

impl MixingMeasure {
    /// Serialize to the flat text record: a header line with dimensions and
    /// kinds, then one whitespace-separated line per atom with fields
    /// `beta0 beta1[0..d) a[0..d) b` at 17 significant digits.
    pub fn to_record(&self) -> String {
        let (act, degree) = activation_name(self.activation);
        let mut out = format!(
            "d={} k={} gating={} activation={} degree={}\n",
            self.dim(),
            self.len(),
            gating_name(self.gating),
            act,
            degree
        );
        for atom in &self.atoms {
            let mut fields = Vec::with_capacity(2 * self.dim() + 2);
            fields.push(format!("{:.16e}", atom.beta0));
            fields.extend(atom.beta1.iter().map(|v| format!("{v:.16e}")));
            fields.extend(atom.a.iter().map(|v| format!("{v:.16e}")));
            fields.push(format!("{:.16e}", atom.b));
            out.push_str(&fields.join(" "));
            out.push('\n');
        }
        out
    }

    /// Parse the record format produced by [`MixingMeasure::to_record`].
    pub fn from_record(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| MoeError::Parse("empty measure record".into()))?;
        let mut d = None;
        let mut k = None;
        let mut gating = None;
        let mut act = None;
        let mut degree = 1u32;
        for field in header.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| MoeError::Parse(format!("bad header field `{field}`")))?;
            match key {
                "d" => d = Some(parse_usize(value)?),
                "k" => k = Some(parse_usize(value)?),
                "gating" => {
                    gating = Some(match value {
                        "sigmoid" => GatingKind::Sigmoid,
                        "softmax" => GatingKind::Softmax,
                        other => return Err(MoeError::Parse(format!("unknown gating `{other}`"))),
                    })
                }
                "activation" => act = Some(value.to_string()),
                "degree" => degree = parse_usize(value)? as u32,
                other => return Err(MoeError::Parse(format!("unknown header key `{other}`"))),
            }
        }
        let d = d.ok_or_else(|| MoeError::Parse("header missing d".into()))?;
        let k = k.ok_or_else(|| MoeError::Parse("header missing k".into()))?;
        let gating = gating.ok_or_else(|| MoeError::Parse("header missing gating".into()))?;
        let activation = match act.as_deref() {
            Some("relu") => ExpertActivation::ReLU,
            Some("gelu") => ExpertActivation::Gelu,
            Some("identity") => ExpertActivation::Identity,
            Some("poly") => ExpertActivation::Polynomial(degree),
            Some(other) => return Err(MoeError::Parse(format!("unknown activation `{other}`"))),
            None => return Err(MoeError::Parse("header missing activation".into())),
        };

        let mut atoms = Vec::with_capacity(k);
        for line in lines {
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|e| MoeError::Parse(format!("bad float `{tok}`: {e}")))
                })
                .collect::<Result<_>>()?;
            if values.len() != 2 * d + 2 {
                return Err(MoeError::Parse(format!(
                    "atom line has {} fields, expected {}",
                    values.len(),
                    2 * d + 2
                )));
            }
            atoms.push(Atom {
                beta0: values[0],
                beta1: values[1..1 + d].to_vec(),
                a: values[1 + d..1 + 2 * d].to_vec(),
                b: values[1 + 2 * d],
            });
        }
        if atoms.len() != k {
            return Err(MoeError::Parse(format!(
                "record declares k={} but has {} atom lines",
                k,
                atoms.len()
            )));
        }
        MixingMeasure::new(atoms, gating, activation)
    }
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|e| MoeError::Parse(format!("bad integer `{s}`: {e}")))
}
