//! Voronoi cell assignment, the parameter-space losses D1, D2,r, D3, and the
//! Monte Carlo L2 distance between regression functions.
//!
//! Atoms of a fitted measure are assigned to cells of a reference measure by
//! nearest reference atom in the concatenated (beta1, a, b) coordinates under
//! the Euclidean norm (gating bias excluded). Cells with two or more fitted
//! atoms use the over-specified (squared / r-th power) branch of D1 and D2,
//! singleton cells the exact-specified (first-order) branch, and empty cells
//! contribute zero.

use crate::error::{MoeError, Result};
use crate::model::{regression_eval, sigmoid, Atom, GatingKind, MixingMeasure};
use crate::rng::Rng64;

/// Assignment of fitted atoms to the Voronoi cells of a reference measure.
#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiAssignment {
    /// cells[j] lists the fitted-atom indices assigned to reference atom j.
    pub cells: Vec<Vec<usize>>,
    pub cardinalities: Vec<usize>,
}

/// One evaluated Voronoi loss, split into its summands.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub weight_term: f64,
    pub over_specified_term: f64,
    pub exact_specified_term: f64,
    /// Number of cells treated as over-specified (cardinality >= 2).
    pub k_bar: usize,
}

impl LossBreakdown {
    fn assemble(weight: f64, over: f64, exact: f64, k_bar: usize) -> Self {
        LossBreakdown {
            total: weight + over + exact,
            weight_term: weight,
            over_specified_term: over,
            exact_specified_term: exact,
            k_bar,
        }
    }

    /// CSV row matching the documented column layout
    /// `loss_name,r,total,weight_term,over_term,exact_term,k_bar`.
    pub fn csv_row(&self, loss_name: &str, r: Option<f64>) -> String {
        format!(
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            loss_name,
            r.map(|v| v.to_string()).unwrap_or_default(),
            self.total,
            self.weight_term,
            self.over_specified_term,
            self.exact_specified_term,
            self.k_bar
        )
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Squared distance between atoms in the (beta1, a, b) coordinates.
fn omega_dist_sq(p: &Atom, q: &Atom) -> f64 {
    let mut s = 0.0;
    for (u, v) in p.beta1.iter().zip(&q.beta1) {
        s += (u - v) * (u - v);
    }
    for (u, v) in p.a.iter().zip(&q.a) {
        s += (u - v) * (u - v);
    }
    s += (p.b - q.b) * (p.b - q.b);
    s
}

/// Nearest-reference-atom assignment; ties break to the lowest reference index.
pub fn assign_cells(
    fitted: &MixingMeasure,
    reference: &MixingMeasure,
) -> Result<VoronoiAssignment> {
    if fitted.dim() != reference.dim() {
        return Err(MoeError::DimensionMismatch(format!(
            "fitted dimension {} != reference dimension {}",
            fitted.dim(),
            reference.dim()
        )));
    }
    let mut cells = vec![Vec::new(); reference.len()];
    for (i, atom) in fitted.atoms.iter().enumerate() {
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for (j, ref_atom) in reference.atoms.iter().enumerate() {
            let dist = omega_dist_sq(atom, ref_atom);
            if dist < best_dist {
                best_dist = dist;
                best = j;
            }
        }
        cells[best].push(i);
    }
    let cardinalities = cells.iter().map(|c| c.len()).collect();
    Ok(VoronoiAssignment { cells, cardinalities })
}

fn delta(u: &[f64], v: &[f64]) -> Vec<f64> {
    u.iter().zip(v).map(|(a, b)| a - b).collect()
}

/// Difference in the stacked expert coordinates eta = (a, b).
fn delta_eta_norm(fitted: &Atom, reference: &Atom) -> f64 {
    let mut s = 0.0;
    for (u, v) in fitted.a.iter().zip(&reference.a) {
        s += (u - v) * (u - v);
    }
    s += (fitted.b - reference.b) * (fitted.b - reference.b);
    s.sqrt()
}

/// Per-atom gate weights at x = 0 under the measure's own gating rule:
/// sigma(beta0) for sigmoid gating, normalized exp(beta0) for softmax gating.
/// Softmax weights are translation-invariant in beta0, matching the model's
/// actual invariance, so drift along that null direction does not register as
/// weight error.
fn gate_weights(m: &MixingMeasure) -> Vec<f64> {
    match m.gating {
        GatingKind::Sigmoid => m.atoms.iter().map(|a| sigmoid(a.beta0)).collect(),
        GatingKind::Softmax => {
            let mx = m.atoms.iter().map(|a| a.beta0).fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = m.atoms.iter().map(|a| (a.beta0 - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        }
    }
}

/// Voronoi loss D1: weight-sum differences over all cells, squared parameter
/// differences on over-specified cells, first-order on exact-specified cells.
pub fn loss_d1(fitted: &MixingMeasure, truth: &MixingMeasure) -> Result<LossBreakdown> {
    let assignment = assign_cells(fitted, truth)?;
    let fitted_w = gate_weights(fitted);
    let truth_w = gate_weights(truth);
    let mut weight = 0.0;
    let mut over = 0.0;
    let mut exact = 0.0;
    let mut k_bar = 0;
    for (j, cell) in assignment.cells.iter().enumerate() {
        let truth_atom = &truth.atoms[j];
        let weight_sum: f64 = cell.iter().map(|&i| fitted_w[i]).sum();
        weight += (weight_sum - truth_w[j]).abs();
        if cell.len() >= 2 {
            k_bar += 1;
            for &i in cell {
                let atom = &fitted.atoms[i];
                let db1 = norm2(&delta(&atom.beta1, &truth_atom.beta1));
                let de = delta_eta_norm(atom, truth_atom);
                over += db1 * db1 + de * de;
            }
        } else {
            for &i in cell {
                let atom = &fitted.atoms[i];
                exact += norm2(&delta(&atom.beta1, &truth_atom.beta1))
                    + delta_eta_norm(atom, truth_atom);
            }
        }
    }
    Ok(LossBreakdown::assemble(weight, over, exact, k_bar))
}

/// Voronoi loss D2,r. Over-specified cells contribute the weight-sum
/// difference plus r-th powers of the slope/expert differences; exact cells
/// contribute r-th powers of all four blocks including the gating bias.
pub fn loss_d2(fitted: &MixingMeasure, truth: &MixingMeasure, r: f64) -> Result<LossBreakdown> {
    if r < 1.0 {
        return Err(MoeError::InvalidArgument(format!("r={r} must be >= 1")));
    }
    let assignment = assign_cells(fitted, truth)?;
    let fitted_w = gate_weights(fitted);
    let truth_w = gate_weights(truth);
    let mut weight = 0.0;
    let mut over = 0.0;
    let mut exact = 0.0;
    let mut k_bar = 0;
    for (j, cell) in assignment.cells.iter().enumerate() {
        let truth_atom = &truth.atoms[j];
        if cell.len() >= 2 {
            k_bar += 1;
            let weight_sum: f64 = cell.iter().map(|&i| fitted_w[i]).sum();
            weight += (weight_sum - truth_w[j]).abs();
            for &i in cell {
                let atom = &fitted.atoms[i];
                over += norm2(&delta(&atom.beta1, &truth_atom.beta1)).powf(r)
                    + norm2(&delta(&atom.a, &truth_atom.a)).powf(r)
                    + (atom.b - truth_atom.b).abs().powf(r);
            }
        } else {
            for &i in cell {
                let atom = &fitted.atoms[i];
                exact += (atom.beta0 - truth_atom.beta0).abs().powf(r)
                    + norm2(&delta(&atom.beta1, &truth_atom.beta1)).powf(r)
                    + norm2(&delta(&atom.a, &truth_atom.a)).powf(r)
                    + (atom.b - truth_atom.b).abs().powf(r);
            }
        }
    }
    Ok(LossBreakdown::assemble(weight, over, exact, k_bar))
}

/// Voronoi loss D3: first-order differences in every cell regardless of
/// cardinality.
pub fn loss_d3(fitted: &MixingMeasure, reference: &MixingMeasure) -> Result<LossBreakdown> {
    let assignment = assign_cells(fitted, reference)?;
    let mut exact = 0.0;
    let mut k_bar = 0;
    for (j, cell) in assignment.cells.iter().enumerate() {
        let ref_atom = &reference.atoms[j];
        if cell.len() >= 2 {
            k_bar += 1;
        }
        for &i in cell {
            let atom = &fitted.atoms[i];
            exact += (atom.beta0 - ref_atom.beta0).abs()
                + norm2(&delta(&atom.beta1, &ref_atom.beta1))
                + delta_eta_norm(atom, ref_atom);
        }
    }
    Ok(LossBreakdown::assemble(0.0, 0.0, exact, k_bar))
}

/// Monte Carlo estimate of the L2(mu) distance between two regression
/// functions, with mu uniform on [-1,1]^d.
pub fn l2_distance(
    g_a: &MixingMeasure,
    g_b: &MixingMeasure,
    mc_samples: usize,
    rng: &mut Rng64,
) -> Result<f64> {
    if g_a.dim() != g_b.dim() {
        return Err(MoeError::DimensionMismatch(format!(
            "measures have dimensions {} and {}",
            g_a.dim(),
            g_b.dim()
        )));
    }
    if mc_samples == 0 {
        return Err(MoeError::InvalidArgument("mc_samples must be >= 1".into()));
    }
    let d = g_a.dim();
    let mut sum = 0.0;
    let mut x = vec![0.0; d];
    for _ in 0..mc_samples {
        for v in &mut x {
            *v = rng.uniform_symmetric();
        }
        let diff = regression_eval(g_a, &x)? - regression_eval(g_b, &x)?;
        sum += diff * diff;
    }
    Ok((sum / mc_samples as f64).sqrt())
}
