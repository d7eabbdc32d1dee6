//! Mini-batch SGD fitting of a k-atom measure to a dataset, with near-truth
//! initialization.

use crate::error::{MoeError, Result};
use crate::model::{logit, loss_and_grad, sigmoid, GatingKind, MixingMeasure};
use crate::rng::Rng64;
use crate::synth::Dataset;

/// Training configuration. Defaults follow the reference protocol: 10
/// epochs, learning rate 0.1, k = k*+1, batch size 32, init noise 0.01.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Std of the Gaussian noise added to every coordinate at initialization.
    pub init_perturb: f64,
    /// Return the average of the second half of training's iterates instead
    /// of the last iterate. Constant-rate SGD stalls at a
    /// sample-size-independent noise floor; the averaged iterate removes it
    /// and recovers the error of the empirical minimizer.
    pub average_iterates: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn defaults(k_star: usize) -> Self {
        TrainConfig {
            k: k_star + 1,
            epochs: 10,
            lr: 0.1,
            batch_size: 32,
            init_perturb: 0.01,
            average_iterates: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.epochs < 1 || self.batch_size < 1 {
            return Err(MoeError::InvalidArgument(
                "k, epochs, batch_size must be >= 1".into(),
            ));
        }
        if self.lr <= 0.0 {
            return Err(MoeError::InvalidArgument("lr must be > 0".into()));
        }
        Ok(())
    }
}

/// Output of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub fitted: MixingMeasure,
    /// Mean training loss per epoch, in encounter order.
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
}

/// Initialize a k-atom measure near the truth.
///
/// Atoms 1..k* copy the true atoms with N(0, init_perturb^2) noise on every
/// coordinate. Surplus atoms duplicate the LAST true atom; with c copies in
/// total, each copy's beta0 is adjusted before noising so the copies'
/// combined gate weight equals the true atom's and the regression function
/// is unchanged at zero noise.
pub fn init_near_truth(
    truth: &MixingMeasure,
    k: usize,
    init_perturb: f64,
    rng: &mut Rng64,
) -> Result<MixingMeasure> {
    let k_star = truth.len();
    if k < k_star {
        return Err(MoeError::InvalidArgument(format!(
            "k={k} must be >= k*={k_star}"
        )));
    }
    let copies = (k - k_star + 1) as f64;
    let anchor = k_star - 1;
    // Splitting one atom into m copies preserves the regression function when
    // each copy carries 1/m of the original gate weight: for sigmoid gates
    // that means sigma(beta0') = sigma(beta0)/m, for softmax gates
    // exp(beta0') = exp(beta0)/m.
    let split_beta0 = match truth.gating {
        GatingKind::Sigmoid => logit(sigmoid(truth.atoms[anchor].beta0) / copies),
        GatingKind::Softmax => truth.atoms[anchor].beta0 - copies.ln(),
    };

    let mut atoms = Vec::with_capacity(k);
    for i in 0..k {
        let source = if i < k_star { i } else { anchor };
        let mut atom = truth.atoms[source].clone();
        if source == anchor && (k > k_star || i >= k_star) {
            atom.beta0 = split_beta0;
        }
        atom.beta0 += init_perturb * rng.standard_normal();
        for v in &mut atom.beta1 {
            *v += init_perturb * rng.standard_normal();
        }
        for v in &mut atom.a {
            *v += init_perturb * rng.standard_normal();
        }
        atom.b += init_perturb * rng.standard_normal();
        atoms.push(atom);
    }
    MixingMeasure::new(atoms, truth.gating, truth.activation)
}

/// Plain SGD on the least-squares objective. Each epoch shuffles indices,
/// partitions into batches (last batch may be short) and steps
/// `theta <- theta - lr * grad(batch mean loss)`.
pub fn fit(
    data: &Dataset,
    init: &MixingMeasure,
    cfg: &TrainConfig,
    rng: &mut Rng64,
) -> Result<FitResult> {
    cfg.validate()?;
    if init.dim() != data.truth.dim() {
        return Err(MoeError::DimensionMismatch(format!(
            "init has dimension {} but data has dimension {}",
            init.dim(),
            data.truth.dim()
        )));
    }
    let n = data.n;
    let mut measure = init.clone();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    let mut batch_x: Vec<Vec<f64>> = Vec::with_capacity(cfg.batch_size);
    let mut batch_y: Vec<f64> = Vec::with_capacity(cfg.batch_size);
    let mut average: Vec<f64> = Vec::new();
    let mut averaged_steps = 0usize;
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut indices);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.push(data.x[i].clone());
                batch_y.push(data.y[i]);
            }
            let (loss, grad) = loss_and_grad(&measure, &batch_x, &batch_y)?;
            if !loss.is_finite() {
                return Err(MoeError::Diverged { epoch, batch: batch_idx });
            }
            epoch_loss += loss * chunk.len() as f64;
            for (atom, g) in measure.atoms.iter_mut().zip(&grad.atoms) {
                atom.beta0 -= cfg.lr * g.d_beta0;
                atom.b -= cfg.lr * g.d_b;
                for (v, dv) in atom.beta1.iter_mut().zip(&g.d_beta1) {
                    *v -= cfg.lr * dv;
                }
                for (v, dv) in atom.a.iter_mut().zip(&g.d_a) {
                    *v -= cfg.lr * dv;
                }
            }
            if cfg.average_iterates && epoch >= cfg.epochs / 2 {
                // incremental mean: exact when the iterate is stationary
                let flat = crate::model::flatten_params(&measure);
                if average.is_empty() {
                    average = flat;
                    averaged_steps = 1;
                } else {
                    averaged_steps += 1;
                    let k = averaged_steps as f64;
                    for (acc, v) in average.iter_mut().zip(&flat) {
                        *acc += (v - *acc) / k;
                    }
                }
            }
        }
        loss_trace.push(epoch_loss / n as f64);
    }
    if cfg.average_iterates && averaged_steps > 0 {
        crate::model::unflatten_params(&mut measure, &average);
    }
    let final_loss = *loss_trace.last().unwrap();
    Ok(FitResult { fitted: measure, loss_trace, final_loss })
}
