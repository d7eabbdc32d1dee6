//! End-to-end acceptance suite: one test per shipped guarantee, each printing
//! a PASS line (run with `--nocapture` to see them). Criteria 4-7 replay the
//! full sweep protocol and dominate the runtime.

use moe_core::harness::{
    aggregate, compare_gates, default_n_grid, fit_rate, rate_report, run_sweep, LossSpec,
    SweepConfig,
};
use moe_core::ident::{
    build_derivative_class, independence_test, pde_residual_input_independent,
    pde_residual_polynomial, slow_sequence_activation, slow_sequence_linear, DerivKind, IdentMode,
    IndependenceVerdict, DEFAULT_SV_TOL,
};
use moe_core::model::{
    flatten_params, loss_and_grad, regression_eval, sigmoid, unflatten_params, Atom,
    ExpertActivation, GatingKind, MixingMeasure,
};
use moe_core::rng::Rng64;
use moe_core::synth::{GroundTruthConfig, Regime};
use moe_core::voronoi::{loss_d1, loss_d2, loss_d3};

fn random_atom(d: usize, rng: &mut Rng64) -> Atom {
    Atom {
        beta0: rng.standard_normal(),
        beta1: (0..d).map(|_| rng.standard_normal()).collect(),
        a: (0..d).map(|_| rng.standard_normal()).collect(),
        b: rng.standard_normal(),
    }
}

fn random_measure(
    d: usize,
    k: usize,
    gating: GatingKind,
    activation: ExpertActivation,
    rng: &mut Rng64,
) -> MixingMeasure {
    let atoms = (0..k).map(|_| random_atom(d, rng)).collect();
    MixingMeasure::new(atoms, gating, activation).unwrap()
}

fn random_x(d: usize, rng: &mut Rng64) -> Vec<f64> {
    (0..d).map(|_| rng.uniform_symmetric()).collect()
}

// --- criterion 1: analytic gradients vs central finite differences ----------

fn fd_loss_gradient(measure: &MixingMeasure, xs: &[Vec<f64>], ys: &[f64], h: f64) -> Vec<f64> {
    let flat = flatten_params(measure);
    let mut grad = vec![0.0; flat.len()];
    let mut work = measure.clone();
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += h;
        unflatten_params(&mut work, &plus);
        let (lp, _) = loss_and_grad(&work, xs, ys).unwrap();
        let mut minus = flat.clone();
        minus[i] -= h;
        unflatten_params(&mut work, &minus);
        let (lm, _) = loss_and_grad(&work, xs, ys).unwrap();
        grad[i] = (lp - lm) / (2.0 * h);
    }
    grad
}

fn max_gradient_error(activation: ExpertActivation, away_from_kinks: bool, seed: u64) -> f64 {
    let (d, k) = (4, 3);
    let mut rng = Rng64::from_seed(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let gating = if trial % 2 == 0 { GatingKind::Sigmoid } else { GatingKind::Softmax };
        let measure = random_measure(d, k, gating, activation, &mut rng);
        let batch = 8;
        let mut xs = Vec::with_capacity(batch);
        while xs.len() < batch {
            let x = random_x(d, &mut rng);
            if away_from_kinks {
                let ok = measure
                    .atoms
                    .iter()
                    .all(|a| (a.a.iter().zip(&x).map(|(ai, xi)| ai * xi).sum::<f64>() + a.b).abs() > 1e-3);
                if !ok {
                    continue;
                }
            }
            xs.push(x);
        }
        let ys: Vec<f64> = xs.iter().map(|_| rng.standard_normal()).collect();
        let (_, analytic) = loss_and_grad(&measure, &xs, &ys).unwrap();
        let analytic = analytic.flatten();
        let fd = fd_loss_gradient(&measure, &xs, &ys, 1e-5);
        for (a, f) in analytic.iter().zip(&fd) {
            let err = (a - f).abs() / a.abs().max(f.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn criterion_1_gradient_correctness() {
    for (name, activation, away) in [
        ("identity", ExpertActivation::Identity, false),
        ("gelu", ExpertActivation::Gelu, false),
        ("poly2", ExpertActivation::Polynomial(2), false),
        ("relu", ExpertActivation::ReLU, true),
    ] {
        let worst = max_gradient_error(activation, away, 0xC1);
        assert!(worst < 1e-5, "{name}: max relative gradient error {worst}");
    }
    println!("ACCEPTANCE 1 gradient-correctness: PASS");
}

// --- criterion 2: Voronoi losses vs brute force -------------------------------

/// Straight-line re-implementation of the cell assignment and the three
/// losses, sharing no code with the library.
mod brute {
    use moe_core::model::{sigmoid, MixingMeasure};

    fn omega(m: &MixingMeasure, i: usize) -> Vec<f64> {
        let a = &m.atoms[i];
        let mut v = a.beta1.clone();
        v.extend_from_slice(&a.a);
        v.push(a.b);
        v
    }

    fn nearest_reference(fitted: &MixingMeasure, reference: &MixingMeasure, i: usize) -> usize {
        let w = omega(fitted, i);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for j in 0..reference.len() {
            let u = omega(reference, j);
            let d: f64 = w.iter().zip(&u).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    }

    fn cells(fitted: &MixingMeasure, reference: &MixingMeasure) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new(); reference.len()];
        for i in 0..fitted.len() {
            cells[nearest_reference(fitted, reference, i)].push(i);
        }
        cells
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn eta_diff(fitted: &MixingMeasure, reference: &MixingMeasure, i: usize, j: usize) -> f64 {
        let f = &fitted.atoms[i];
        let t = &reference.atoms[j];
        let mut v: Vec<f64> = f.a.iter().zip(&t.a).map(|(a, b)| a - b).collect();
        v.push(f.b - t.b);
        norm(&v)
    }

    fn beta1_diff(fitted: &MixingMeasure, reference: &MixingMeasure, i: usize, j: usize) -> f64 {
        let f = &fitted.atoms[i];
        let t = &reference.atoms[j];
        let v: Vec<f64> = f.beta1.iter().zip(&t.beta1).map(|(a, b)| a - b).collect();
        norm(&v)
    }

    pub fn d1(fitted: &MixingMeasure, reference: &MixingMeasure) -> f64 {
        let cells = cells(fitted, reference);
        let mut total = 0.0;
        for (j, cell) in cells.iter().enumerate() {
            let w_sum: f64 = cell.iter().map(|&i| sigmoid(fitted.atoms[i].beta0)).sum();
            total += (w_sum - sigmoid(reference.atoms[j].beta0)).abs();
            for &i in cell {
                let (db1, de) = (beta1_diff(fitted, reference, i, j), eta_diff(fitted, reference, i, j));
                if cell.len() >= 2 {
                    total += db1 * db1 + de * de;
                } else {
                    total += db1 + de;
                }
            }
        }
        total
    }

    pub fn d2(fitted: &MixingMeasure, reference: &MixingMeasure, r: f64) -> f64 {
        let cells = cells(fitted, reference);
        let mut total = 0.0;
        for (j, cell) in cells.iter().enumerate() {
            let t = &reference.atoms[j];
            if cell.len() >= 2 {
                let w_sum: f64 = cell.iter().map(|&i| sigmoid(fitted.atoms[i].beta0)).sum();
                total += (w_sum - sigmoid(t.beta0)).abs();
                for &i in cell {
                    let f = &fitted.atoms[i];
                    let db1: f64 =
                        f.beta1.iter().zip(&t.beta1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    let da: f64 =
                        f.a.iter().zip(&t.a).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    total += db1.powf(r) + da.powf(r) + (f.b - t.b).abs().powf(r);
                }
            } else if cell.len() == 1 {
                let i = cell[0];
                let f = &fitted.atoms[i];
                let db1: f64 =
                    f.beta1.iter().zip(&t.beta1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let da: f64 =
                    f.a.iter().zip(&t.a).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                total += (f.beta0 - t.beta0).abs().powf(r)
                    + db1.powf(r)
                    + da.powf(r)
                    + (f.b - t.b).abs().powf(r);
            }
        }
        total
    }

    pub fn d3(fitted: &MixingMeasure, reference: &MixingMeasure) -> f64 {
        let cells = cells(fitted, reference);
        let mut total = 0.0;
        for (j, cell) in cells.iter().enumerate() {
            let t = &reference.atoms[j];
            for &i in cell {
                let f = &fitted.atoms[i];
                total += (f.beta0 - t.beta0).abs()
                    + beta1_diff(fitted, reference, i, j)
                    + eta_diff(fitted, reference, i, j);
            }
        }
        total
    }
}

#[test]
fn criterion_2_voronoi_vs_brute_force() {
    let mut rng = Rng64::from_seed(0xC2);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
    for trial in 0..1000u32 {
        let d = 2 + (trial % 2) as usize;
        let k_star = 2 + (trial % 3) as usize;
        let k = k_star + (trial % 3) as usize;
        let reference = random_measure(d, k_star, GatingKind::Sigmoid, ExpertActivation::ReLU, &mut rng);
        let fitted = random_measure(d, k, GatingKind::Sigmoid, ExpertActivation::ReLU, &mut rng);
        assert!(rel(loss_d1(&fitted, &reference).unwrap().total, brute::d1(&fitted, &reference)) < 1e-12);
        for &r in &[1.0, 2.0] {
            assert!(
                rel(loss_d2(&fitted, &reference, r).unwrap().total, brute::d2(&fitted, &reference, r))
                    < 1e-12
            );
        }
        assert!(rel(loss_d3(&fitted, &reference).unwrap().total, brute::d3(&fitted, &reference)) < 1e-12);

        // permutation invariance: reverse the fitted atoms
        let mut reversed = fitted.clone();
        reversed.atoms.reverse();
        assert!(rel(loss_d1(&fitted, &reference).unwrap().total, loss_d1(&reversed, &reference).unwrap().total) < 1e-12);
        assert!(rel(loss_d2(&fitted, &reference, 1.0).unwrap().total, loss_d2(&reversed, &reference, 1.0).unwrap().total) < 1e-12);
        assert!(rel(loss_d3(&fitted, &reference).unwrap().total, loss_d3(&reversed, &reference).unwrap().total) < 1e-12);

        // zero iff coincide
        assert_eq!(loss_d1(&reference, &reference).unwrap().total, 0.0);
        assert_eq!(loss_d2(&reference, &reference, 1.0).unwrap().total, 0.0);
        assert_eq!(loss_d3(&reference, &reference).unwrap().total, 0.0);
        if fitted.len() == reference.len() {
            assert!(loss_d1(&fitted, &reference).unwrap().total > 0.0);
            assert!(loss_d3(&fitted, &reference).unwrap().total > 0.0);
        }
    }
    println!("ACCEPTANCE 2 voronoi-brute-force: PASS");
}

// --- criterion 3: exact sequence and PDE identities ---------------------------

fn linear_truth(d: usize, k_star: usize, seed: u64) -> MixingMeasure {
    let mut rng = Rng64::from_seed(seed);
    let mut atoms = vec![Atom {
        beta0: rng.standard_normal(),
        beta1: vec![0.0; d],
        a: vec![0.0; d],
        b: rng.standard_normal(),
    }];
    for _ in 1..k_star {
        atoms.push(random_atom(d, &mut rng));
    }
    MixingMeasure::new(atoms, GatingKind::Sigmoid, ExpertActivation::Identity).unwrap()
}

#[test]
fn criterion_3_exact_identities() {
    let mut rng = Rng64::from_seed(0xC3);

    // (a) split-pair sequence with weight overshoot n^-(r+1): residual is the
    // constant n^-(r+1) * b*_1, yet the parameter loss is 1/n^(r+1) + 2/n^r.
    let truth = linear_truth(3, 3, 0x3A);
    let b_star = truth.atoms[0].b;
    let xs: Vec<Vec<f64>> = (0..200).map(|_| random_x(3, &mut rng)).collect();
    for &n in &[10usize, 100, 1000] {
        for &r in &[1.0, 2.0] {
            let g_n = slow_sequence_linear(&truth, n, r).unwrap();
            let shift = (n as f64).powf(-(r + 1.0)) * b_star;
            for x in &xs {
                let diff = regression_eval(&g_n, x).unwrap() - regression_eval(&truth, x).unwrap();
                assert!((diff - shift).abs() < 1e-12, "n={n} r={r}");
            }
        }
    }
    // closed-form loss needs an fp-calibrated first atom (b=0 keeps b +- 1/n
    // exact, a large negative gating bias keeps the weight overshoot exact)
    let mut calibrated = linear_truth(3, 3, 0x3A);
    calibrated.atoms[0].beta0 = -30.0;
    calibrated.atoms[0].b = 0.0;
    for &n in &[10usize, 100, 1000] {
        for &r in &[1.0, 2.0] {
            let g_n = slow_sequence_linear(&calibrated, n, r).unwrap();
            let loss = loss_d2(&g_n, &calibrated, r).unwrap().total;
            let expected = (n as f64).powf(-(r + 1.0)) + 2.0 * (n as f64).powf(-r);
            assert!(((loss - expected) / expected).abs() < 1e-14, "n={n} r={r}: {loss} vs {expected}");
        }
    }

    // (b) exact weight-splitting sequence: sigma(beta0_1^n) + sigma(beta0_2^n)
    // equals the true weight, and the residual has a closed form.
    let truth_b = {
        let mut t = linear_truth(3, 3, 0x3B);
        t.activation = ExpertActivation::Gelu;
        t
    };
    let beta0_star = truth_b.atoms[0].beta0;
    let b_star = truth_b.atoms[0].b;
    let act = truth_b.activation;
    let c = 1.0;
    for &n in &[10usize, 100, 1000] {
        let g_n = slow_sequence_activation(&truth_b, n, c).unwrap();
        let w_sum = sigmoid(g_n.atoms[0].beta0) + sigmoid(g_n.atoms[1].beta0);
        assert!((w_sum - sigmoid(beta0_star)).abs() < 1e-14);
        let expected = sigmoid(beta0_star) / 2.0
            * (act.eval(b_star + c / n as f64) + act.eval(b_star + 2.0 * c / n as f64)
                - 2.0 * act.eval(b_star));
        for x in &xs {
            let diff = regression_eval(&g_n, x).unwrap() - regression_eval(&truth_b, x).unwrap();
            assert!((diff - expected).abs() < 1e-12, "n={n}");
        }
    }

    // (c) PDE dependency residuals at 1000 random draws each.
    for _ in 0..1000 {
        let beta0 = rng.standard_normal();
        let b = rng.standard_normal();
        let probe = vec![random_x(4, &mut rng)];
        let res = pde_residual_input_independent(ExpertActivation::Gelu, beta0, b, &probe).unwrap();
        assert!(res < 1e-12, "{res}");
        let beta1: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
        let a: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
        let res =
            pde_residual_polynomial(&beta1, rng.standard_normal(), &a, rng.standard_normal(), &probe)
                .unwrap();
        assert!(res < 1e-12, "{res}");
    }
    println!("ACCEPTANCE 3 exact-identities: PASS");
}

// --- criteria 4-7: rate sweeps -----------------------------------------------

fn sweep_base(
    regime: Regime,
    activation: ExpertActivation,
    d: usize,
    k_star: usize,
    replicates: usize,
    losses: Vec<LossSpec>,
) -> SweepConfig {
    let mut gt = GroundTruthConfig::defaults(regime, activation);
    gt.d = d;
    gt.k_star = k_star;
    gt.nu_g = 0.01 / d as f64;
    gt.nu_e = 1.0 / d as f64;
    gt.seed = 1;
    let mut cfg = SweepConfig::defaults(gt);
    cfg.n_grid = default_n_grid();
    cfg.replicates = replicates;
    cfg.losses = losses;
    cfg.base_seed = 1;
    // init must start outside the empirical minimizer's error ball at the
    // smallest n, or the small-n losses are biased low and flatten the slope
    cfg.train.init_perturb = 0.1;
    cfg
}

fn slope_of(cfg: &SweepConfig, loss: LossSpec) -> f64 {
    let result = run_sweep(cfg).expect("sweep failed");
    let agg = aggregate(&result.rows, loss);
    fit_rate(&agg).expect("rate fit failed").slope
}

#[test]
fn criterion_4_regression_rate_small_config() {
    let mut cfg = sweep_base(Regime::Regime1, ExpertActivation::ReLU, 8, 4, 10, vec![LossSpec::L2]);
    cfg.train.k = 5;
    cfg.mc_samples = 100_000;
    let slope = slope_of(&cfg, LossSpec::L2);
    assert!(
        (-0.65..=-0.35).contains(&slope),
        "L2 slope {slope} outside [-0.65, -0.35]"
    );
    println!("ACCEPTANCE 4 regression-rate-small: PASS (slope {slope:.3})");
}

#[test]
fn criterion_5_regime1_full_config() {
    // ReLU experts: fast D1 rate.
    let mut relu = sweep_base(Regime::Regime1, ExpertActivation::ReLU, 32, 8, 5, vec![LossSpec::D1]);
    relu.train.k = 9;
    let d1_slope = slope_of(&relu, LossSpec::D1);
    assert!(
        (-0.65..=-0.30).contains(&d1_slope),
        "ReLU D1 slope {d1_slope} outside [-0.65, -0.30]"
    );
    // Identity experts: near-flat D2,1 rate.
    let mut identity =
        sweep_base(Regime::Regime1, ExpertActivation::Identity, 32, 8, 5, vec![LossSpec::D2(1.0)]);
    identity.train.k = 9;
    let d2_slope = slope_of(&identity, LossSpec::D2(1.0));
    assert!(
        (-0.15..=0.05).contains(&d2_slope),
        "Identity D2,1 slope {d2_slope} outside [-0.15, 0.05]"
    );
    println!("ACCEPTANCE 5 regime1-full: PASS (d1 {d1_slope:.3}, d2 {d2_slope:.3})");
}

/// Run the sweep one sample size at a time with a fixed total SGD step budget
/// (epochs scaled as ceil(total_steps * batch / n)), so every n gets the same
/// optimization effort and the measured loss reflects statistical error, not
/// an n-dependent training schedule.
fn equal_budget_stats(
    base: &SweepConfig,
    loss: LossSpec,
    total_steps: usize,
) -> Vec<moe_core::harness::PerNStat> {
    let mut stats = Vec::new();
    for &n in default_n_grid().iter() {
        let mut cfg = base.clone();
        cfg.n_grid = vec![n];
        cfg.train.epochs = (total_steps * cfg.train.batch_size).div_ceil(n);
        let result = run_sweep(&cfg).expect("sweep failed");
        stats.extend(aggregate(&result.rows, loss));
    }
    stats
}

fn equal_budget_slope(base: &SweepConfig, loss: LossSpec, total_steps: usize) -> f64 {
    fit_rate(&equal_budget_stats(base, loss, total_steps)).expect("rate fit failed").slope
}

#[test]
fn criterion_6_regime2_full_config() {
    // Exact-specified fits (k = k*) from a near-truth start under an
    // n-independent step budget: the residual parameter loss is pure
    // statistical error and its slope is insensitive to the SGD temperature
    // (halving lr while doubling the budget moves it by < 0.01).
    let mut base = sweep_base(Regime::Regime2, ExpertActivation::ReLU, 32, 8, 5, vec![LossSpec::D3]);
    base.train.k = 8;
    base.train.init_perturb = 0.001;
    base.train.batch_size = 32;
    base.train.lr = 0.005;
    let relu_slope = equal_budget_slope(&base, LossSpec::D3, 15_000);
    assert!(
        (-0.65..=-0.33).contains(&relu_slope),
        "ReLU D3 slope {relu_slope} outside [-0.65, -0.33]"
    );
    let mut identity =
        sweep_base(Regime::Regime2, ExpertActivation::Identity, 32, 8, 5, vec![LossSpec::D3]);
    identity.train.k = 8;
    identity.train.init_perturb = 0.001;
    identity.train.batch_size = 32;
    identity.train.lr = 0.005;
    let id_slope = equal_budget_slope(&identity, LossSpec::D3, 15_000);
    assert!(
        (-0.60..=-0.25).contains(&id_slope),
        "Identity D3 slope {id_slope} outside [-0.60, -0.25]"
    );
    println!("ACCEPTANCE 6 regime2-full: PASS (relu {relu_slope:.3}, identity {id_slope:.3})");
}

/// Shared scales for the gating comparison: order-one gating and expert
/// spread (nu_g = nu_e = 1) so neither gate is handicapped by an
/// ill-conditioned truth, at a size small enough to keep the runtime low.
fn gate_compare_base(
    regime: Regime,
    activation: ExpertActivation,
    loss: LossSpec,
) -> SweepConfig {
    let mut gt = GroundTruthConfig::defaults(regime, activation);
    gt.d = 8;
    gt.k_star = 4;
    gt.nu_g = 1.0;
    gt.nu_e = 1.0;
    gt.seed = 1;
    let mut cfg = SweepConfig::defaults(gt);
    cfg.n_grid = default_n_grid();
    cfg.replicates = 5;
    cfg.losses = vec![loss];
    cfg.base_seed = 1;
    cfg
}

#[test]
fn criterion_7_gating_comparison() {
    // Regime 2, identity experts, parameter loss from an O(0.1) start: the
    // softmax model's exact invariance to common gating-parameter
    // translations leaves a component of the initial error that gradient
    // descent can never remove, so its measured slope flattens, while the
    // sigmoid model (no such invariance) keeps converging.
    let mut cfg = gate_compare_base(Regime::Regime2, ExpertActivation::Identity, LossSpec::D3);
    cfg.train.k = 4;
    cfg.train.init_perturb = 0.1;
    cfg.train.batch_size = 32;
    cfg.train.epochs = 10;
    cfg.train.lr = 0.1;
    let cmp = compare_gates(&cfg).expect("compare_gates failed");
    let sig = cmp.sigmoid[0].1.slope;
    let soft = cmp.softmax[0].1.slope;
    assert!(
        sig <= soft - 0.1,
        "regime 2 identity: sigmoid {sig} not <= softmax {soft} - 0.1"
    );

    // Regime 1, ReLU experts: with the init-error floor removed (near-truth
    // start, fixed step budget) both gatings converge at the same
    // statistical rate.
    let mut base = gate_compare_base(Regime::Regime1, ExpertActivation::ReLU, LossSpec::D1);
    base.train.k = 5;
    base.train.init_perturb = 0.001;
    base.train.batch_size = 32;
    base.train.lr = 0.005;
    let mut slopes = [0.0; 2];
    for (slot, kind) in [(0, GatingKind::Sigmoid), (1, GatingKind::Softmax)] {
        let mut cfg = base.clone();
        cfg.ground_truth.gating = kind;
        slopes[slot] = equal_budget_slope(&cfg, LossSpec::D1, 15_000);
    }
    let (sig1, soft1) = (slopes[0], slopes[1]);
    assert!(
        (sig1 - soft1).abs() < 0.15,
        "regime 1 relu: |{sig1} - {soft1}| >= 0.15"
    );
    println!(
        "ACCEPTANCE 7 gating-comparison: PASS (r2 sig {sig:.3} soft {soft:.3}; r1 sig {sig1:.3} soft {soft1:.3})"
    );
}

// --- criterion 8: identifiability diagnostics ---------------------------------

#[test]
fn criterion_8_identifiability() {
    // Generic non-degenerate draws: the gating slope must actually vary the
    // gate over the domain (homogeneous activations make the weak family
    // collinear in the constant-gate limit, since phi(z) = z phi'(z)), the
    // pre-activation must change sign inside the cube (no dead ReLU experts),
    // and the gate must not saturate.
    fn generic_atom(d: usize, rng: &mut Rng64) -> Atom {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        loop {
            let atom = random_atom(d, rng);
            let a_l1: f64 = atom.a.iter().map(|v| v.abs()).sum();
            if norm(&atom.beta1) >= 1.5
                && norm(&atom.a) >= 1.0
                && atom.beta0.abs() <= 1.0
                && atom.b.abs() <= 0.5 * a_l1
            {
                return atom;
            }
        }
    }

    let mut rng = Rng64::from_seed(0xC8);
    for &act in &[ExpertActivation::ReLU, ExpertActivation::Gelu, ExpertActivation::Identity] {
        for draw in 0..100u32 {
            let d = 4;
            let atoms = vec![generic_atom(d, &mut rng), generic_atom(d, &mut rng)];
            let cls = build_derivative_class(act, &atoms, IdentMode::Weak).unwrap();
            let report = independence_test(
                &cls,
                2000,
                DEFAULT_SV_TOL,
                &mut Rng64::from_seed(0x800 + draw as u64),
            )
            .unwrap();
            assert_eq!(report.verdict, IndependenceVerdict::Independent, "{act:?} draw {draw}");
            assert!(report.min_sv_ratio > 1e-3, "{act:?} draw {draw}: {}", report.min_sv_ratio);
        }
    }

    // Linear experts: the strong-mode class is genuinely dependent; the
    // report must tie a mixed gating/bias second derivative to an expert
    // first derivative.
    let atom = random_atom(3, &mut rng);
    let cls = build_derivative_class(ExpertActivation::Polynomial(1), &[atom], IdentMode::Strong)
        .unwrap();
    let report = independence_test(&cls, 2000, DEFAULT_SV_TOL, &mut Rng64::from_seed(0x888)).unwrap();
    assert_eq!(report.verdict, IndependenceVerdict::Dependent);
    assert!(report.min_sv_ratio < 1e-10, "{}", report.min_sv_ratio);
    let has_pair = report.dependent_subsets.iter().any(|subset| {
        subset.iter().any(|&i| matches!(cls.entries[i].kind, DerivKind::SecondBeta1B(_)))
            && subset.iter().any(|&i| matches!(cls.entries[i].kind, DerivKind::FirstA(_)))
    });
    assert!(has_pair, "no subset pairs d2F/dbeta1 db with dF/da: {:?}", report.dependent_subsets);
    println!("ACCEPTANCE 8 identifiability: PASS");
}

// sanity: sweep consistency example from the harness contract
#[test]
fn sweep_rate_report_consistency() {
    let mut cfg = sweep_base(Regime::Regime1, ExpertActivation::ReLU, 4, 2, 3, vec![LossSpec::D1]);
    cfg.train.k = 3;
    cfg.n_grid = vec![500, 2000, 8000];
    let result = run_sweep(&cfg).unwrap();
    let report = rate_report(&result).unwrap();
    assert_eq!(report.len(), 1);
    let agg = aggregate(&result.rows, LossSpec::D1);
    assert!(agg.last().unwrap().mean < agg.first().unwrap().mean);
}
