//! Acceptance gate. Each test checks one criterion at its pinned tolerance
//! and time budget and writes a single PASS/FAIL line to stderr.

use num_complex::Complex64 as C64;
use rand::Rng;
use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_4;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use qresnet::circuit::{CircuitOp, ModelBuilder, ModelSpec, ParamRef};
use qresnet::dataio::{
    filter_classes, parse_idx, parse_idx_images, parse_idx_labels, prepare_features,
    stratified_indices, IdxTensor, Split, DATA_DIR_ENV, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES,
    TRAIN_LABELS,
};
use qresnet::experiments::{
    build_regression_model, expressibility_table, run_fit, ExperimentSpec, Layout,
};
use qresnet::parallel::stream_rng;
use qresnet::qcnn::{build_qcnn, run_mnist_experiment, QcnnSpec};
use qresnet::residual::{
    a_coefficients, residual_expectation_ancilla, residual_expectation_direct, Branch,
    ResidualKind, ResidualStrategy,
};
use qresnet::simcore::{gate_matrix, GateKind, Matrix, Observable};
use qresnet::spectrum::{
    form_count, residual_forms, residual_spectrum, sample_coefficient_cloud, traditional_spectrum,
    FrequencyForm, GeneratorSpec,
};
use qresnet::train::{
    finite_difference_grad, output_gradient, parameter_shift_grad, GradientMode, FD_STEP,
};

fn verdict(id: u32, title: &str, pass: bool, detail: &str, start: Instant, budget: Duration) {
    let elapsed = start.elapsed();
    let ok = pass && elapsed <= budget;
    let _ = writeln!(
        std::io::stderr(),
        "[{}] criterion {id:>2}: {title}: {detail} ({:.1}s of {}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    assert!(pass, "criterion {id} failed: {detail}");
    assert!(elapsed <= budget, "criterion {id} over time budget");
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn same_set(got: &[f64], want: &[f64]) -> bool {
    got.len() == want.len() && got.iter().zip(want).all(|(a, b)| a == b)
}

#[test]
fn c01_spectrum_exactness() {
    let t = Instant::now();
    let g = GeneratorSpec::pauli_rotation();
    let trad = traditional_spectrum(&g, 1).unwrap();
    let res = residual_spectrum(&g, 1).unwrap();
    let ok = same_set(&trad.frequencies, &[-1.0, 0.0, 1.0])
        && same_set(&res.frequencies, &[-1.0, -0.5, 0.0, 0.5, 1.0]);
    verdict(
        1,
        "spectrum exactness",
        ok,
        &format!(
            "traditional {:?}, residual {:?}",
            trad.frequencies, res.frequencies
        ),
        t,
        secs(1),
    );
}

#[test]
fn c02_counting_theorem() {
    let t = Instant::now();
    let counts_ok = (1..=12).all(|l| {
        let f = residual_forms(l);
        let distinct: BTreeSet<_> = f.iter().collect();
        f.len() == form_count(l)
            && distinct.len() == f.len()
            && f.len() == (l.div_ceil(2) + 1) * (l / 2 + 1)
    });
    let set = |pairs: &[(usize, usize)]| -> BTreeSet<FrequencyForm> {
        pairs
            .iter()
            .map(|&(l1, l2)| FrequencyForm { l1, l2 })
            .collect()
    };
    let two = set(&[(2, 2), (2, 1), (2, 0), (1, 1)]);
    let three = set(&[(3, 3), (3, 2), (3, 1), (3, 0), (2, 2), (2, 1)]);
    let got2: BTreeSet<_> = residual_forms(2).into_iter().collect();
    let got3: BTreeSet<_> = residual_forms(3).into_iter().collect();
    let show = |s: &BTreeSet<FrequencyForm>| {
        s.iter()
            .map(|f| format!("<{},{}>", f.l1, f.l2))
            .collect::<Vec<_>>()
            .join(" ")
    };
    verdict(
        2,
        "form counting",
        counts_ok && got2 == two && got3 == three,
        &format!(
            "l = 1..12 counts match closed form: {counts_ok}; l = 2 forms {}; l = 3 forms {}",
            show(&got2),
            show(&got3)
        ),
        t,
        secs(1),
    );
}

fn random_residual_model(rng: &mut impl Rng) -> (ModelSpec, Vec<f64>, Vec<f64>) {
    let n = rng.gen_range(1..=3usize);
    let mut b = ModelBuilder::new(n, n);
    let mut theta = Vec::new();
    let p = |b: &mut ModelBuilder, theta: &mut Vec<f64>, rng: &mut dyn rand::RngCore| {
        theta.push(rng.gen_range(-3.2..3.2));
        b.param(format!("p{}", theta.len()))
    };
    for q in 0..n {
        let u: Vec<ParamRef> = (0..3).map(|_| p(&mut b, &mut theta, rng)).collect();
        b.gate(GateKind::U3, &[q], &u);
    }
    for q in 0..n {
        let inner = if n > 1 && rng.gen_bool(0.3) {
            CircuitOp::new(
                GateKind::ZZ,
                vec![q, (q + 1) % n],
                vec![ParamRef::Feature(q)],
            )
        } else {
            let kind = if rng.gen_bool(0.5) {
                GateKind::Ry
            } else {
                GateKind::Rz
            };
            CircuitOp::new(kind, vec![q], vec![ParamRef::Feature(q)])
        };
        let kind = [ResidualKind::R, ResidualKind::R1, ResidualKind::R2][rng.gen_range(0..3)];
        let strategy = match kind {
            ResidualKind::R => ResidualStrategy::R,
            ResidualKind::R1 => ResidualStrategy::R1 {
                alpha: p(&mut b, &mut theta, rng),
            },
            _ => ResidualStrategy::R2 {
                alpha: p(&mut b, &mut theta, rng),
                gamma: p(&mut b, &mut theta, rng),
            },
        };
        let branch = if rng.gen_bool(0.5) {
            Branch::Zero
        } else {
            Branch::One
        };
        b.residual_on_branch(strategy, inner, branch);
        let u: Vec<ParamRef> = (0..3).map(|_| p(&mut b, &mut theta, rng)).collect();
        b.gate(GateKind::U3, &[q], &u);
    }
    if n > 1 {
        let z = p(&mut b, &mut theta, rng);
        b.gate(GateKind::ZZ, &[0, n - 1], &[z]);
    }
    let model = b.build(Observable::z_on(n, rng.gen_range(0..n))).unwrap();
    let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-6.3..6.3)).collect();
    (model, x, theta)
}

#[test]
fn c03_ancilla_circuit_equals_direct_operator() {
    let t = Instant::now();
    let mut rng = stream_rng(3, 0);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (m, x, theta) = random_residual_model(&mut rng);
        let d = residual_expectation_direct(&m, &x, &theta).unwrap();
        let a = residual_expectation_ancilla(&m, &x, &theta).unwrap();
        worst = worst.max((d - a).abs());
    }
    verdict(
        3,
        "ancilla circuit vs direct operator",
        worst <= 1e-10,
        &format!("200 random models, max deviation {worst:.2e} (tol 1e-10)"),
        t,
        secs(10),
    );
}

fn expect(state: &[C64], op: &Matrix) -> C64 {
    let v = op.mat_vec(state);
    state.iter().zip(&v).map(|(a, b)| a.conj() * b).sum()
}

/// Two-qubit model: residual `Ry(x)` on qubit 0, then a dense ansatz `W`.
fn decomposition_case(kind: ResidualKind, x: f64, alpha: f64, gamma: f64, w: &[f64]) -> (f64, f64) {
    let mut b = ModelBuilder::new(2, 1);
    let a = b.param("alpha");
    let g = b.param("gamma");
    let ws: Vec<ParamRef> = (0..10).map(|i| b.param(format!("w{i}"))).collect();
    let strategy = match kind {
        ResidualKind::R => ResidualStrategy::R,
        ResidualKind::R1 => ResidualStrategy::R1 { alpha: a },
        _ => ResidualStrategy::R2 { alpha: a, gamma: g },
    };
    b.residual(
        strategy,
        CircuitOp::new(GateKind::Ry, vec![0], vec![ParamRef::Feature(0)]),
    );
    b.gate(GateKind::U3, &[0], &ws[0..3]);
    b.gate(GateKind::U3, &[1], &ws[3..6]);
    b.gate(GateKind::ZZ, &[0, 1], &ws[6..7]);
    b.gate(GateKind::U3, &[1], &ws[7..10]);
    let model = b.build(Observable::z_on(2, 1)).unwrap();
    let mut theta = vec![alpha, gamma];
    theta.extend_from_slice(w);
    let direct = residual_expectation_direct(&model, &[x], &theta).unwrap();

    let i2 = Matrix::identity(2);
    let u3 = |p: &[f64]| gate_matrix(&GateKind::U3, p).unwrap();
    let wm = i2
        .kron(&u3(&w[7..10]))
        .matmul(&gate_matrix(&GateKind::ZZ, &w[6..7]).unwrap())
        .matmul(&u3(&w[0..3]).kron(&u3(&w[3..6])));
    let o = wm
        .adjoint()
        .matmul(&Observable::z_on(2, 1).dense())
        .matmul(&wm);
    let l = gate_matrix(&GateKind::Ry, &[x]).unwrap().kron(&i2);
    let mut phi0 = vec![C64::new(0.0, 0.0); 4];
    phi0[0] = C64::new(1.0, 0.0);
    let ac = a_coefficients(kind, Branch::Zero, alpha, gamma).unwrap();
    let f = expect(&phi0, &l.adjoint().matmul(&o).matmul(&l)).re;
    let plain = expect(&phi0, &o).re;
    let cross = expect(&phi0, &o.matmul(&l)).re;
    (direct, ac.a1 * f + ac.a2 * plain + ac.a3 * cross)
}

#[test]
fn c04_loss_decomposition() {
    let t = Instant::now();
    let mut rng = stream_rng(4, 0);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let kind = [ResidualKind::R, ResidualKind::R1, ResidualKind::R2][rng.gen_range(0..3)];
        let w: Vec<f64> = (0..10).map(|_| rng.gen_range(-3.2..3.2)).collect();
        let (d, o) = decomposition_case(
            kind,
            rng.gen_range(-6.3..6.3),
            rng.gen_range(0.0..6.3),
            rng.gen_range(-3.2..3.2),
            &w,
        );
        worst = worst.max((d - o).abs());
    }
    let r = a_coefficients(ResidualKind::R, Branch::Zero, 0.0, 0.0).unwrap();
    let r1 = a_coefficients(ResidualKind::R1, Branch::Zero, FRAC_PI_4, 0.0).unwrap();
    // η = π/4 on branch 0 means γ = −π/4
    let r2 = a_coefficients(ResidualKind::R2, Branch::Zero, FRAC_PI_4, -FRAC_PI_4).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let coeffs_ok = close(r.a1, 0.25) && close(r.a2, 0.25) && close(r.a3, 0.5);
    let r2_ok = close(r2.a1, r.a1) && close(r2.a2, r.a2) && close(r2.a3, r.a3);
    let r1_ok = close(r1.a1, r.a1) && close(r1.a2, r.a2) && close(r1.a3, r.a3);
    let w = [0.3, -1.1, 2.0, 0.7, 0.1, -0.4, 1.3, 0.9, -2.2, 0.5];
    let (plain, _) = decomposition_case(ResidualKind::R, 1.7, 0.0, 0.0, &w);
    let (via_r1, _) = decomposition_case(ResidualKind::R1, 1.7, FRAC_PI_4, 0.0, &w);
    let (via_r2, _) = decomposition_case(ResidualKind::R2, 1.7, FRAC_PI_4, -FRAC_PI_4, &w);
    let reduce_ok = close(plain, via_r1) && close(plain, via_r2);
    verdict(
        4,
        "residual loss decomposition",
        worst <= 1e-12 && coeffs_ok && r1_ok && r2_ok && reduce_ok,
        &format!(
            "300 random cases, max term-by-term deviation {worst:.2e} (tol 1e-12); R coefficients {coeffs_ok}; \
             R1(π/4) reduces to R {r1_ok}; R2(π/4, η = π/4) reduces to R {r2_ok}; outputs agree {reduce_ok}"
        ),
        t,
        secs(5),
    );
}

fn experiment_models() -> Vec<(String, ModelSpec)> {
    let mut out = Vec::new();
    for kind in ResidualKind::ALL {
        for (layers, layout) in [
            (1, Layout::Sequential),
            (2, Layout::Sequential),
            (2, Layout::Parallel),
        ] {
            let m = build_regression_model(kind, layers, layout).unwrap();
            out.push((format!("{}-{layers}-{layout:?}", kind.name()), m));
        }
    }
    out.push(("qcnn".into(), build_qcnn(&QcnnSpec::default()).unwrap()));
    out.push((
        "qcnn-q0q2".into(),
        build_qcnn(&QcnnSpec::with_residual(&[0, 2])).unwrap(),
    ));
    out
}

#[test]
fn c05_gradient_check() {
    let t = Instant::now();
    let mut rng = stream_rng(5, 0);
    let (mut shift_worst, mut other_worst) = (0.0f64, 0.0f64);
    let (mut n_shift, mut n_other) = (0usize, 0usize);
    for (_, m) in experiment_models() {
        for _ in 0..5 {
            let theta: Vec<f64> = (0..m.n_params()).map(|_| rng.gen_range(0.0..6.3)).collect();
            let x: Vec<f64> = (0..m.n_features())
                .map(|_| rng.gen_range(0.0..3.2))
                .collect();
            let (_, adj) = output_gradient(&m, &theta, &x, GradientMode::Adjoint).unwrap();
            for j in 0..m.n_params() {
                let fd = finite_difference_grad(&m, &theta, &x, j, FD_STEP).unwrap();
                if m.shift_eligible(j) {
                    let ps = parameter_shift_grad(&m, &theta, &x, j).unwrap();
                    shift_worst = shift_worst.max((ps - fd).abs());
                    n_shift += 1;
                } else {
                    n_other += 1;
                }
                other_worst = other_worst.max((adj[j] - fd).abs());
            }
        }
    }
    verdict(
        5,
        "parameter shift vs finite differences",
        shift_worst <= 1e-6 && other_worst <= 1e-6 && n_shift > 0,
        &format!(
            "{n_shift} shift-rule partials, max deviation {shift_worst:.2e}; adjoint on all partials \
             ({n_other} not shift-eligible), max deviation {other_worst:.2e} (tol 1e-6)"
        ),
        t,
        secs(30),
    );
}

fn best_mse(
    kind: ResidualKind,
    target: &str,
    layers: usize,
    layout: Layout,
    batch_fraction: Option<f64>,
) -> f64 {
    let mut s = ExperimentSpec::new(format!("{}-{target}", kind.name()), kind, target);
    s.layers = layers;
    s.layout = layout;
    if let Some(f) = batch_fraction {
        s.train.batch_fraction = f;
    }
    run_fit(&s).unwrap().best_mse
}

#[test]
fn c06_low_frequency_target() {
    let t = Instant::now();
    let trad1 = best_mse(
        ResidualKind::Traditional,
        "y1_omega1",
        1,
        Layout::Sequential,
        None,
    );
    let trad2 = best_mse(
        ResidualKind::Traditional,
        "y1_omega2",
        1,
        Layout::Sequential,
        None,
    );
    let res2 = best_mse(ResidualKind::R, "y1_omega2", 1, Layout::Sequential, None);
    verdict(
        6,
        "single-layer fits of y1",
        trad1 <= 1e-4 && trad2 >= 1e-2 && res2 <= 1e-3,
        &format!(
            "traditional on Ω1 {trad1:.3e} (≤ 1e-4), traditional on Ω2 {trad2:.3e} (≥ 1e-2), R on Ω2 {res2:.3e} (≤ 1e-3)"
        ),
        t,
        secs(300),
    );
}

#[test]
fn c07_residual_variant_ordering() {
    let t = Instant::now();
    let m: Vec<f64> = ResidualKind::ALL
        .iter()
        .map(|&k| best_mse(k, "y2_omega2", 1, Layout::Sequential, None))
        .collect();
    let (trad, r, r1, r2) = (m[0], m[1], m[2], m[3]);
    verdict(
        7,
        "single-layer fits of y2",
        trad > r && r > r1.max(r2) && r1 <= 5e-4 && r2 <= 5e-4,
        &format!("traditional {trad:.3e} > R {r:.3e} > R1 {r1:.3e}, R2 {r2:.3e} (R1, R2 ≤ 5e-4)"),
        t,
        secs(300),
    );
}

#[test]
fn c08_two_layer_fits() {
    let t = Instant::now();
    let bf = Some(16.0 / 70.0);
    let seq = best_mse(ResidualKind::R2, "y2_omega3", 2, Layout::Sequential, bf);
    let par = best_mse(ResidualKind::R2, "y2_omega3", 2, Layout::Parallel, bf);
    verdict(
        8,
        "two-layer R2 fits of y2 on Ω3",
        seq <= 1e-3 && par <= 1e-3,
        &format!("sequential {seq:.3e}, parallel {par:.3e} (both ≤ 1e-3)"),
        t,
        secs(600),
    );
}

fn population_variance(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64
}

#[test]
fn c09_coefficient_clouds() {
    let t = Instant::now();
    let mut re = Vec::new();
    let mut im = Vec::new();
    let mut trad_half = f64::NAN;
    for kind in ResidualKind::ALL {
        let m = build_regression_model(kind, 1, Layout::Sequential).unwrap();
        let cloud = sample_coefficient_cloud(&m, 1000, 0, Some(&[0.0, 0.5, 1.0])).unwrap();
        let c1 = cloud.at(1.0).unwrap();
        re.push(population_variance(
            &c1.iter().map(|c| c.re).collect::<Vec<_>>(),
        ));
        im.push(population_variance(
            &c1.iter().map(|c| c.im).collect::<Vec<_>>(),
        ));
        if kind == ResidualKind::Traditional {
            trad_half = cloud
                .at(0.5)
                .unwrap()
                .iter()
                .map(|c| c.norm())
                .fold(0.0, f64::max);
        }
    }
    // order: traditional, R, R1, R2
    let ordered = |v: &[f64]| v[3] >= v[2] && v[2] >= v[1] && v[1] >= v[0];
    verdict(
        9,
        "coefficient cloud spread",
        ordered(&re) && ordered(&im) && trad_half < 1e-8,
        &format!(
            "Var(Re c1) T/R/R1/R2 = {:.4}/{:.4}/{:.4}/{:.4}; Var(Im c1) = {:.4}/{:.4}/{:.4}/{:.4}; \
             need R2 ≥ R1 ≥ R ≥ T; traditional max |c_1/2| {trad_half:.1e} (< 1e-8)",
            re[0], re[1], re[2], re[3], im[0], im[1], im[2], im[3]
        ),
        t,
        secs(300),
    );
}

#[test]
fn c10_kl_expressibility() {
    let t = Instant::now();
    let rows = expressibility_table(&ResidualKind::ALL, 1000, 0, 1.0, 45).unwrap();
    let d: Vec<f64> = rows.iter().map(|r| r.kl).collect();
    let reference = [0.0634, 0.0581, 0.0446, 0.0429];
    let ordered = d[0] > d[1] && d[1] > d[2] && d[2] > d[3];
    let within = d.iter().zip(&reference).all(|(a, b)| (a - b).abs() <= 0.02);
    verdict(
        10,
        "KL expressibility",
        ordered && within,
        &format!(
            "T/R/R1/R2 = {:.4}/{:.4}/{:.4}/{:.4}; need strictly decreasing and each within 0.02 of {reference:?}",
            d[0], d[1], d[2], d[3]
        ),
        t,
        secs(300),
    );
}

fn mnist_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

#[test]
fn c11_mnist_desk_scale() {
    let t = Instant::now();
    let data = prepare_features(&mnist_dir(), &[0, 1], 4);
    let Ok(data) = data else {
        verdict(
            11,
            "QCNN desk scale",
            false,
            &format!("data unavailable: {:?}", data.err()),
            t,
            secs(1800),
        );
        return;
    };
    let idx = stratified_indices(&data.train.labels, 2000, 0).unwrap();
    let train = data.train.subset(&idx);
    let acc = |q: &[usize]| {
        let spec = QcnnSpec {
            repetitions: 5,
            ..QcnnSpec::with_residual(q)
        };
        run_mnist_experiment(&spec, &train, &data.test)
            .unwrap()
            .mean_test_accuracy
    };
    let trad = acc(&[]);
    let res = acc(&[0, 2]);
    verdict(
        11,
        "QCNN desk scale",
        res >= 0.88 && res >= trad + 0.04,
        &format!("mean test accuracy traditional {trad:.4}, residual Q0Q2 {res:.4} (need ≥ 0.88 and ≥ traditional + 0.04)"),
        t,
        secs(1800),
    );
}

fn mutate(rng: &mut impl Rng, base: &[u8]) -> Vec<u8> {
    let mut v = base.to_vec();
    match rng.gen_range(0..4) {
        0 => v.truncate(rng.gen_range(0..=v.len())),
        1 => {
            for _ in 0..rng.gen_range(1..8) {
                let i = rng.gen_range(0..v.len());
                v[i] = rng.gen();
            }
        }
        2 => v.extend((0..rng.gen_range(1..16)).map(|_| rng.gen::<u8>())),
        _ => v = (0..rng.gen_range(0..40)).map(|_| rng.gen()).collect(),
    }
    v
}

#[test]
fn c12_data_plumbing() {
    let t = Instant::now();
    let mut base = Vec::new();
    for w in [0x0803u32, 2, 3, 2] {
        base.extend_from_slice(&w.to_be_bytes());
    }
    base.extend(0..12u8);
    let mut rng = stream_rng(12, 0);
    let mut panics = 0;
    for _ in 0..10_000 {
        let bytes = mutate(&mut rng, &base);
        if std::panic::catch_unwind(|| parse_idx(&bytes)).is_err() {
            panics += 1;
        }
    }
    let dir = mnist_dir();
    let load = || -> qresnet::Result<(usize, usize, usize, usize, usize)> {
        let read = |n: &str| std::fs::read(dir.join(n)).map_err(qresnet::Error::from);
        let images = parse_idx_images(&read(TRAIN_IMAGES)?)?;
        let labels = parse_idx_labels(&read(TRAIN_LABELS)?)?;
        let ti = parse_idx_images(&read(TEST_IMAGES)?)?;
        let tl = match parse_idx(&read(TEST_LABELS)?)? {
            IdxTensor::Labels(l) => l,
            IdxTensor::Images(_) => {
                return Err(qresnet::Error::Malformed("labels expected".into()))
            }
        };
        let tr = filter_classes(&images, &labels, &[0, 1], Split::Train)?;
        let te = filter_classes(&ti, &tl, &[0, 1], Split::Test)?;
        Ok((images.count, images.rows, images.cols, tr.len(), te.len()))
    };
    let (ok, detail) = match load() {
        Ok((n, r, c, tr, te)) => (
            (n, r, c, tr, te) == (60000, 28, 28, 12665, 2115),
            format!("train header {n}x{r}x{c}, 0/1 split {tr}/{te}"),
        ),
        Err(e) => (false, format!("data unavailable: {e}")),
    };
    verdict(
        12,
        "data plumbing",
        ok && panics == 0,
        &format!(
            "10000 malformed inputs, {panics} panics; {detail} (need 60000x28x28, 12665/2115)"
        ),
        t,
        secs(60),
    );
}
