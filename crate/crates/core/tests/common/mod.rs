#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use retinn::dataio::{MdInterval, PairedExam};
use retinn::grid::LocationTable;
use retinn::models::{Architecture, ModelVariant, PassSchedule};
use retinn::objective::{location_weights, sample_weights, LossHyper, LossWeights, VfCoordinates};
use retinn::tensor::ops::ConvSpec;
use retinn::tensor::{Activation, ConvParams, DenseParams, Gradients, ParamId, ParameterStore, Tape};

pub const STEP: f64 = 1e-5;
/// A coordinate whose ±STEP probe crosses a ReLU or max-pool branch is
/// re-probed with STEP / 4^i; only if every retry crosses is it skipped.
pub const RETRIES: i32 = 3;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely; central
/// differences cannot resolve them relative to the loss scale.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * sd
        })
        .collect()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct CheckReport {
    pub configs: usize,
    pub coordinates: usize,
    pub skipped: usize,
    pub worst: f64,
}

impl CheckReport {
    pub fn merge(&mut self, other: CheckReport) {
        self.configs += other.configs;
        self.coordinates += other.coordinates;
        self.skipped += other.skipped;
        self.worst = self.worst.max(other.worst);
    }

    pub fn passes(&self) -> bool {
        self.worst <= TOLERANCE && self.skipped * 20 <= self.coordinates.max(1)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// One evaluation: loss, branch signature, and gradients if requested.
pub type Eval<'a> = dyn Fn(&ParameterStore, bool) -> (f64, u64, Option<Gradients>) + 'a;

/// Compares analytic gradients with central differences on the given
/// coordinates (all coordinates when `coords` is `None`). Coordinates
/// whose ±step crosses a ReLU or pooling branch are re-probed with smaller steps.
pub fn check(store: &ParameterStore, coords: Option<Vec<(ParamId, usize)>>, eval: &Eval<'_>) -> CheckReport {
    let (_, sig, grads) = eval(store, true);
    let grads = grads.expect("gradients requested");
    let coords = coords.unwrap_or_else(|| {
        (0..store.len())
            .flat_map(|p| (0..store.entry(ParamId(p)).values.len()).map(move |k| (ParamId(p), k)))
            .collect()
    });
    let mut report = CheckReport {
        configs: 1,
        ..Default::default()
    };
    let mut work = store.clone();
    for (id, k) in coords {
        let orig = work.values(id)[k];
        report.coordinates += 1;
        let mut numeric = None;
        for i in 0..=RETRIES {
            let h = STEP / 4f64.powi(i);
            work.values_mut(id)[k] = orig + h;
            let (lp, sp, _) = eval(&work, false);
            work.values_mut(id)[k] = orig - h;
            let (lm, sm, _) = eval(&work, false);
            work.values_mut(id)[k] = orig;
            if sp == sig && sm == sig {
                numeric = Some((lp - lm) / (2.0 * h));
                break;
            }
        }
        match numeric {
            Some(n) => report.worst = report.worst.max(relative_error(grads.get(id)[k], n)),
            None => report.skipped += 1,
        }
    }
    report
}

fn random_spec(rng: &mut ChaCha8Rng, activation: Activation) -> (ConvSpec, usize) {
    let spec = ConvSpec::new(
        rng.random_range(1..=3),
        rng.random_range(1..=3),
        rng.random_range(1..=5),
        rng.random_range(1..=3),
        rng.random_range(0..=2),
        activation,
    );
    let length = rng.random_range(spec.width.max(4)..=18);
    (spec, length)
}

/// Convolution with a learnable input, random geometry and both activations.
pub fn conv_suite(configs: usize, seed: u64) -> CheckReport {
    let mut rng = rng(seed);
    let mut report = CheckReport::default();
    for c in 0..configs {
        let act = if c % 2 == 0 { Activation::Relu } else { Activation::Linear };
        let (spec, length) = random_spec(&mut rng, act);
        let Ok(out_len) = spec.output_length(length) else { continue };
        let mut store = ParameterStore::new();
        let x = store
            .add_with_values("x", &[spec.in_channels, length], normal(&mut rng, spec.in_channels * length, 1.0))
            .unwrap();
        let kernel = store
            .add_with_values("k", &[spec.out_channels, spec.in_channels, spec.width], normal(&mut rng, spec.kernel_len(), 0.7))
            .unwrap();
        let bias = store
            .add_with_values("b", &[spec.out_channels], normal(&mut rng, spec.out_channels, 0.3))
            .unwrap();
        let n_out = spec.out_channels * out_len;
        let target = normal(&mut rng, n_out, 1.0);
        let weights: Vec<f64> = (0..n_out).map(|_| rng.random_range(0.1..1.0)).collect();
        let params = ConvParams { spec, kernel, bias };
        let eval = |s: &ParameterStore, grad: bool| {
            let mut tape = Tape::new(s);
            let xi = tape.parameter(x, spec.in_channels).unwrap();
            let y = tape.conv1d(xi, params).unwrap();
            let l = tape.weighted_squared_error(y, &target, &weights).unwrap();
            let g = grad.then(|| tape.backward(l, 1.0).unwrap());
            (tape.scalar(l).unwrap(), tape.activation_signature(), g)
        };
        report.merge(check(&store, None, &eval));
    }
    report
}

pub fn maxpool_suite(configs: usize, seed: u64) -> CheckReport {
    let mut rng = rng(seed);
    let mut report = CheckReport::default();
    for _ in 0..configs {
        let channels = rng.random_range(1..=3);
        let window = rng.random_range(1..=4);
        let length = window * rng.random_range(1..=16 / window);
        let mut store = ParameterStore::new();
        let x = store
            .add_with_values("x", &[channels, length], normal(&mut rng, channels * length, 1.0))
            .unwrap();
        let n_out = channels * (length / window);
        let target = normal(&mut rng, n_out, 1.0);
        let weights: Vec<f64> = (0..n_out).map(|_| rng.random_range(0.1..1.0)).collect();
        let eval = |s: &ParameterStore, grad: bool| {
            let mut tape = Tape::new(s);
            let xi = tape.parameter(x, channels).unwrap();
            let y = tape.maxpool1d(xi, window).unwrap();
            let l = tape.weighted_squared_error(y, &target, &weights).unwrap();
            let g = grad.then(|| tape.backward(l, 1.0).unwrap());
            (tape.scalar(l).unwrap(), tape.activation_signature(), g)
        };
        report.merge(check(&store, None, &eval));
    }
    report
}

/// Softmax-weighted pooling with learnable values and logits.
pub fn softmax_head_suite(configs: usize, seed: u64) -> CheckReport {
    let mut rng = rng(seed);
    let mut report = CheckReport::default();
    for _ in 0..configs {
        let n = rng.random_range(2..=52);
        let mut store = ParameterStore::new();
        let vf = store.add_with_values("vf", &[1, n], normal(&mut rng, n, 5.0)).unwrap();
        let logits = store.add_with_values("logits", &[n], normal(&mut rng, n, 1.5)).unwrap();
        let target = [rng.random_range(-20.0..0.0)];
        let eval = |s: &ParameterStore, grad: bool| {
            let mut tape = Tape::new(s);
            let v = tape.parameter(vf, 1).unwrap();
            let md = tape.softmax_pool(v, logits).unwrap();
            let l = tape.weighted_squared_error(md, &target, &[0.7]).unwrap();
            let g = grad.then(|| tape.backward(l, 1.0).unwrap());
            (tape.scalar(l).unwrap(), tape.activation_signature(), g)
        };
        report.merge(check(&store, None, &eval));
    }
    report
}

pub fn dense_suite(configs: usize, seed: u64) -> CheckReport {
    let mut rng = rng(seed);
    let mut report = CheckReport::default();
    for c in 0..configs {
        let inputs = rng.random_range(1..=12);
        let outputs = rng.random_range(1..=6);
        let activation = if c % 2 == 0 { Activation::Relu } else { Activation::Linear };
        let mut store = ParameterStore::new();
        let x = store.add_with_values("x", &[1, inputs], normal(&mut rng, inputs, 1.0)).unwrap();
        let weight = store
            .add_with_values("w", &[outputs, inputs], normal(&mut rng, outputs * inputs, 0.5))
            .unwrap();
        let bias = store.add_with_values("b", &[outputs], normal(&mut rng, outputs, 0.3)).unwrap();
        let target = normal(&mut rng, outputs, 1.0);
        let params = DenseParams {
            weight,
            bias: Some(bias),
            outputs,
            activation,
        };
        let eval = |s: &ParameterStore, grad: bool| {
            let mut tape = Tape::new(s);
            let xi = tape.parameter(x, 1).unwrap();
            let y = tape.dense(xi, params).unwrap();
            let l = tape.weighted_squared_error(y, &target, &vec![1.0; outputs]).unwrap();
            let g = grad.then(|| tape.backward(l, 1.0).unwrap());
            (tape.scalar(l).unwrap(), tape.activation_signature(), g)
        };
        report.merge(check(&store, None, &eval));
    }
    report
}

/// Moves biases and mask logits off their zero start so that ReLU and
/// pooling outputs do not tie.
fn jitter_zero_init(model: &mut ModelVariant, rng: &mut ChaCha8Rng) {
    for p in 0..model.params.len() {
        let id = ParamId(p);
        let name = &model.params.entry(id).name;
        if name.ends_with("bias") || name.contains("mask") {
            let n = model.params.values(id).len();
            let noise = normal(rng, n, 0.1);
            for (v, e) in model.params.values_mut(id).iter_mut().zip(noise) {
                *v += e;
            }
        }
    }
}

fn sample_coords(store: &ParameterStore, rng: &mut ChaCha8Rng, per_entry: usize) -> Vec<(ParamId, usize)> {
    let mut out = Vec::new();
    for p in 0..store.len() {
        let n = store.entry(ParamId(p)).values.len();
        if n <= per_entry {
            out.extend((0..n).map(|k| (ParamId(p), k)));
        } else {
            out.extend((0..per_entry).map(|_| (ParamId(p), rng.random_range(0..n))));
        }
    }
    out
}

/// Whole-network gradients: every parameter of the compact network, and a
/// sample of each entry of the reference network.
pub fn network_suite(compact: usize, reference: usize, seed: u64) -> CheckReport {
    let mut rng = rng(seed);
    let mut report = CheckReport::default();
    let rho = location_weights(&VfCoordinates::standard(), 5.0).unwrap();
    for c in 0..compact + reference {
        let arch = if c < compact {
            Architecture::compact_retinervenet()
        } else {
            Architecture::reference_retinervenet()
        };
        let mut model = ModelVariant::build(arch, PassSchedule::standard(), seed + c as u64).unwrap();
        jitter_zero_init(&mut model, &mut rng);
        let x = normal(&mut rng, 768, 1.0);
        let target = normal(&mut rng, 52, 3.0);
        let md_target = [rng.random_range(-10.0..0.0)];
        let coords = if c < compact {
            None
        } else {
            Some(sample_coords(&model.params, &mut rng, 12))
        };
        let m = &model;
        let eval = |s: &ParameterStore, grad: bool| {
            let mut probe = m.clone();
            probe.params = s.clone();
            let mut tape = Tape::new(&probe.params);
            let nodes = probe.record(&mut tape, &x).unwrap();
            let a = tape.weighted_squared_error(nodes.vf, &target, &rho).unwrap();
            let b = tape.weighted_squared_error(nodes.md, &md_target, &[0.25]).unwrap();
            let l = tape.add(a, b).unwrap();
            let g = grad.then(|| tape.backward(l, 1.0).unwrap());
            (tape.scalar(l).unwrap(), tape.activation_signature(), g)
        };
        report.merge(check(&model.params, coords, &eval));
    }
    report
}

fn md_for(interval: MdInterval, rng: &mut ChaCha8Rng) -> f64 {
    match interval {
        MdInterval::I1 => rng.random_range(-5.5..1.0),
        MdInterval::I2 => rng.random_range(-15.5..-6.5),
        MdInterval::I3 => rng.random_range(-25.5..-16.5),
        MdInterval::I4 => rng.random_range(-33.0..-26.5),
    }
}

/// The composite loss over a small dataset. The analytic side is assembled
/// per sample on the tape as in training; the numeric side differentiates
/// the dataset-level loss computed from plain forward passes.
pub fn composite_loss_suite(configs: usize, seed: u64) -> CheckReport {
    let mut rng = rng(seed);
    let mut report = CheckReport::default();
    let coords = VfCoordinates::from_table(&LocationTable::standard());
    for c in 0..configs {
        let hyper = LossHyper::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(1.0..20.0)).unwrap();
        let n = 6;
        let md: Vec<f64> = (0..n).map(|i| md_for(MdInterval::ALL[i % 4], &mut rng)).collect();
        let xs: Vec<Vec<f64>> = (0..n).map(|_| normal(&mut rng, 768, 1.0)).collect();
        let ys: Vec<Vec<f64>> = (0..n).map(|_| normal(&mut rng, 52, 4.0)).collect();
        let weights = LossWeights::new(&md, hyper, &coords).unwrap();
        let lambda = sample_weights(&md, hyper.alpha).unwrap();
        let mut model = ModelVariant::build(Architecture::compact_retinervenet(), PassSchedule::standard(), 100 + c as u64).unwrap();
        jitter_zero_init(&mut model, &mut rng);
        let sub = sample_coords(&model.params, &mut rng, 6);
        let m = &model;
        let eval = |s: &ParameterStore, grad: bool| {
            let mut probe = m.clone();
            probe.params = s.clone();
            let preds: Vec<_> = xs.iter().map(|x| probe.forward_normalized(x).unwrap()).collect();
            let pv: Vec<Vec<f64>> = preds.iter().map(|p| p.vf.clone()).collect();
            let pm: Vec<f64> = preds.iter().map(|p| p.md).collect();
            let loss = weights.evaluate(&pv, &pm, &ys, &md).unwrap();
            let mut sig = 0u64;
            let mut g = grad.then(|| Gradients::zeros_like(s));
            for i in 0..n {
                let mut tape = Tape::new(s);
                let nodes = probe.record(&mut tape, &xs[i]).unwrap();
                let vf_w: Vec<f64> = weights.rho.iter().map(|r| (1.0 - hyper.beta) * lambda[i] * r).collect();
                let a = tape.weighted_squared_error(nodes.vf, &ys[i], &vf_w).unwrap();
                let b = tape.weighted_squared_error(nodes.md, &[md[i]], &[hyper.beta * lambda[i]]).unwrap();
                let l = tape.add(a, b).unwrap();
                sig = sig.rotate_left(7) ^ tape.activation_signature();
                if let Some(g) = g.as_mut() {
                    g.accumulate(&tape.backward(l, 1.0).unwrap());
                }
            }
            (loss, sig, g)
        };
        report.merge(check(&model.params, Some(sub), &eval));
    }
    report
}

/// Naive pointwise MAE: mean over tests of the mean absolute error.
pub fn naive_mae(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for i in 0..preds.len() {
        let mut row = 0.0;
        for j in 0..preds[i].len() {
            row += (preds[i][j] - targets[i][j]).abs();
        }
        total += row / preds[i].len() as f64;
    }
    total / preds.len() as f64
}

pub fn naive_r2(p: &[f64], t: &[f64]) -> f64 {
    let mut mean = 0.0;
    for v in t {
        mean += v;
    }
    mean /= t.len() as f64;
    let (mut res, mut tot) = (0.0, 0.0);
    for i in 0..t.len() {
        res += (t[i] - p[i]).powi(2);
        tot += (t[i] - mean).powi(2);
    }
    1.0 - res / tot
}

pub fn exam_with(md: f64, td: Vec<f64>, rnfl: Vec<f64>, patient: &str) -> PairedExam {
    let date = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    PairedExam {
        patient_id: patient.to_string(),
        eye: retinn::dataio::Eye::Right,
        age: 60.0,
        sdoct_date: date,
        sap_date: date,
        quality_score: 30.0,
        fixation_loss_pct: 0.0,
        false_positive_pct: 0.0,
        rnfl,
        td,
        md,
        psd: 2.0,
    }
}
