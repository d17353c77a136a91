//! Acceptance suite: one verdict line per criterion on stdout, then an
//! assertion so a failing criterion fails the test.

use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use macnet::arch::{MacNet, MacNetConfig};
use macnet::data::{event_split, generate_synthetic_dataset, DatasetManifest, EventRecord, Split, SplitRatios, SynthConfig};
use macnet::loss::{softmax_cross_entropy, weighted_cross_entropy_value, ClassWeights};
use macnet::metrics::{compute_report, top_k_accuracy, ConfusionMatrix, EvalReport};
use macnet::ops::{conv2d_forward, Conv2dSpec, Mode, NormMode, RunningMoments};
use macnet::report::{read_report, render_report_dir, row_normalized, write_report, CONFUSION_CHART_FILE, F1_CHART_FILE};
use macnet::rng::{stream, Rng};
use macnet::train::{evaluate, Checkpoint, LrSchedule, TrainRunConfig, Trainer};
use macnet::{Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng as _;

fn verdict(id: u32, title: &str, pass: bool, detail: &str) {
    report_line(&format!("criterion {id:>2}"), title, pass, detail);
}

fn report_line(label: &str, title: &str, pass: bool, detail: &str) {
    let line = format!("\n{label} [{}] {title}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    // bypasses the test harness capture so the line always shows up
    let _ = std::io::stdout().write_all(line.as_bytes());
    assert!(pass, "{line}");
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

// ---------------------------------------------------------------- 1

const FD_STEP: f64 = 1e-5;
/// Denominator floor of the per-operator relative error.
const OP_FLOOR: f64 = 1e-8;
/// Central differences of an O(1) loss at step 1e-5 carry about 1e-11 of
/// round-off, which the whole-network check must not mistake for signal on
/// parameters whose gradient is exactly zero (biases feeding batch norm).
const MODEL_FLOOR: f64 = 1e-6;

fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

struct OpCase {
    name: String,
    inputs: Vec<Tensor<f64>>,
    build: Build,
}

impl OpCase {
    fn new(name: impl Into<String>, inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var + 'static) -> Self {
        OpCase {
            name: name.into(),
            inputs,
            build: Box::new(build),
        }
    }

    /// `sum(op(inputs) * r)` for a fixed random `r`, so every output
    /// element carries a distinct upstream gradient.
    fn loss(&self, tape: &mut Tape<f64>, vars: &[Var]) -> Var {
        let out = (self.build)(tape, vars);
        let mut rng = stream(&[0xfd, self.name.len() as u64]);
        let r = uniform(&mut rng, tape.shape(out), -1.0, 1.0);
        let r = tape.constant(r);
        let m = tape.mul(out, r).unwrap();
        tape.sum(m)
    }

    fn value_at(&self, inputs: &[Tensor<f64>]) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = self.loss(&mut tape, &vars);
        tape.value(loss).data()[0]
    }

    /// Worst relative error over every input coordinate.
    fn check(&self) -> (f64, usize) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = self.loss(&mut tape, &vars);
        tape.backward(loss).unwrap();
        let mut worst = 0.0f64;
        let mut coords = 0;
        for (i, var) in vars.iter().enumerate() {
            let analytic = tape.grad(*var).unwrap_or_else(|| Tensor::zeros(self.inputs[i].shape().to_vec()));
            for j in 0..self.inputs[i].numel() {
                let mut plus = self.inputs.clone();
                plus[i].data_mut()[j] += FD_STEP;
                let mut minus = self.inputs.clone();
                minus[i].data_mut()[j] -= FD_STEP;
                let numeric = (self.value_at(&plus) - self.value_at(&minus)) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(analytic.data()[j], numeric, OP_FLOOR));
                coords += 1;
            }
        }
        (worst, coords)
    }
}

fn op_cases() -> Vec<OpCase> {
    let mut rng = stream(&[1, 1]);
    let rng = &mut rng;
    let mut cases = vec![
        OpCase::new(
            "add",
            vec![uniform(rng, &[2, 3, 4, 4], -1.0, 1.0), uniform(rng, &[2, 3, 4, 4], -1.0, 1.0)],
            |t, v| t.add(v[0], v[1]).unwrap(),
        ),
        OpCase::new(
            "mul",
            vec![uniform(rng, &[2, 3, 4, 4], -1.0, 1.0), uniform(rng, &[2, 3, 4, 4], -1.0, 1.0)],
            |t, v| t.mul(v[0], v[1]).unwrap(),
        ),
        OpCase::new("scale", vec![uniform(rng, &[3, 7], -1.0, 1.0)], |t, v| t.scale(v[0], -1.7)),
        OpCase::new("sum", vec![uniform(rng, &[2, 5, 3], -1.0, 1.0)], |t, v| t.sum(v[0])),
        OpCase::new(
            "relu",
            // kept away from the kink at 0
            vec![uniform(rng, &[2, 3, 5, 5], 0.05, 1.0).map(|x| if x < 0.5 { x - 0.55 } else { x })],
            |t, v| t.relu(v[0]),
        ),
        OpCase::new("softmax", vec![uniform(rng, &[4, 6], -2.0, 2.0)], |t, v| t.softmax(v[0]).unwrap()),
        OpCase::new("dropout", vec![uniform(rng, &[3, 10], -1.0, 1.0)], |t, v| {
            t.dropout(v[0], 0.4, Mode::Train, &mut stream(&[77])).unwrap()
        }),
        OpCase::new(
            "linear",
            vec![
                uniform(rng, &[3, 5], -1.0, 1.0),
                uniform(rng, &[5, 4], -1.0, 1.0),
                uniform(rng, &[4], -1.0, 1.0),
            ],
            |t, v| t.linear(v[0], v[1], Some(v[2])).unwrap(),
        ),
        OpCase::new(
            "pointwise_conv",
            vec![
                uniform(rng, &[2, 3, 4, 5], -1.0, 1.0),
                uniform(rng, &[4, 3, 1, 1], -1.0, 1.0),
                uniform(rng, &[4], -1.0, 1.0),
            ],
            |t, v| t.pointwise_conv(v[0], v[1], Some(v[2])).unwrap(),
        ),
        OpCase::new(
            "batch_norm train [N,C,H,W]",
            vec![
                uniform(rng, &[3, 2, 3, 3], -1.0, 1.0),
                uniform(rng, &[2], 0.5, 1.5),
                uniform(rng, &[2], -0.5, 0.5),
            ],
            |t, v| {
                let mut m = RunningMoments::new(2);
                t.batch_norm(v[0], v[1], v[2], NormMode::Train(&mut m)).unwrap()
            },
        ),
        OpCase::new(
            "batch_norm train [N,C]",
            vec![
                uniform(rng, &[5, 3], -1.0, 1.0),
                uniform(rng, &[3], 0.5, 1.5),
                uniform(rng, &[3], -0.5, 0.5),
            ],
            |t, v| {
                let mut m = RunningMoments::new(3);
                t.batch_norm(v[0], v[1], v[2], NormMode::Train(&mut m)).unwrap()
            },
        ),
        OpCase::new(
            "batch_norm eval",
            vec![
                uniform(rng, &[2, 2, 3, 3], -1.0, 1.0),
                uniform(rng, &[2], 0.5, 1.5),
                uniform(rng, &[2], -0.5, 0.5),
            ],
            |t, v| {
                let m = RunningMoments {
                    mean: vec![0.1, -0.2],
                    var: vec![0.5, 1.5],
                    momentum: 0.1,
                };
                t.batch_norm(v[0], v[1], v[2], NormMode::Eval(&m)).unwrap()
            },
        ),
        OpCase::new("downsample_avg x2", vec![uniform(rng, &[2, 2, 4, 6], -1.0, 1.0)], |t, v| {
            t.downsample_avg(v[0], 2).unwrap()
        }),
        OpCase::new("downsample_avg x4", vec![uniform(rng, &[1, 2, 8, 8], -1.0, 1.0)], |t, v| {
            t.downsample_avg(v[0], 4).unwrap()
        }),
        OpCase::new("global_avg_pool", vec![uniform(rng, &[2, 3, 3, 5], -1.0, 1.0)], |t, v| {
            t.global_avg_pool(v[0]).unwrap()
        }),
        OpCase::new(
            "concat_channels",
            vec![
                uniform(rng, &[2, 1, 3, 3], -1.0, 1.0),
                uniform(rng, &[2, 3, 3, 3], -1.0, 1.0),
                uniform(rng, &[2, 2, 3, 3], -1.0, 1.0),
            ],
            |t, v| t.concat_channels(v).unwrap(),
        ),
        OpCase::new("softmax + weighted_nll", vec![uniform(rng, &[4, 5], -2.0, 2.0)], |t, v| {
            let w = ClassWeights::from_counts(&[3, 1, 4, 1, 5]).unwrap();
            softmax_cross_entropy(t, v[0], &[0, 2, 4, 1], &w).unwrap()
        }),
    ];
    for rate in 1..=3 {
        for stride in 1..=2 {
            let inputs = vec![
                uniform(rng, &[2, 3, 7, 6], -1.0, 1.0),
                uniform(rng, &[4, 3, 3, 3], -1.0, 1.0),
                uniform(rng, &[4], -1.0, 1.0),
            ];
            cases.push(OpCase::new(format!("conv2d rate {rate} stride {stride}"), inputs, move |t, v| {
                let spec = Conv2dSpec::new(3, 4, (3, 3))
                    .with_dilation(rate)
                    .with_stride(stride)
                    .with_padding(rate);
                t.conv2d(v[0], v[1], Some(v[2]), &spec).unwrap()
            }));
        }
    }
    cases
}

/// Central differences on 20 sampled parameter coordinates of the desk
/// network (train mode, fixed dropout mask, weighted cross-entropy).
fn full_model_check(kinks: &mut usize) -> (f64, Vec<String>) {
    let mut model = MacNet::<f64>::init(MacNetConfig::desk(4), 21).unwrap();
    let mut rng = stream(&[2, 1]);
    let images = uniform(&mut rng, &[2, 3, 64, 64], 0.0, 1.0);
    let labels = [0usize, 3];
    let weights = ClassWeights::from_counts(&[3, 1, 2, 4]).unwrap();

    let loss_of = |model: &mut MacNet<f64>, tape: &mut Tape<f64>| {
        let x = tape.constant(images.clone());
        let trace = model.forward(tape, x, Some(&mut stream(&[99]))).unwrap();
        let loss = softmax_cross_entropy(tape, trace.logits, &labels, &weights).unwrap();
        (loss, trace)
    };
    let mut tape = Tape::new();
    let (loss, trace) = loss_of(&mut model, &mut tape);
    tape.backward(loss).unwrap();

    let n_params = model.store().params().len();
    let mut picked = Vec::new();
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    let mut checked = 0;
    while checked < 20 {
        let p = rng.random_range(0..n_params);
        let j = rng.random_range(0..model.store().params()[p].value.numel());
        if picked.contains(&(p, j)) {
            continue;
        }
        picked.push((p, j));
        let analytic = tape.grad(trace.params[p]).unwrap().data()[j];
        let mut eval_at = |delta: f64| {
            let original = model.store().params()[p].value.data()[j];
            model.store_mut().params_mut()[p].value.data_mut()[j] = original + delta;
            let mut t = Tape::new();
            let (l, _) = loss_of(&mut model, &mut t);
            model.store_mut().params_mut()[p].value.data_mut()[j] = original;
            t.value(l).data()[0]
        };
        let (plus, centre, minus) = (eval_at(FD_STEP), eval_at(0.0), eval_at(-FD_STEP));
        // a relu switching inside [x-h, x+h] shows up as disagreeing one-sided slopes
        let (fwd, bwd) = ((plus - centre) / FD_STEP, (centre - minus) / FD_STEP);
        if rel_err(fwd, bwd, MODEL_FLOOR) > 1e-4 {
            lines.push(format!(
                "{}[{j}] skipped: one-sided slopes {fwd:.6e} / {bwd:.6e} straddle a kink",
                model.store().params()[p].name
            ));
            *kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let e = rel_err(analytic, numeric, MODEL_FLOOR);
        worst = worst.max(e);
        checked += 1;
        lines.push(format!(
            "{}[{j}] analytic {analytic:.6e} numeric {numeric:.6e} rel {e:.1e}",
            model.store().params()[p].name
        ));
    }
    (worst, lines)
}

#[test]
fn criterion_01_gradient_suite() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst_op = 0.0f64;
    for case in op_cases() {
        let (err, coords) = case.check();
        println!("{:<28} {coords:>4} coords  max rel err {err:.2e}", case.name);
        worst_op = worst_op.max(err);
        if err >= 1e-4 {
            failures.push(format!("{} ({err:.1e})", case.name));
        }
    }
    let mut kinks = 0;
    let (worst_model, lines) = full_model_check(&mut kinks);
    for l in &lines {
        println!("{l}");
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && worst_model < 1e-3 && secs < 300.0;
    verdict(
        1,
        "finite-difference gradients",
        pass,
        &format!(
            "worst op rel err {worst_op:.1e} (< 1e-4), full desk model worst of 20 coords {worst_model:.1e} (< 1e-3, {kinks} kink-straddling draws replaced), {secs:.1}s{}",
            if failures.is_empty() { String::new() } else { format!(", failing: {}", failures.join(", ")) }
        ),
    );
}

// ---------------------------------------------------------------- 2

/// Written independently of the library: one multiply-add per tap.
#[allow(clippy::too_many_arguments)]
fn conv_oracle(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    k: &[f64],
    (f, kh, kw): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    rate: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - rate * (kh - 1) - 1) / stride + 1;
    let ow = (w + 2 * pad - rate * (kw - 1) - 1) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for s in 0..n {
        for o in 0..f {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i * rate) as i64 - pad as i64;
                                let ix = (xo * stride + j * rate) as i64 - pad as i64;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x[((s * c + ci) * h + iy as usize) * w + ix as usize] * k[((o * c + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                    }
                    out[((s * f + o) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

#[test]
fn criterion_02_dilated_conv_oracle() {
    let mut rng = stream(&[2, 2]);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for rate in 1..=3 {
        for stride in 1..=2 {
            let mut done = 0;
            while done < 200 {
                let (n, c, f) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4));
                let (kh, kw) = (rng.random_range(1..=3), rng.random_range(1..=3));
                let pad = rng.random_range(0..=3);
                let (h, w) = (rng.random_range(1..=12), rng.random_range(1..=12));
                if h + 2 * pad < rate * (kh - 1) + 1 || w + 2 * pad < rate * (kw - 1) + 1 {
                    continue;
                }
                let x = uniform(&mut rng, &[n, c, h, w], -1.0, 1.0);
                let k = uniform(&mut rng, &[f, c, kh, kw], -1.0, 1.0);
                let b = rng.random_bool(0.5).then(|| uniform(&mut rng, &[f], -1.0, 1.0));
                let spec = Conv2dSpec::new(c, f, (kh, kw))
                    .with_dilation(rate)
                    .with_stride(stride)
                    .with_padding(pad);
                let (expected, oh, ow) = conv_oracle(
                    x.data(),
                    (n, c, h, w),
                    k.data(),
                    (f, kh, kw),
                    b.as_ref().map(|b| b.data()),
                    stride,
                    rate,
                    pad,
                );
                let got = conv2d_forward(&x, &k, b.as_ref(), &spec).unwrap();
                assert_eq!(got.shape(), &[n, f, oh, ow]);
                let mut tape = Tape::new();
                let (xv, kv) = (tape.constant(x.clone()), tape.constant(k.clone()));
                let bv = b.clone().map(|b| tape.constant(b));
                let via_tape = tape.conv2d(xv, kv, bv, &spec).unwrap();
                for (g, t) in got.data().iter().zip(tape.value(via_tape).data()) {
                    assert_eq!(g, t);
                }
                for (g, e) in got.data().iter().zip(&expected) {
                    worst = worst.max((g - e).abs());
                }
                done += 1;
                checked += 1;
            }
        }
    }
    verdict(
        2,
        "dilated convolution vs loop oracle",
        worst <= 1e-12,
        &format!("{checked} shapes over rates 1-3 and strides 1-2, max abs diff {worst:.1e} (<= 1e-12)"),
    );
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_03_stage_extents_and_channels() {
    let mut details = Vec::new();
    let mut pass = true;
    for size in [64, 96, 128] {
        let cfg = MacNetConfig {
            input_size: (size, size),
            ..MacNetConfig::desk(4)
        };
        let mut model = MacNet::<f32>::init(cfg, 0).unwrap();
        model.set_mode(Mode::Eval);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![1, 3, size, size], 0.5f32));
        let trace = model.forward(&mut tape, x, None).unwrap();
        let s4 = tape.shape(trace.stages[3]).to_vec();
        pass &= s4[2] == size / 16 && s4[3] == size / 16;
        details.push(format!("{size}->{}x{}", s4[2], s4[3]));
    }

    // full-width network; a small input keeps the forward pass cheap
    let full = MacNetConfig {
        input_size: (32, 32),
        ..MacNetConfig::paper(22)
    };
    let mut model = MacNet::<f32>::init(full, 0).unwrap();
    model.set_mode(Mode::Eval);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(vec![1, 3, 32, 32], 0.5f32));
    let trace = model.forward(&mut tape, x, None).unwrap();
    let channels: Vec<usize> = trace.stages.iter().map(|&s| tape.shape(s)[1]).collect();
    pass &= channels == [256, 512, 1024, 2048];
    verdict(
        3,
        "stage-4 extent is input/16; full-width stage channels",
        pass,
        &format!("desk {}; full-width channels {channels:?}", details.join(", ")),
    );
}

// ---------------------------------------------------------------- 4

/// Train-image column of the dataset table, 22 classes.
const DATASET_TRAIN_COUNTS: [(&str, usize); 22] = [
    ("bakery_shop", 96),
    ("banquet_hall", 203),
    ("bar", 1121),
    ("beer_hall", 296),
    ("butchers_shop", 251),
    ("cafeteria", 1238),
    ("candy_store", 172),
    ("coffee_shop", 1662),
    ("delicatessen", 652),
    ("dining_room", 2481),
    ("fastfood_restaurant", 858),
    ("food_court", 161),
    ("ice_cream_parlor", 70),
    ("kitchen", 2701),
    ("market_indoor", 644),
    ("market_outdoor", 1271),
    ("picnic_area", 659),
    ("pizzeria", 1022),
    ("pub_indoor", 342),
    ("restaurant", 4198),
    ("supermarket", 3019),
    ("sushi_bar", 1151),
];

#[test]
fn criterion_04_class_weights() {
    let two = ClassWeights::from_counts(&[4, 6]).unwrap();
    let pair_ok = (two.get(0) - 0.6).abs() < 1e-15 && (two.get(1) - 0.4).abs() < 1e-15;

    let counts: Vec<usize> = DATASET_TRAIN_COUNTS.iter().map(|&(_, n)| n).collect();
    let mut n_total = 0;
    for &(_, n) in &DATASET_TRAIN_COUNTS {
        n_total += n;
    }
    let w = ClassWeights::from_counts(&counts).unwrap();
    let restaurant = DATASET_TRAIN_COUNTS.iter().position(|&(c, _)| c == "restaurant").unwrap();
    let expected = 1.0 - 4198.0 / n_total as f64;
    let restaurant_ok = w.total() == n_total && (w.get(restaurant) - expected).abs() < 1e-15;

    let balanced = ClassWeights::from_counts(&[25; 22]).unwrap();
    let balanced_ok = balanced.weights().iter().all(|&x| x == balanced.get(0));
    verdict(
        4,
        "inverse-frequency class weights",
        pair_ok && restaurant_ok && balanced_ok,
        &format!(
            "{{4,6}} -> {{{}, {}}}; N_total {n_total}; w(restaurant) {:.10} vs 1-4198/N {:.10}; balanced equal: {balanced_ok}",
            two.get(0),
            two.get(1),
            w.get(restaurant),
            expected
        ),
    );
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_weighted_cross_entropy() {
    let counts: Vec<usize> = DATASET_TRAIN_COUNTS.iter().map(|&(_, n)| n).collect();
    let w = ClassWeights::from_counts(&counts).unwrap();
    let k = 22;
    let mut loss_err = 0.0f64;
    for y in 0..k {
        let probs = Tensor::full(vec![1, k], 1.0 / k as f64);
        let got = weighted_cross_entropy_value(&probs, &[y], &w).unwrap();
        loss_err = loss_err.max((got - w.get(y) * (k as f64).ln()).abs());
    }

    let mut rng = stream(&[5]);
    let logits = uniform(&mut rng, &[6, k], -3.0, 3.0);
    let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..k)).collect();
    let mut tape = Tape::new();
    let z = tape.leaf(logits.clone(), true);
    let loss = softmax_cross_entropy(&mut tape, z, &labels, &w).unwrap();
    tape.backward(loss).unwrap();
    let grad = tape.grad(z).unwrap();
    let mut grad_err = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().cloned().fold(f64::MIN, f64::max);
        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
        for (j, &z) in row.iter().enumerate() {
            let p = (z - max).exp() / denom;
            let expected = w.get(y) * (p - if j == y { 1.0 } else { 0.0 });
            grad_err = grad_err.max((grad.data()[i * k + j] - expected).abs());
        }
    }
    verdict(
        5,
        "weighted cross-entropy value and logit gradient",
        loss_err <= 1e-10 && grad_err <= 1e-10,
        &format!("uniform 22-class loss err {loss_err:.1e}, gradient err {grad_err:.1e} (both <= 1e-10)"),
    );
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_metrics() {
    // rows: true class, columns: predicted
    // [[4,0,0],[2,1,0],[1,1,1]]
    let pairs = [(0, 0), (0, 0), (0, 0), (0, 0), (1, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)];
    let probs = Tensor::from_fn(vec![pairs.len(), 3], |i| {
        let (r, c) = (i / 3, i % 3);
        if c == pairs[r].1 {
            0.6
        } else {
            0.2
        }
    });
    let labels: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let report = compute_report(&probs, &labels).unwrap();
    let expected_cm = ConfusionMatrix::from_rows(&[vec![4, 0, 0], vec![2, 1, 0], vec![1, 1, 1]]).unwrap();
    let p = [4.0 / 7.0, 1.0 / 2.0, 1.0];
    let r = [1.0, 1.0 / 3.0, 1.0 / 3.0];
    let f1 = [8.0 / 11.0, 2.0 / 5.0, 1.0 / 2.0];
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-15;
    let mut fixture_ok = report.confusion == expected_cm && close(report.top1, 0.6) && report.top5 == 1.0;
    for c in 0..3 {
        let s = report.per_class[c];
        fixture_ok &= close(s.precision, p[c]) && close(s.recall, r[c]) && close(s.f1, f1[c]);
    }
    fixture_ok &= close(report.macro_precision, (p[0] + p[1] + p[2]) / 3.0);
    fixture_ok &= close(report.macro_recall, 5.0 / 9.0);
    fixture_ok &= close(report.macro_f1, (f1[0] + f1[1] + f1[2]) / 3.0);

    let mut rng = stream(&[6]);
    let mut topk_ok = true;
    for _ in 0..1000 {
        let k = rng.random_range(2..=30);
        let n = rng.random_range(1..=50);
        let probs = uniform(&mut rng, &[n, k], 0.0, 1.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let accs: Vec<f64> = (1..=k).map(|j| top_k_accuracy(&probs, &labels, j).unwrap()).collect();
        let top5 = accs[4.min(k - 1)];
        topk_ok &= top5 >= accs[0];
        topk_ok &= accs.windows(2).all(|w| w[1] >= w[0]);
        topk_ok &= accs[k - 1] == 1.0;
    }
    verdict(
        6,
        "metric fixture and top-k ordering",
        fixture_ok && topk_ok,
        &format!("3-class fixture reproduced: {fixture_ok}; 1000 random sets top5 >= top1 and monotone in k: {topk_ok}"),
    );
}

// ---------------------------------------------------------------- 7

fn random_manifest(rng: &mut Rng, max_events: usize) -> DatasetManifest {
    let classes = rng.random_range(1..=5);
    let mut events = Vec::new();
    for c in 0..classes {
        for e in 0..rng.random_range(1..=max_events) {
            let size = rng.random_range(1..=40);
            events.push(EventRecord {
                event_id: format!("c{c}_e{e}"),
                class_index: c,
                image_refs: (0..size).map(|i| PathBuf::from(format!("c{c}/e{e}_{i}.ppm"))).collect(),
                split: Split::Unassigned,
            });
        }
    }
    DatasetManifest::new("/nonexistent", (0..classes).map(|c| format!("class{c}")).collect(), events).unwrap()
}

fn random_ratios(rng: &mut Rng) -> SplitRatios {
    if rng.random_bool(0.5) {
        return SplitRatios::default();
    }
    let raw: [f64; 3] = [rng.random_range(0.2..1.0), rng.random_range(0.05..0.5), rng.random_range(0.05..0.5)];
    let s: f64 = raw.iter().sum();
    let (a, b) = (raw[0] / s, raw[1] / s);
    SplitRatios::new(a, b, 1.0 - a - b).unwrap()
}

/// Smallest L1 distance to the targets over all 3^n assignments.
fn brute_force_l1(sizes: &[usize], targets: [f64; 3]) -> f64 {
    let n = sizes.len();
    let mut best = f64::INFINITY;
    for code in 0..3usize.pow(n as u32) {
        let mut counts = [0usize; 3];
        let mut rest = code;
        for &s in sizes {
            counts[rest % 3] += s;
            rest /= 3;
        }
        let l1: f64 = (0..3).map(|i| (counts[i] as f64 - targets[i]).abs()).sum();
        best = best.min(l1);
    }
    best
}

#[test]
fn criterion_07_event_split() {
    let mut rng = stream(&[7]);
    let (mut straddle, mut ratio_violations, mut brute_violations, mut brute_checked) = (0, 0, 0, 0);
    let mut worst_gap = 0.0f64;
    for m_idx in 0..500 {
        let max_events = if m_idx % 2 == 0 { 8 } else { 20 };
        let manifest = random_manifest(&mut rng, max_events);
        let ratios = random_ratios(&mut rng);
        let split = event_split(&manifest, ratios, m_idx as u64).unwrap();

        // image-level view: each event id must map to exactly one split
        let mut seen: std::collections::HashMap<&str, Split> = std::collections::HashMap::new();
        for e in &split.events {
            for _ in &e.image_refs {
                if e.split == Split::Unassigned || *seen.entry(&e.event_id).or_insert(e.split) != e.split {
                    straddle += 1;
                }
            }
        }
        if split.num_images() != manifest.num_images() || split.events.len() != manifest.events.len() {
            straddle += 1;
        }

        for c in 0..split.num_classes() {
            let class_events: Vec<&EventRecord> = split.events.iter().filter(|e| e.class_index == c).collect();
            let sizes: Vec<usize> = class_events.iter().map(|e| e.len()).collect();
            let total: usize = sizes.iter().sum();
            let largest = *sizes.iter().max().unwrap() as f64;
            let targets = ratios.as_array().map(|r| r * total as f64);
            let mut counts = [0usize; 3];
            for e in &class_events {
                counts[Split::ASSIGNED.iter().position(|&s| s == e.split).unwrap()] += e.len();
            }
            for s in 0..3 {
                if (counts[s] as f64 - targets[s]).abs() > largest + 1e-9 {
                    ratio_violations += 1;
                }
            }
            if sizes.len() <= 8 {
                let greedy_l1: f64 = (0..3).map(|s| (counts[s] as f64 - targets[s]).abs()).sum();
                let best = brute_force_l1(&sizes, targets);
                worst_gap = worst_gap.max((greedy_l1 - best) / largest);
                if greedy_l1 > best + largest + 1e-9 {
                    brute_violations += 1;
                }
                brute_checked += 1;
            }
        }
    }
    verdict(
        7,
        "event-aware split",
        straddle == 0 && ratio_violations == 0 && brute_violations == 0,
        &format!(
            "500 manifests: straddling events {straddle}, per-class split deviations beyond one largest event {ratio_violations}; \
             {brute_checked} classes vs brute force: {brute_violations} beyond one event (worst gap {worst_gap:.2} events)"
        ),
    );
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_08_overfit_sanity() {
    let start = Instant::now();
    let mut reached = Vec::new();
    let mut test_top1 = Vec::new();
    let mut init_top1 = Vec::new();
    let mut loss_dropped = 0;
    for seed in 0..10u64 {
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        let manifest = event_split(
            &generate_synthetic_dataset(&synth, dir.path()).unwrap(),
            SplitRatios::default(),
            seed,
        )
        .unwrap();
        assert_eq!(manifest.image_count(Split::Train), 80);
        let model = MacNet::<f32>::init(MacNetConfig::desk(4), seed).unwrap();
        init_top1.push(untrained_top1(&model, seed));

        let cfg = TrainRunConfig {
            epochs: 200,
            batch_size: 16,
            seed,
            augment: false,
            ..TrainRunConfig::default()
        };
        let mut trainer = Trainer::new(model, &manifest, cfg).unwrap();
        let mut first_full = None;
        let mut losses = Vec::new();
        while trainer.next_epoch() < 200 {
            let r = trainer.run_epoch().unwrap();
            losses.push(r.train_loss);
            if r.train_top1 == 1.0 && first_full.is_none() {
                first_full = Some(r.epoch);
            }
            if first_full.is_some() && r.epoch >= 5 {
                break;
            }
        }
        if losses.len() > 5 && losses[5] < losses[0] {
            loss_dropped += 1;
        }
        reached.push(first_full);
        test_top1.push(evaluate(&trainer.model, &manifest, Split::Test, 32).unwrap().top1);
    }
    let secs = start.elapsed().as_secs_f64();
    let all_reached = reached.iter().all(Option::is_some);
    let above = test_top1.iter().filter(|&&t| t > 0.75).count();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    let min_max = |v: &[f64]| {
        (
            v.iter().cloned().fold(f64::MAX, f64::min),
            v.iter().cloned().fold(f64::MIN, f64::max),
        )
    };
    let (tlo, thi) = min_max(&test_top1);
    let (ilo, ihi) = min_max(&init_top1);
    println!("epochs to 100% train top-1: {reached:?}");
    println!("test top-1: {}", fmt(&test_top1));
    println!("untrained top-1 on 200 balanced images: {}", fmt(&init_top1));
    let init_ok = init_top1.iter().all(|&t| (0.05..=0.60).contains(&t));
    report_line(
        "invariant   ",
        "untrained model near chance",
        init_ok,
        &format!("band {ilo:.3}-{ihi:.3} within [0.05, 0.60]"),
    );
    report_line(
        "invariant   ",
        "early loss drop",
        loss_dropped >= 9,
        &format!("epoch-5 loss below epoch-0 in {loss_dropped}/10 seeds (>= 9)"),
    );
    verdict(
        8,
        "desk overfit run",
        all_reached && above >= 8 && secs < 1800.0,
        &format!(
            "100% train top-1 in all 10 seeds: {all_reached} (epochs {:?}); test top-1 > 0.75 in {above}/10 (band {tlo:.3}-{thi:.3}); {secs:.0}s",
            reached.iter().map(|r| r.map_or(-1, |e| e as i64)).collect::<Vec<_>>()
        ),
    );
    assert!(init_ok && loss_dropped >= 9);
}

/// Top-1 on 200 balanced synthetic images (25 events of 2 per class); the
/// 16-image test split holds one event per class, too few for a band.
fn untrained_top1(model: &MacNet<f32>, seed: u64) -> f64 {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        seed: 1000 + seed,
        events_per_class: 25,
        images_per_event: (2, 2),
        ..SynthConfig::default()
    };
    let mut manifest = generate_synthetic_dataset(&synth, dir.path()).unwrap();
    for e in &mut manifest.events {
        e.split = Split::Test;
    }
    evaluate(model, &manifest, Split::Test, 50).unwrap().top1
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_09_determinism_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = event_split(
        &generate_synthetic_dataset(&SynthConfig::default(), dir.path()).unwrap(),
        SplitRatios::default(),
        0,
    )
    .unwrap();
    let cfg = TrainRunConfig {
        epochs: 2,
        batch_size: 16,
        seed: 9,
        ..TrainRunConfig::default()
    };

    let trace = || {
        let model = MacNet::<f64>::init(MacNetConfig::desk(4), 9).unwrap();
        let mut t = Trainer::new(model, &manifest, cfg.clone()).unwrap();
        t.run().unwrap().history.iter().map(|r| r.train_loss.to_bits()).collect::<Vec<_>>()
    };
    let same_trace = trace() == trace();

    let mut t = Trainer::new(
        MacNet::<f32>::init(MacNetConfig::desk(4), 9).unwrap(),
        &manifest,
        TrainRunConfig { epochs: 1, ..cfg.clone() },
    )
    .unwrap();
    t.run().unwrap();
    let before = evaluate(&t.model, &manifest, Split::Test, 16).unwrap();
    let path = dir.path().join("model.ckpt");
    t.checkpoint().save(&path).unwrap();
    let restored: MacNet<f32> = Checkpoint::load(&path).unwrap().build_model().unwrap();
    let after = evaluate(&restored, &manifest, Split::Test, 16).unwrap();
    let round_trip = before == after;

    // lr column of a real 100-epoch run on a tiny network
    let small = SynthConfig {
        images_per_event: (1, 1),
        image_size: (16, 16),
        ..SynthConfig::default()
    };
    let small_dir = tempfile::tempdir().unwrap();
    let small_manifest = event_split(
        &generate_synthetic_dataset(&small, small_dir.path()).unwrap(),
        SplitRatios::default(),
        0,
    )
    .unwrap();
    let tiny = MacNetConfig {
        input_size: (16, 16),
        fc_widths: (8, 8),
        ..MacNetConfig::desk(4)
    }
    .with_width_multiplier(0.0625);
    let run = TrainRunConfig {
        epochs: 100,
        batch_size: 8,
        track_train_accuracy: false,
        ..TrainRunConfig::default()
    };
    let mut trainer = Trainer::new(MacNet::<f32>::init(tiny, 0).unwrap(), &small_manifest, run).unwrap();
    let history = trainer.run().unwrap().history;
    let mut lrs: Vec<f64> = history.iter().map(|r| r.lr).collect();
    lrs.dedup();
    let schedule = LrSchedule::default();
    let lr_ok = history.len() == 100 && lrs.len() == 5 && history.iter().all(|r| r.lr == schedule.lr_at(r.epoch));

    verdict(
        9,
        "determinism, checkpoint round trip, lr steps",
        same_trace && round_trip && lr_ok,
        &format!("identical f64 loss traces: {same_trace}; save/load/evaluate identical: {round_trip}; distinct lr values over 100 epochs: {} {lrs:?}", lrs.len()),
    );
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_report_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let names: Vec<String> = ["bakery_shop", "bar", "sushi_bar", "pub & grill"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    // class 2 is never predicted; class 3 never occurs
    let cm = ConfusionMatrix::from_rows(&[vec![5, 1, 0, 0], vec![2, 3, 0, 1], vec![1, 2, 0, 0], vec![0, 0, 0, 0]]).unwrap();
    let report = EvalReport::from_confusion(cm.clone(), 8.0 / 15.0, 1.0);
    write_report(&report, &names, dir.path()).unwrap();
    let (back_names, back) = read_report(dir.path()).unwrap();
    let round_trip = back_names == names && back == report;

    let out = dir.path().join("charts");
    render_report_dir(dir.path(), &out).unwrap();
    let bars_svg = std::fs::read_to_string(out.join(F1_CHART_FILE)).unwrap();
    let heat_svg = std::fs::read_to_string(out.join(CONFUSION_CHART_FILE)).unwrap();
    let bars_doc = roxmltree::Document::parse(&bars_svg);
    let heat_doc = roxmltree::Document::parse(&heat_svg);
    let (mut bars, mut zero_bars, mut cells, mut labels, mut rows_ok) = (0, 0, 0, 0, false);
    if let (Ok(b), Ok(h)) = (&bars_doc, &heat_doc) {
        let rects: Vec<_> = b.descendants().filter(|n| n.attribute("class") == Some("bar")).collect();
        bars = rects.len();
        zero_bars = rects.iter().filter(|n| n.attribute("height") == Some("0")).count();
        let cell_values: Vec<f64> = h
            .descendants()
            .filter(|n| n.attribute("class") == Some("cell"))
            .map(|n| n.attribute("data-value").unwrap().parse().unwrap())
            .collect();
        cells = cell_values.len();
        labels = h.descendants().filter(|n| n.attribute("class") == Some("value")).count();
        let norm = row_normalized(&cm);
        rows_ok = cells == 16
            && cell_values
                .chunks(4)
                .zip(&norm)
                .all(|(got, want)| got.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12))
            && norm.iter().all(|r| {
                let s: f64 = r.iter().sum();
                (s - 1.0).abs() < 1e-12 || s == 0.0
            });
    }
    let pass = round_trip && bars_doc.is_ok() && heat_doc.is_ok() && bars == 4 && zero_bars == 2 && rows_ok && labels == 16;
    verdict(
        10,
        "report artifacts",
        pass,
        &format!(
            "CSV round trip {round_trip}; F1 chart parses: {}, {bars} bars for 4 classes ({zero_bars} at zero); \
             heat map parses: {}, {cells} row-normalized cells, {labels} annotations",
            bars_doc.is_ok(),
            heat_doc.is_ok()
        ),
    );
}

#[test]
fn shuffled_class_order_keeps_bar_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut names: Vec<String> = (0..6).map(|i| format!("c{i}")).collect();
    names.shuffle(&mut stream(&[10]));
    let cm = ConfusionMatrix::from_rows(&(0..6).map(|i| (0..6).map(|j| u64::from(i == j)).collect()).collect::<Vec<_>>()).unwrap();
    write_report(&EvalReport::from_confusion(cm, 1.0, 1.0), &names, dir.path()).unwrap();
    render_report_dir(dir.path(), dir.path()).unwrap();
    let svg = std::fs::read_to_string(dir.path().join(F1_CHART_FILE)).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let order: Vec<String> = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("bar"))
        .map(|n| n.attribute("data-class").unwrap().to_string())
        .collect();
    assert_eq!(order, names);
}
