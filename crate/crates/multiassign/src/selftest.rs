//! Oracle suites: brute force for matching, central differences for every
//! differentiable operation, exact equality for branch initialization and
//! stripping, plus loss, matcher and parameter-count checks.

use std::time::Instant;

use multiassign_core::assignment::{
    assignment_cost, hungarian, o2m_assign, CostWeights, GroundTruth, MatchConfig, Prediction,
};
use multiassign_core::geometry::{giou_with_grad, l1_box, BoxCXCYWH, BoxXYXY};
use multiassign_core::harness::{ExperimentConfig, Trainer};
use multiassign_core::losses::{assign_all, total_loss, vfl_plus, Assignments, LossConfig};
use multiassign_core::model::{
    attention_backward, attention_forward, expected_param_count, ffn_backward, ffn_forward, lora_ffn_forward,
    AttentionParams, AuxBranches, AuxMode, FfnParams, LoraAdapter, Model, ModelConfig, Parameters,
};
use multiassign_core::numerics::{
    finite_diff_check, matmul, matmul_backward, relu, relu_backward, sigmoid, sigmoid_backward, softmax_rows,
    softmax_rows_backward, GradSlot, Tensor2D,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative error bound for gradient checks.
pub const GRAD_TOL: f64 = 1e-4;
/// Points closer than this to a kink of ReLU, |.| or min/max are skipped.
const KINK_MARGIN: f64 = 1e-3;
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn run(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> SuiteReport {
    let t = Instant::now();
    let r = f();
    let seconds = t.elapsed().as_secs_f64();
    match r {
        Ok(detail) => SuiteReport {
            name,
            passed: true,
            detail,
            seconds,
        },
        Err(detail) => SuiteReport {
            name,
            passed: false,
            detail,
            seconds,
        },
    }
}

fn uniform(r: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor2D {
    Tensor2D::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| r.random_range(-bound..bound)).collect(),
    )
    .expect("shape")
}

fn weighted_sum(t: &Tensor2D, w: &Tensor2D) -> f64 {
    t.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

fn near_kink(t: &Tensor2D) -> bool {
    t.data().iter().any(|v| v.abs() < KINK_MARGIN)
}

// Matching against brute force

/// Minimum over all injective column-to-row maps, summed in column order.
pub fn brute_force_min(cost: &Tensor2D) -> f64 {
    fn go(cost: &Tensor2D, col: usize, used: &mut Vec<bool>, picked: &mut Vec<(usize, usize)>, best: &mut f64) {
        if col == cost.cols() {
            *best = best.min(assignment_cost(cost, picked));
            return;
        }
        for row in 0..cost.rows() {
            if !used[row] {
                used[row] = true;
                picked.push((row, col));
                go(cost, col + 1, used, picked, best);
                picked.pop();
                used[row] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost.rows()], &mut Vec::new(), &mut best);
    best
}

/// Square matrices up to 6x6 and tall ones up to 8x5, with quarter-integer
/// entries so every sum is exact and ties are common.
pub fn hungarian_suite() -> SuiteReport {
    run("hungarian_vs_brute_force", || {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        for i in 0..200 {
            let (rows, cols) = if i % 2 == 0 {
                let n = r.random_range(1..=6);
                (n, n)
            } else {
                let rows = r.random_range(2..=8);
                (rows, r.random_range(1..=(rows - 1).min(5)))
            };
            let levels = if i % 5 == 0 { 3 } else { 40 };
            let data = (0..rows * cols)
                .map(|_| r.random_range(0..levels) as f64 / 4.0)
                .collect();
            let cost = Tensor2D::from_vec(rows, cols, data).expect("shape");
            let pairs = hungarian(&cost).map_err(|e| format!("matrix {i}: {e}"))?;
            let mut rows_used: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            rows_used.sort_unstable();
            rows_used.dedup();
            if pairs.len() != cols || rows_used.len() != cols {
                return Err(format!("matrix {i} ({rows}x{cols}): not a valid assignment {pairs:?}"));
            }
            let got = assignment_cost(&cost, &pairs);
            let want = brute_force_min(&cost);
            if got != want {
                return Err(format!(
                    "matrix {i} ({rows}x{cols}): solver {got} vs brute force {want}"
                ));
            }
        }
        Ok("200 matrices, all optimal".into())
    })
}

// Gradients

struct Worst(Vec<(&'static str, f64)>);

impl Worst {
    fn record(&mut self, name: &'static str, e: multiassign_core::Result<f64>) -> Result<(), String> {
        let e = e.map_err(|e| format!("{name}: {e}"))?;
        if !(e < GRAD_TOL) {
            return Err(format!("{name}: relative error {e:.3e}"));
        }
        match self.0.iter_mut().find(|(n, _)| *n == name) {
            Some((_, w)) => *w = w.max(e),
            None => self.0.push((name, e)),
        }
        Ok(())
    }

    fn summary(&self) -> String {
        self.0
            .iter()
            .map(|(n, e)| format!("{n} {e:.1e}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

fn scalar(v: f64) -> Tensor2D {
    Tensor2D::row_vector(&[v])
}

fn check_elementwise(w: &mut Worst, r: &mut ChaCha8Rng) -> Result<(), String> {
    for _ in 0..10 {
        let a = uniform(r, 3, 4, 1.0);
        let b = uniform(r, 4, 5, 1.0);
        let g = uniform(r, 3, 5, 1.0);
        let (da, db) = matmul_backward(&a, &b, &g).map_err(|e| e.to_string())?;
        w.record(
            "matmul",
            finite_diff_check(|t| weighted_sum(&matmul(t, &b).unwrap(), &g), &a, &da, FD_STEP),
        )?;
        w.record(
            "matmul",
            finite_diff_check(|t| weighted_sum(&matmul(&a, t).unwrap(), &g), &b, &db, FD_STEP),
        )?;
    }
    let mut n = 0;
    while n < 10 {
        let x = uniform(r, 3, 4, 2.0);
        if near_kink(&x) {
            continue;
        }
        n += 1;
        let g = uniform(r, 3, 4, 1.0);
        let d = relu_backward(&x, &g).map_err(|e| e.to_string())?;
        w.record(
            "relu",
            finite_diff_check(|t| weighted_sum(&relu(t), &g), &x, &d, FD_STEP),
        )?;
        let d = sigmoid_backward(&sigmoid(&x), &g).map_err(|e| e.to_string())?;
        w.record(
            "sigmoid",
            finite_diff_check(|t| weighted_sum(&sigmoid(t), &g), &x, &d, FD_STEP),
        )?;
        let y = softmax_rows(&x).map_err(|e| e.to_string())?;
        let d = softmax_rows_backward(&y, &g).map_err(|e| e.to_string())?;
        w.record(
            "softmax",
            finite_diff_check(|t| weighted_sum(&softmax_rows(t).unwrap(), &g), &x, &d, FD_STEP),
        )?;
    }
    Ok(())
}

fn check_attention(w: &mut Worst, r: &mut ChaCha8Rng) -> Result<(), String> {
    type Pick = fn(&mut AttentionParams) -> &mut GradSlot;
    let picks: [Pick; 4] = [|p| &mut p.wq, |p| &mut p.wk, |p| &mut p.wv, |p| &mut p.wo];
    for _ in 0..10 {
        let att = AttentionParams::init(r, 4);
        let q = uniform(r, 3, 4, 1.0);
        let kv = uniform(r, 5, 4, 1.0);
        let g = uniform(r, 3, 4, 1.0);
        let f = |q: &Tensor2D, kv: &Tensor2D, p: &AttentionParams| {
            weighted_sum(&attention_forward(q, kv, p).unwrap().0, &g)
        };
        let (_, cache) = attention_forward(&q, &kv, &att).map_err(|e| e.to_string())?;
        let mut a = att.clone();
        let (dq, dkv) = attention_backward(&mut a, &cache, &g, true).map_err(|e| e.to_string())?;
        w.record("attention", finite_diff_check(|t| f(t, &kv, &att), &q, &dq, FD_STEP))?;
        let dkv = dkv.ok_or("attention: missing key/value gradient")?;
        w.record("attention", finite_diff_check(|t| f(&q, t, &att), &kv, &dkv, FD_STEP))?;
        for pick in picks {
            let analytic = pick(&mut a.clone()).grad.clone();
            let at = pick(&mut att.clone()).value.clone();
            let e = finite_diff_check(
                |t| {
                    let mut p = att.clone();
                    pick(&mut p).value = t.clone();
                    f(&q, &kv, &p)
                },
                &at,
                &analytic,
                FD_STEP,
            );
            w.record("attention", e)?;
        }
    }
    Ok(())
}

type FfnPick = for<'a> fn(&'a mut FfnParams, &'a mut LoraAdapter) -> &'a mut GradSlot;

const FFN_PICKS: [FfnPick; 4] = [|f, _| &mut f.w1, |f, _| &mut f.b1, |f, _| &mut f.w2, |f, _| &mut f.b2];
const ADAPTER_PICKS: [FfnPick; 4] = [|_, a| &mut a.a1, |_, a| &mut a.b1, |_, a| &mut a.a2, |_, a| &mut a.b2];

fn check_ffn(w: &mut Worst, r: &mut ChaCha8Rng) -> Result<(), String> {
    let mut n = 0;
    while n < 10 {
        let ffn = FfnParams::init(r, 4, 6);
        let mut ad = LoraAdapter::init(r, 4, 6, 2);
        ad.b1.value = uniform(r, 6, 2, 0.5);
        ad.b2.value = uniform(r, 4, 2, 0.5);
        let x = uniform(r, 3, 4, 1.0);
        let g = uniform(r, 3, 4, 1.0);
        let (_, base_cache) = ffn_forward(&x, &ffn).map_err(|e| e.to_string())?;
        let (_, lora_cache) = lora_ffn_forward(&x, &ffn, &ad).map_err(|e| e.to_string())?;
        if near_kink(base_cache.pre_activation()) || near_kink(lora_cache.pre_activation()) {
            continue;
        }
        n += 1;

        let plain = |x: &Tensor2D, f: &FfnParams, _: &LoraAdapter| weighted_sum(&ffn_forward(x, f).unwrap().0, &g);
        let lora =
            |x: &Tensor2D, f: &FfnParams, a: &LoraAdapter| weighted_sum(&lora_ffn_forward(x, f, a).unwrap().0, &g);
        type Eval<'e> = &'e dyn Fn(&Tensor2D, &FfnParams, &LoraAdapter) -> f64;
        let cases: [(&'static str, Eval, &_, bool); 2] = [
            ("ffn_forward", &plain, &base_cache, false),
            ("lora_ffn_forward", &lora, &lora_cache, true),
        ];
        for (name, eval, cache, with_adapter) in cases {
            let (mut fg, mut ag) = (ffn.clone(), ad.clone());
            let dx = ffn_backward(&mut fg, with_adapter.then_some(&mut ag), cache, &g).map_err(|e| e.to_string())?;
            w.record(name, finite_diff_check(|t| eval(t, &ffn, &ad), &x, &dx, FD_STEP))?;
            let picks = FFN_PICKS
                .iter()
                .chain(if with_adapter { &ADAPTER_PICKS[..] } else { &[] });
            for pick in picks {
                let analytic = pick(&mut fg, &mut ag).grad.clone();
                let at = pick(&mut ffn.clone(), &mut ad.clone()).value.clone();
                let e = finite_diff_check(
                    |t| {
                        let (mut fp, mut ap) = (ffn.clone(), ad.clone());
                        pick(&mut fp, &mut ap).value = t.clone();
                        eval(&x, &fp, &ap)
                    },
                    &at,
                    &analytic,
                    FD_STEP,
                );
                w.record(name, e)?;
            }
        }
    }
    Ok(())
}

fn random_box(r: &mut ChaCha8Rng) -> BoxXYXY {
    let x1 = r.random_range(0.0..0.6);
    let y1 = r.random_range(0.0..0.6);
    BoxXYXY {
        x1,
        y1,
        x2: x1 + r.random_range(0.1..0.4),
        y2: y1 + r.random_range(0.1..0.4),
    }
}

fn boxes_near_kink(a: &BoxXYXY, b: &BoxXYXY) -> bool {
    let xs = [(a.x1, b.x1), (a.x2, b.x2), (a.x1, b.x2), (a.x2, b.x1)];
    let ys = [(a.y1, b.y1), (a.y2, b.y2), (a.y1, b.y2), (a.y2, b.y1)];
    xs.iter().chain(&ys).any(|(u, v)| (u - v).abs() < KINK_MARGIN)
}

fn check_losses(w: &mut Worst, r: &mut ChaCha8Rng) -> Result<(), String> {
    for _ in 0..10 {
        let p = r.random_range(0.02..0.98);
        let s = r.random_range(0.0..1.0);
        for positive in [true, false] {
            let (_, d) = vfl_plus(p, s, positive, 1.5);
            let e = finite_diff_check(
                |t| vfl_plus(t.get(0, 0), s, positive, 1.5).0,
                &scalar(p),
                &scalar(d),
                FD_STEP,
            );
            w.record("vfl_plus", e)?;
        }
    }
    let mut n = 0;
    while n < 10 {
        let a = random_box(r);
        let b = random_box(r);
        if boxes_near_kink(&a, &b) {
            continue;
        }
        n += 1;
        let (_, ga, gb) = giou_with_grad(&a, &b);
        let as_t = |bx: &BoxXYXY| Tensor2D::row_vector(&bx.to_array());
        let from_t = |t: &Tensor2D| BoxXYXY::from_array([t.get(0, 0), t.get(0, 1), t.get(0, 2), t.get(0, 3)]);
        let e = finite_diff_check(
            |t| giou_with_grad(&from_t(t), &b).0,
            &as_t(&a),
            &Tensor2D::row_vector(&ga),
            FD_STEP,
        );
        w.record("giou", e)?;
        let e = finite_diff_check(
            |t| giou_with_grad(&a, &from_t(t)).0,
            &as_t(&b),
            &Tensor2D::row_vector(&gb),
            FD_STEP,
        );
        w.record("giou", e)?;
    }
    let mut n = 0;
    while n < 10 {
        let a = random_box(r).to_cxcywh();
        let b = random_box(r).to_cxcywh();
        let (pa, pb) = (a.to_array(), b.to_array());
        if pa.iter().zip(&pb).any(|(u, v)| (u - v).abs() < KINK_MARGIN) {
            continue;
        }
        n += 1;
        let (_, g) = l1_box(&a, &b);
        let e = finite_diff_check(
            |t| {
                l1_box(
                    &BoxCXCYWH::from_array([t.get(0, 0), t.get(0, 1), t.get(0, 2), t.get(0, 3)]),
                    &b,
                )
                .0
            },
            &Tensor2D::row_vector(&pa),
            &Tensor2D::row_vector(&g),
            FD_STEP,
        );
        w.record("l1", e)?;
    }
    Ok(())
}

fn small_config(n_aux: usize, aux_mode: AuxMode, seed: u64) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_hidden: 12,
        n_layers: 2,
        n_queries: 6,
        num_classes: 3,
        n_aux,
        rank: 2,
        aux_mode,
        seed,
    }
}

fn probe_gts() -> Vec<GroundTruth> {
    vec![
        GroundTruth {
            class_index: 0,
            bbox: BoxCXCYWH::from_array([0.45, 0.5, 0.4, 0.45]),
        },
        GroundTruth {
            class_index: 2,
            bbox: BoxCXCYWH::from_array([0.55, 0.45, 0.5, 0.4]),
        },
    ]
}

/// Whole-model loss with assignments held fixed; random adapter residuals
/// so every auxiliary path carries gradient.
fn check_full_model(w: &mut Worst, r: &mut ChaCha8Rng) -> Result<(), String> {
    let gts = probe_gts();
    let lc = LossConfig::default();
    // a low threshold so the untrained model already has positives
    let strategies: Vec<MatchConfig> = [2, 4, 6]
        .iter()
        .map(|&k| MatchConfig {
            alpha: 0.5,
            tau: 0.05,
            k,
        })
        .collect();
    let mut base = Model::new(small_config(3, AuxMode::Lora, 5)).map_err(|e| e.to_string())?;
    for layer in &mut base.layers {
        if let AuxBranches::Lora(ads) = &mut layer.aux {
            for ad in ads {
                ad.b1.value = uniform(r, ad.b1.value.rows(), ad.b1.value.cols(), 0.3);
                ad.b2.value = uniform(r, ad.b2.value.rows(), ad.b2.value.cols(), 0.3);
            }
        }
    }
    let objective = |m: &Model, x: &Tensor2D, a: &Assignments| {
        total_loss(&m.forward(x).unwrap(), &gts, a, &lc).unwrap().0.grand_total
    };
    let names = base.param_names();
    for _ in 0..10 {
        let x = uniform(r, 10, 8, 1.0);
        let mut m = base.clone();
        let trace = m.forward_trace(&x).map_err(|e| e.to_string())?;
        let a = assign_all(&trace.output, &gts, &CostWeights::default(), &strategies).map_err(|e| e.to_string())?;
        let (_, grads) = total_loss(&trace.output, &gts, &a, &lc).map_err(|e| e.to_string())?;
        m.zero_grad();
        m.backward(&trace, &grads).map_err(|e| e.to_string())?;
        // the largest-gradient entry of every tensor: covers every parameter
        // while keeping central differences far above roundoff
        for name in &names {
            let mut found: Option<(Tensor2D, Tensor2D)> = None;
            m.visit_params(&mut |n, _, p| {
                if n == name {
                    found = Some((p.value.clone(), p.grad.clone()));
                }
            });
            let (value, analytic) = found.ok_or_else(|| format!("no parameter {name}"))?;
            let idx = (0..analytic.len())
                .max_by(|&i, &j| analytic.data()[i].abs().total_cmp(&analytic.data()[j].abs()))
                .unwrap_or(0);
            let set = |v: f64| {
                let mut mm = base.clone();
                mm.visit_params_mut(&mut |n, _, p| {
                    if n == name {
                        p.value.data_mut()[idx] = v;
                    }
                });
                objective(&mm, &x, &a)
            };
            let e = finite_diff_check(
                |t| set(t.get(0, 0)),
                &scalar(value.data()[idx]),
                &scalar(analytic.data()[idx]),
                FD_STEP,
            );
            let (fv, gv) = (value.data()[idx], analytic.data()[idx]);
            w.record("full_model_loss", e)
                .map_err(|m| format!("{m} at {name}[{idx}] = {fv}, analytic {gv}"))?;
        }
    }
    Ok(())
}

pub fn gradient_suite() -> SuiteReport {
    run("gradients", || {
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let mut w = Worst(Vec::new());
        check_elementwise(&mut w, &mut r)?;
        check_attention(&mut w, &mut r)?;
        check_ffn(&mut w, &mut r)?;
        check_losses(&mut w, &mut r)?;
        check_full_model(&mut w, &mut r)?;
        Ok(format!("worst relative error per operation: {}", w.summary()))
    })
}

// Exact-equality suites

fn outputs_equal(m: &Model, x: &Tensor2D) -> Result<bool, String> {
    let out = m.forward(x).map_err(|e| e.to_string())?;
    Ok(out
        .layers
        .iter()
        .all(|branches| branches.iter().all(|b| *b == branches[0])))
}

/// Fresh models: every auxiliary branch equals the primary exactly.
pub fn zero_init_suite() -> SuiteReport {
    run("zero_init_equivalence", || {
        let mut r = ChaCha8Rng::seed_from_u64(13);
        for mode in [AuxMode::Lora, AuxMode::FullFfn] {
            let cfg = ModelConfig {
                aux_mode: mode,
                ..ModelConfig::default()
            };
            let m = Model::new(cfg).map_err(|e| e.to_string())?;
            for i in 0..20 {
                let x = uniform(&mut r, 64, cfg.d_model, 1.0);
                if !outputs_equal(&m, &x)? {
                    return Err(format!(
                        "{} mode: input {i} has differing branch outputs",
                        mode.as_str()
                    ));
                }
            }
        }
        Ok("lora and full_ffn, 20 inputs each".into())
    })
}

fn primary_identical(full: &Model, x: &Tensor2D) -> Result<bool, String> {
    let a = full.forward(x).map_err(|e| e.to_string())?;
    let b = full.strip_for_inference().forward(x).map_err(|e| e.to_string())?;
    Ok(a.layers
        .iter()
        .zip(&b.layers)
        .all(|(la, lb)| la[0] == lb[0] && lb.len() == 1))
}

/// Stripping keeps primary predictions bit-exact, before and after training.
pub fn strip_suite(train_steps: usize) -> SuiteReport {
    run("strip_invariance", || {
        let mut r = ChaCha8Rng::seed_from_u64(14);
        let mut cfg = ExperimentConfig::default();
        cfg.model.n_aux = 3;
        cfg.train.steps = train_steps.max(1);
        cfg.train.eval_interval = cfg.train.steps;
        let mut t = Trainer::new(&cfg).map_err(|e| e.to_string())?;
        let inputs: Vec<Tensor2D> = (0..10).map(|_| uniform(&mut r, 64, cfg.model.d_model, 1.0)).collect();
        for x in &inputs {
            if !primary_identical(&t.model, x)? {
                return Err("stripping changed the primary output of the fresh model".into());
            }
        }
        for _ in 0..train_steps {
            t.step().map_err(|e| e.to_string())?;
        }
        let moved = t.model.layers.iter().any(|l| match &l.aux {
            AuxBranches::Lora(ads) => ads.iter().any(|a| a.b1.value.max_abs() > 0.0),
            AuxBranches::FullFfn(_) => true,
        });
        if train_steps > 0 && !moved {
            return Err("adapters never left zero, so the trained check is vacuous".into());
        }
        for x in &inputs {
            if !primary_identical(&t.model, x)? {
                return Err(format!(
                    "stripping changed the primary output after {train_steps} steps"
                ));
            }
        }
        Ok(format!("10 inputs, before and after {train_steps} training steps"))
    })
}

// Loss and matcher properties

/// Value printed by the reference for the negative branch at p = 0.5, gamma = 1.5.
pub const VFL_NEGATIVE_REFERENCE: f64 = 0.245117;

pub struct VflFindings {
    pub worst_argmin_gap: f64,
    pub negative_value: f64,
}

pub fn vfl_findings() -> VflFindings {
    let mut worst: f64 = 0.0;
    for i in 1..=9 {
        let s = i as f64 / 10.0;
        let mut best = (f64::INFINITY, 0.0);
        for j in 1..100_000 {
            let p = j as f64 / 100_000.0;
            let v = vfl_plus(p, s, true, 1.5).0;
            if v < best.0 {
                best = (v, p);
            }
        }
        worst = worst.max((best.1 - s).abs());
    }
    VflFindings {
        worst_argmin_gap: worst,
        negative_value: vfl_plus(0.5, 0.0, false, 1.5).0,
    }
}

/// The positive branch is minimized at its target; the negative branch
/// matches the closed form 0.5^1.5 * ln 2.
pub fn vfl_suite() -> SuiteReport {
    run("vfl_minimizer", || {
        let f = vfl_findings();
        let closed = 0.5f64.powf(1.5) * std::f64::consts::LN_2;
        if f.worst_argmin_gap > 2e-4 {
            return Err(format!("grid argmin off target by {:.2e}", f.worst_argmin_gap));
        }
        if (f.negative_value - closed).abs() > 1e-12 {
            return Err(format!("negative branch {} vs closed form {closed}", f.negative_value));
        }
        Ok(format!(
            "argmin gap {:.1e}; negative branch {:.7}",
            f.worst_argmin_gap, f.negative_value
        ))
    })
}

fn random_prediction(r: &mut ChaCha8Rng, num_classes: usize) -> Prediction {
    Prediction {
        class_scores: (0..num_classes).map(|_| r.random_range(0.0..1.0)).collect(),
        bbox: BoxCXCYWH::from_array([
            r.random_range(0.2..0.8),
            r.random_range(0.2..0.8),
            r.random_range(0.05..0.5),
            r.random_range(0.05..0.5),
        ]),
    }
}

/// One-to-many positives respect the threshold and caps and nest in `k`.
pub fn matcher_suite() -> SuiteReport {
    run("matcher_properties", || {
        let mut r = ChaCha8Rng::seed_from_u64(15);
        let mut total = 0;
        for set in 0..500 {
            let nq = r.random_range(1..=20);
            let ng = r.random_range(1..=5);
            let preds: Vec<Prediction> = (0..nq).map(|_| random_prediction(&mut r, 4)).collect();
            let gts: Vec<GroundTruth> = (0..ng)
                .map(|_| GroundTruth {
                    class_index: r.random_range(0..4),
                    bbox: random_prediction(&mut r, 1).bbox,
                })
                .collect();
            let alpha = r.random_range(0.0..=1.0);
            let tau = r.random_range(0.0..0.6);
            let mut previous: Option<Vec<(usize, usize)>> = None;
            for k in [2, 4, 6] {
                let cfg = MatchConfig { alpha, tau, k };
                let a = o2m_assign(&preds, &gts, &cfg).map_err(|e| e.to_string())?;
                let mut per_gt = vec![0; ng];
                let mut per_query = vec![0; nq];
                for p in &a.pairs {
                    let m = multiassign_core::assignment::match_score(&preds[p.query], &gts[p.gt], alpha)
                        .map_err(|e| e.to_string())?;
                    if !(m > tau) || m != p.quality {
                        return Err(format!("set {set}, k={k}: pair {p:?} has score {m} vs tau {tau}"));
                    }
                    per_gt[p.gt] += 1;
                    per_query[p.query] += 1;
                }
                if per_gt.iter().any(|&c| c > k) || per_query.iter().any(|&c| c > 1) {
                    return Err(format!("set {set}, k={k}: cap violated {per_gt:?} {per_query:?}"));
                }
                let pairs: Vec<(usize, usize)> = a.pairs.iter().map(|p| (p.query, p.gt)).collect();
                if let Some(prev) = &previous {
                    if !prev.iter().all(|p| pairs.contains(p)) {
                        return Err(format!("set {set}: positives for smaller k are not a subset at k={k}"));
                    }
                }
                total += pairs.len();
                previous = Some(pairs);
            }
        }
        Ok(format!("500 sets, {total} positives checked"))
    })
}

/// Instantiated counts equal the closed form, and low-rank branches are
/// cheaper than full copies whenever the rank is below the break-even point.
pub fn param_count_suite() -> SuiteReport {
    run("parameter_accounting", || {
        let mut checked = 0;
        for (d, h) in [(32, 64), (8, 12), (16, 16)] {
            for n_aux in 0..=5 {
                for rank in [1, 2, 4, 8, 16] {
                    if rank > d.min(h) {
                        continue;
                    }
                    let mut lora_total = 0;
                    for mode in [AuxMode::Lora, AuxMode::FullFfn] {
                        let cfg = ModelConfig {
                            d_model: d,
                            d_hidden: h,
                            n_aux,
                            rank,
                            aux_mode: mode,
                            ..ModelConfig::default()
                        };
                        let m = Model::new(cfg).map_err(|e| e.to_string())?;
                        let got = m.param_count();
                        let mut by_hand = 0;
                        m.visit_params(&mut |_, _, p| by_hand += p.len());
                        let want = expected_param_count(&cfg);
                        if got != want || by_hand != want.total() {
                            return Err(format!("{cfg:?}: counted {got:?} ({by_hand}) vs formula {want:?}"));
                        }
                        let stripped = m.strip_for_inference().param_count().total();
                        if stripped != want.base + want.heads {
                            return Err(format!("{cfg:?}: stripped count {stripped}"));
                        }
                        if mode == AuxMode::Lora {
                            lora_total = got.total();
                        } else if n_aux > 0 && (rank * (d + h)) < d * h && lora_total >= got.total() {
                            return Err(format!("{cfg:?}: lora {lora_total} not below full_ffn {}", got.total()));
                        }
                        checked += 1;
                    }
                }
            }
        }
        Ok(format!("{checked} configurations match the closed form"))
    })
}

/// Every suite; `train_steps` is the training length of the strip check.
pub fn run_all(train_steps: usize) -> Vec<SuiteReport> {
    vec![
        hungarian_suite(),
        gradient_suite(),
        zero_init_suite(),
        strip_suite(train_steps),
        vfl_suite(),
        matcher_suite(),
        param_count_suite(),
    ]
}
