//! Decoder stack with a shared feed-forward block and per-branch low-rank
//! adapters.
//!
//! Every decoder layer runs self-attention and cross-attention once. The
//! attended queries then go through the plain FFN (the primary branch, which
//! feeds the next layer) and through one adapted FFN per auxiliary branch,
//! whose outputs are only decoded by the shared heads for supervision.
//!
//! Orientation: activations are row-major `tokens x features` and layers
//! compute `x · W`, so `W1` is `d_model x d_hidden`. Adapter factors keep
//! their conventional shapes (`A1: r x d_model`, `B1: d_hidden x r`), which
//! makes the effective first weight `W1 + (B1 A1)ᵀ`; likewise for `W2`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assignment::Prediction;
use crate::error::{Error, Result};
use crate::geometry::BoxCXCYWH;
use crate::numerics::{
    add_bias_in_place, bias_grad_acc, matmul, matmul_acc, matmul_nt, matmul_tn, matmul_tn_acc, relu, relu_backward,
    sigmoid, sigmoid_backward, softmax_rows, softmax_rows_backward, GradSlot, Tensor2D,
};

/// How auxiliary branches are realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxMode {
    /// Low-rank residuals on the shared FFN weights.
    Lora,
    /// An independent full FFN per branch, initialized as a copy of the primary.
    FullFfn,
}

impl AuxMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AuxMode::Lora => "lora",
            AuxMode::FullFfn => "full_ffn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lora" => Ok(AuxMode::Lora),
            "full_ffn" => Ok(AuxMode::FullFfn),
            other => Err(Error::Config(format!("unknown aux mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_hidden: usize,
    pub n_layers: usize,
    pub n_queries: usize,
    pub num_classes: usize,
    pub n_aux: usize,
    pub rank: usize,
    pub aux_mode: AuxMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            d_hidden: 64,
            n_layers: 2,
            n_queries: 20,
            num_classes: 5,
            n_aux: 3,
            rank: 4,
            aux_mode: AuxMode::Lora,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("d_hidden", self.d_hidden),
            ("n_layers", self.n_layers),
            ("n_queries", self.n_queries),
            ("num_classes", self.num_classes),
            ("rank", self.rank),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.rank > self.d_model.min(self.d_hidden) {
            return Err(Error::Config(format!(
                "model.rank {} exceeds min(d_model, d_hidden) = {}",
                self.rank,
                self.d_model.min(self.d_hidden)
            )));
        }
        Ok(())
    }

    /// Number of branches decoded per layer (primary plus auxiliaries).
    pub fn n_branches(&self) -> usize {
        1 + self.n_aux
    }
}

/// Which part of the model a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Queries,
    Attention,
    Ffn,
    Adapter,
    AuxFfn,
    ClsHead,
    BoxHead,
}

/// Anything that exposes named trainable tensors in a fixed order.
pub trait Parameters {
    fn visit_params(&self, f: &mut dyn FnMut(&str, ParamGroup, &GradSlot));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, ParamGroup, &mut GradSlot));

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, _, p| p.zero_grad());
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor2D {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor2D::from_vec(rows, cols, data).expect("length matches shape")
}

fn linear_init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> GradSlot {
    GradSlot::new(uniform(rng, fan_in, fan_out, 1.0 / libm::sqrt(fan_in as f64)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    pub w1: GradSlot,
    pub b1: GradSlot,
    pub w2: GradSlot,
    pub b2: GradSlot,
}

impl FfnParams {
    pub fn init(rng: &mut ChaCha8Rng, d_model: usize, d_hidden: usize) -> Self {
        Self {
            w1: linear_init(rng, d_model, d_hidden),
            b1: GradSlot::new(Tensor2D::zeros(1, d_hidden)),
            w2: linear_init(rng, d_hidden, d_model),
            b2: GradSlot::new(Tensor2D::zeros(1, d_model)),
        }
    }

    pub fn zeros(d_model: usize, d_hidden: usize) -> Self {
        Self {
            w1: GradSlot::new(Tensor2D::zeros(d_model, d_hidden)),
            b1: GradSlot::new(Tensor2D::zeros(1, d_hidden)),
            w2: GradSlot::new(Tensor2D::zeros(d_hidden, d_model)),
            b2: GradSlot::new(Tensor2D::zeros(1, d_model)),
        }
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn visit(&self, prefix: &str, group: ParamGroup, f: &mut dyn FnMut(&str, ParamGroup, &GradSlot)) {
        f(&format!("{prefix}.w1"), group, &self.w1);
        f(&format!("{prefix}.b1"), group, &self.b1);
        f(&format!("{prefix}.w2"), group, &self.w2);
        f(&format!("{prefix}.b2"), group, &self.b2);
    }

    fn visit_mut(&mut self, prefix: &str, group: ParamGroup, f: &mut dyn FnMut(&str, ParamGroup, &mut GradSlot)) {
        f(&format!("{prefix}.w1"), group, &mut self.w1);
        f(&format!("{prefix}.b1"), group, &mut self.b1);
        f(&format!("{prefix}.w2"), group, &mut self.w2);
        f(&format!("{prefix}.b2"), group, &mut self.b2);
    }
}

/// Low-rank residual pair for both FFN weights of one auxiliary branch.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub rank: usize,
    pub a1: GradSlot,
    pub b1: GradSlot,
    pub a2: GradSlot,
    pub b2: GradSlot,
}

impl LoraAdapter {
    /// `A` uniform in `±1/sqrt(r)`, `B` exactly zero.
    pub fn init(rng: &mut ChaCha8Rng, d_model: usize, d_hidden: usize, rank: usize) -> Self {
        let bound = 1.0 / libm::sqrt(rank as f64);
        Self {
            rank,
            a1: GradSlot::new(uniform(rng, rank, d_model, bound)),
            b1: GradSlot::new(Tensor2D::zeros(d_hidden, rank)),
            a2: GradSlot::new(uniform(rng, rank, d_hidden, bound)),
            b2: GradSlot::new(Tensor2D::zeros(d_model, rank)),
        }
    }

    pub fn num_params(&self) -> usize {
        self.a1.len() + self.b1.len() + self.a2.len() + self.b2.len()
    }

    /// Residual added to `W1` in row orientation: `(B1 A1)ᵀ`, `d_model x d_hidden`.
    pub fn delta_w1(&self) -> Tensor2D {
        matmul(&self.b1.value, &self.a1.value)
            .expect("adapter shapes")
            .transpose()
    }

    /// Residual added to `W2`: `(B2 A2)ᵀ`, `d_hidden x d_model`.
    pub fn delta_w2(&self) -> Tensor2D {
        matmul(&self.b2.value, &self.a2.value)
            .expect("adapter shapes")
            .transpose()
    }

    /// The FFN with both residuals folded into its weights.
    pub fn merged(&self, ffn: &FfnParams) -> Result<FfnParams> {
        let mut out = ffn.clone();
        out.w1.value.add_assign(&self.delta_w1())?;
        out.w2.value.add_assign(&self.delta_w2())?;
        Ok(out)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, ParamGroup, &GradSlot)) {
        let g = ParamGroup::Adapter;
        f(&format!("{prefix}.a1"), g, &self.a1);
        f(&format!("{prefix}.b1"), g, &self.b1);
        f(&format!("{prefix}.a2"), g, &self.a2);
        f(&format!("{prefix}.b2"), g, &self.b2);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamGroup, &mut GradSlot)) {
        let g = ParamGroup::Adapter;
        f(&format!("{prefix}.a1"), g, &mut self.a1);
        f(&format!("{prefix}.b1"), g, &mut self.b1);
        f(&format!("{prefix}.a2"), g, &mut self.a2);
        f(&format!("{prefix}.b2"), g, &mut self.b2);
    }
}

/// Single-head attention projections.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: GradSlot,
    pub wk: GradSlot,
    pub wv: GradSlot,
    pub wo: GradSlot,
}

impl AttentionParams {
    pub fn init(rng: &mut ChaCha8Rng, d_model: usize) -> Self {
        Self {
            wq: linear_init(rng, d_model, d_model),
            wk: linear_init(rng, d_model, d_model),
            wv: linear_init(rng, d_model, d_model),
            wo: linear_init(rng, d_model, d_model),
        }
    }

    fn slots(&self) -> [(&'static str, &GradSlot); 4] {
        [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AuxBranches {
    Lora(Vec<LoraAdapter>),
    FullFfn(Vec<FfnParams>),
}

impl AuxBranches {
    pub fn len(&self) -> usize {
        match self {
            AuxBranches::Lora(a) => a.len(),
            AuxBranches::FullFfn(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub sa: AttentionParams,
    pub ca: AttentionParams,
    pub ffn: FfnParams,
    pub aux: AuxBranches,
}

/// Classification and box heads shared by every branch and layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    pub cls_w: GradSlot,
    pub cls_b: GradSlot,
    pub box_w: GradSlot,
    pub box_b: GradSlot,
}

/// Initial classification bias: logit of a 1% prior.
const CLS_PRIOR_BIAS: f64 = -4.59511985013459;

impl Heads {
    pub fn init(rng: &mut ChaCha8Rng, d_model: usize, num_classes: usize) -> Self {
        Self {
            cls_w: linear_init(rng, d_model, num_classes),
            cls_b: GradSlot::new(Tensor2D::filled(1, num_classes, CLS_PRIOR_BIAS)),
            box_w: linear_init(rng, d_model, 4),
            box_b: GradSlot::new(Tensor2D::zeros(1, 4)),
        }
    }
}

// ---------------------------------------------------------------------------
// Building blocks

#[derive(Debug, Clone)]
pub struct FfnCache {
    x: Tensor2D,
    pre: Tensor2D,
    act: Tensor2D,
    // x·A1ᵀ and act·A2ᵀ when an adapter is active
    low_rank: Option<(Tensor2D, Tensor2D)>,
}

impl FfnCache {
    /// Hidden pre-activation, for locating ReLU kinks.
    pub fn pre_activation(&self) -> &Tensor2D {
        &self.pre
    }
}

/// `relu(x·W1 + b1)·W2 + b2`.
pub fn ffn_forward(x: &Tensor2D, ffn: &FfnParams) -> Result<(Tensor2D, FfnCache)> {
    let mut pre = matmul(x, &ffn.w1.value)?;
    add_bias_in_place(&mut pre, &ffn.b1.value)?;
    let act = relu(&pre);
    let mut out = matmul(&act, &ffn.w2.value)?;
    add_bias_in_place(&mut out, &ffn.b2.value)?;
    Ok((
        out,
        FfnCache {
            x: x.clone(),
            pre,
            act,
            low_rank: None,
        },
    ))
}

/// FFN with low-rank residuals on both weights, evaluated as base path plus
/// low-rank path (the merged weights are never formed).
pub fn lora_ffn_forward(x: &Tensor2D, ffn: &FfnParams, ad: &LoraAdapter) -> Result<(Tensor2D, FfnCache)> {
    let mut pre = matmul(x, &ffn.w1.value)?;
    add_bias_in_place(&mut pre, &ffn.b1.value)?;
    let z1 = matmul_nt(x, &ad.a1.value)?;
    pre.add_assign(&matmul_nt(&z1, &ad.b1.value)?)?;
    let act = relu(&pre);
    let mut out = matmul(&act, &ffn.w2.value)?;
    add_bias_in_place(&mut out, &ffn.b2.value)?;
    let z2 = matmul_nt(&act, &ad.a2.value)?;
    out.add_assign(&matmul_nt(&z2, &ad.b2.value)?)?;
    Ok((
        out,
        FfnCache {
            x: x.clone(),
            pre,
            act,
            low_rank: Some((z1, z2)),
        },
    ))
}

/// Backward of [`ffn_forward`] / [`lora_ffn_forward`]. Accumulates into the
/// base FFN and, when present, the adapter; returns the input gradient.
pub fn ffn_backward(
    ffn: &mut FfnParams,
    adapter: Option<&mut LoraAdapter>,
    cache: &FfnCache,
    d_out: &Tensor2D,
) -> Result<Tensor2D> {
    matmul_tn_acc(&cache.act, d_out, &mut ffn.w2.grad)?;
    bias_grad_acc(d_out, &mut ffn.b2.grad);
    let mut d_act = matmul_nt(d_out, &ffn.w2.value)?;

    let mut adapter = adapter;
    if let (Some(ad), Some((_, z2))) = (adapter.as_deref_mut(), cache.low_rank.as_ref()) {
        matmul_tn_acc(d_out, z2, &mut ad.b2.grad)?;
        let dz2 = matmul(d_out, &ad.b2.value)?;
        matmul_tn_acc(&dz2, &cache.act, &mut ad.a2.grad)?;
        matmul_acc(&dz2, &ad.a2.value, &mut d_act)?;
    }

    let d_pre = relu_backward(&cache.pre, &d_act)?;
    matmul_tn_acc(&cache.x, &d_pre, &mut ffn.w1.grad)?;
    bias_grad_acc(&d_pre, &mut ffn.b1.grad);
    let mut dx = matmul_nt(&d_pre, &ffn.w1.value)?;

    if let (Some(ad), Some((z1, _))) = (adapter, cache.low_rank.as_ref()) {
        matmul_tn_acc(&d_pre, z1, &mut ad.b1.grad)?;
        let dz1 = matmul(&d_pre, &ad.b1.value)?;
        matmul_tn_acc(&dz1, &cache.x, &mut ad.a1.grad)?;
        matmul_acc(&dz1, &ad.a1.value, &mut dx)?;
    }
    Ok(dx)
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    q_in: Tensor2D,
    kv_in: Tensor2D,
    q: Tensor2D,
    k: Tensor2D,
    v: Tensor2D,
    p: Tensor2D,
    o: Tensor2D,
}

/// Single-head scaled dot-product attention of `q_in` over `kv_in`.
pub fn attention_forward(
    q_in: &Tensor2D,
    kv_in: &Tensor2D,
    att: &AttentionParams,
) -> Result<(Tensor2D, AttentionCache)> {
    let scale = 1.0 / libm::sqrt(q_in.cols() as f64);
    let q = matmul(q_in, &att.wq.value)?;
    let k = matmul(kv_in, &att.wk.value)?;
    let v = matmul(kv_in, &att.wv.value)?;
    let mut s = matmul_nt(&q, &k)?;
    s.scale(scale);
    let p = softmax_rows(&s)?;
    let o = matmul(&p, &v)?;
    let out = matmul(&o, &att.wo.value)?;
    Ok((
        out,
        AttentionCache {
            q_in: q_in.clone(),
            kv_in: kv_in.clone(),
            q,
            k,
            v,
            p,
            o,
        },
    ))
}

/// Backward of [`attention_forward`]. Returns `(d q_in, d kv_in)`; the second
/// is only computed when `want_kv` is set.
pub fn attention_backward(
    att: &mut AttentionParams,
    cache: &AttentionCache,
    d_out: &Tensor2D,
    want_kv: bool,
) -> Result<(Tensor2D, Option<Tensor2D>)> {
    let scale = 1.0 / libm::sqrt(cache.q_in.cols() as f64);
    matmul_tn_acc(&cache.o, d_out, &mut att.wo.grad)?;
    let d_o = matmul_nt(d_out, &att.wo.value)?;
    let d_p = matmul_nt(&d_o, &cache.v)?;
    let d_v = matmul_tn(&cache.p, &d_o)?;
    let mut d_s = softmax_rows_backward(&cache.p, &d_p)?;
    d_s.scale(scale);
    let d_q = matmul(&d_s, &cache.k)?;
    let d_k = matmul_tn(&d_s, &cache.q)?;
    matmul_tn_acc(&cache.q_in, &d_q, &mut att.wq.grad)?;
    matmul_tn_acc(&cache.kv_in, &d_k, &mut att.wk.grad)?;
    matmul_tn_acc(&cache.kv_in, &d_v, &mut att.wv.grad)?;
    let dq_in = matmul_nt(&d_q, &att.wq.value)?;
    let dkv = if want_kv {
        let mut d = matmul_nt(&d_k, &att.wk.value)?;
        d.add_assign(&matmul_nt(&d_v, &att.wv.value)?)?;
        Some(d)
    } else {
        None
    };
    Ok((dq_in, dkv))
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    sa: AttentionCache,
    ca: AttentionCache,
    primary: FfnCache,
    aux: Vec<FfnCache>,
}

/// One decoder layer. Returns the primary output (which feeds the next
/// layer), the auxiliary outputs, and the cache for the backward pass.
pub fn decoder_layer_forward(
    q: &Tensor2D,
    x: &Tensor2D,
    layer: &DecoderLayer,
) -> Result<(Tensor2D, Vec<Tensor2D>, LayerCache)> {
    let (sa_out, sa) = attention_forward(q, q, &layer.sa)?;
    let h1 = q.add(&sa_out)?;
    let (ca_out, ca) = attention_forward(&h1, x, &layer.ca)?;
    let h2 = h1.add(&ca_out)?;

    let (f, primary) = ffn_forward(&h2, &layer.ffn)?;
    let q_next = h2.add(&f)?;

    let n_aux = layer.aux.len();
    let mut aux_out = Vec::with_capacity(n_aux);
    let mut aux_cache = Vec::with_capacity(n_aux);
    for i in 0..n_aux {
        let (f, c) = match &layer.aux {
            AuxBranches::Lora(ads) => lora_ffn_forward(&h2, &layer.ffn, &ads[i])?,
            AuxBranches::FullFfn(ffns) => ffn_forward(&h2, &ffns[i])?,
        };
        aux_out.push(h2.add(&f)?);
        aux_cache.push(c);
    }
    Ok((
        q_next,
        aux_out,
        LayerCache {
            sa,
            ca,
            primary,
            aux: aux_cache,
        },
    ))
}

/// Backward of [`decoder_layer_forward`]. Branch gradients are accumulated
/// in order: primary first, then auxiliaries by index.
pub fn decoder_layer_backward(
    layer: &mut DecoderLayer,
    cache: &LayerCache,
    d_next: &Tensor2D,
    d_aux: &[Option<Tensor2D>],
) -> Result<Tensor2D> {
    let mut dh2 = d_next.clone();
    dh2.add_assign(&ffn_backward(&mut layer.ffn, None, &cache.primary, d_next)?)?;
    for (i, d) in d_aux.iter().enumerate() {
        let Some(d) = d else { continue };
        dh2.add_assign(d)?;
        let dx = match &mut layer.aux {
            AuxBranches::Lora(ads) => ffn_backward(&mut layer.ffn, Some(&mut ads[i]), &cache.aux[i], d)?,
            AuxBranches::FullFfn(ffns) => ffn_backward(&mut ffns[i], None, &cache.aux[i], d)?,
        };
        dh2.add_assign(&dx)?;
    }
    let (dh1_ca, _) = attention_backward(&mut layer.ca, &cache.ca, &dh2, false)?;
    let mut dh1 = dh2;
    dh1.add_assign(&dh1_ca)?;
    let (dq_sa, dkv_sa) = attention_backward(&mut layer.sa, &cache.sa, &dh1, true)?;
    let mut dq = dh1;
    dq.add_assign(&dq_sa)?;
    dq.add_assign(&dkv_sa.expect("requested"))?;
    Ok(dq)
}

// ---------------------------------------------------------------------------
// Full model

/// Decoded output of one branch at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutput {
    /// `n_queries x num_classes` sigmoid probabilities.
    pub probs: Tensor2D,
    /// `n_queries x 4` sigmoid boxes in `(cx, cy, w, h)`.
    pub boxes: Tensor2D,
}

impl BranchOutput {
    pub fn predictions(&self) -> Vec<Prediction> {
        (0..self.probs.rows())
            .map(|q| Prediction {
                class_scores: self.probs.row(q).to_vec(),
                bbox: self.query_box(q),
            })
            .collect()
    }

    pub fn query_box(&self, q: usize) -> BoxCXCYWH {
        let r = self.boxes.row(q);
        BoxCXCYWH::from_array([r[0], r[1], r[2], r[3]])
    }
}

/// Per-layer, per-branch outputs; branch 0 is the primary branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub layers: Vec<Vec<BranchOutput>>,
}

impl ModelOutput {
    /// Primary branch of the last layer.
    pub fn final_primary(&self) -> &BranchOutput {
        &self.layers.last().expect("at least one layer")[0]
    }

    pub fn final_branch(&self, branch: usize) -> Option<&BranchOutput> {
        self.layers.last().and_then(|l| l.get(branch))
    }
}

/// Upstream gradient for one branch output.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchGrad {
    pub d_probs: Tensor2D,
    pub d_boxes: Tensor2D,
}

pub struct ForwardTrace {
    pub output: ModelOutput,
    hidden: Vec<Vec<Tensor2D>>,
    caches: Vec<LayerCache>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub base: usize,
    pub auxiliary: usize,
    pub heads: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.base + self.auxiliary + self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub query_embed: GradSlot,
    pub layers: Vec<DecoderLayer>,
    pub heads: Heads,
}

impl Model {
    /// Deterministic initialization from `config.seed`.
    ///
    /// Base parameters come from one random stream and adapters from another,
    /// so models that differ only in `n_aux` share identical base weights.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (d, h) = (config.d_model, config.d_hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut aux_rng = ChaCha8Rng::seed_from_u64(config.seed);
        aux_rng.set_stream(1);

        let query_embed = GradSlot::new(uniform(&mut rng, config.n_queries, d, 1.0));
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            let sa = AttentionParams::init(&mut rng, d);
            let ca = AttentionParams::init(&mut rng, d);
            let ffn = FfnParams::init(&mut rng, d, h);
            let aux = match config.aux_mode {
                AuxMode::Lora => AuxBranches::Lora(
                    (0..config.n_aux)
                        .map(|_| LoraAdapter::init(&mut aux_rng, d, h, config.rank))
                        .collect(),
                ),
                AuxMode::FullFfn => AuxBranches::FullFfn(vec![ffn.clone(); config.n_aux]),
            };
            layers.push(DecoderLayer { sa, ca, ffn, aux });
        }
        let heads = Heads::init(&mut rng, d, config.num_classes);
        Ok(Self {
            config,
            query_embed,
            layers,
            heads,
        })
    }

    pub fn forward(&self, features: &Tensor2D) -> Result<ModelOutput> {
        Ok(self.forward_trace(features)?.output)
    }

    pub fn forward_trace(&self, features: &Tensor2D) -> Result<ForwardTrace> {
        if features.cols() != self.config.d_model {
            return Err(Error::Dimension {
                op: "model_forward",
                left: features.shape(),
                right: (features.rows(), self.config.d_model),
            });
        }
        let mut q = self.query_embed.value.clone();
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut hidden = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (q_next, aux, cache) = decoder_layer_forward(&q, features, layer)?;
            let mut branch_hidden = Vec::with_capacity(1 + aux.len());
            branch_hidden.push(q_next);
            branch_hidden.extend(aux);
            let decoded = branch_hidden
                .iter()
                .map(|hd| self.decode(hd))
                .collect::<Result<Vec<_>>>()?;
            q = branch_hidden[0].clone();
            outputs.push(decoded);
            hidden.push(branch_hidden);
            caches.push(cache);
        }
        Ok(ForwardTrace {
            output: ModelOutput { layers: outputs },
            hidden,
            caches,
        })
    }

    fn decode(&self, hidden: &Tensor2D) -> Result<BranchOutput> {
        let mut cls = matmul(hidden, &self.heads.cls_w.value)?;
        add_bias_in_place(&mut cls, &self.heads.cls_b.value)?;
        let mut bx = matmul(hidden, &self.heads.box_w.value)?;
        add_bias_in_place(&mut bx, &self.heads.box_b.value)?;
        Ok(BranchOutput {
            probs: sigmoid(&cls),
            boxes: sigmoid(&bx),
        })
    }

    fn decode_backward(&mut self, hidden: &Tensor2D, out: &BranchOutput, g: &BranchGrad) -> Result<Tensor2D> {
        let d_cls = sigmoid_backward(&out.probs, &g.d_probs)?;
        let d_box = sigmoid_backward(&out.boxes, &g.d_boxes)?;
        matmul_tn_acc(hidden, &d_cls, &mut self.heads.cls_w.grad)?;
        bias_grad_acc(&d_cls, &mut self.heads.cls_b.grad);
        matmul_tn_acc(hidden, &d_box, &mut self.heads.box_w.grad)?;
        bias_grad_acc(&d_box, &mut self.heads.box_b.grad);
        let mut dh = matmul_nt(&d_cls, &self.heads.cls_w.value)?;
        dh.add_assign(&matmul_nt(&d_box, &self.heads.box_w.value)?)?;
        Ok(dh)
    }

    /// Accumulates parameter gradients for upstream gradients
    /// `grads[layer][branch]` (`None` means no loss on that output).
    ///
    /// Layers are processed last to first; within a layer, head gradients
    /// are accumulated primary first, then auxiliaries by index.
    pub fn backward(&mut self, trace: &ForwardTrace, grads: &[Vec<Option<BranchGrad>>]) -> Result<()> {
        let n_layers = self.layers.len();
        let n_branches = 1 + self.layers.first().map_or(0, |l| l.aux.len());
        if grads.len() != n_layers || grads.iter().any(|g| g.len() != n_branches) {
            return Err(Error::Config(format!(
                "expected gradients for {n_layers} layers x {n_branches} branches"
            )));
        }
        let d = self.config.d_model;
        let mut carry = Tensor2D::zeros(self.config.n_queries, d);
        for l in (0..n_layers).rev() {
            let mut branch_d: Vec<Option<Tensor2D>> = Vec::with_capacity(n_branches);
            for b in 0..n_branches {
                branch_d.push(match &grads[l][b] {
                    Some(g) => Some(self.decode_backward(&trace.hidden[l][b], &trace.output.layers[l][b], g)?),
                    None => None,
                });
            }
            let mut d_primary = carry;
            if let Some(dp) = &branch_d[0] {
                d_primary.add_assign(dp)?;
            }
            carry = decoder_layer_backward(&mut self.layers[l], &trace.caches[l], &d_primary, &branch_d[1..])?;
        }
        self.query_embed.accumulate(&carry)
    }

    pub fn param_count(&self) -> ParamCount {
        let mut c = ParamCount {
            base: 0,
            auxiliary: 0,
            heads: 0,
        };
        self.visit_params(&mut |_, group, p| match group {
            ParamGroup::Adapter | ParamGroup::AuxFfn => c.auxiliary += p.len(),
            ParamGroup::ClsHead | ParamGroup::BoxHead => c.heads += p.len(),
            _ => c.base += p.len(),
        });
        c
    }

    /// The inference model: all auxiliary branches removed.
    pub fn strip_for_inference(&self) -> Model {
        let mut out = self.clone();
        out.config.n_aux = 0;
        for layer in &mut out.layers {
            layer.aux = match layer.aux {
                AuxBranches::Lora(_) => AuxBranches::Lora(Vec::new()),
                AuxBranches::FullFfn(_) => AuxBranches::FullFfn(Vec::new()),
            };
        }
        out
    }

    /// Names of all parameters in visiting order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |n, _, _| names.push(String::from(n)));
        names
    }
}

/// Closed-form parameter counts, independent of any instantiated model.
pub fn expected_param_count(c: &ModelConfig) -> ParamCount {
    let (d, h, l) = (c.d_model, c.d_hidden, c.n_layers);
    let ffn = 2 * d * h + h + d;
    let aux_per = match c.aux_mode {
        AuxMode::Lora => 2 * c.rank * (d + h),
        AuxMode::FullFfn => ffn,
    };
    ParamCount {
        base: c.n_queries * d + l * (8 * d * d + ffn),
        auxiliary: c.n_aux * l * aux_per,
        heads: d * c.num_classes + c.num_classes + 4 * d + 4,
    }
}

impl Parameters for Model {
    fn visit_params(&self, f: &mut dyn FnMut(&str, ParamGroup, &GradSlot)) {
        f("queries", ParamGroup::Queries, &self.query_embed);
        for (l, layer) in self.layers.iter().enumerate() {
            for (att_name, att) in [("sa", &layer.sa), ("ca", &layer.ca)] {
                for (role, slot) in att.slots() {
                    f(&format!("layer{l}.{att_name}.{role}"), ParamGroup::Attention, slot);
                }
            }
            layer.ffn.visit(&format!("layer{l}.ffn"), ParamGroup::Ffn, f);
            match &layer.aux {
                AuxBranches::Lora(ads) => {
                    for (i, ad) in ads.iter().enumerate() {
                        ad.visit(&format!("layer{l}.adapter{i}"), f);
                    }
                }
                AuxBranches::FullFfn(ffns) => {
                    for (i, ffn) in ffns.iter().enumerate() {
                        ffn.visit(&format!("layer{l}.aux_ffn{i}"), ParamGroup::AuxFfn, f);
                    }
                }
            }
        }
        f("heads.cls.w", ParamGroup::ClsHead, &self.heads.cls_w);
        f("heads.cls.b", ParamGroup::ClsHead, &self.heads.cls_b);
        f("heads.box.w", ParamGroup::BoxHead, &self.heads.box_w);
        f("heads.box.b", ParamGroup::BoxHead, &self.heads.box_b);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, ParamGroup, &mut GradSlot)) {
        f("queries", ParamGroup::Queries, &mut self.query_embed);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (att_name, att) in [("sa", &mut layer.sa), ("ca", &mut layer.ca)] {
                f(&format!("layer{l}.{att_name}.wq"), ParamGroup::Attention, &mut att.wq);
                f(&format!("layer{l}.{att_name}.wk"), ParamGroup::Attention, &mut att.wk);
                f(&format!("layer{l}.{att_name}.wv"), ParamGroup::Attention, &mut att.wv);
                f(&format!("layer{l}.{att_name}.wo"), ParamGroup::Attention, &mut att.wo);
            }
            layer.ffn.visit_mut(&format!("layer{l}.ffn"), ParamGroup::Ffn, f);
            match &mut layer.aux {
                AuxBranches::Lora(ads) => {
                    for (i, ad) in ads.iter_mut().enumerate() {
                        ad.visit_mut(&format!("layer{l}.adapter{i}"), f);
                    }
                }
                AuxBranches::FullFfn(ffns) => {
                    for (i, ffn) in ffns.iter_mut().enumerate() {
                        ffn.visit_mut(&format!("layer{l}.aux_ffn{i}"), ParamGroup::AuxFfn, f);
                    }
                }
            }
        }
        f("heads.cls.w", ParamGroup::ClsHead, &mut self.heads.cls_w);
        f("heads.cls.b", ParamGroup::ClsHead, &mut self.heads.cls_b);
        f("heads.box.w", ParamGroup::BoxHead, &mut self.heads.box_w);
        f("heads.box.b", ParamGroup::BoxHead, &mut self.heads.box_b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn weighted_sum(t: &Tensor2D, w: &Tensor2D) -> f64 {
        t.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    }

    fn near_kink(pre: &Tensor2D) -> bool {
        pre.data().iter().any(|v| v.abs() < 1e-3)
    }

    fn randomize_adapter(ad: &mut LoraAdapter, r: &mut ChaCha8Rng) {
        for slot in [&mut ad.b1, &mut ad.b2] {
            let (rows, cols) = slot.value.shape();
            slot.value = uniform(r, rows, cols, 0.5);
        }
    }

    #[test]
    fn ffn_trivial_cases() {
        let x = uniform(&mut rng(1), 3, 4, 1.0);
        let (out, _) = ffn_forward(&x, &FfnParams::zeros(4, 6)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        let mut f = FfnParams::zeros(1, 1);
        f.w1.value.set(0, 0, 1.0);
        f.w2.value.set(0, 0, 1.0);
        let (out, _) = ffn_forward(&Tensor2D::row_vector(&[2.0]), &f).unwrap();
        assert_eq!(out.data(), &[2.0]);

        assert!(ffn_forward(&Tensor2D::zeros(2, 3), &FfnParams::zeros(4, 6)).is_err());
    }

    #[test]
    fn zero_residual_adapter_is_exactly_the_base_ffn() {
        let mut r = rng(2);
        let ffn = FfnParams::init(&mut r, 6, 10);
        let ad = LoraAdapter::init(&mut r, 6, 10, 3);
        let x = uniform(&mut r, 5, 6, 1.0);
        assert_eq!(
            ffn_forward(&x, &ffn).unwrap().0,
            lora_ffn_forward(&x, &ffn, &ad).unwrap().0
        );
    }

    #[test]
    fn merged_and_split_evaluation_agree() {
        let mut r = rng(3);
        let ffn = FfnParams::init(&mut r, 6, 10);
        let mut ad = LoraAdapter::init(&mut r, 6, 10, 3);
        randomize_adapter(&mut ad, &mut r);
        let x = uniform(&mut r, 5, 6, 1.0);
        let (split, _) = lora_ffn_forward(&x, &ffn, &ad).unwrap();
        let (merged, _) = ffn_forward(&x, &ad.merged(&ffn).unwrap()).unwrap();
        for (a, b) in split.data().iter().zip(merged.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    /// Numerical rank via Gram-Schmidt with a relative cutoff.
    fn numerical_rank(m: &Tensor2D) -> usize {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let scale = m.max_abs().max(1e-300);
        for c in 0..m.cols() {
            let mut v: Vec<f64> = (0..m.rows()).map(|r| m.get(r, c)).collect();
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-10 * scale {
                basis.push(v.iter().map(|x| x / n).collect());
            }
        }
        basis.len()
    }

    #[test]
    fn adapter_residuals_are_low_rank() {
        let mut r = rng(4);
        for rank in [1, 2, 4] {
            let mut ad = LoraAdapter::init(&mut r, 12, 16, rank);
            randomize_adapter(&mut ad, &mut r);
            assert!(numerical_rank(&ad.delta_w1()) <= rank);
            assert!(numerical_rank(&ad.delta_w2()) <= rank);
        }
    }

    #[test]
    fn ffn_and_lora_gradients_match_finite_differences() {
        let mut r = rng(5);
        let mut checked = 0;
        while checked < 10 {
            let ffn = FfnParams::init(&mut r, 4, 6);
            let mut ad = LoraAdapter::init(&mut r, 4, 6, 2);
            randomize_adapter(&mut ad, &mut r);
            let x = uniform(&mut r, 3, 4, 1.0);
            let w = uniform(&mut r, 3, 4, 1.0);
            let (_, cache) = lora_ffn_forward(&x, &ffn, &ad).unwrap();
            let (_, base_cache) = ffn_forward(&x, &ffn).unwrap();
            if near_kink(&cache.pre) || near_kink(&base_cache.pre) {
                continue;
            }
            checked += 1;

            let mut f0 = ffn.clone();
            let dx = ffn_backward(&mut f0, None, &base_cache, &w).unwrap();
            let e = finite_diff_check(|t| weighted_sum(&ffn_forward(t, &ffn).unwrap().0, &w), &x, &dx, 1e-5).unwrap();
            assert!(e < 1e-4, "ffn dx {e}");
            let e = finite_diff_check(
                |t| {
                    let mut g = ffn.clone();
                    g.w1.value = t.clone();
                    weighted_sum(&ffn_forward(&x, &g).unwrap().0, &w)
                },
                &ffn.w1.value,
                &f0.w1.grad,
                1e-5,
            )
            .unwrap();
            assert!(e < 1e-4, "ffn dW1 {e}");

            let mut f1 = ffn.clone();
            let mut a1 = ad.clone();
            let dx = ffn_backward(&mut f1, Some(&mut a1), &cache, &w).unwrap();
            let eval = |ffn: &FfnParams, ad: &LoraAdapter, x: &Tensor2D| {
                weighted_sum(&lora_ffn_forward(x, ffn, ad).unwrap().0, &w)
            };
            let e = finite_diff_check(|t| eval(&ffn, &ad, t), &x, &dx, 1e-5).unwrap();
            assert!(e < 1e-4, "lora dx {e}");
            type Pick = for<'a> fn(&'a mut FfnParams, &'a mut LoraAdapter) -> &'a mut GradSlot;
            let picks: [(&str, Pick); 8] = [
                ("w1", |f, _| &mut f.w1),
                ("b1", |f, _| &mut f.b1),
                ("w2", |f, _| &mut f.w2),
                ("b2", |f, _| &mut f.b2),
                ("a1", |_, a| &mut a.a1),
                ("B1", |_, a| &mut a.b1),
                ("a2", |_, a| &mut a.a2),
                ("B2", |_, a| &mut a.b2),
            ];
            for (name, pick) in picks {
                let (mut fg, mut ag) = (f1.clone(), a1.clone());
                let analytic = pick(&mut fg, &mut ag).grad.clone();
                let (mut fv, mut av) = (ffn.clone(), ad.clone());
                let at = pick(&mut fv, &mut av).value.clone();
                let e = finite_diff_check(
                    |t| {
                        let (mut fp, mut ap) = (ffn.clone(), ad.clone());
                        pick(&mut fp, &mut ap).value = t.clone();
                        eval(&fp, &ap, &x)
                    },
                    &at,
                    &analytic,
                    1e-5,
                )
                .unwrap();
                assert!(e < 1e-4, "lora d{name} {e}");
            }
        }
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mut r = rng(6);
        for _ in 0..10 {
            let att = AttentionParams::init(&mut r, 4);
            let q = uniform(&mut r, 3, 4, 1.0);
            let kv = uniform(&mut r, 5, 4, 1.0);
            let w = uniform(&mut r, 3, 4, 1.0);
            let (_, cache) = attention_forward(&q, &kv, &att).unwrap();
            let mut a = att.clone();
            let (dq, dkv) = attention_backward(&mut a, &cache, &w, true).unwrap();
            let eq = finite_diff_check(
                |t| weighted_sum(&attention_forward(t, &kv, &att).unwrap().0, &w),
                &q,
                &dq,
                1e-5,
            )
            .unwrap();
            let ekv = finite_diff_check(
                |t| weighted_sum(&attention_forward(&q, t, &att).unwrap().0, &w),
                &kv,
                &dkv.unwrap(),
                1e-5,
            )
            .unwrap();
            assert!(eq < 1e-4 && ekv < 1e-4, "{eq} {ekv}");
            type Pick = fn(&mut AttentionParams) -> &mut GradSlot;
            let picks: [Pick; 4] = [|p| &mut p.wq, |p| &mut p.wk, |p| &mut p.wv, |p| &mut p.wo];
            for pick in picks {
                let mut ag = a.clone();
                let analytic = pick(&mut ag).grad.clone();
                let mut av = att.clone();
                let at = pick(&mut av).value.clone();
                let e = finite_diff_check(
                    |t| {
                        let mut p = att.clone();
                        pick(&mut p).value = t.clone();
                        weighted_sum(&attention_forward(&q, &kv, &p).unwrap().0, &w)
                    },
                    &at,
                    &analytic,
                    1e-5,
                )
                .unwrap();
                assert!(e < 1e-4, "{e}");
            }
        }
    }

    fn small_config(n_aux: usize, aux_mode: AuxMode) -> ModelConfig {
        ModelConfig {
            d_model: 6,
            d_hidden: 8,
            n_layers: 2,
            n_queries: 2,
            num_classes: 3,
            n_aux,
            rank: 2,
            aux_mode,
            seed: 3,
        }
    }

    #[test]
    fn decoder_layer_shapes_and_zero_init_equivalence() {
        let m = Model::new(small_config(0, AuxMode::Lora)).unwrap();
        let x = uniform(&mut rng(7), 3, 6, 1.0);
        let (q, aux, _) = decoder_layer_forward(&m.query_embed.value, &x, &m.layers[0]).unwrap();
        assert!(aux.is_empty());
        assert_eq!(q.shape(), (2, 6));

        for mode in [AuxMode::Lora, AuxMode::FullFfn] {
            let m = Model::new(small_config(3, mode)).unwrap();
            let (q, aux, _) = decoder_layer_forward(&m.query_embed.value, &x, &m.layers[0]).unwrap();
            assert_eq!(aux.len(), 3);
            assert!(aux.iter().all(|a| *a == q));
        }
    }

    #[test]
    fn layer_gradient_matches_finite_differences() {
        let mut r = rng(8);
        let mut m = Model::new(small_config(2, AuxMode::Lora)).unwrap();
        if let AuxBranches::Lora(ads) = &mut m.layers[0].aux {
            ads.iter_mut().for_each(|a| randomize_adapter(a, &mut r));
        }
        let layer = m.layers[0].clone();
        let q = uniform(&mut r, 2, 6, 1.0);
        let x = uniform(&mut r, 3, 6, 1.0);
        let w: Vec<Tensor2D> = (0..3).map(|_| uniform(&mut r, 2, 6, 1.0)).collect();
        let objective = |layer: &DecoderLayer, q: &Tensor2D| {
            let (p, aux, _) = decoder_layer_forward(q, &x, layer).unwrap();
            weighted_sum(&p, &w[0]) + aux.iter().zip(&w[1..]).map(|(a, ww)| weighted_sum(a, ww)).sum::<f64>()
        };
        let (_, _, cache) = decoder_layer_forward(&q, &x, &layer).unwrap();
        let mut lg = layer.clone();
        let dq = decoder_layer_backward(&mut lg, &cache, &w[0], &[Some(w[1].clone()), Some(w[2].clone())]).unwrap();
        let e = finite_diff_check(|t| objective(&layer, t), &q, &dq, 1e-5).unwrap();
        assert!(e < 1e-4, "dq {e}");
        let e = finite_diff_check(
            |t| {
                let mut l = layer.clone();
                l.ffn.w1.value = t.clone();
                objective(&l, &q)
            },
            &layer.ffn.w1.value,
            &lg.ffn.w1.grad,
            1e-5,
        )
        .unwrap();
        assert!(e < 1e-4, "dW1 {e}");
        let e = finite_diff_check(
            |t| {
                let mut l = layer.clone();
                l.sa.wk.value = t.clone();
                objective(&l, &q)
            },
            &layer.sa.wk.value,
            &lg.sa.wk.grad,
            1e-5,
        )
        .unwrap();
        assert!(e < 1e-4, "sa dWk {e}");
    }

    #[test]
    fn model_output_shape_and_determinism() {
        let cfg = small_config(3, AuxMode::Lora);
        let m = Model::new(cfg).unwrap();
        let x = uniform(&mut rng(9), 4, 6, 1.0);
        let out = m.forward(&x).unwrap();
        assert_eq!(out.layers.len(), 2);
        assert!(out.layers.iter().all(|l| l.len() == 4));
        assert_eq!(out.final_primary().probs.shape(), (2, 3));
        assert_eq!(out.final_primary().boxes.shape(), (2, 4));
        assert_eq!(Model::new(cfg).unwrap().forward(&x).unwrap(), out);
        assert!(m.forward(&Tensor2D::zeros(4, 5)).is_err());
    }

    #[test]
    fn single_layer_model_is_layer_plus_heads() {
        let mut cfg = small_config(0, AuxMode::Lora);
        cfg.n_layers = 1;
        let m = Model::new(cfg).unwrap();
        let x = uniform(&mut rng(10), 4, 6, 1.0);
        let (q, _, _) = decoder_layer_forward(&m.query_embed.value, &x, &m.layers[0]).unwrap();
        let mut cls = matmul(&q, &m.heads.cls_w.value).unwrap();
        add_bias_in_place(&mut cls, &m.heads.cls_b.value).unwrap();
        assert_eq!(m.forward(&x).unwrap().final_primary().probs, sigmoid(&cls));
    }

    #[test]
    fn stripping_preserves_primary_and_is_idempotent() {
        let mut cfg = small_config(3, AuxMode::Lora);
        cfg.seed = 11;
        let mut m = Model::new(cfg).unwrap();
        let mut r = rng(12);
        for layer in &mut m.layers {
            if let AuxBranches::Lora(ads) = &mut layer.aux {
                ads.iter_mut().for_each(|a| randomize_adapter(a, &mut r));
            }
        }
        let s = m.strip_for_inference();
        assert_eq!(s.strip_for_inference(), s);
        assert_eq!(
            s.param_count(),
            Model::new(ModelConfig { n_aux: 0, ..cfg }).unwrap().param_count()
        );
        for _ in 0..10 {
            let x = uniform(&mut r, 5, 6, 2.0);
            let full = m.forward(&x).unwrap();
            let stripped = s.forward(&x).unwrap();
            for (fl, sl) in full.layers.iter().zip(&stripped.layers) {
                assert_eq!(sl.len(), 1);
                assert_eq!(fl[0], sl[0]);
            }
        }
    }

    #[test]
    fn parameter_counts_follow_closed_form() {
        for mode in [AuxMode::Lora, AuxMode::FullFfn] {
            for n_aux in [0, 1, 3] {
                for rank in [1, 2, 4] {
                    let cfg = ModelConfig {
                        n_aux,
                        rank,
                        aux_mode: mode,
                        ..small_config(0, mode)
                    };
                    assert_eq!(Model::new(cfg).unwrap().param_count(), expected_param_count(&cfg));
                }
            }
        }
        let c0 = ModelConfig::default();
        let base = expected_param_count(&ModelConfig { n_aux: 0, ..c0 }).total();
        let lora = expected_param_count(&ModelConfig { n_aux: 3, ..c0 }).total();
        assert_eq!(lora - base, 3 * c0.n_layers * 2 * c0.rank * (c0.d_model + c0.d_hidden));
        let full = expected_param_count(&ModelConfig {
            n_aux: 3,
            aux_mode: AuxMode::FullFfn,
            ..c0
        })
        .total();
        let ffn = FfnParams::zeros(c0.d_model, c0.d_hidden).num_params();
        assert_eq!(full - base, 3 * c0.n_layers * ffn);
        assert!(lora < full);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig {
            rank: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            rank: 33,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            n_queries: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            n_aux: 0,
            ..Default::default()
        }
        .validate()
        .is_ok());
        assert_eq!(AuxMode::parse("full_ffn").unwrap(), AuxMode::FullFfn);
        assert!(AuxMode::parse("fft").is_err());
    }
}
