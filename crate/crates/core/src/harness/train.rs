//! Experiment configuration, the training loop and its metrics log.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assignment::{strategy_set, CostWeights, MatchConfig, DEFAULT_ALPHA, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::losses::{assign_all, total_loss, LossConfig};
use crate::model::{Model, ModelConfig};

use super::eval::{ap_metrics, detections, EvalConfig};
use super::optim::{Adam, AdamConfig};
use super::scene::{sample_scene, scene_set, SceneConfig, SyntheticScene};

/// Random stream for the training scenes (model init uses streams 0 and 1).
const TRAIN_DATA_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Diverse `k` per auxiliary branch instead of identical `k`.
    pub diverse: bool,
    /// Steps per logged epoch.
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            adam: AdamConfig::default(),
            seed: 0,
            diverse: true,
            eval_interval: 200,
        }
    }
}

/// One-to-many matching parameters. Per-branch lists override the shared
/// values and the `k` set derived from `n_aux` and `diverse`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSettings {
    pub alpha: f64,
    pub tau: f64,
    pub ks: Option<Vec<usize>>,
    pub alphas: Option<Vec<f64>>,
    pub taus: Option<Vec<f64>>,
}

impl Default for MatchSettings {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            tau: DEFAULT_TAU,
            ks: None,
            alphas: None,
            taus: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataConfig {
    pub grid: usize,
    pub noise: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub val_size: usize,
    pub val_seed: u64,
    /// Validation scenes used for the logged one-to-one loss of the primary branch.
    pub probe_size: usize,
    pub signal_scale: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            grid: 8,
            noise: 0.1,
            min_objects: 1,
            max_objects: 4,
            val_size: 200,
            val_seed: 1234,
            probe_size: 64,
            signal_scale: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// `model.seed` is ignored; `train.seed` seeds everything.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub matching: MatchSettings,
    pub loss: LossConfig,
    pub cost: CostWeights,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            matching: MatchSettings::default(),
            loss: LossConfig::default(),
            cost: CostWeights::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            seed: self.train.seed,
            ..self.model
        }
    }

    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig {
            grid: self.data.grid,
            num_classes: self.model.num_classes,
            d_model: self.model.d_model,
            noise: self.data.noise,
            min_objects: self.data.min_objects,
            max_objects: self.data.max_objects,
            signal_scale: self.data.signal_scale,
        }
    }

    /// One matching strategy per auxiliary branch.
    pub fn strategies(&self) -> Result<Vec<MatchConfig>> {
        let n = self.model.n_aux;
        let m = &self.matching;
        let mut out = match &m.ks {
            Some(ks) => ks
                .iter()
                .map(|&k| MatchConfig {
                    alpha: m.alpha,
                    tau: m.tau,
                    k,
                })
                .collect(),
            None => strategy_set(n, self.train.diverse, m.alpha, m.tau)?,
        };
        if out.len() != n {
            return Err(Error::Config(format!(
                "match.ks lists {} values for {n} auxiliary branches",
                out.len()
            )));
        }
        for (key, list) in [("match.alphas", &m.alphas), ("match.taus", &m.taus)] {
            if let Some(list) = list {
                if list.len() != n {
                    return Err(Error::Config(format!(
                        "{key} lists {} values for {n} auxiliary branches",
                        list.len()
                    )));
                }
                for (s, &v) in out.iter_mut().zip(list) {
                    if key == "match.alphas" {
                        s.alpha = v;
                    } else {
                        s.tau = v;
                    }
                }
            }
        }
        for s in &out {
            s.validate()?;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.scene_config().validate()?;
        self.train.adam.validate()?;
        self.loss.validate()?;
        self.cost.validate()?;
        self.strategies()?;
        if self.model.n_queries < self.data.max_objects {
            return Err(Error::Config(format!(
                "model.n_queries {} is below data.max_objects {}",
                self.model.n_queries, self.data.max_objects
            )));
        }
        let t = &self.train;
        if t.steps == 0 || t.batch_size == 0 || t.eval_interval == 0 {
            return Err(Error::Config(
                "train.steps, train.batch_size and train.eval_interval must be positive".into(),
            ));
        }
        if self.data.val_size == 0 || self.data.probe_size == 0 || self.data.probe_size > self.data.val_size {
            return Err(Error::Config("need 1 <= data.probe_size <= data.val_size".into()));
        }
        if !(0.0..1.0).contains(&self.eval.score_threshold) || !(0.0..=1.0).contains(&self.eval.nms_iou) {
            return Err(Error::Config(
                "eval.score_threshold must be in [0,1) and eval.nms_iou in [0,1]".into(),
            ));
        }
        Ok(())
    }

    /// The frozen validation scenes.
    pub fn validation_set(&self) -> Result<Vec<SyntheticScene>> {
        scene_set(self.data.val_seed, self.data.val_size, &self.scene_config())
    }
}

/// One CSV row: a branch's metrics for one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    /// 0 is the primary branch, `i + 1` auxiliary branch `i`.
    pub branch: usize,
    /// Training losses summed over layers, averaged over the epoch's scenes.
    pub loss_cls: f64,
    pub loss_box: f64,
    pub loss_total: f64,
    /// Primary-branch one-to-one loss on the probe scenes (same for every branch row).
    pub o2o_primary_loss: f64,
    pub ap50: f64,
    pub map: f64,
}

pub fn branch_label(branch: usize) -> String {
    if branch == 0 {
        String::from("primary")
    } else {
        format!("aux{}", branch - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
    /// Probe loss of the freshly initialized model.
    pub initial_o2o_primary_loss: f64,
}

impl MetricsLog {
    pub fn epochs(&self) -> usize {
        self.rows.last().map_or(0, |r| r.epoch)
    }

    pub fn final_rows(&self) -> impl Iterator<Item = &MetricsRow> {
        let last = self.epochs();
        self.rows.iter().filter(move |r| r.epoch == last)
    }

    pub fn final_o2o_primary_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.o2o_primary_loss)
    }

    pub fn final_row(&self, branch: usize) -> Option<&MetricsRow> {
        self.final_rows().find(|r| r.branch == branch)
    }
}

/// Primary-branch one-to-one loss (classification plus box, summed over
/// layers) averaged over `scenes`. Auxiliary branches are ignored.
pub fn primary_o2o_loss(model: &Model, scenes: &[SyntheticScene], cfg: &ExperimentConfig) -> Result<f64> {
    let stripped = model.strip_for_inference();
    let mut total = 0.0;
    for s in scenes {
        let out = stripped.forward(&s.features)?;
        let a = assign_all(&out, &s.gts, &cfg.cost, &[])?;
        let (report, _) = total_loss(&out, &s.gts, &a, &cfg.loss)?;
        total += report.primary().total;
    }
    Ok(total / scenes.len().max(1) as f64)
}

/// Losses of one optimizer step, per branch (summed over layers, averaged
/// over the batch).
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub grand_total: f64,
    pub cls: Vec<f64>,
    pub bbox: Vec<f64>,
    pub total: Vec<f64>,
    /// One-to-many positives per auxiliary branch (all layers, whole batch).
    pub aux_positives: Vec<usize>,
}

/// Divergence guard on the per-step loss.
pub const MAX_LOSS: f64 = 1e6;

/// Stateful single-run trainer.
pub struct Trainer {
    pub cfg: ExperimentConfig,
    pub model: Model,
    pub opt: Adam,
    strategies: Vec<MatchConfig>,
    scene_cfg: SceneConfig,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(cfg.model_config())?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        rng.set_stream(TRAIN_DATA_STREAM);
        Ok(Self {
            strategies: cfg.strategies()?,
            scene_cfg: cfg.scene_config(),
            opt: Adam::new(cfg.train.adam),
            cfg: cfg.clone(),
            model,
            rng,
            step: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn strategies(&self) -> &[MatchConfig] {
        &self.strategies
    }

    /// One optimizer step on a freshly drawn batch.
    pub fn step(&mut self) -> Result<StepReport> {
        let step = self.step;
        let nb = self.model.config.n_branches();
        let bs = self.cfg.train.batch_size;
        let inv = 1.0 / bs as f64;
        let mut rep = StepReport {
            step,
            grand_total: 0.0,
            cls: alloc::vec![0.0; nb],
            bbox: alloc::vec![0.0; nb],
            total: alloc::vec![0.0; nb],
            aux_positives: alloc::vec![0; nb - 1],
        };
        let fail = |reason: String| Error::Training { step, reason };
        for _ in 0..bs {
            let scene = sample_scene(&mut self.rng, &self.scene_cfg).map_err(|e| fail(format!("{e}")))?;
            let trace = self.model.forward_trace(&scene.features)?;
            let a = assign_all(&trace.output, &scene.gts, &self.cfg.cost, &self.strategies)?;
            for layer in &a.layers {
                for (i, r) in layer[1..].iter().enumerate() {
                    rep.aux_positives[i] += r.num_positives();
                }
            }
            let (report, mut grads) = total_loss(&trace.output, &scene.gts, &a, &self.cfg.loss)?;
            if !report.grand_total.is_finite() || report.grand_total > MAX_LOSS {
                return Err(fail(format!("loss diverged to {}", report.grand_total)));
            }
            for g in grads.iter_mut().flatten().flatten() {
                g.d_probs.scale(inv);
                g.d_boxes.scale(inv);
            }
            self.model.backward(&trace, &grads)?;
            rep.grand_total += inv * report.grand_total;
            for b in 0..nb {
                let l = report.branch_sum(b);
                rep.cls[b] += inv * self.cfg.loss.lambda_cls * l.cls;
                rep.bbox[b] += inv * l.box_total(&self.cfg.loss);
                rep.total[b] += inv * l.total;
            }
        }
        self.opt.step(&mut self.model).map_err(|e| fail(format!("{e}")))?;
        self.step += 1;
        Ok(rep)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: MetricsLog,
    pub model: Model,
}

/// Full training run. `on_epoch` sees each epoch's rows as they are logged.
pub fn train_with_progress(cfg: &ExperimentConfig, on_epoch: &mut dyn FnMut(&[MetricsRow])) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg)?;
    let val = cfg.validation_set()?;
    let probe = &val[..cfg.data.probe_size];
    let nb = trainer.model.config.n_branches();
    let mut log = MetricsLog {
        rows: Vec::new(),
        initial_o2o_primary_loss: primary_o2o_loss(&trainer.model, probe, cfg)?,
    };
    let mut epoch = 0;
    while trainer.steps_done() < cfg.train.steps {
        epoch += 1;
        let n = cfg.train.eval_interval.min(cfg.train.steps - trainer.steps_done());
        let mut sums = alloc::vec![[0.0f64; 3]; nb];
        for _ in 0..n {
            let r = trainer.step()?;
            for b in 0..nb {
                sums[b][0] += r.cls[b];
                sums[b][1] += r.bbox[b];
                sums[b][2] += r.total[b];
            }
        }
        let o2o = primary_o2o_loss(&trainer.model, probe, cfg)?;
        let aps = branch_aps(&trainer.model, &val, &cfg.eval)?;
        let start = log.rows.len();
        for (b, (s, ap)) in sums.iter().zip(&aps).enumerate() {
            log.rows.push(MetricsRow {
                epoch,
                branch: b,
                loss_cls: s[0] / n as f64,
                loss_box: s[1] / n as f64,
                loss_total: s[2] / n as f64,
                o2o_primary_loss: o2o,
                ap50: ap.0,
                map: ap.1,
            });
        }
        on_epoch(&log.rows[start..]);
    }
    Ok(TrainOutcome {
        log,
        model: trainer.model,
    })
}

pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    train_with_progress(cfg, &mut |_| {})
}

/// `(AP50, mAP)` of every branch from one forward pass per scene: primary
/// without NMS, auxiliaries with class-wise NMS.
pub fn branch_aps(model: &Model, scenes: &[SyntheticScene], eval: &EvalConfig) -> Result<Vec<(f64, f64)>> {
    let nb = model.config.n_branches();
    let mut dets: Vec<Vec<Vec<_>>> = (0..nb).map(|_| Vec::with_capacity(scenes.len())).collect();
    for s in scenes {
        let out = model.forward(&s.features)?;
        let last = out.layers.last().expect("at least one layer");
        for (b, branch) in last.iter().enumerate() {
            dets[b].push(detections(branch, eval.score_threshold, b > 0, eval.nms_iou));
        }
    }
    let gts: Vec<&[_]> = scenes.iter().map(|s| s.gts.as_slice()).collect();
    dets.iter()
        .map(|d| ap_metrics(d, &gts, model.config.num_classes).map(|r| (r.ap50, r.map)))
        .collect()
}
