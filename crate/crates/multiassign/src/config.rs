//! Layered run configuration: defaults, then a `key = value` file, then
//! command-line overrides. Every key is dotted (`model.rank`); unknown keys
//! and malformed values are errors that name the key.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use multiassign_core::harness::{ExperimentConfig, GridSpec};
use multiassign_core::model::AuxMode;

use crate::error::{config_err, io_err, AppError, AppResult};

/// File name of the echoed configuration inside the output directory.
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub exp: ExperimentConfig,
    pub grid: GridSpec,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            exp: ExperimentConfig::default(),
            grid: GridSpec::default(),
            out: PathBuf::from("runs/latest"),
        }
    }
}

fn scalar<T: FromStr>(key: &str, value: &str, what: &str) -> AppResult<T> {
    value
        .trim()
        .parse()
        .map_err(|_| config_err(key, format!("expected {what}, got {value:?}")))
}

fn boolean(key: &str, value: &str) -> AppResult<bool> {
    match value.trim() {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        _ => Err(config_err(key, format!("expected true or false, got {value:?}"))),
    }
}

fn aux_mode(key: &str, value: &str) -> AppResult<AuxMode> {
    AuxMode::parse(value.trim()).map_err(|_| config_err(key, format!("expected lora or full_ffn, got {value:?}")))
}

fn list<T>(key: &str, value: &str, item: impl Fn(&str, &str) -> AppResult<T>) -> AppResult<Vec<T>> {
    let v = value.trim();
    if v.is_empty() {
        return Err(config_err(key, "expected a comma-separated list"));
    }
    v.split(',').map(|s| item(key, s)).collect()
}

/// `auto` means "derive from the other settings".
fn optional_list<T>(key: &str, value: &str, item: impl Fn(&str, &str) -> AppResult<T>) -> AppResult<Option<Vec<T>>> {
    if value.trim() == "auto" {
        Ok(None)
    } else {
        list(key, value, item).map(Some)
    }
}

fn usize_item(key: &str, s: &str) -> AppResult<usize> {
    scalar(key, s, "a nonnegative integer")
}

fn u64_item(key: &str, s: &str) -> AppResult<u64> {
    scalar(key, s, "a nonnegative integer")
}

fn f64_item(key: &str, s: &str) -> AppResult<f64> {
    scalar(key, s, "a number")
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn join_opt<T: Display>(items: &Option<Vec<T>>) -> String {
    items.as_deref().map_or_else(|| "auto".to_string(), join)
}

impl RunConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> AppResult<()> {
        let e = &mut self.exp;
        let g = &mut self.grid;
        let int = |v: &str| scalar::<usize>(key, v, "a nonnegative integer");
        let num = |v: &str| scalar::<f64>(key, v, "a number");
        match key {
            "out" => self.out = PathBuf::from(value.trim()),
            "model.d_model" => e.model.d_model = int(value)?,
            "model.d_hidden" => e.model.d_hidden = int(value)?,
            "model.n_layers" => e.model.n_layers = int(value)?,
            "model.n_queries" => e.model.n_queries = int(value)?,
            "model.num_classes" => e.model.num_classes = int(value)?,
            "model.n_aux" => e.model.n_aux = int(value)?,
            "model.rank" => e.model.rank = int(value)?,
            "model.aux_mode" => e.model.aux_mode = aux_mode(key, value)?,
            "train.steps" => e.train.steps = int(value)?,
            "train.batch_size" => e.train.batch_size = int(value)?,
            "train.seed" => e.train.seed = scalar(key, value, "a nonnegative integer")?,
            "train.diverse" => e.train.diverse = boolean(key, value)?,
            "train.eval_interval" => e.train.eval_interval = int(value)?,
            "train.lr" => e.train.adam.lr = num(value)?,
            "train.beta1" => e.train.adam.beta1 = num(value)?,
            "train.beta2" => e.train.adam.beta2 = num(value)?,
            "train.eps" => e.train.adam.eps = num(value)?,
            "train.box_head_lr_mult" => e.train.adam.box_head_lr_mult = num(value)?,
            "match.alpha" => e.matching.alpha = num(value)?,
            "match.tau" => e.matching.tau = num(value)?,
            "match.ks" => e.matching.ks = optional_list(key, value, usize_item)?,
            "match.alphas" => e.matching.alphas = optional_list(key, value, f64_item)?,
            "match.taus" => e.matching.taus = optional_list(key, value, f64_item)?,
            "loss.gamma" => e.loss.gamma = num(value)?,
            "loss.lambda_cls" => e.loss.lambda_cls = num(value)?,
            "loss.lambda_l1" => e.loss.lambda_l1 = num(value)?,
            "loss.lambda_giou" => e.loss.lambda_giou = num(value)?,
            "loss.aux_weight" => e.loss.aux_weight = num(value)?,
            "cost.lambda_cls" => e.cost.lambda_cls = num(value)?,
            "cost.lambda_l1" => e.cost.lambda_l1 = num(value)?,
            "cost.lambda_giou" => e.cost.lambda_giou = num(value)?,
            "data.grid" => e.data.grid = int(value)?,
            "data.noise" => e.data.noise = num(value)?,
            "data.signal_scale" => e.data.signal_scale = num(value)?,
            "data.min_objects" => e.data.min_objects = int(value)?,
            "data.max_objects" => e.data.max_objects = int(value)?,
            "data.val_size" => e.data.val_size = int(value)?,
            "data.val_seed" => e.data.val_seed = scalar(key, value, "a nonnegative integer")?,
            "data.probe_size" => e.data.probe_size = int(value)?,
            "eval.score_threshold" => e.eval.score_threshold = num(value)?,
            "eval.nms_iou" => e.eval.nms_iou = num(value)?,
            "ablate.n_aux" => g.n_aux = list(key, value, usize_item)?,
            "ablate.diverse" => g.diverse = list(key, value, boolean)?,
            "ablate.aux_mode" => g.aux_mode = list(key, value, aux_mode)?,
            "ablate.rank" => g.rank = list(key, value, usize_item)?,
            "ablate.seeds" => g.seeds = list(key, value, u64_item)?,
            _ => return Err(config_err(key, "unknown key")),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let e = &self.exp;
        let g = &self.grid;
        vec![
            ("out", self.out.display().to_string()),
            ("model.d_model", e.model.d_model.to_string()),
            ("model.d_hidden", e.model.d_hidden.to_string()),
            ("model.n_layers", e.model.n_layers.to_string()),
            ("model.n_queries", e.model.n_queries.to_string()),
            ("model.num_classes", e.model.num_classes.to_string()),
            ("model.n_aux", e.model.n_aux.to_string()),
            ("model.rank", e.model.rank.to_string()),
            ("model.aux_mode", e.model.aux_mode.as_str().to_string()),
            ("train.steps", e.train.steps.to_string()),
            ("train.batch_size", e.train.batch_size.to_string()),
            ("train.seed", e.train.seed.to_string()),
            ("train.diverse", e.train.diverse.to_string()),
            ("train.eval_interval", e.train.eval_interval.to_string()),
            ("train.lr", e.train.adam.lr.to_string()),
            ("train.beta1", e.train.adam.beta1.to_string()),
            ("train.beta2", e.train.adam.beta2.to_string()),
            ("train.eps", e.train.adam.eps.to_string()),
            ("train.box_head_lr_mult", e.train.adam.box_head_lr_mult.to_string()),
            ("match.alpha", e.matching.alpha.to_string()),
            ("match.tau", e.matching.tau.to_string()),
            ("match.ks", join_opt(&e.matching.ks)),
            ("match.alphas", join_opt(&e.matching.alphas)),
            ("match.taus", join_opt(&e.matching.taus)),
            ("loss.gamma", e.loss.gamma.to_string()),
            ("loss.lambda_cls", e.loss.lambda_cls.to_string()),
            ("loss.lambda_l1", e.loss.lambda_l1.to_string()),
            ("loss.lambda_giou", e.loss.lambda_giou.to_string()),
            ("loss.aux_weight", e.loss.aux_weight.to_string()),
            ("cost.lambda_cls", e.cost.lambda_cls.to_string()),
            ("cost.lambda_l1", e.cost.lambda_l1.to_string()),
            ("cost.lambda_giou", e.cost.lambda_giou.to_string()),
            ("data.grid", e.data.grid.to_string()),
            ("data.noise", e.data.noise.to_string()),
            ("data.signal_scale", e.data.signal_scale.to_string()),
            ("data.min_objects", e.data.min_objects.to_string()),
            ("data.max_objects", e.data.max_objects.to_string()),
            ("data.val_size", e.data.val_size.to_string()),
            ("data.val_seed", e.data.val_seed.to_string()),
            ("data.probe_size", e.data.probe_size.to_string()),
            ("eval.score_threshold", e.eval.score_threshold.to_string()),
            ("eval.nms_iou", e.eval.nms_iou.to_string()),
            ("ablate.n_aux", join(&g.n_aux)),
            ("ablate.diverse", join(&g.diverse)),
            (
                "ablate.aux_mode",
                g.aux_mode.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","),
            ),
            ("ablate.rank", join(&g.rank)),
            ("ablate.seeds", join(&g.seeds)),
        ]
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> AppResult<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| AppError::Invalid(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> AppResult<()> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        self.apply_text(&text)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> AppResult<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| AppError::Invalid(format!("override {kv:?} is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    /// Checks cross-field constraints.
    pub fn validate(&self) -> AppResult<()> {
        self.exp.validate()?;
        if self.grid.seeds.is_empty() {
            return Err(config_err("ablate.seeds", "needs at least one seed"));
        }
        Ok(())
    }

    /// The resolved configuration as a loadable file.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    /// Writes [`RESOLVED_CONFIG_FILE`] into the output directory.
    pub fn write_resolved(&self) -> AppResult<PathBuf> {
        std::fs::create_dir_all(&self.out).map_err(io_err(&self.out))?;
        let path = self.out.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_text()).map_err(io_err(&path))?;
        Ok(path)
    }
}
