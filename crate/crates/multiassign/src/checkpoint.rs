//! Text checkpoints: a versioned header, the model configuration, then one
//! named row-major tensor per parameter. Values use Rust's shortest
//! round-trip float formatting, so save/load is exact.
//!
//! ```text
//! multiassign-checkpoint v1
//! config d_model=32 d_hidden=64 n_layers=2 n_queries=20 num_classes=5 n_aux=3 rank=4 aux_mode=lora seed=0
//! tensor queries 20 32
//! 0.12 -0.5 ...
//! end
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use multiassign_core::model::{AuxMode, Model, ModelConfig, Parameters};
use multiassign_core::numerics::Tensor2D;

use crate::error::{io_err, AppError, AppResult};

pub const MAGIC: &str = "multiassign-checkpoint v1";

pub fn to_text(model: &Model) -> String {
    let c = &model.config;
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(
        s,
        "config d_model={} d_hidden={} n_layers={} n_queries={} num_classes={} n_aux={} rank={} aux_mode={} seed={}",
        c.d_model,
        c.d_hidden,
        c.n_layers,
        c.n_queries,
        c.num_classes,
        c.n_aux,
        c.rank,
        c.aux_mode.as_str(),
        c.seed
    );
    model.visit_params(&mut |name, _, p| {
        let (r, cols) = p.value.shape();
        let _ = writeln!(s, "tensor {name} {r} {cols}");
        for i in 0..r {
            let row: Vec<String> = p.value.row(i).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
    });
    s.push_str("end\n");
    s
}

fn parse_config(line: &str) -> Result<ModelConfig, String> {
    let rest = line.strip_prefix("config ").ok_or("missing config line")?;
    let mut c = ModelConfig::default();
    let mut seen = 0;
    for field in rest.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| format!("bad config field {field:?}"))?;
        let int = || v.parse::<usize>().map_err(|_| format!("bad value for {k}: {v:?}"));
        match k {
            "d_model" => c.d_model = int()?,
            "d_hidden" => c.d_hidden = int()?,
            "n_layers" => c.n_layers = int()?,
            "n_queries" => c.n_queries = int()?,
            "num_classes" => c.num_classes = int()?,
            "n_aux" => c.n_aux = int()?,
            "rank" => c.rank = int()?,
            "aux_mode" => c.aux_mode = AuxMode::parse(v).map_err(|e| e.to_string())?,
            "seed" => c.seed = v.parse().map_err(|_| format!("bad value for seed: {v:?}"))?,
            _ => return Err(format!("unknown config field {k:?}")),
        }
        seen += 1;
    }
    if seen != 9 {
        return Err(format!("config line has {seen} of 9 fields"));
    }
    Ok(c)
}

fn parse(text: &str) -> Result<Model, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == MAGIC => {}
        _ => return Err(format!("not a checkpoint (expected first line {MAGIC:?})")),
    }
    let (_, cfg_line) = lines.next().ok_or("missing config line")?;
    let mut model = Model::new(parse_config(cfg_line)?).map_err(|e| e.to_string())?;

    let mut tensors: BTreeMap<String, Tensor2D> = BTreeMap::new();
    let mut ended = false;
    while let Some((n, line)) = lines.next() {
        if line == "end" {
            ended = true;
            break;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [tag, name, r, c] = parts[..] else {
            return Err(format!("line {}: expected `tensor <name> <rows> <cols>`", n + 1));
        };
        if tag != "tensor" {
            return Err(format!("line {}: expected `tensor`, got {tag:?}", n + 1));
        }
        let bad = |_| format!("line {}: bad shape", n + 1);
        let (rows, cols): (usize, usize) = (r.parse().map_err(bad)?, c.parse().map_err(bad)?);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (m, row) = lines.next().ok_or_else(|| format!("tensor {name} is truncated"))?;
            let before = data.len();
            for tok in row.split_whitespace() {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|_| format!("line {}: bad number {tok:?}", m + 1))?,
                );
            }
            if data.len() - before != cols {
                return Err(format!("line {}: expected {cols} values for {name}", m + 1));
            }
        }
        let t = Tensor2D::from_vec(rows, cols, data).map_err(|e| e.to_string())?;
        if tensors.insert(name.to_string(), t).is_some() {
            return Err(format!("tensor {name} appears twice"));
        }
    }
    if !ended {
        return Err("missing `end` line".into());
    }

    let mut problem: Option<String> = None;
    model.visit_params_mut(&mut |name, _, p| {
        if problem.is_some() {
            return;
        }
        match tensors.remove(name) {
            None => problem = Some(format!("missing tensor {name}")),
            Some(t) if t.shape() != p.value.shape() => {
                problem = Some(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    p.value.shape()
                ))
            }
            Some(t) => p.value = t,
        }
    });
    if let Some(p) = problem {
        return Err(p);
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(format!("unexpected tensor {extra}"));
    }
    Ok(model)
}

pub fn from_text(text: &str, path: &Path) -> AppResult<Model> {
    parse(text).map_err(|message| AppError::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}

pub fn save(model: &Model, path: &Path) -> AppResult<()> {
    std::fs::write(path, to_text(model)).map_err(io_err(path))
}

pub fn load(path: &Path) -> AppResult<Model> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    from_text(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: AuxMode) -> Model {
        let mut m = Model::new(ModelConfig {
            d_model: 8,
            d_hidden: 12,
            n_queries: 5,
            num_classes: 3,
            rank: 2,
            aux_mode: mode,
            seed: 3,
            ..ModelConfig::default()
        })
        .unwrap();
        // make values awkward to print
        m.visit_params_mut(&mut |_, _, p| p.value.data_mut().iter_mut().for_each(|v| *v = *v / 3.0 + 1e-17));
        m
    }

    #[test]
    fn exact_round_trip() {
        for mode in [AuxMode::Lora, AuxMode::FullFfn] {
            let m = small(mode);
            let back = from_text(&to_text(&m), Path::new("mem")).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn stripped_checkpoint_omits_adapters() {
        let m = small(AuxMode::Lora);
        let full = to_text(&m);
        let stripped = to_text(&m.strip_for_inference());
        assert!(full.contains("adapter0"));
        assert!(!stripped.contains("adapter"));
        assert_eq!(from_text(&stripped, Path::new("mem")).unwrap(), m.strip_for_inference());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let text = to_text(&small(AuxMode::Lora));
        let p = Path::new("mem");
        assert!(from_text("hello", p).is_err());
        assert!(from_text(&text.replace("\nend\n", "\n"), p).is_err());
        assert!(from_text(&text.replacen("tensor queries 5 8", "tensor queries 5 7", 1), p).is_err());
        assert!(from_text(&text.replacen("tensor queries", "tensor kweries", 1), p).is_err());
        let e = from_text(&text.replacen("rank=2", "rank=0", 1), p)
            .unwrap_err()
            .to_string();
        assert!(e.contains("rank"), "{e}");
    }
}
