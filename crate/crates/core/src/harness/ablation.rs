//! Ablation grid: cells over auxiliary count, `k` diversity, branch mode and
//! rank, each trained on a shared seed set and summarized by medians.
//!
//! Jobs are independent `(cell, seed)` pairs, so any executor (serial here,
//! threads in the std crate) produces the same table.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{expected_param_count, AuxMode};

use super::train::{train, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationCell {
    pub n_aux: usize,
    pub diverse: bool,
    pub aux_mode: AuxMode,
    pub rank: usize,
}

impl AblationCell {
    /// Collapses settings that cannot affect training: `diverse` below two
    /// branches and the branch mode without any branch.
    pub fn canonical(self) -> Self {
        Self {
            diverse: self.diverse && self.n_aux >= 2,
            aux_mode: if self.n_aux == 0 { AuxMode::Lora } else { self.aux_mode },
            ..self
        }
    }

    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        c.model.n_aux = self.n_aux;
        c.model.aux_mode = self.aux_mode;
        c.model.rank = self.rank;
        c.train.diverse = self.diverse;
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub n_aux: Vec<usize>,
    pub diverse: Vec<bool>,
    pub aux_mode: Vec<AuxMode>,
    pub rank: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_aux: alloc::vec![0, 1, 3],
            diverse: alloc::vec![true, false],
            aux_mode: alloc::vec![AuxMode::Lora],
            rank: alloc::vec![4],
            seeds: alloc::vec![0, 1, 2, 3, 4],
        }
    }
}

impl GridSpec {
    /// Distinct canonical cells in grid order.
    pub fn cells(&self) -> Result<Vec<AblationCell>> {
        if self.n_aux.is_empty() || self.diverse.is_empty() || self.aux_mode.is_empty() || self.rank.is_empty() {
            return Err(Error::Config("ablation grid has an empty axis".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("ablation grid needs at least one seed".into()));
        }
        let mut out: Vec<AblationCell> = Vec::new();
        for &n_aux in &self.n_aux {
            for &diverse in &self.diverse {
                for &aux_mode in &self.aux_mode {
                    for &rank in &self.rank {
                        let c = AblationCell {
                            n_aux,
                            diverse,
                            aux_mode,
                            rank,
                        }
                        .canonical();
                        if !out.contains(&c) {
                            out.push(c);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Every `(cell index, seed)` job.
    pub fn jobs(&self) -> Result<Vec<(usize, u64)>> {
        let cells = self.cells()?;
        Ok((0..cells.len())
            .flat_map(|c| self.seeds.iter().map(move |&s| (c, s)))
            .collect())
    }
}

/// Final numbers of one training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub initial_o2o_loss: f64,
    pub final_o2o_loss: f64,
    pub final_ap50: f64,
}

pub fn run_cell_seed(base: &ExperimentConfig, cell: &AblationCell, seed: u64) -> Result<RunSummary> {
    let mut cfg = cell.apply(base);
    cfg.train.seed = seed;
    let out = train(&cfg)?;
    let last = out.log.final_row(0).expect("at least one epoch");
    Ok(RunSummary {
        seed,
        initial_o2o_loss: out.log.initial_o2o_primary_loss,
        final_o2o_loss: last.o2o_primary_loss,
        final_ap50: last.ap50,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: AblationCell,
    pub seed_count: usize,
    pub median_o2o_loss: f64,
    pub median_ap50: f64,
    /// Trainable parameters including auxiliary branches.
    pub param_count: usize,
    pub runs: Vec<RunSummary>,
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn summarize(base: &ExperimentConfig, cell: AblationCell, mut runs: Vec<RunSummary>) -> CellResult {
    runs.sort_by_key(|r| r.seed);
    let losses: Vec<f64> = runs.iter().map(|r| r.final_o2o_loss).collect();
    let aps: Vec<f64> = runs.iter().map(|r| r.final_ap50).collect();
    CellResult {
        cell,
        seed_count: runs.len(),
        median_o2o_loss: median(&losses),
        median_ap50: median(&aps),
        param_count: expected_param_count(&cell.apply(base).model_config()).total(),
        runs,
    }
}

/// Runs the whole grid serially.
pub fn run_ablation(base: &ExperimentConfig, grid: &GridSpec) -> Result<Vec<CellResult>> {
    let cells = grid.cells()?;
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        let runs = grid
            .seeds
            .iter()
            .map(|&s| run_cell_seed(base, &cell, s))
            .collect::<Result<Vec<_>>>()?;
        out.push(summarize(base, cell, runs));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.model.d_model = 16;
        c.model.d_hidden = 24;
        c.model.n_queries = 8;
        c.model.num_classes = 3;
        c.model.rank = 2;
        c.train.steps = 4;
        c.train.batch_size = 1;
        c.train.eval_interval = 2;
        c.data.val_size = 6;
        c.data.probe_size = 3;
        c
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn cells_are_canonical_and_distinct() {
        let g = GridSpec {
            n_aux: alloc::vec![0, 1, 3],
            diverse: alloc::vec![true, false],
            aux_mode: alloc::vec![AuxMode::Lora, AuxMode::FullFfn],
            rank: alloc::vec![2],
            seeds: alloc::vec![0],
        };
        let cells = g.cells().unwrap();
        // n_aux=0: 1 cell; n_aux=1: 2 modes; n_aux=3: 2 x 2
        assert_eq!(cells.len(), 7);
        assert!(GridSpec {
            seeds: alloc::vec![],
            ..g.clone()
        }
        .cells()
        .is_err());
        assert!(GridSpec {
            rank: alloc::vec![],
            ..g
        }
        .cells()
        .is_err());
    }

    #[test]
    fn single_cell_grid_reproduces_train() {
        let base = tiny();
        let grid = GridSpec {
            n_aux: alloc::vec![1],
            diverse: alloc::vec![false],
            aux_mode: alloc::vec![AuxMode::Lora],
            rank: alloc::vec![2],
            seeds: alloc::vec![7],
        };
        let res = run_ablation(&base, &grid).unwrap();
        assert_eq!(res.len(), 1);
        let mut cfg = res[0].cell.apply(&base);
        cfg.train.seed = 7;
        let direct = train(&cfg).unwrap();
        assert_eq!(Some(res[0].median_o2o_loss), direct.log.final_o2o_primary_loss());
        assert_eq!(res[0].median_ap50, direct.log.final_row(0).unwrap().ap50);
    }

    #[test]
    fn baseline_cell_counts_match_stripped_model() {
        let base = tiny();
        let zero = AblationCell {
            n_aux: 0,
            diverse: false,
            aux_mode: AuxMode::Lora,
            rank: 2,
        };
        let res = summarize(&base, zero, Vec::new());
        let mut with_aux = base.clone();
        with_aux.model.n_aux = 3;
        let stripped = Model::new(with_aux.model_config()).unwrap().strip_for_inference();
        assert_eq!(res.param_count, stripped.param_count().total());
    }
}
