//! Label assignment: Hungarian one-to-one matching for the primary branch
//! and score-thresholded top-k one-to-many matching for auxiliary branches.
//!
//! One-to-many matching ranks query/ground-truth pairs by the matching score
//! `M = alpha * c[gt_class] + (1 - alpha) * IoU(pred, gt)`. Each query is
//! first bound to its best ground truth, then every ground truth keeps at most
//! `k` of its bound queries whose score is strictly above `tau`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{giou, iou, l1_box, BoxCXCYWH};
use crate::numerics::Tensor2D;

/// One query's decoded output: per-class probabilities and a box.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_scores: Vec<f64>,
    pub bbox: BoxCXCYWH,
}

/// An annotated object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub class_index: usize,
    pub bbox: BoxCXCYWH,
}

/// One-to-many strategy parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    pub alpha: f64,
    pub tau: f64,
    pub k: usize,
}

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_TAU: f64 = 0.3;

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            tau: DEFAULT_TAU,
            k: 6,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.tau) || self.k == 0 {
            return Err(Error::Config(format!(
                "match config needs alpha, tau in [0,1] and k >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Weights of the three Hungarian cost terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub lambda_cls: f64,
    pub lambda_l1: f64,
    pub lambda_giou: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            lambda_cls: 2.0,
            lambda_l1: 5.0,
            lambda_giou: 2.0,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda_cls, self.lambda_l1, self.lambda_giou];
        if w.iter().any(|v| !(*v >= 0.0)) || w.iter().all(|v| *v == 0.0) {
            return Err(Error::Config(format!(
                "cost weights must be nonnegative with one positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    OneToOne,
    OneToMany,
}

/// A positive sample: query `query` supervised by ground truth `gt` with
/// soft classification target `quality`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub query: usize,
    pub gt: usize,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub pairs: Vec<MatchedPair>,
    pub flavor: Flavor,
}

impl AssignmentResult {
    pub fn empty(flavor: Flavor) -> Self {
        Self {
            pairs: Vec::new(),
            flavor,
        }
    }

    pub fn num_positives(&self) -> usize {
        self.pairs.len()
    }
}

/// Minimum-cost assignment of every column (ground truth) to a distinct row
/// (query).
///
/// `cost` is `num_queries x num_gts` with `num_queries >= num_gts`. The
/// result is sorted by ground-truth index; among equal-cost optima the query
/// sequence read in ground-truth order is lexicographically smallest.
pub fn hungarian(cost: &Tensor2D) -> Result<Vec<(usize, usize)>> {
    let (nq, ng) = cost.shape();
    if !cost.is_finite() {
        return Err(Error::Validation("cost matrix contains non-finite entries".into()));
    }
    if ng > nq {
        return Err(Error::Capacity { gts: ng, queries: nq });
    }
    if ng == 0 {
        return Ok(Vec::new());
    }

    let all_q: Vec<usize> = (0..nq).collect();
    let gts: Vec<usize> = (0..ng).collect();
    let (best, mut current) = solve_subproblem(cost, &gts, &all_q);
    let tol = 1e-9 * (1.0 + best.abs());

    // Fix ground truths one at a time to the smallest query that still admits
    // an optimal completion.
    let mut used = vec![false; nq];
    let mut fixed_cost = 0.0;
    let mut result = Vec::with_capacity(ng);
    for g in 0..ng {
        let rest_g: Vec<usize> = (g + 1..ng).collect();
        for q in 0..current[0] {
            if used[q] {
                continue;
            }
            let rest_q: Vec<usize> = (0..nq).filter(|&i| !used[i] && i != q).collect();
            let (sub, sub_assign) = solve_subproblem(cost, &rest_g, &rest_q);
            if fixed_cost + cost.get(q, g) + sub <= best + tol {
                current = core::iter::once(q).chain(sub_assign).collect();
                break;
            }
        }
        let q = current[0];
        used[q] = true;
        fixed_cost += cost.get(q, g);
        result.push((q, g));
        // `current` now covers ground truths g+1.. only
        current.remove(0);
    }
    Ok(result)
}

/// Shortest-augmenting-path Hungarian method over the given ground-truth
/// columns and query rows. Returns the optimal cost and, for each entry of
/// `gts`, the assigned query.
fn solve_subproblem(cost: &Tensor2D, gts: &[usize], queries: &[usize]) -> (f64, Vec<usize>) {
    let n = gts.len();
    let m = queries.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let a = |i: usize, j: usize| cost.get(queries[j - 1], gts[i - 1]);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![inf; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = inf);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assign = vec![0usize; n];
    for j in 1..=m {
        if p[j] > 0 {
            assign[p[j] - 1] = queries[j - 1];
        }
    }
    let total = gts.iter().zip(&assign).map(|(&g, &q)| cost.get(q, g)).sum();
    (total, assign)
}

/// Total cost of a pair list, summed in ground-truth order.
pub fn assignment_cost(cost: &Tensor2D, pairs: &[(usize, usize)]) -> f64 {
    let mut sorted = pairs.to_vec();
    sorted.sort_by_key(|&(_, g)| g);
    sorted.iter().map(|&(q, g)| cost.get(q, g)).sum()
}

fn class_score(p: &Prediction, gt: &GroundTruth) -> Result<f64> {
    p.class_scores.get(gt.class_index).copied().ok_or_else(|| {
        Error::Validation(format!(
            "ground-truth class {} out of range for {} class scores",
            gt.class_index,
            p.class_scores.len()
        ))
    })
}

/// Hungarian cost matrix (`num_queries x num_gts`).
pub fn o2o_cost(preds: &[Prediction], gts: &[GroundTruth], w: &CostWeights) -> Result<Tensor2D> {
    if preds.is_empty() {
        return Err(Error::Validation("no predictions to match".into()));
    }
    let mut cost = Tensor2D::zeros(preds.len(), gts.len());
    for (i, p) in preds.iter().enumerate() {
        let pb = p.bbox.to_xyxy();
        for (j, g) in gts.iter().enumerate() {
            let c = class_score(p, g)?;
            let (l1, _) = l1_box(&p.bbox, &g.bbox);
            let gi = giou(&pb, &g.bbox.to_xyxy());
            cost.set(
                i,
                j,
                w.lambda_cls * (1.0 - c) + w.lambda_l1 * l1 + w.lambda_giou * (1.0 - gi),
            );
        }
    }
    Ok(cost)
}

/// One-to-one assignment; the quality target of each pair is the IoU between
/// the matched prediction and its ground truth.
pub fn o2o_assign(preds: &[Prediction], gts: &[GroundTruth], w: &CostWeights) -> Result<AssignmentResult> {
    if gts.is_empty() {
        return Ok(AssignmentResult::empty(Flavor::OneToOne));
    }
    let cost = o2o_cost(preds, gts, w)?;
    let pairs = hungarian(&cost)?
        .into_iter()
        .map(|(q, g)| MatchedPair {
            query: q,
            gt: g,
            quality: iou(&preds[q].bbox.to_xyxy(), &gts[g].bbox.to_xyxy()),
        })
        .collect();
    Ok(AssignmentResult {
        pairs,
        flavor: Flavor::OneToOne,
    })
}

/// Matching score between a prediction and a ground truth.
pub fn match_score(p: &Prediction, y: &GroundTruth, alpha: f64) -> Result<f64> {
    let c = class_score(p, y)?;
    let i = iou(&p.bbox.to_xyxy(), &y.bbox.to_xyxy());
    Ok(alpha * c + (1.0 - alpha) * i)
}

/// One-to-many assignment; quality targets are the matching scores.
pub fn o2m_assign(preds: &[Prediction], gts: &[GroundTruth], cfg: &MatchConfig) -> Result<AssignmentResult> {
    cfg.validate()?;
    if gts.is_empty() {
        return Ok(AssignmentResult::empty(Flavor::OneToMany));
    }
    // candidates[g] = (score, query) for queries whose best ground truth is g
    let mut candidates: Vec<Vec<(f64, usize)>> = vec![Vec::new(); gts.len()];
    for (q, p) in preds.iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (g, y) in gts.iter().enumerate() {
            let m = match_score(p, y, cfg.alpha)?;
            if m > best.0 {
                best = (m, g);
            }
        }
        if best.0 > cfg.tau {
            candidates[best.1].push((best.0, q));
        }
    }
    let mut pairs = Vec::new();
    for (g, mut cands) in candidates.into_iter().enumerate() {
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        pairs.extend(cands.into_iter().take(cfg.k).map(|(m, q)| MatchedPair {
            query: q,
            gt: g,
            quality: m,
        }));
    }
    Ok(AssignmentResult {
        pairs,
        flavor: Flavor::OneToMany,
    })
}

/// One-to-many strategies for `n_aux` auxiliary branches, with identical
/// (`k = 6` everywhere) or diverse `k` values.
pub fn strategy_set(n_aux: usize, diverse: bool, alpha: f64, tau: f64) -> Result<Vec<MatchConfig>> {
    let ks: &[usize] = match (n_aux, diverse) {
        (0, _) => &[],
        (1, _) => &[6],
        (2, false) => &[6, 6],
        (3, false) => &[6, 6, 6],
        (2, true) => &[3, 6],
        (3, true) => &[2, 4, 6],
        (5, true) => &[2, 3, 4, 5, 6],
        _ => {
            return Err(Error::Config(format!(
                "no {} k-set for {n_aux} auxiliary branches",
                if diverse { "diverse" } else { "identical" }
            )))
        }
    };
    ks.iter()
        .map(|&k| {
            let c = MatchConfig { alpha, tau, k };
            c.validate().map(|_| c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive minimum over injective maps gts -> queries.
    fn brute_force_min(cost: &Tensor2D) -> f64 {
        fn rec(cost: &Tensor2D, g: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if g == cost.cols() {
                *best = best.min(acc);
                return;
            }
            for q in 0..cost.rows() {
                if !used[q] {
                    used[q] = true;
                    rec(cost, g + 1, used, acc + cost.get(q, g), best);
                    used[q] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.rows()], 0.0, &mut best);
        best
    }

    fn pred(scores: &[f64], b: [f64; 4]) -> Prediction {
        Prediction {
            class_scores: scores.to_vec(),
            bbox: BoxCXCYWH::from_array(b),
        }
    }

    fn gt(c: usize, b: [f64; 4]) -> GroundTruth {
        GroundTruth {
            class_index: c,
            bbox: BoxCXCYWH::from_array(b),
        }
    }

    #[test]
    fn hungarian_small_cases() {
        let c = Tensor2D::from_rows(&[&[1.0, 2.0], &[3.0, 1.0]]).unwrap();
        let m = hungarian(&c).unwrap();
        assert_eq!(m, vec![(0, 0), (1, 1)]);
        assert_eq!(assignment_cost(&c, &m), 2.0);

        let mut c = Tensor2D::filled(4, 4, 1.0);
        for i in 0..4 {
            c.set(i, i, 0.0);
        }
        assert_eq!(hungarian(&c).unwrap(), vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn hungarian_errors() {
        assert_eq!(
            hungarian(&Tensor2D::zeros(2, 3)).unwrap_err(),
            Error::Capacity { gts: 3, queries: 2 }
        );
        let mut c = Tensor2D::zeros(2, 2);
        c.set(0, 1, f64::NAN);
        assert!(matches!(hungarian(&c), Err(Error::Validation(_))));
        assert!(hungarian(&Tensor2D::zeros(3, 0)).unwrap().is_empty());
    }

    #[test]
    fn hungarian_equal_cost_tie_break_is_lexicographic() {
        // every matching costs the same
        let c = Tensor2D::filled(5, 3, 1.0);
        assert_eq!(hungarian(&c).unwrap(), vec![(0, 0), (1, 1), (2, 2)]);
        // two optima of cost 2: {(1,0),(0,1)} and {(0,0),(1,1)}
        let c = Tensor2D::from_rows(&[&[1.0, 1.0], &[1.0, 1.0], &[5.0, 5.0]]).unwrap();
        assert_eq!(hungarian(&c).unwrap(), vec![(0, 0), (1, 1)]);
        let c = Tensor2D::from_rows(&[&[9.0, 0.0], &[0.0, 9.0], &[0.0, 0.0]]).unwrap();
        assert_eq!(hungarian(&c).unwrap(), vec![(1, 0), (0, 1)]);
    }

    #[test]
    fn hungarian_matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..200 {
            let ng = rng.random_range(1..=6);
            let nq = if trial % 2 == 0 { ng } else { rng.random_range(ng..=8) };
            let data = (0..nq * ng).map(|_| rng.random_range(0.0..10.0)).collect();
            let c = Tensor2D::from_vec(nq, ng, data).unwrap();
            let m = hungarian(&c).unwrap();
            assert_eq!(m.len(), ng);
            let mut qs: Vec<usize> = m.iter().map(|p| p.0).collect();
            qs.sort();
            qs.dedup();
            assert_eq!(qs.len(), ng);
            assert_eq!(assignment_cost(&c, &m), brute_force_min(&c));
        }
    }

    #[test]
    fn cost_matrix_terms() {
        let b = [0.5, 0.5, 0.2, 0.2];
        let perfect = o2o_cost(&[pred(&[0.0, 1.0], b)], &[gt(1, b)], &CostWeights::default()).unwrap();
        assert_eq!(perfect.get(0, 0), 0.0);

        let w = CostWeights {
            lambda_cls: 1.0,
            lambda_l1: 0.0,
            lambda_giou: 0.0,
        };
        let c = o2o_cost(&[pred(&[0.3], [0.2, 0.2, 0.1, 0.1])], &[gt(0, b)], &w).unwrap();
        assert!((c.get(0, 0) - 0.7).abs() < 1e-15);

        // hand case: score 0.6, pred [0.5,0.5,0.2,0.2] vs gt [0.55,0.5,0.2,0.2]
        // l1 = 0.05; xyxy pred [0.4,0.4,0.6,0.6], gt [0.45,0.4,0.65,0.6]
        // inter 0.15*0.2 = 0.03, union 0.08-0.03 = 0.05, hull 0.25*0.2 = 0.05
        // giou = 0.6 - 0 = 0.6; cost = 2*0.4 + 5*0.05 + 2*0.4 = 1.85
        let c = o2o_cost(
            &[pred(&[0.6], b)],
            &[gt(0, [0.55, 0.5, 0.2, 0.2])],
            &CostWeights::default(),
        )
        .unwrap();
        assert!((c.get(0, 0) - 1.85).abs() < 1e-12, "{}", c.get(0, 0));

        assert!(o2o_cost(&[], &[gt(0, b)], &CostWeights::default()).is_err());
        assert!(o2o_cost(&[pred(&[0.3], b)], &[gt(2, b)], &CostWeights::default()).is_err());
    }

    #[test]
    fn matching_score_arithmetic() {
        // IoU 0.6: pred [0,0,0.4,0.4] vs gt shifted by 0.1 in x
        let p = pred(&[0.8], [0.2, 0.2, 0.4, 0.4]);
        let y = gt(0, [0.3, 0.2, 0.4, 0.4]);
        assert!((match_score(&p, &y, 0.5).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(match_score(&p, &y, 1.0).unwrap(), 0.8);
        let i = iou(&p.bbox.to_xyxy(), &y.bbox.to_xyxy());
        assert_eq!(match_score(&p, &y, 0.0).unwrap(), i);
    }

    #[test]
    fn one_to_one_cases() {
        let b = [0.5, 0.5, 0.2, 0.2];
        let r = o2o_assign(&[pred(&[1.0], b)], &[gt(0, b)], &CostWeights::default()).unwrap();
        assert_eq!(
            r.pairs,
            vec![MatchedPair {
                query: 0,
                gt: 0,
                quality: 1.0
            }]
        );
        assert_eq!(r.flavor, Flavor::OneToOne);
        assert!(matches!(
            o2o_assign(&[pred(&[1.0], b)], &[gt(0, b), gt(0, b)], &CostWeights::default()),
            Err(Error::Capacity { .. })
        ));

        let preds = [
            pred(&[0.9, 0.1], [0.2, 0.2, 0.1, 0.1]),
            pred(&[0.2, 0.7], [0.7, 0.7, 0.2, 0.2]),
            pred(&[0.5, 0.5], [0.3, 0.25, 0.1, 0.15]),
        ];
        let gts = [gt(0, [0.25, 0.2, 0.1, 0.1]), gt(1, [0.7, 0.65, 0.2, 0.2])];
        let w = CostWeights::default();
        let cost = o2o_cost(&preds, &gts, &w).unwrap();
        let r = o2o_assign(&preds, &gts, &w).unwrap();
        let pairs: Vec<_> = r.pairs.iter().map(|p| (p.query, p.gt)).collect();
        assert_eq!(assignment_cost(&cost, &pairs), brute_force_min(&cost));
        for p in &r.pairs {
            let s = iou(&preds[p.query].bbox.to_xyxy(), &gts[p.gt].bbox.to_xyxy());
            assert_eq!(p.quality, s);
        }
    }

    #[test]
    fn one_to_many_selection_rules() {
        let y = gt(0, [0.5, 0.5, 0.2, 0.2]);
        let preds = [
            pred(&[0.9], [0.5, 0.5, 0.2, 0.2]),
            pred(&[0.7], [0.5, 0.5, 0.2, 0.2]),
            pred(&[0.95], [0.5, 0.5, 0.2, 0.2]),
        ];
        let cfg = MatchConfig {
            k: 1,
            ..Default::default()
        };
        let r = o2m_assign(&preds, &[y], &cfg).unwrap();
        assert_eq!(r.pairs.len(), 1);
        assert_eq!(r.pairs[0].query, 2);
        assert!((r.pairs[0].quality - 0.975).abs() < 1e-12);

        let cfg = MatchConfig {
            tau: 0.99,
            ..Default::default()
        };
        assert!(o2m_assign(&preds, &[y], &cfg).unwrap().pairs.is_empty());
        assert!(o2m_assign(&preds, &[], &cfg).unwrap().pairs.is_empty());
        assert!(o2m_assign(
            &preds,
            &[y],
            &MatchConfig {
                k: 0,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn strategy_sets() {
        let ks = |n, d| -> Vec<usize> { strategy_set(n, d, 0.5, 0.4).unwrap().iter().map(|c| c.k).collect() };
        assert_eq!(ks(3, true), vec![2, 4, 6]);
        assert_eq!(ks(2, false), vec![6, 6]);
        assert_eq!(ks(1, true), vec![6]);
        assert_eq!(ks(1, false), vec![6]);
        assert_eq!(ks(2, true), vec![3, 6]);
        assert_eq!(ks(5, true), vec![2, 3, 4, 5, 6]);
        assert_eq!(ks(3, false), vec![6, 6, 6]);
        assert!(strategy_set(5, false, 0.5, 0.4).is_err());
        assert!(strategy_set(4, true, 0.5, 0.4).is_err());
        assert!(strategy_set(1, true, 1.5, 0.4).is_err());
    }

    fn random_case(rng: &mut ChaCha8Rng) -> (Vec<Prediction>, Vec<GroundTruth>) {
        let nc = 3;
        let ng = rng.random_range(1..5);
        let gts: Vec<_> = (0..ng)
            .map(|_| {
                gt(
                    rng.random_range(0..nc),
                    [
                        rng.random_range(0.2..0.8),
                        rng.random_range(0.2..0.8),
                        rng.random_range(0.1..0.3),
                        rng.random_range(0.1..0.3),
                    ],
                )
            })
            .collect();
        let preds = (0..rng.random_range(ng..20))
            .map(|_| {
                let g = &gts[rng.random_range(0..ng)];
                let j = |v: f64, rng: &mut ChaCha8Rng| (v + rng.random_range(-0.08..0.08)).max(0.01);
                let b = g.bbox;
                let scores: Vec<f64> = (0..nc).map(|_| rng.random_range(0.0..1.0)).collect();
                pred(&scores, [j(b.cx, rng), j(b.cy, rng), j(b.w, rng), j(b.h, rng)])
            })
            .collect();
        (preds, gts)
    }

    #[test]
    fn one_to_many_invariants_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..500 {
            let (preds, gts) = random_case(&mut rng);
            let mut prev: Option<Vec<(usize, usize)>> = None;
            for k in [2, 4, 6] {
                let cfg = MatchConfig {
                    k,
                    ..Default::default()
                };
                let r = o2m_assign(&preds, &gts, &cfg).unwrap();
                let mut per_gt = vec![0; gts.len()];
                let mut per_q = vec![0; preds.len()];
                for p in &r.pairs {
                    assert!(p.quality > cfg.tau);
                    assert_eq!(p.quality, match_score(&preds[p.query], &gts[p.gt], cfg.alpha).unwrap());
                    per_gt[p.gt] += 1;
                    per_q[p.query] += 1;
                }
                assert!(per_gt.iter().all(|&c| c <= k));
                assert!(per_q.iter().all(|&c| c <= 1));
                let set: Vec<(usize, usize)> = r.pairs.iter().map(|p| (p.query, p.gt)).collect();
                if let Some(prev) = &prev {
                    assert!(prev.iter().all(|p| set.contains(p)));
                }
                prev = Some(set);
            }
        }
    }

    proptest! {
        #[test]
        fn one_to_many_is_permutation_equivariant_in_gts(seed in 0u64..10_000, rot in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (preds, gts) = random_case(&mut rng);
            let n = gts.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let permuted: Vec<GroundTruth> = perm.iter().map(|&i| gts[i]).collect();
            let cfg = MatchConfig::default();
            // argmax ties resolve by gt index, which a permutation legitimately changes
            for p in &preds {
                let mut ms: Vec<f64> = gts.iter().map(|y| match_score(p, y, cfg.alpha).unwrap()).collect();
                ms.sort_by(|a, b| b.total_cmp(a));
                prop_assume!(ms.len() < 2 || ms[0] > ms[1]);
            }
            let mut a: Vec<(usize, usize)> = o2m_assign(&preds, &gts, &cfg).unwrap().pairs.iter().map(|p| (p.query, p.gt)).collect();
            let mut b: Vec<(usize, usize)> = o2m_assign(&preds, &permuted, &cfg).unwrap().pairs.iter().map(|p| (p.query, perm[p.gt])).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn matching_score_monotone(c1 in 0.0..1.0f64, dc in 0.001..0.5f64, alpha in 0.01..0.99f64) {
            let b = [0.5, 0.5, 0.2, 0.2];
            let y = gt(0, [0.52, 0.5, 0.2, 0.2]);
            let lo = match_score(&pred(&[c1], b), &y, alpha).unwrap();
            let hi = match_score(&pred(&[(c1 + dc).min(1.0)], b), &y, alpha).unwrap();
            prop_assert!(hi > lo || c1 + dc > 1.0);
            let far = match_score(&pred(&[c1], [0.6, 0.5, 0.2, 0.2]), &y, alpha).unwrap();
            prop_assert!(lo > far);
        }
    }
}
