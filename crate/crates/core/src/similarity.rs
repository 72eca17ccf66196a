//! Mutual-buddies similarity (MBS) and its best-buddies special case (BBS).
//!
//! For patch sets `P = {p_i}` and `Q = {q_j}`, a pair `(p_i, q_j)` scores
//! `exp(-r·s / σ₁)` when `q_j` is the `r`-th nearest neighbour of `p_i` in `Q`
//! and `p_i` is the `s`-th nearest neighbour of `q_j` in `P`, both ranks
//! within the cap `c`. MBS averages these pair scores over `min(|P|, |Q|)`.
//!
//! Distances are Euclidean; equal distances rank the lower index first.

use crate::error::{Result, Tm3Error};
use crate::features::PatchSet;
use crate::kdtree::{insert_bounded, KdTree};
use crate::scalar::{squared_distance, Scalar};

/// How per-point top-`c` neighbour lists are found. Both strategies are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborSearch {
    /// Full distance matrix.
    Exhaustive,
    /// k-d tree per set.
    KdTree,
    /// Exhaustive for small sets, k-d tree above [`KD_TREE_MIN_POINTS`].
    #[default]
    Auto,
}

/// Sets with at least this many points use the k-d tree under [`NeighborSearch::Auto`].
pub const KD_TREE_MIN_POINTS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityConfig<T> {
    /// Kernel width σ₁ of the pair score.
    pub sigma1: T,
    /// Largest neighbour rank that still scores.
    pub cap_c: usize,
    pub search: NeighborSearch,
}

impl<T: Scalar> Default for SimilarityConfig<T> {
    fn default() -> Self {
        Self {
            sigma1: T::lit(0.5),
            cap_c: 4,
            search: NeighborSearch::Auto,
        }
    }
}

impl<T: Scalar> SimilarityConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > T::zero()) || !self.sigma1.is_finite() {
            return Err(Tm3Error::InvalidParameter(format!("sigma1 must be > 0, got {}", self.sigma1)));
        }
        if self.cap_c == 0 {
            return Err(Tm3Error::InvalidParameter("cap_c must be >= 1".into()));
        }
        Ok(())
    }

    /// Pair score of two mutual first neighbours, `exp(-1/σ₁)`.
    pub fn unit_score(&self) -> T {
        (-T::one() / self.sigma1).exp()
    }
}

/// One reciprocal pair: `q_j` is rank `r` for `p_i`, `p_i` is rank `s` for `q_j`.
/// Indices are 0-based, ranks 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RankPair {
    pub i: usize,
    pub j: usize,
    pub r: usize,
    pub s: usize,
}

/// All reciprocal pairs of two sets, sorted by `(i, j)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RankPairList {
    pub entries: Vec<RankPair>,
}

impl RankPairList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RankPair> {
        self.entries.iter()
    }
}

fn check_pair<T: Scalar>(p: &PatchSet<T>, q: &PatchSet<T>) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Tm3Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    Ok(())
}

fn uses_tree(search: NeighborSearch, p: &PatchSet<impl Scalar>, q: &PatchSet<impl Scalar>) -> bool {
    match search {
        NeighborSearch::Exhaustive => false,
        NeighborSearch::KdTree => true,
        NeighborSearch::Auto => p.count().max(q.count()) >= KD_TREE_MIN_POINTS,
    }
}

/// Top-`k` neighbours in `targets` for every point of `queries`, nearest first.
fn tree_lists<T: Scalar>(queries: &PatchSet<T>, targets: &PatchSet<T>, k: usize) -> Vec<Vec<usize>> {
    let tree = KdTree::build(targets);
    queries.patches().map(|q| tree.nearest(q, k.min(targets.count()))).collect()
}

/// Both directions' top-`k` lists from one pass over the distance matrix.
fn exhaustive_lists<T: Scalar>(p: &PatchSet<T>, q: &PatchSet<T>, k: usize) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let (kp, kq) = (k.min(q.count()), k.min(p.count()));
    let mut rows: Vec<Vec<(T, usize)>> = vec![Vec::with_capacity(kp + 1); p.count()];
    let mut cols: Vec<Vec<(T, usize)>> = vec![Vec::with_capacity(kq + 1); q.count()];
    for (i, a) in p.patches().enumerate() {
        for (j, b) in q.patches().enumerate() {
            let d = squared_distance(a, b);
            insert_bounded(&mut rows[i], kp, d, j);
            insert_bounded(&mut cols[j], kq, d, i);
        }
    }
    let strip = |lists: Vec<Vec<(T, usize)>>| lists.into_iter().map(|l| l.into_iter().map(|(_, j)| j).collect()).collect();
    (strip(rows), strip(cols))
}

/// Finds every `(i, j)` where each point ranks within the other's `cap_c` nearest
/// neighbours.
pub fn reciprocal_rank_pairs<T: Scalar>(
    p: &PatchSet<T>,
    q: &PatchSet<T>,
    cfg: &SimilarityConfig<T>,
) -> Result<RankPairList> {
    cfg.validate()?;
    check_pair(p, q)?;
    let cap = cfg.cap_c;
    let (p_to_q, q_to_p) = if uses_tree(cfg.search, p, q) {
        (tree_lists(p, q, cap), tree_lists(q, p, cap))
    } else {
        exhaustive_lists(p, q, cap)
    };

    let mut entries = Vec::new();
    for (i, neighbours) in p_to_q.iter().enumerate() {
        for (r0, &j) in neighbours.iter().enumerate() {
            if let Some(s0) = q_to_p[j].iter().position(|&k| k == i) {
                entries.push(RankPair { i, j, r: r0 + 1, s: s0 + 1 });
            }
        }
    }
    entries.sort_unstable();
    Ok(RankPairList { entries })
}

/// Pair score `exp(-r·s/σ₁)`, zero once either rank exceeds the cap.
pub fn mbp<T: Scalar>(r: usize, s: usize, cfg: &SimilarityConfig<T>) -> T {
    if r == 0 || s == 0 || r > cfg.cap_c || s > cfg.cap_c {
        return T::zero();
    }
    (-T::from_usize_lossy(r * s) / cfg.sigma1).exp()
}

/// Mutual-buddies similarity of two patch sets.
pub fn mbs<T: Scalar>(p: &PatchSet<T>, q: &PatchSet<T>, cfg: &SimilarityConfig<T>) -> Result<T> {
    let pairs = reciprocal_rank_pairs(p, q, cfg)?;
    let total: T = pairs.iter().map(|e| mbp(e.r, e.s, cfg)).sum();
    Ok(total / T::from_usize_lossy(p.count().min(q.count())))
}

/// MBS divided by the single-pair maximum `exp(-1/σ₁)`, so identical sets of
/// distinct patches score about 1 and `cap_c = 1` reproduces BBS exactly.
pub fn normalized_mbs<T: Scalar>(p: &PatchSet<T>, q: &PatchSet<T>, cfg: &SimilarityConfig<T>) -> Result<T> {
    Ok(mbs(p, q, cfg)? / cfg.unit_score())
}

/// Best-buddies similarity: fraction of mutual first nearest neighbours.
pub fn bbs<T: Scalar>(p: &PatchSet<T>, q: &PatchSet<T>) -> Result<T> {
    Ok(T::from_usize_lossy(bbs_count(p, q)?) / T::from_usize_lossy(p.count().min(q.count())))
}

/// Number of mutual first-nearest-neighbour pairs.
pub fn bbs_count<T: Scalar>(p: &PatchSet<T>, q: &PatchSet<T>) -> Result<usize> {
    let cfg = SimilarityConfig {
        sigma1: T::one(),
        cap_c: 1,
        search: NeighborSearch::Auto,
    };
    Ok(reciprocal_rank_pairs(p, q, &cfg)?.len())
}

/// Scores of a candidate batch against one template.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchScore<T> {
    pub scores: Vec<T>,
    /// Index of the highest score; the lowest index wins ties.
    pub best: usize,
}

/// Index of the maximum, lowest index on ties. NaN never wins.
pub fn argmax_first<T: Scalar>(values: &[T]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Scores every candidate with `score` against the template.
pub fn batch_score_with<T: Scalar, F>(
    candidates: &[PatchSet<T>],
    template: &PatchSet<T>,
    mut score: F,
) -> Result<BatchScore<T>>
where
    F: FnMut(&PatchSet<T>, &PatchSet<T>) -> Result<T>,
{
    if candidates.is_empty() {
        return Err(Tm3Error::Empty("candidate batch"));
    }
    let scores = candidates
        .iter()
        .map(|c| score(c, template))
        .collect::<Result<Vec<_>>>()?;
    let best = argmax_first(&scores).unwrap_or(0);
    Ok(BatchScore { scores, best })
}

/// MBS of every candidate against the template.
pub fn batch_score<T: Scalar>(
    candidates: &[PatchSet<T>],
    template: &PatchSet<T>,
    cfg: &SimilarityConfig<T>,
) -> Result<BatchScore<T>> {
    batch_score_with(candidates, template, |c, t| mbs(c, t, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn set1(values: &[f64]) -> PatchSet<f64> {
        PatchSet::new(values.to_vec(), values.len(), 1).unwrap()
    }

    fn cfg() -> SimilarityConfig<f64> {
        SimilarityConfig::default()
    }

    #[test]
    fn hand_rank_table() {
        let p = set1(&[0.0, 1.0]);
        let q = set1(&[0.1, 5.0]);
        let pairs = reciprocal_rank_pairs(&p, &q, &cfg()).unwrap();
        let expected = vec![
            RankPair { i: 0, j: 0, r: 1, s: 1 },
            RankPair { i: 0, j: 1, r: 2, s: 2 },
            RankPair { i: 1, j: 0, r: 1, s: 2 },
            RankPair { i: 1, j: 1, r: 2, s: 1 },
        ];
        assert_eq!(pairs.entries, expected);
        let e = |x: f64| (-x).exp();
        let want = 0.5 * (e(2.0) + e(8.0) + e(4.0) + e(4.0));
        assert_relative_eq!(mbs(&p, &q, &cfg()).unwrap(), want, epsilon = 1e-15);
        assert_relative_eq!(want, 0.08615, epsilon = 1e-5);
        assert_eq!(bbs(&p, &q).unwrap(), 0.5);
    }

    #[test]
    fn self_pairs_rank_first() {
        let p = set1(&[0.0, 3.0, 7.0, 20.0, 21.5]);
        let pairs = reciprocal_rank_pairs(&p, &p, &cfg()).unwrap();
        for i in 0..5 {
            assert!(pairs.entries.contains(&RankPair { i, j: i, r: 1, s: 1 }));
        }
        assert_eq!(bbs(&p, &p).unwrap(), 1.0);
        assert!(mbs(&p, &p, &cfg()).unwrap() >= (-2.0f64).exp());
    }

    #[test]
    fn mbp_examples() {
        let c = cfg();
        assert_relative_eq!(mbp(1, 1, &c), 0.135_335_283_236_612_7, epsilon = 1e-12);
        assert_relative_eq!(mbp(2, 3, &c), (-12.0f64).exp(), epsilon = 1e-18);
        assert_eq!(mbp(5, 1, &c), 0.0);
        assert_eq!(mbp(1, 5, &c), 0.0);
    }

    #[test]
    fn ties_rank_lower_index_first() {
        let p = set1(&[0.0]);
        let q = set1(&[1.0, -1.0, 1.0]);
        let pairs = reciprocal_rank_pairs(&p, &q, &cfg()).unwrap();
        let r_of = |j| pairs.iter().find(|e| e.j == j).unwrap().r;
        assert_eq!((r_of(0), r_of(1), r_of(2)), (1, 2, 3));
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let p = set1(&[0.0, 1.0]);
        let q = PatchSet::new(vec![0.0, 1.0], 1, 2).unwrap();
        assert!(matches!(mbs(&p, &q, &cfg()), Err(Tm3Error::DimensionMismatch { .. })));
        assert!(bbs(&p, &q).is_err());
    }

    #[test]
    fn invalid_config_is_error() {
        let p = set1(&[0.0]);
        let bad = SimilarityConfig { sigma1: 0.0, ..cfg() };
        assert!(mbs(&p, &p, &bad).is_err());
        let bad = SimilarityConfig { cap_c: 0, ..cfg() };
        assert!(mbs(&p, &p, &bad).is_err());
    }

    #[test]
    fn batch_argmax_and_ties() {
        let template = set1(&[0.0, 1.0, 2.0, 3.0]);
        let far = set1(&[50.0, 60.0, 70.0, 80.0]);
        let batch = vec![far.clone(), template.clone(), far.clone()];
        let out = batch_score(&batch, &template, &cfg()).unwrap();
        assert_eq!(out.best, 1);
        for (c, s) in batch.iter().zip(&out.scores) {
            assert_eq!(*s, mbs(c, &template, &cfg()).unwrap());
        }
        let single = batch_score(&batch[..1], &template, &cfg()).unwrap();
        assert_eq!(single.best, 0);
        assert!(batch_score::<f64>(&[], &template, &cfg()).is_err());
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0, f64::NAN]), Some(1));
        assert_eq!(argmax_first::<f64>(&[f64::NAN]), None);
    }

    #[test]
    fn cap_one_is_scaled_bbs() {
        let p = set1(&[0.0, 0.4, 2.0, 2.2, 9.0]);
        let q = set1(&[0.1, 2.1, 2.5, 8.0, 30.0]);
        let c1 = SimilarityConfig { cap_c: 1, ..cfg() };
        let total = mbs(&p, &q, &c1).unwrap() * 5.0;
        let count = bbs_count(&p, &q).unwrap() as f64;
        assert_relative_eq!(total, count * c1.unit_score(), epsilon = 1e-12);
        assert_relative_eq!(normalized_mbs(&p, &q, &c1).unwrap(), bbs(&p, &q).unwrap(), epsilon = 1e-12);
    }
}
