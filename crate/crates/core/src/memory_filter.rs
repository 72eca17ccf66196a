//! Memory filtering: picks a representative, reliable result out of the recent
//! tracking history and maintains the long- and short-memory templates.
//!
//! The selector solves
//!
//! ```text
//! min_S  ½‖X − XS‖²_F + δ·Tr(SᵀLS) + β·Σᵢ ‖S_i,·‖₂ / (hᵢ + ε)
//! ```
//!
//! where `X` holds one result per column (`d × Nₛ`), `L = D − W` is the
//! Laplacian of the reciprocal-neighbour graph over those columns and `hᵢ`
//! is the reliability score of result `i`. The smooth part is handled by
//! gradient steps of length `1/p_L`, the row-group penalty by its proximal
//! map, with momentum between iterates.

use std::collections::VecDeque;
use std::io::{self, Write};

use crate::error::{Result, Tm3Error};
use crate::features::PatchSet;
use crate::kdtree::insert_bounded;
use crate::linalg::Matrix;
use crate::scalar::{squared_distance, Scalar};
use crate::similarity::argmax_first;

/// Momentum weight schedule between proximal steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MomentumSchedule {
    /// `l ← (1 + √(1 + l²)) / 2`, extrapolation weight `(l_old − 1) / l_new`.
    /// The sequence settles at 4/3, i.e. a constant weight of 1/4.
    #[default]
    Damped,
    /// Classic accelerated sequence `l ← (1 + √(1 + 4l²)) / 2`.
    Nesterov,
    /// Damped sequence with the weight divided by the iteration counter
    /// (zero on the first step).
    IterationCounter,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionParams<T> {
    pub beta: T,
    pub delta: T,
    /// Kernel width of the reciprocal-neighbour graph weights.
    pub sigma2: T,
    /// Largest neighbour rank that produces a graph edge.
    pub cap_c: usize,
    pub epsilon: T,
    /// Relative change of `‖S‖₁,₂` below which iteration stops.
    pub stop_tol: T,
    pub max_iters: usize,
    pub momentum: MomentumSchedule,
}

impl<T: Scalar> Default for SelectionParams<T> {
    fn default() -> Self {
        Self {
            beta: T::lit(10.0),
            delta: T::lit(5.0),
            sigma2: T::lit(2.0),
            cap_c: 4,
            epsilon: T::lit(1e-6),
            stop_tol: T::lit(1e-7),
            max_iters: 20_000,
            momentum: MomentumSchedule::Damped,
        }
    }
}

/// Data, weights and graph of one selection run.
#[derive(Debug, Clone)]
pub struct SelectionProblem<T> {
    /// `d × Nₛ`, one result per column.
    pub x: Matrix<T>,
    /// Reliability of each column.
    pub h: Vec<T>,
    pub params: SelectionParams<T>,
    pub w: Matrix<T>,
    pub laplacian: Matrix<T>,
    gram: Matrix<T>,
}

impl<T: Scalar> SelectionProblem<T> {
    pub fn new(x: Matrix<T>, h: Vec<T>, params: SelectionParams<T>) -> Result<Self> {
        let n = x.cols();
        if n < 2 {
            return Err(Tm3Error::InvalidParameter(format!("need at least 2 results, got {n}")));
        }
        if h.len() != n {
            return Err(Tm3Error::DimensionMismatch { expected: n, got: h.len() });
        }
        if !x.is_finite() {
            return Err(Tm3Error::NonFinite("selection data matrix"));
        }
        if h.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Tm3Error::InvalidParameter("reliability scores must be finite and >= 0".into()));
        }
        let p = &params;
        if !(p.beta >= T::zero() && p.delta >= T::zero()) {
            return Err(Tm3Error::InvalidParameter("beta and delta must be >= 0".into()));
        }
        if !(p.epsilon > T::zero() && p.sigma2 > T::zero() && p.stop_tol >= T::zero()) {
            return Err(Tm3Error::InvalidParameter("epsilon and sigma2 must be > 0".into()));
        }
        if p.cap_c == 0 {
            return Err(Tm3Error::InvalidParameter("cap_c must be >= 1".into()));
        }
        let w = build_weight_matrix(&x, p.sigma2, p.cap_c);
        let laplacian = laplacian(&w);
        let gram = x.gram();
        Ok(Self { x, h, params, w, laplacian, gram })
    }

    /// Problem over result feature vectors; with `normalize`, each column is
    /// scaled to unit root-mean-square entry first.
    pub fn from_features(features: &[Vec<T>], h: Vec<T>, params: SelectionParams<T>, normalize: bool) -> Result<Self> {
        let mut x = Matrix::from_columns(features)?;
        if normalize {
            for j in 0..x.cols() {
                let norm = (x.column(j).iter().map(|&v| v * v).sum::<T>() / T::from_usize_lossy(x.rows())).sqrt();
                if norm > T::zero() {
                    for i in 0..x.rows() {
                        x[(i, j)] = x[(i, j)] / norm;
                    }
                }
            }
        }
        Self::new(x, h, params)
    }

    pub fn n_results(&self) -> usize {
        self.x.cols()
    }

    /// Per-row shrinkage thresholds `β / (p_L (hᵢ + ε))`.
    fn thresholds(&self, p_l: T) -> Vec<T> {
        self.h
            .iter()
            .map(|&h| self.params.beta / (p_l * (h + self.params.epsilon)))
            .collect()
    }

    fn smooth_gradient(&self, s: &Matrix<T>) -> Matrix<T> {
        let sym = &self.laplacian + &self.laplacian.transpose();
        let gs = self.gram.matmul(s);
        let reg = sym.matmul(s).scale(self.params.delta);
        &(&gs - &self.gram) + &reg
    }
}

/// Reciprocal-neighbour weights over the columns of `x`:
/// `W_ij = exp(−r·s/σ₂)` when column `j` is the `r`-th neighbour of `i` and `i`
/// the `s`-th neighbour of `j`, both within `cap_c`; zero otherwise.
pub fn build_weight_matrix<T: Scalar>(x: &Matrix<T>, sigma2: T, cap_c: usize) -> Matrix<T> {
    let n = x.cols();
    let cols: Vec<Vec<T>> = (0..n).map(|j| x.column(j)).collect();
    let k = cap_c.min(n.saturating_sub(1));
    let mut lists = Vec::with_capacity(n);
    let mut best = Vec::with_capacity(k + 1);
    for i in 0..n {
        best.clear();
        for j in (0..n).filter(|&j| j != i) {
            insert_bounded(&mut best, k, squared_distance(&cols[i], &cols[j]), j);
        }
        lists.push(best.iter().map(|&(_, j)| j).collect::<Vec<_>>());
    }
    let mut w = Matrix::zeros(n, n);
    if k == 0 {
        return w;
    }
    for i in 0..n {
        for (r0, &j) in lists[i].iter().enumerate() {
            if let Some(s0) = lists[j].iter().position(|&v| v == i) {
                w[(i, j)] = (-T::from_usize_lossy((r0 + 1) * (s0 + 1)) / sigma2).exp();
            }
        }
    }
    w
}

/// Graph Laplacian `L = D − W` with `D` the diagonal of row sums.
pub fn laplacian<T: Scalar>(w: &Matrix<T>) -> Matrix<T> {
    let n = w.rows();
    let mut l = w.scale(-T::one());
    for i in 0..n {
        let degree: T = w.row(i).iter().copied().sum();
        l[(i, i)] = l[(i, i)] + degree;
    }
    l
}

/// Spectral radius of `XᵀX + δ(L + Lᵀ)`, the gradient Lipschitz constant.
pub fn lipschitz_constant<T: Scalar>(x: &Matrix<T>, delta: T, l: &Matrix<T>) -> T {
    let sym = l + &l.transpose();
    let m = &x.gram() + &sym.scale(delta);
    m.spectral_radius_sym(T::lit(1e-10), 1_000_000)
}

/// `∇f(S) = XᵀXS − XᵀX + δ(L + Lᵀ)S`.
pub fn gradient_f<T: Scalar>(s: &Matrix<T>, x: &Matrix<T>, delta: T, l: &Matrix<T>) -> Matrix<T> {
    let g = x.gram();
    let sym = l + &l.transpose();
    &(&g.matmul(s) - &g) + &sym.matmul(s).scale(delta)
}

/// Row-wise group soft-thresholding:
/// `S_i = Z_i · max(1 − (β / (p_L (hᵢ + ε))) / ‖Z_i‖₂, 0)`.
pub fn prox_group_lasso<T: Scalar>(z: &Matrix<T>, h: &[T], beta: T, epsilon: T, p_l: T) -> Matrix<T> {
    let thresholds: Vec<T> = h.iter().map(|&hi| beta / (p_l * (hi + epsilon))).collect();
    prox_rows(z, &thresholds)
}

fn prox_rows<T: Scalar>(z: &Matrix<T>, thresholds: &[T]) -> Matrix<T> {
    let mut out = z.clone();
    for (i, &t) in thresholds.iter().enumerate() {
        let norm = z.row_norm(i);
        let factor = if norm > T::zero() {
            (T::one() - t / norm).max(T::zero())
        } else {
            T::zero()
        };
        out.row_mut(i).iter_mut().for_each(|v| *v = *v * factor);
    }
    out
}

/// Smooth part `½‖X − XS‖²_F + δ·Tr(SᵀLS)`.
pub fn smooth_objective<T: Scalar>(s: &Matrix<T>, problem: &SelectionProblem<T>) -> T {
    let n = problem.n_results();
    let resid = &Matrix::identity(n) - s;
    let fit = resid.dot(&problem.gram.matmul(&resid));
    let smooth = s.dot(&problem.laplacian.matmul(s));
    T::lit(0.5) * fit + problem.params.delta * smooth
}

/// Full objective including the reliability-weighted row-group penalty.
pub fn objective<T: Scalar>(s: &Matrix<T>, problem: &SelectionProblem<T>) -> T {
    let p = &problem.params;
    let penalty: T = s
        .row_norms()
        .into_iter()
        .zip(&problem.h)
        .map(|(norm, &h)| norm / (h + p.epsilon))
        .sum();
    smooth_objective(s, problem) + p.beta * penalty
}

#[derive(Debug, Clone)]
pub struct SelectionSolution<T> {
    pub s: Matrix<T>,
    pub row_norms: Vec<T>,
    /// Row with the largest norm; lowest index on ties.
    pub selected_index: usize,
    /// Objective at `S = 0` followed by the objective after every iteration.
    pub objective_trace: Vec<T>,
    pub row_norm_trace: Vec<Vec<T>>,
    pub iterations_used: usize,
    pub converged: bool,
    pub lipschitz: T,
}

impl<T: Scalar> SelectionSolution<T> {
    /// The `k` rows with the largest norms, largest first.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.row_norms.len()).collect();
        idx.sort_by(|&a, &b| {
            self.row_norms[b]
                .partial_cmp(&self.row_norms[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx.truncate(k);
        idx
    }

    /// Writes `iteration,objective,row_norm_0,...` rows.
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.row_norms.len();
        write!(out, "iteration,objective")?;
        for i in 0..n {
            write!(out, ",row_norm_{i}")?;
        }
        writeln!(out)?;
        for (it, (obj, norms)) in self.objective_trace.iter().zip(&self.row_norm_trace).enumerate() {
            write!(out, "{it},{obj:e}")?;
            for v in norms {
                write!(out, ",{v:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Accelerated proximal gradient from `S = 0`.
///
/// Stops when `‖S⁺ − S‖₁,₂ ≤ stop_tol · ‖S⁺‖₁,₂` or after `max_iters`; the
/// iterate with the lowest objective is returned and `converged` tells which.
pub fn solve_selection<T: Scalar>(problem: &SelectionProblem<T>) -> Result<SelectionSolution<T>> {
    let n = problem.n_results();
    let params = &problem.params;
    let p_l = lipschitz_constant(&problem.x, params.delta, &problem.laplacian);
    let zero = Matrix::zeros(n, n);
    let start_obj = objective(&zero, problem);
    if !(p_l > T::zero()) {
        // f is constant (X = 0, δ = 0): S = 0 minimises the penalty.
        let row_norms = vec![T::zero(); n];
        return Ok(SelectionSolution {
            s: zero,
            row_norm_trace: vec![row_norms.clone()],
            row_norms,
            selected_index: 0,
            objective_trace: vec![start_obj],
            iterations_used: 0,
            converged: true,
            lipschitz: p_l,
        });
    }
    let thresholds = problem.thresholds(p_l);
    let step = T::one() / p_l;

    let mut s = zero.clone();
    let mut u1 = zero;
    let mut l = T::one();
    let mut trace = vec![start_obj];
    let mut norm_trace = vec![vec![T::zero(); n]];
    let mut best = (start_obj, s.clone());
    let mut converged = false;
    let mut iterations = 0;
    let two = T::lit(2.0);
    let four = T::lit(4.0);

    for t in 0..params.max_iters {
        let grad = problem.smooth_gradient(&u1);
        let z = &u1 - &grad.scale(step);
        let s_next = prox_rows(&z, &thresholds);
        if !s_next.is_finite() {
            return Err(Tm3Error::NonFinite("selection iterate"));
        }
        let tau = l - T::one();
        let l_next = match params.momentum {
            MomentumSchedule::Nesterov => (T::one() + (T::one() + four * l * l).sqrt()) / two,
            _ => (T::one() + (T::one() + l * l).sqrt()) / two,
        };
        let weight = match params.momentum {
            MomentumSchedule::IterationCounter if t == 0 => T::zero(),
            MomentumSchedule::IterationCounter => tau / T::from_usize_lossy(t),
            _ => tau / l_next,
        };
        let diff = &s_next - &s;
        u1 = &s_next + &diff.scale(weight);
        let change = diff.l12_norm();
        let size = s_next.l12_norm();
        s = s_next;
        l = l_next;
        iterations = t + 1;

        let obj = objective(&s, problem);
        trace.push(obj);
        norm_trace.push(s.row_norms());
        if obj < best.0 {
            best = (obj, s.clone());
        }
        if change <= params.stop_tol * size {
            converged = true;
            break;
        }
    }

    let s = if converged { s } else { best.1 };
    let row_norms = s.row_norms();
    let selected_index = argmax_first(&row_norms).unwrap_or(0);
    Ok(SelectionSolution {
        s,
        row_norms,
        selected_index,
        objective_trace: trace,
        row_norm_trace: norm_trace,
        iterations_used: iterations,
        converged,
        lipschitz: p_l,
    })
}

/// FIFO store of representative results (flat feature vectors).
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateDictionary<T> {
    atoms: VecDeque<Vec<T>>,
    capacity: usize,
}

impl<T: Scalar> TemplateDictionary<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            atoms: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
        }
    }

    /// Appends `atom`, evicting the oldest one when full. Returns the evicted atom.
    pub fn push(&mut self, atom: Vec<T>) -> Option<Vec<T>> {
        let evicted = if self.atoms.len() == self.capacity {
            self.atoms.pop_front()
        } else {
            None
        };
        self.atoms.push_back(atom);
        evicted
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn atoms(&self) -> impl Iterator<Item = &Vec<T>> {
        self.atoms.iter()
    }
}

/// Functional form of [`TemplateDictionary::push`].
pub fn update_dictionary<T: Scalar>(mut dict: TemplateDictionary<T>, selected: Vec<T>) -> TemplateDictionary<T> {
    dict.push(selected);
    dict
}

/// Ridge added to the local normal equations.
pub const RECONSTRUCTION_RIDGE: f64 = 1e-6;

/// Reconstructs `result` from its `k` nearest codebook atoms, where the
/// codebook is the dictionary plus unit-vector trivial templates (at most
/// `trivial_count` of which may be picked, and the nearest dictionary atom is
/// always kept). The least-squares fit constrains the dictionary coefficients
/// to sum to one. The trivial components are dropped, so localized corruption
/// they absorb does not reach the template.
pub fn reconstruct_template_r<T: Scalar>(
    result: &[T],
    dict: &TemplateDictionary<T>,
    k: usize,
    trivial_count: usize,
) -> Result<Vec<T>> {
    if dict.is_empty() {
        return Err(Tm3Error::Empty("template dictionary"));
    }
    let d = result.len();
    if let Some(bad) = dict.atoms().find(|a| a.len() != d) {
        return Err(Tm3Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    if k == 0 {
        return Err(Tm3Error::InvalidParameter("k must be >= 1".into()));
    }

    #[derive(Clone, Copy)]
    enum Atom {
        Dict(usize),
        Trivial(usize),
    }

    // candidates ordered by (distance, dictionary before trivial, index)
    let mut scored: Vec<(T, usize, Atom)> = dict
        .atoms()
        .enumerate()
        .map(|(i, a)| (squared_distance(result, a), i, Atom::Dict(i)))
        .collect();
    if trivial_count > 0 {
        let norm_sq: T = result.iter().map(|&v| v * v).sum();
        let n_dict = dict.len();
        let mut trivial: Vec<(T, usize, Atom)> = result
            .iter()
            .enumerate()
            .map(|(m, &v)| (norm_sq - T::lit(2.0) * v + T::one(), n_dict + m, Atom::Trivial(m)))
            .collect();
        let keep = trivial_count.min(d).min(k);
        trivial.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
        trivial.truncate(keep);
        scored.extend(trivial);
    }
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    let nearest_dict = scored.iter().position(|(_, _, a)| matches!(a, Atom::Dict(_)));
    if let Some(pos) = nearest_dict.filter(|&p| p >= k) {
        let entry = scored[pos];
        scored[k - 1] = entry;
    }
    scored.truncate(k);

    let atoms: Vec<&Vec<T>> = dict.atoms().collect();
    let basis: Vec<Vec<f64>> = scored
        .iter()
        .map(|&(_, _, a)| match a {
            Atom::Dict(i) => atoms[i].iter().map(|v| v.to_f64_lossy()).collect(),
            Atom::Trivial(m) => {
                let mut e = vec![0.0; d];
                e[m] = 1.0;
                e
            }
        })
        .collect();
    let target: Vec<f64> = result.iter().map(|v| v.to_f64_lossy()).collect();
    let b = Matrix::from_columns(&basis)?;
    let mut normal = b.gram();
    for i in 0..normal.rows() {
        normal[(i, i)] += RECONSTRUCTION_RIDGE;
    }
    let rhs: Vec<f64> = basis
        .iter()
        .map(|col| col.iter().zip(&target).map(|(a, x)| a * x).sum())
        .collect();
    // dictionary coefficients sum to one
    let is_dict: Vec<f64> = scored.iter().map(|(_, _, a)| if matches!(a, Atom::Dict(_)) { 1.0 } else { 0.0 }).collect();
    let free = normal.solve_spd(&rhs)?;
    let dir = normal.solve_spd(&is_dict)?;
    let gap = 1.0 - is_dict.iter().zip(&free).map(|(a, c)| a * c).sum::<f64>();
    let denom: f64 = is_dict.iter().zip(&dir).map(|(a, u)| a * u).sum();
    let coef: Vec<f64> = free.iter().zip(&dir).map(|(c, u)| c + u * gap / denom).collect();

    let mut out = vec![0.0f64; d];
    for ((_, _, atom), c) in scored.iter().zip(coef) {
        if let Atom::Dict(i) = atom {
            for (o, a) in out.iter_mut().zip(atoms[*i]) {
                *o += c * a.to_f64_lossy();
            }
        }
    }
    Ok(out.into_iter().map(T::lit).collect())
}

/// Long-memory (dictionary reconstructed) and short-memory templates.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplatePair<T> {
    pub tmpl_r: PatchSet<T>,
    pub tmpl_e: PatchSet<T>,
}

impl<T: Scalar> TemplatePair<T> {
    pub fn new(tmpl_r: PatchSet<T>, tmpl_e: PatchSet<T>) -> Result<Self> {
        if tmpl_r.dim() != tmpl_e.dim() {
            return Err(Tm3Error::DimensionMismatch {
                expected: tmpl_r.dim(),
                got: tmpl_e.dim(),
            });
        }
        Ok(Self { tmpl_r, tmpl_e })
    }

    /// Both templates set to the same region.
    pub fn from_initial(region: PatchSet<T>) -> Self {
        Self {
            tmpl_r: region.clone(),
            tmpl_e: region,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateUpdate {
    Replaced,
    Unchanged,
    /// Score was NaN; template kept.
    InvalidScore,
}

/// Replaces the short-memory template with `result` iff `score > threshold`.
pub fn maybe_update_template_e<T: Scalar>(
    pair: &mut TemplatePair<T>,
    result: &PatchSet<T>,
    score: T,
    threshold: T,
) -> TemplateUpdate {
    if score.is_nan() {
        return TemplateUpdate::InvalidScore;
    }
    if score > threshold && result.dim() == pair.tmpl_e.dim() {
        pair.tmpl_e = result.clone();
        TemplateUpdate::Replaced
    } else {
        TemplateUpdate::Unchanged
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Matrix<f64> {
        Matrix::from_row_major(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn normalized_columns_have_unit_rms() {
        let features = vec![vec![3.0, 4.0, 0.0, 0.0], vec![0.0; 4], vec![2.0, 2.0, 2.0, 2.0]];
        let p = SelectionProblem::from_features(&features, vec![1.0; 3], SelectionParams::default(), true).unwrap();
        assert_relative_eq!(p.x.column(0).to_vec().as_slice(), [1.2, 1.6, 0.0, 0.0].as_slice(), epsilon = 1e-12);
        assert!(p.x.column(1).iter().all(|&v| v == 0.0));
        assert!(p.x.column(2).iter().all(|&v: &f64| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn two_columns_are_mutual_first_neighbours() {
        let x = mat(2, 2, &[1.0, 3.0, 0.0, 1.0]);
        let w = build_weight_matrix(&x, 2.0, 4);
        assert_relative_eq!(w[(0, 1)], (-0.5f64).exp(), epsilon = 1e-15);
        assert_eq!(w[(0, 1)], w[(1, 0)]);
        assert_eq!((w[(0, 0)], w[(1, 1)]), (0.0, 0.0));
        assert_relative_eq!((-0.5f64).exp(), 0.6065, epsilon = 1e-4);
    }

    #[test]
    fn laplacian_examples() {
        let l = laplacian(&Matrix::<f64>::zeros(3, 3));
        assert_eq!(l, Matrix::zeros(3, 3));
        let w = mat(2, 2, &[0.0, 0.7, 0.7, 0.0]);
        assert_eq!(laplacian(&w), mat(2, 2, &[0.7, -0.7, -0.7, 0.7]));
    }

    #[test]
    fn lipschitz_examples() {
        let x = Matrix::<f64>::identity(4);
        assert_relative_eq!(lipschitz_constant(&x, 0.0, &Matrix::zeros(4, 4)), 1.0, epsilon = 1e-9);
        let w = 0.3;
        let l = mat(2, 2, &[w, -w, -w, w]);
        let delta = 2.5;
        let got = lipschitz_constant(&Matrix::zeros(3, 2), delta, &l);
        assert_relative_eq!(got, 4.0 * delta * w, epsilon = 1e-9);
    }

    #[test]
    fn prox_examples() {
        // threshold β/(p_L(h+ε)) = 2 with β = 2, p_L = 1, h + ε = 1
        let z = mat(2, 2, &[3.0, 4.0, 1.0, 1.0]);
        let out = prox_group_lasso(&z, &[1.0 - 1e-6, 1.0 - 1e-6], 2.0, 1e-6, 1.0);
        assert_relative_eq!(out[(0, 0)], 1.8, epsilon = 1e-12);
        assert_relative_eq!(out[(0, 1)], 2.4, epsilon = 1e-12);
        assert_eq!((out[(1, 0)], out[(1, 1)]), (0.0, 0.0));
        let zero_row = prox_group_lasso(&Matrix::<f64>::zeros(1, 3), &[0.0], 1.0, 1e-6, 1.0);
        assert_eq!(zero_row, Matrix::zeros(1, 3));
    }

    #[test]
    fn gradient_vanishes_at_identity() {
        let x = mat(3, 3, &[2.0, 0.5, 0.1, 0.0, 1.0, 0.3, 0.2, 0.0, 1.5]);
        let g = gradient_f(&Matrix::identity(3), &x, 0.0, &Matrix::zeros(3, 3));
        assert!(g.as_slice().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn objective_at_zero_is_half_data_norm() {
        let x = mat(3, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.0]);
        let problem = SelectionProblem::new(x.clone(), vec![0.5, 0.9], SelectionParams::default()).unwrap();
        assert_relative_eq!(objective(&Matrix::zeros(2, 2), &problem), 0.5 * x.frobenius_sq(), epsilon = 1e-12);
    }

    #[test]
    fn huge_beta_gives_zero_selection() {
        let x = mat(3, 3, &[1.0, 0.2, 0.0, 0.1, 1.0, 0.3, 0.0, 0.4, 1.0]);
        let params = SelectionParams { beta: 1e9, ..SelectionParams::default() };
        let sol = solve_selection(&SelectionProblem::new(x, vec![0.5; 3], params).unwrap()).unwrap();
        assert!(sol.s.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(sol.selected_index, 0);
        assert!(sol.converged);
    }

    #[test]
    fn unregularised_square_problem_reaches_identity() {
        let x = mat(3, 3, &[2.0, 0.5, 0.1, 0.0, 1.0, 0.3, 0.2, 0.0, 1.5]);
        for momentum in [MomentumSchedule::Damped, MomentumSchedule::Nesterov, MomentumSchedule::IterationCounter] {
            let params = SelectionParams {
                beta: 0.0,
                delta: 0.0,
                stop_tol: 1e-12,
                max_iters: 200_000,
                momentum,
                ..SelectionParams::default()
            };
            let problem = SelectionProblem::new(x.clone(), vec![1.0; 3], params).unwrap();
            let sol = solve_selection(&problem).unwrap();
            assert!(*sol.objective_trace.last().unwrap() < 1e-10, "{momentum:?}");
            let id = Matrix::identity(3);
            assert!((&sol.s - &id).frobenius_sq() < 1e-8, "{momentum:?}");
        }
    }

    #[test]
    fn problem_validation() {
        let x = mat(2, 1, &[1.0, 2.0]);
        assert!(SelectionProblem::new(x, vec![1.0], SelectionParams::default()).is_err());
        let x = mat(2, 2, &[1.0, f64::NAN, 0.0, 1.0]);
        assert!(SelectionProblem::new(x, vec![1.0, 1.0], SelectionParams::default()).is_err());
        let x = mat(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(SelectionProblem::new(x.clone(), vec![1.0], SelectionParams::default()).is_err());
        let bad = SelectionParams { epsilon: 0.0, ..SelectionParams::default() };
        assert!(SelectionProblem::new(x, vec![1.0, 1.0], bad).is_err());
    }

    #[test]
    fn trace_csv_has_one_row_per_iterate() {
        let x = mat(3, 3, &[1.0, 0.2, 0.0, 0.1, 1.0, 0.3, 0.0, 0.4, 1.0]);
        let params = SelectionParams { beta: 0.1, delta: 0.05, ..SelectionParams::default() };
        let sol = solve_selection(&SelectionProblem::new(x, vec![0.9; 3], params).unwrap()).unwrap();
        let mut buf = Vec::new();
        sol.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "iteration,objective,row_norm_0,row_norm_1,row_norm_2");
        assert_eq!(lines.len(), sol.objective_trace.len() + 1);
        assert_eq!(sol.top_k(1), vec![sol.selected_index]);
    }

    #[test]
    fn dictionary_is_fifo() {
        let mut d = TemplateDictionary::new(12);
        assert!(d.is_empty());
        d = update_dictionary(d, vec![0.0f64]);
        assert_eq!(d.len(), 1);
        for i in 1..12 {
            assert!(d.push(vec![i as f64]).is_none());
        }
        assert_eq!(d.len(), 12);
        assert_eq!(d.push(vec![12.0]), Some(vec![0.0]));
        assert_eq!(d.len(), 12);
        let order: Vec<f64> = d.atoms().map(|a| a[0]).collect();
        assert_eq!(order, (1..=12).map(|v| v as f64).collect::<Vec<_>>());
    }

    fn atom(seed: u64, d: usize) -> Vec<f64> {
        (0..d).map(|i| (((i as u64 + 1) * (seed * 7919 + 13)) % 97) as f64 / 10.0 + 1.0).collect()
    }

    #[test]
    fn reconstruction_of_an_atom_is_the_atom() {
        let mut dict = TemplateDictionary::new(12);
        for s in 0..6 {
            dict.push(atom(s, 40));
        }
        let target = atom(3, 40);
        let rec = reconstruct_template_r(&target, &dict, 5, 5).unwrap();
        let err = squared_distance(&rec, &target).sqrt();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn spike_is_absorbed_by_trivial_template() {
        let mut dict = TemplateDictionary::new(12);
        dict.push(atom(1, 40));
        dict.push(atom(2, 40));
        let clean = atom(1, 40);
        let mut spiked = clean.clone();
        spiked[17] += 50.0;
        let rec = reconstruct_template_r(&spiked, &dict, 5, 40).unwrap();
        assert!(squared_distance(&rec, &clean).sqrt() < 1e-4);
        // without trivial templates the spike leaks into the fit
        let plain = reconstruct_template_r(&spiked, &dict, 5, 0).unwrap();
        assert!(squared_distance(&plain, &clean).sqrt() > 1e-2);
    }

    #[test]
    fn reconstruction_errors() {
        let dict = TemplateDictionary::<f64>::new(3);
        assert!(reconstruct_template_r(&[1.0], &dict, 5, 0).is_err());
        let dict = update_dictionary(dict, vec![1.0, 2.0]);
        assert!(reconstruct_template_r(&[1.0], &dict, 5, 0).is_err());
        // fewer atoms than k: all of them are used; a lone atom is returned unscaled
        let rec = reconstruct_template_r(&[2.0, 4.0], &dict, 5, 0).unwrap();
        assert_relative_eq!(rec[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(rec[1], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn reconstruction_is_an_affine_combination() {
        let mut dict = TemplateDictionary::new(12);
        for s in 0..4 {
            dict.push(atom(s, 30));
        }
        let target: Vec<f64> = atom(9, 30).iter().map(|v| v * 0.6).collect();
        let rec = reconstruct_template_r(&target, &dict, 4, 0).unwrap();
        // recover the coefficients by least squares and check they sum to one
        let atoms: Vec<Vec<f64>> = dict.atoms().cloned().collect();
        let a = Matrix::from_columns(&atoms).unwrap();
        let coef = a.gram().solve_spd(&a.transpose().mul_vec(&rec)).unwrap();
        assert_relative_eq!(coef.iter().sum::<f64>(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn template_e_threshold_is_strict() {
        let a = PatchSet::new(vec![1.0f64; 27], 1, 27).unwrap();
        let b = PatchSet::new(vec![2.0f64; 27], 1, 27).unwrap();
        let mut pair = TemplatePair::from_initial(a.clone());
        assert_eq!(maybe_update_template_e(&mut pair, &b, 0.5, 0.5), TemplateUpdate::Unchanged);
        assert_eq!(pair.tmpl_e, a);
        assert_eq!(maybe_update_template_e(&mut pair, &b, f64::NAN, 0.5), TemplateUpdate::InvalidScore);
        assert_eq!(pair.tmpl_e, a);
        assert_eq!(maybe_update_template_e(&mut pair, &b, 0.6, 0.5), TemplateUpdate::Replaced);
        assert_eq!(pair.tmpl_e, b);
        assert_eq!(pair.tmpl_r, a);
    }
}
