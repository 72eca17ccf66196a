//! The tracking loop: random-sampling and proposal flows, fast candidate
//! selection, template matching, cue fusion and template maintenance.

use std::collections::VecDeque;

use image::RgbImage;

use crate::error::{Result, Tm3Error};
use crate::features::{ColorProvider, FeatureProvider, PatchSet, COLOR_PATCH_COUNT};
use crate::geometry::{geometry_distance, sample_candidates, vor, BoundingBox, SamplingParams, TargetState};
use crate::memory_filter::{
    maybe_update_template_e, reconstruct_template_r, solve_selection, MomentumSchedule, SelectionParams,
    SelectionProblem, TemplateDictionary, TemplatePair, TemplateUpdate,
};
use crate::scalar::{squared_distance, Scalar};
use crate::similarity::{argmax_first, normalized_mbs, NeighborSearch, SimilarityConfig};

/// Which candidate flows run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlowMode {
    #[default]
    Both,
    /// Random sampling only; the best candidate against `Tmpl_r` is the result.
    RandomOnly,
    /// Proposals only; the best proposal against `Tmpl_r` is the result.
    ProposalOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub n_r: usize,
    pub n_r_refined: usize,
    pub n_e_refined: usize,
    /// Proposals requested from the provider each frame.
    pub n_proposals: usize,
    pub tau: f64,
    pub sigma1: f64,
    pub cap_c: usize,
    pub sigma2: f64,
    pub beta: f64,
    pub delta: f64,
    pub n_d: usize,
    pub n_s: usize,
    pub k_codebook: usize,
    /// Trivial templates allowed among the `k_codebook` reconstruction atoms.
    pub trivial_count: usize,
    pub tmpl_e_threshold: f64,
    /// Memory filtering runs on frames whose index is a multiple of this.
    pub selection_interval: usize,
    pub sigma_s: f64,
    pub translation_cap: f64,
    pub seed: u64,
    pub flow_mode: FlowMode,
    pub memory_filtering: bool,
    /// Scale each history column to unit root-mean-square entry before selection.
    pub normalize_selection: bool,
    pub momentum: MomentumSchedule,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            n_r: 700,
            n_r_refined: 50,
            n_e_refined: 50,
            n_proposals: 200,
            tau: 5.0,
            sigma1: 0.5,
            cap_c: 4,
            sigma2: 2.0,
            beta: 10.0,
            delta: 5.0,
            n_d: 12,
            n_s: 10,
            k_codebook: 5,
            trivial_count: 5,
            tmpl_e_threshold: 0.5,
            selection_interval: 10,
            sigma_s: 0.15,
            translation_cap: 15.0,
            seed: 0,
            flow_mode: FlowMode::Both,
            memory_filtering: true,
            normalize_selection: true,
            momentum: MomentumSchedule::Damped,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_r", self.n_r),
            ("n_r_refined", self.n_r_refined),
            ("n_e_refined", self.n_e_refined),
            ("n_proposals", self.n_proposals),
            ("cap_c", self.cap_c),
            ("n_d", self.n_d),
            ("k_codebook", self.k_codebook),
            ("selection_interval", self.selection_interval),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Tm3Error::InvalidParameter(format!("{name} must be >= 1")));
        }
        if self.n_s < 2 {
            return Err(Tm3Error::InvalidParameter("n_s must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.tmpl_e_threshold) {
            return Err(Tm3Error::InvalidParameter("tmpl_e_threshold must lie in [0, 1]".into()));
        }
        let positive = [
            ("tau", self.tau),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("translation_cap", self.translation_cap),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Tm3Error::InvalidParameter(format!("{name} must be > 0")));
        }
        let non_negative = [("beta", self.beta), ("delta", self.delta), ("sigma_s", self.sigma_s)];
        if let Some((name, _)) = non_negative.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Tm3Error::InvalidParameter(format!("{name} must be >= 0")));
        }
        Ok(())
    }

    pub fn similarity<T: Scalar>(&self) -> SimilarityConfig<T> {
        SimilarityConfig {
            sigma1: T::lit(self.sigma1),
            cap_c: self.cap_c,
            search: NeighborSearch::Auto,
        }
    }

    pub fn selection<T: Scalar>(&self) -> SelectionParams<T> {
        SelectionParams {
            beta: T::lit(self.beta),
            delta: T::lit(self.delta),
            sigma2: T::lit(self.sigma2),
            cap_c: self.cap_c,
            momentum: self.momentum,
            ..SelectionParams::default()
        }
    }
}

/// A proposed state with its objectness score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal<T> {
    pub state: TargetState<T>,
    pub objectness: T,
}

/// Source of object proposals around the previous estimate.
pub trait ProposalProvider<T: Scalar> {
    /// At most `n` proposals, best first, each with a box of positive area
    /// overlapping the image. `base` is the unit-scale target size.
    fn propose(&self, image: &RgbImage, prev: &TargetState<T>, base: (T, T), n: usize) -> Result<Vec<Proposal<T>>>;
}

/// Proposals on a fixed image lattice near the previous state, scored by mean
/// Sobel gradient magnitude. Positions and scales are snapped to the lattice,
/// so the previous box itself is generally not proposed.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGridProposals {
    /// Ratio between neighbouring scale levels; levels are its integer powers.
    pub scale_step: f64,
    /// Scale levels on each side of the level nearest the previous scale.
    pub scale_radius: i32,
    /// Positions run over `-radius..=radius` strides around the nearest lattice point.
    pub radius: i32,
    /// Stride as a fraction of the box side at the nearest scale level.
    pub stride_fraction: f64,
    /// Lattice origin in pixels. [`Tracker::new`] places it at the initial box centre.
    pub origin: (f64, f64),
}

impl Default for EdgeGridProposals {
    fn default() -> Self {
        Self {
            scale_step: 1.1,
            scale_radius: 1,
            radius: 8,
            stride_fraction: 0.125,
            origin: (0.0, 0.0),
        }
    }
}

/// Summed-area table of the Sobel gradient magnitude of the luminance.
#[derive(Debug, Clone)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    /// `(width + 1) × (height + 1)`, zero first row and column.
    integral: Vec<f64>,
}

impl EdgeMap {
    pub fn new(image: &RgbImage) -> Self {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let gray: Vec<f64> = image
            .pixels()
            .map(|p| 0.299 * p.0[0] as f64 + 0.587 * p.0[1] as f64 + 0.114 * p.0[2] as f64)
            .collect();
        let at = |x: isize, y: isize| {
            let xc = x.clamp(0, w as isize - 1) as usize;
            let yc = y.clamp(0, h as isize - 1) as usize;
            gray[yc * w + xc]
        };
        let mut integral = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                let (xi, yi) = (x as isize, y as isize);
                let gx = (at(xi + 1, yi - 1) + 2.0 * at(xi + 1, yi) + at(xi + 1, yi + 1))
                    - (at(xi - 1, yi - 1) + 2.0 * at(xi - 1, yi) + at(xi - 1, yi + 1));
                let gy = (at(xi - 1, yi + 1) + 2.0 * at(xi, yi + 1) + at(xi + 1, yi + 1))
                    - (at(xi - 1, yi - 1) + 2.0 * at(xi, yi - 1) + at(xi + 1, yi - 1));
                row += (gx * gx + gy * gy).sqrt();
                integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
            }
        }
        Self { width: w, height: h, integral }
    }

    /// Gradient magnitude summed over the in-image part of `b`, divided by the full box area.
    pub fn density<T: Scalar>(&self, b: &BoundingBox<T>) -> f64 {
        let clip = |v: f64, max: usize| v.round().clamp(0.0, max as f64) as usize;
        let x0 = clip(b.x.to_f64_lossy(), self.width);
        let y0 = clip(b.y.to_f64_lossy(), self.height);
        let x1 = clip((b.x + b.w).to_f64_lossy(), self.width);
        let y1 = clip((b.y + b.h).to_f64_lossy(), self.height);
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        let s = self.width + 1;
        let sum = self.integral[y1 * s + x1] - self.integral[y0 * s + x1] - self.integral[y1 * s + x0]
            + self.integral[y0 * s + x0];
        sum / b.area().to_f64_lossy()
    }
}

impl<T: Scalar> ProposalProvider<T> for EdgeGridProposals {
    fn propose(&self, image: &RgbImage, prev: &TargetState<T>, base: (T, T), n: usize) -> Result<Vec<Proposal<T>>> {
        builtin_proposals_with(self, &EdgeMap::new(image), prev, base, n)
    }
}

/// Proposals from the default grid.
pub fn builtin_proposals<T: Scalar>(
    image: &RgbImage,
    prev: &TargetState<T>,
    base: (T, T),
    n: usize,
) -> Result<Vec<Proposal<T>>> {
    EdgeGridProposals::default().propose(image, prev, base, n)
}

fn builtin_proposals_with<T: Scalar>(
    grid: &EdgeGridProposals,
    edges: &EdgeMap,
    prev: &TargetState<T>,
    base: (T, T),
    n: usize,
) -> Result<Vec<Proposal<T>>> {
    prev.to_box(base.0, base.1).validate()?;
    if !(grid.scale_step > 1.0 && grid.stride_fraction > 0.0) {
        return Err(Tm3Error::InvalidParameter("proposal grid needs scale_step > 1 and stride_fraction > 0".into()));
    }
    let level = (prev.scale.to_f64_lossy().ln() / grid.scale_step.ln()).round() as i32;
    let lattice_scale = T::lit(grid.scale_step.powi(level));
    let stride_x = base.0 * lattice_scale * T::lit(grid.stride_fraction);
    let stride_y = base.1 * lattice_scale * T::lit(grid.stride_fraction);
    let (ox, oy) = (T::lit(grid.origin.0), T::lit(grid.origin.1));
    let ix0 = ((prev.cx - ox) / stride_x).round().to_f64_lossy() as i64;
    let iy0 = ((prev.cy - oy) / stride_y).round().to_f64_lossy() as i64;
    let mut out = Vec::new();
    for ds in -grid.scale_radius..=grid.scale_radius {
        let scale = T::lit(grid.scale_step.powi(level + ds));
        for dy in -grid.radius..=grid.radius {
            for dx in -grid.radius..=grid.radius {
                let state = TargetState {
                    cx: ox + stride_x * T::lit((ix0 + dx as i64) as f64),
                    cy: oy + stride_y * T::lit((iy0 + dy as i64) as f64),
                    scale,
                    frame_index: prev.frame_index + 1,
                };
                let b = state.to_box(base.0, base.1);
                if !b.intersects_frame(edges.width, edges.height) {
                    continue;
                }
                out.push(Proposal {
                    state,
                    objectness: T::lit(edges.density(&b)),
                });
            }
        }
    }
    // stable: equal scores keep grid order
    out.sort_by(|a, b| b.objectness.partial_cmp(&a.objectness).unwrap_or(std::cmp::Ordering::Equal));
    out.truncate(n);
    Ok(out)
}

/// Indices of the `n_keep` candidates nearest to `reference`, nearest first,
/// ties by index.
pub fn fast_select_r<T: Scalar>(candidates: &[&[T]], reference: &[T], n_keep: usize) -> Result<Vec<usize>> {
    if let Some(bad) = candidates.iter().find(|c| c.len() != reference.len()) {
        return Err(Tm3Error::DimensionMismatch {
            expected: reference.len(),
            got: bad.len(),
        });
    }
    let mut scored: Vec<(T, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (squared_distance(c, reference), i))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    scored.truncate(n_keep);
    Ok(scored.into_iter().map(|(_, i)| i).collect())
}

/// Proposals kept by geometry distance to an anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySelection<T> {
    /// Indices into the proposal list, smallest distance first.
    pub kept: Vec<usize>,
    pub distances: Vec<T>,
}

impl<T> GeometrySelection<T> {
    /// Index of the proposal closest to the anchor.
    pub fn argmin(&self) -> Option<usize> {
        self.kept.first().copied()
    }
}

/// Keeps the `n_keep` proposals closest to `anchor` under [`geometry_distance`].
pub fn fast_select_e<T: Scalar>(
    proposals: &[TargetState<T>],
    anchor: &TargetState<T>,
    n_keep: usize,
    tau: T,
    ref_dims: (T, T),
) -> Result<GeometrySelection<T>> {
    let mut scored = proposals
        .iter()
        .enumerate()
        .map(|(i, p)| Ok((geometry_distance(p, anchor, ref_dims.0, ref_dims.1, tau)?, i)))
        .collect::<Result<Vec<(T, usize)>>>()?;
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    scored.truncate(n_keep);
    Ok(GeometrySelection {
        kept: scored.iter().map(|&(_, i)| i).collect(),
        distances: scored.iter().map(|&(d, _)| d).collect(),
    })
}

/// Origin of the fused result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CueOrigin {
    FlowR,
    FlowEMbs,
    FlowEDist,
}

impl CueOrigin {
    pub const ALL: [CueOrigin; 3] = [CueOrigin::FlowR, CueOrigin::FlowEMbs, CueOrigin::FlowEDist];

    pub fn as_str(&self) -> &'static str {
        match self {
            CueOrigin::FlowR => "flow_r",
            CueOrigin::FlowEMbs => "flow_e_mbs",
            CueOrigin::FlowEDist => "flow_e_dist",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

/// Appearance and geometry of one cue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cue<T> {
    pub bbox: BoundingBox<T>,
    /// Normalized similarity to `Tmpl_r`.
    pub score_r: T,
    /// Normalized similarity to `Tmpl_e`.
    pub score_e: T,
}

/// Confidence of each cue: its two template scores plus its overlap with the
/// other two cues.
pub fn cue_confidences<T: Scalar>(cues: &[Cue<T>; 3]) -> [T; 3] {
    std::array::from_fn(|i| {
        let others: T = (0..3).filter(|&j| j != i).map(|j| vor(&cues[i].bbox, &cues[j].bbox)).sum();
        cues[i].score_r + cues[i].score_e + others
    })
}

/// Index of the winning cue; earlier cues win ties.
pub fn fuse<T: Scalar>(confidences: &[T; 3]) -> usize {
    argmax_first(confidences).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult<T> {
    pub state: TargetState<T>,
    pub bbox: BoundingBox<T>,
    /// Fused confidence of the chosen cue.
    pub confidence: T,
    /// Template similarity part of `confidence`.
    pub appearance: T,
    pub cue_origin: CueOrigin,
    /// Confidences of the three cues in [`CueOrigin::ALL`] order; zero for cues
    /// that did not run.
    pub scores: [T; 3],
    pub lost: bool,
    pub tmpl_e_update: TemplateUpdate,
    /// Whether memory filtering ran after this frame.
    pub memory_filtered: bool,
}

/// A scored candidate pool.
struct Pool<T> {
    states: Vec<TargetState<T>>,
    boxes: Vec<BoundingBox<T>>,
    features: Vec<PatchSet<T>>,
}

impl<T: Scalar> Pool<T> {
    fn empty() -> Self {
        Self {
            states: Vec::new(),
            boxes: Vec::new(),
            features: Vec::new(),
        }
    }
}

/// Single-target tracker. One instance per sequence.
pub struct Tracker<T: Scalar, F: FeatureProvider<T> = ColorProvider, P: ProposalProvider<T> = EdgeGridProposals> {
    config: TrackerConfig,
    features: F,
    proposals: P,
    base: (T, T),
    state: TargetState<T>,
    prev_features: PatchSet<T>,
    templates: TemplatePair<T>,
    dictionary: TemplateDictionary<T>,
    /// Recent results and their reliability against `Tmpl_r`.
    history: VecDeque<(Vec<T>, T)>,
    frame_size: (usize, usize),
}

impl<T: Scalar> Tracker<T> {
    /// Tracker with color features and grid proposals.
    pub fn new(config: TrackerConfig, first_frame: &RgbImage, init: BoundingBox<T>) -> Result<Self> {
        let (cx, cy) = init.center();
        let grid = EdgeGridProposals {
            origin: (cx.to_f64_lossy(), cy.to_f64_lossy()),
            ..EdgeGridProposals::default()
        };
        Self::with_providers(config, ColorProvider, grid, first_frame, init)
    }
}

impl<T: Scalar, F: FeatureProvider<T>, P: ProposalProvider<T>> Tracker<T, F, P> {
    pub fn with_providers(
        config: TrackerConfig,
        features: F,
        proposals: P,
        first_frame: &RgbImage,
        init: BoundingBox<T>,
    ) -> Result<Self> {
        config.validate()?;
        init.validate()?;
        let size = (first_frame.width() as usize, first_frame.height() as usize);
        if !init.intersects_frame(size.0, size.1) {
            return Err(Tm3Error::InvalidBox("initial box lies outside the first frame".into()));
        }
        let frame = features.prepare(first_frame)?;
        let region = features
            .extract(&frame, &[init])?
            .pop()
            .ok_or(Tm3Error::Empty("initial region"))?;
        let (cx, cy) = init.center();
        let state = TargetState::new(cx, cy, T::one(), 0)?;
        let mut dictionary = TemplateDictionary::new(config.n_d);
        dictionary.push(region.as_flat().to_vec());
        let sim = config.similarity::<T>();
        let h0 = normalized_mbs(&region, &region, &sim)?;
        let mut history = VecDeque::with_capacity(config.n_s);
        history.push_back((region.as_flat().to_vec(), h0));
        Ok(Self {
            templates: TemplatePair::from_initial(region.clone()),
            prev_features: region,
            base: (init.w, init.h),
            state,
            dictionary,
            history,
            frame_size: size,
            features,
            proposals,
            config,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn state(&self) -> &TargetState<T> {
        &self.state
    }

    pub fn templates(&self) -> &TemplatePair<T> {
        &self.templates
    }

    pub fn dictionary(&self) -> &TemplateDictionary<T> {
        &self.dictionary
    }

    /// Current estimate as a box.
    pub fn current_box(&self) -> BoundingBox<T> {
        self.state.to_box(self.base.0, self.base.1)
    }

    fn frame_seed(&self, frame_index: usize) -> u64 {
        self.config.seed ^ (frame_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }

    fn build_pool(&self, frame: &F::Frame, states: Vec<TargetState<T>>) -> Result<Pool<T>> {
        let (w, h) = self.frame_size;
        let mut pool = Pool::empty();
        for s in states {
            let b = s.to_box(self.base.0, self.base.1);
            if b.validate().is_ok() && b.intersects_frame(w, h) {
                pool.states.push(s);
                pool.boxes.push(b);
            }
        }
        pool.features = self.features.extract(frame, &pool.boxes)?;
        Ok(pool)
    }

    fn subset(pool: Pool<T>, keep: &[usize]) -> Pool<T> {
        let mut features: Vec<Option<PatchSet<T>>> = pool.features.into_iter().map(Some).collect();
        Pool {
            states: keep.iter().map(|&i| pool.states[i]).collect(),
            boxes: keep.iter().map(|&i| pool.boxes[i]).collect(),
            features: keep.iter().map(|&i| features[i].take().expect("unique indices")).collect(),
        }
    }

    fn score_all(&self, pool: &Pool<T>, template: &PatchSet<T>) -> Result<Vec<T>> {
        let sim = self.config.similarity::<T>();
        pool.features.iter().map(|f| normalized_mbs(f, template, &sim)).collect()
    }

    /// Random-sampling flow: refined candidates and their scores against `Tmpl_r`.
    fn flow_r(&self, frame: &F::Frame) -> Result<(Pool<T>, Vec<T>)> {
        let prev_box = self.current_box();
        let cap = T::lit(self.config.translation_cap);
        let params = SamplingParams::for_box(prev_box.w, prev_box.h, cap, T::lit(self.config.sigma_s), self.config.n_r);
        let states = sample_candidates(&self.state, &params, self.frame_seed(self.state.frame_index + 1))?;
        let pool = self.build_pool(frame, states)?;
        let flat: Vec<&[T]> = pool.features.iter().map(|f| f.as_flat()).collect();
        let keep = fast_select_r(&flat, self.prev_features.as_flat(), self.config.n_r_refined)?;
        let pool = Self::subset(pool, &keep);
        let scores = self.score_all(&pool, &self.templates.tmpl_r)?;
        Ok((pool, scores))
    }

    /// Proposal flow: proposals kept around `anchor`, ordered by geometry distance.
    fn flow_e(&self, image: &RgbImage, frame: &F::Frame, anchor: &TargetState<T>) -> Result<Pool<T>> {
        let proposals = self
            .proposals
            .propose(image, &self.state, self.base, self.config.n_proposals)?;
        let states: Vec<TargetState<T>> = proposals.into_iter().map(|p| p.state).collect();
        let pool = self.build_pool(frame, states)?;
        if pool.states.is_empty() {
            return Ok(pool);
        }
        let prev = self.current_box();
        let sel = fast_select_e(&pool.states, anchor, self.config.n_e_refined, T::lit(self.config.tau), (prev.w, prev.h))?;
        Ok(Self::subset(pool, &sel.kept))
    }

    /// Processes the next frame.
    pub fn track_frame(&mut self, image: &RgbImage) -> Result<FrameResult<T>> {
        let size = (image.width() as usize, image.height() as usize);
        if size != self.frame_size {
            return Err(Tm3Error::InvalidParameter(format!(
                "frame size {}x{} differs from {}x{}",
                size.0, size.1, self.frame_size.0, self.frame_size.1
            )));
        }
        let frame = self.features.prepare(image)?;
        let sim = self.config.similarity::<T>();
        let frame_index = self.state.frame_index + 1;

        let (r_pool, r_scores) = match self.config.flow_mode {
            FlowMode::ProposalOnly => (Pool::empty(), Vec::new()),
            _ => self.flow_r(&frame)?,
        };
        let r_best = argmax_first(&r_scores);

        // (chosen state, box, features, appearance, confidences, origin)
        let outcome = match self.config.flow_mode {
            FlowMode::RandomOnly => r_best.map(|i| {
                let s = r_scores[i];
                (r_pool.states[i], r_pool.boxes[i], r_pool.features[i].clone(), s, [s, T::zero(), T::zero()], CueOrigin::FlowR)
            }),
            FlowMode::ProposalOnly => {
                let e_pool = self.flow_e(image, &frame, &self.state)?;
                let scores = self.score_all(&e_pool, &self.templates.tmpl_r)?;
                argmax_first(&scores).map(|i| {
                    let s = scores[i];
                    (e_pool.states[i], e_pool.boxes[i], e_pool.features[i].clone(), s, [T::zero(), s, T::zero()], CueOrigin::FlowEMbs)
                })
            }
            FlowMode::Both => match r_best {
                None => None,
                Some(ri) => {
                    let e_pool = self.flow_e(image, &frame, &r_pool.states[ri])?;
                    if e_pool.states.is_empty() {
                        let s_r = r_scores[ri];
                        let s_e = normalized_mbs(&r_pool.features[ri], &self.templates.tmpl_e, &sim)?;
                        let a = s_r + s_e;
                        Some((r_pool.states[ri], r_pool.boxes[ri], r_pool.features[ri].clone(), a, [a, T::zero(), T::zero()], CueOrigin::FlowR))
                    } else {
                        let e_scores = self.score_all(&e_pool, &self.templates.tmpl_e)?;
                        let ei = argmax_first(&e_scores).unwrap_or(0);
                        let di = 0;
                        let cues = [
                            Cue {
                                bbox: r_pool.boxes[ri],
                                score_r: r_scores[ri],
                                score_e: normalized_mbs(&r_pool.features[ri], &self.templates.tmpl_e, &sim)?,
                            },
                            Cue {
                                bbox: e_pool.boxes[ei],
                                score_r: normalized_mbs(&e_pool.features[ei], &self.templates.tmpl_r, &sim)?,
                                score_e: e_scores[ei],
                            },
                            Cue {
                                bbox: e_pool.boxes[di],
                                score_r: normalized_mbs(&e_pool.features[di], &self.templates.tmpl_r, &sim)?,
                                score_e: e_scores[di],
                            },
                        ];
                        let conf = cue_confidences(&cues);
                        let win = fuse(&conf);
                        let origin = CueOrigin::ALL[win];
                        let (state, bbox, feats) = match origin {
                            CueOrigin::FlowR => (r_pool.states[ri], r_pool.boxes[ri], r_pool.features[ri].clone()),
                            CueOrigin::FlowEMbs => (e_pool.states[ei], e_pool.boxes[ei], e_pool.features[ei].clone()),
                            CueOrigin::FlowEDist => (e_pool.states[di], e_pool.boxes[di], e_pool.features[di].clone()),
                        };
                        Some((state, bbox, feats, cues[win].score_r + cues[win].score_e, conf, origin))
                    }
                }
            },
        };

        let Some((mut state, bbox, feats, appearance, scores, origin)) = outcome else {
            self.state.frame_index = frame_index;
            return Ok(FrameResult {
                state: self.state,
                bbox: self.current_box(),
                confidence: T::zero(),
                appearance: T::zero(),
                cue_origin: CueOrigin::FlowR,
                scores: [T::zero(); 3],
                lost: true,
                tmpl_e_update: TemplateUpdate::Unchanged,
                memory_filtered: false,
            });
        };
        state.frame_index = frame_index;
        let confidence = scores[CueOrigin::ALL.iter().position(|c| *c == origin).unwrap_or(0)];

        let threshold = T::lit(self.config.tmpl_e_threshold);
        let tmpl_e_update = if self.config.flow_mode == FlowMode::Both {
            let score = normalized_mbs(&feats, &self.templates.tmpl_e, &sim)?;
            maybe_update_template_e(&mut self.templates, &feats, score, threshold)
        } else {
            TemplateUpdate::Unchanged
        };
        let h = normalized_mbs(&feats, &self.templates.tmpl_r, &sim)?;
        if !self.config.memory_filtering && h > threshold {
            self.templates.tmpl_r = feats.clone();
        }

        self.history.push_back((feats.as_flat().to_vec(), h));
        while self.history.len() > self.config.n_s {
            self.history.pop_front();
        }
        let memory_filtered = self.config.memory_filtering
            && frame_index % self.config.selection_interval == 0
            && self.history.len() >= 2;
        if memory_filtered {
            self.run_memory_filter(&feats)?;
        }

        self.state = state;
        self.prev_features = feats;
        Ok(FrameResult {
            state,
            bbox,
            confidence,
            appearance,
            cue_origin: origin,
            scores,
            lost: false,
            tmpl_e_update,
            memory_filtered,
        })
    }

    /// Selects a representative recent result into the dictionary; once the
    /// dictionary is full, `Tmpl_r` is rebuilt from it.
    fn run_memory_filter(&mut self, current: &PatchSet<T>) -> Result<()> {
        let columns: Vec<Vec<T>> = self.history.iter().map(|(f, _)| f.clone()).collect();
        let h: Vec<T> = self.history.iter().map(|&(_, h)| h.max(T::zero())).collect();
        let problem = SelectionProblem::from_features(&columns, h, self.config.selection(), self.config.normalize_selection)?;
        let solution = solve_selection(&problem)?;
        self.dictionary.push(columns[solution.selected_index].clone());
        if self.dictionary.len() < self.dictionary.capacity() {
            return Ok(());
        }
        let rec = reconstruct_template_r(
            current.as_flat(),
            &self.dictionary,
            self.config.k_codebook,
            self.config.trivial_count,
        )?;
        if rec.iter().all(|v| v.is_finite()) {
            self.templates.tmpl_r = PatchSet::new(rec, current.count(), current.dim())?;
        }
        Ok(())
    }
}

/// Runs a tracker over a frame sequence starting from `init` on the first frame.
/// The first entry of the output is the initial box with confidence zero.
pub fn track_sequence<T: Scalar>(
    config: &TrackerConfig,
    frames: &[RgbImage],
    init: BoundingBox<T>,
) -> Result<Vec<FrameResult<T>>> {
    let first = frames.first().ok_or(Tm3Error::Empty("frame list"))?;
    let mut tracker = Tracker::new(config.clone(), first, init)?;
    let mut out = Vec::with_capacity(frames.len());
    out.push(FrameResult {
        state: *tracker.state(),
        bbox: init,
        confidence: T::zero(),
        appearance: T::zero(),
        cue_origin: CueOrigin::FlowR,
        scores: [T::zero(); 3],
        lost: false,
        tmpl_e_update: TemplateUpdate::Unchanged,
        memory_filtered: false,
    });
    for img in &frames[1..] {
        out.push(tracker.track_frame(img)?);
    }
    Ok(out)
}

/// Patches per region for the default color features.
pub const REGION_PATCHES: usize = COLOR_PATCH_COUNT;
