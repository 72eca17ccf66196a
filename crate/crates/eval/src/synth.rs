//! Synthetic sequences: a textured rectangle moving over a cluttered
//! background, with optional occluders and brightness drift.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tm3_core::BoxF64;

use crate::config::{parse_key_values, parse_value, unknown_key};
use crate::error::{EvalError, Result};
use crate::sequence::{write_sequence, SequenceBundle};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occlusion {
    /// First occluded frame, zero-based.
    pub start: usize,
    pub length: usize,
    /// Share of the target width hidden by the occluder.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    pub target_w: f64,
    pub target_h: f64,
    /// Top-left corner on the first frame, zero-based.
    pub start_x: f64,
    pub start_y: f64,
    /// Pixels per frame. The path reflects off the frame borders.
    pub velocity_x: f64,
    pub velocity_y: f64,
    /// Relative size oscillation amplitude.
    pub scale_amplitude: f64,
    pub scale_period: f64,
    /// Relative aspect oscillation amplitude (width grows as height shrinks).
    pub deformation: f64,
    pub deformation_period: f64,
    pub occlusions: Vec<Occlusion>,
    /// Brightness gain per frame; frame `t` is scaled by `1 + drift·t`.
    pub illumination_drift: f64,
    /// Per-pixel uniform noise amplitude in 8-bit units.
    pub noise: f64,
    /// Number of random rectangles painted on the background.
    pub clutter: usize,
    /// Per-frame random displacement of the target, uniform in `±shake` pixels.
    pub shake: f64,
    /// Moving objects the size of the target sharing part of its palette.
    pub distractors: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            width: 320,
            height: 240,
            frames: 100,
            target_w: 40.0,
            target_h: 40.0,
            start_x: 40.0,
            start_y: 100.0,
            velocity_x: 0.0,
            velocity_y: 0.0,
            scale_amplitude: 0.0,
            scale_period: 40.0,
            deformation: 0.0,
            deformation_period: 30.0,
            occlusions: Vec::new(),
            illumination_drift: 0.0,
            noise: 4.0,
            clutter: 40,
            shake: 0.0,
            distractors: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub name: String,
    pub images: Vec<RgbImage>,
    /// Zero-based pixel coordinates.
    pub groundtruth: Vec<BoxF64>,
    /// Share of target pixels overwritten by an occluder, per frame.
    pub occluded_fraction: Vec<f64>,
}

impl SyntheticSequence {
    pub fn write(&self, dir: &Path) -> Result<SequenceBundle> {
        write_sequence(dir, &self.name, &self.images, &self.groundtruth)
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EvalError::Invalid(format!("synthetic spec: {m}")));
        if self.frames < 2 {
            return bad("frames must be at least 2");
        }
        if self.width < 8 || self.height < 8 {
            return bad("frame size must be at least 8x8");
        }
        if !(self.target_w >= 4.0 && self.target_h >= 4.0) {
            return bad("target must be at least 4x4");
        }
        if !(0.0..0.5).contains(&self.scale_amplitude) || !(0.0..0.5).contains(&self.deformation) {
            return bad("scale_amplitude and deformation must lie in [0, 0.5)");
        }
        if !(self.scale_period > 0.0 && self.deformation_period > 0.0) {
            return bad("periods must be positive");
        }
        if !(self.noise >= 0.0 && self.illumination_drift.is_finite()) {
            return bad("noise must be non-negative and drift finite");
        }
        if !(self.shake >= 0.0 && self.shake.is_finite()) {
            return bad("shake must be non-negative and finite");
        }
        for o in &self.occlusions {
            if !(0.0..=1.0).contains(&o.fraction) || o.length == 0 {
                return bad("occlusion fraction must lie in [0, 1] and length be positive");
            }
        }
        let (mw, mh) = self.max_extent();
        if mw + 2.0 >= self.width as f64 || mh + 2.0 >= self.height as f64 {
            return bad("target does not fit in the frame");
        }
        let values = [self.start_x, self.start_y, self.velocity_x, self.velocity_y];
        if values.iter().any(|v| !v.is_finite()) {
            return bad("start and velocity must be finite");
        }
        Ok(())
    }

    fn max_extent(&self) -> (f64, f64) {
        let s = 1.0 + self.scale_amplitude;
        let d = 1.0 + self.deformation;
        (self.target_w * s * d, self.target_h * s * d)
    }

    /// Exact target box on frame `t`.
    pub fn box_at(&self, t: usize) -> BoxF64 {
        let tf = t as f64;
        let tau = std::f64::consts::TAU;
        let s = 1.0 + self.scale_amplitude * (tau * tf / self.scale_period).sin();
        let d = self.deformation * (tau * tf / self.deformation_period).sin();
        let w = self.target_w * s * (1.0 + d);
        let h = self.target_h * s * (1.0 - d);
        let (mw, mh) = self.max_extent();
        let cx0 = self.start_x + self.target_w / 2.0;
        let cy0 = self.start_y + self.target_h / 2.0;
        let (sx, sy) = if self.shake > 0.0 && t > 0 {
            let mut rng = stream(self.seed, 5000 + t as u64);
            (rng.gen_range(-self.shake..=self.shake), rng.gen_range(-self.shake..=self.shake))
        } else {
            (0.0, 0.0)
        };
        let cx = reflect(cx0 + self.velocity_x * tf + sx, mw / 2.0 + 1.0, self.width as f64 - mw / 2.0 - 1.0);
        let cy = reflect(cy0 + self.velocity_y * tf + sy, mh / 2.0 + 1.0, self.height as f64 - mh / 2.0 - 1.0);
        BoxF64 { x: cx - w / 2.0, y: cy - h / 2.0, w, h }
    }

    fn occlusion_at(&self, t: usize) -> Option<f64> {
        self.occlusions.iter().filter(|o| t >= o.start && t < o.start + o.length).map(|o| o.fraction).reduce(f64::max)
    }
}

/// Folds `p` into `[lo, hi]` as if bouncing between the bounds.
fn reflect(p: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return (lo + hi) / 2.0;
    }
    let u = (p - lo).rem_euclid(2.0 * span);
    lo + if u > span { 2.0 * span - u } else { u }
}

fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn background(spec: &SynthSpec) -> Vec<[f64; 3]> {
    let (w, h) = (spec.width as usize, spec.height as usize);
    let mut rng = stream(spec.seed, 1);
    let cell = 16usize;
    let (gw, gh) = (w / cell + 2, h / cell + 2);
    let grid: Vec<[f64; 3]> =
        (0..gw * gh).map(|_| [0; 3].map(|_: i32| rng.gen_range(60.0..190.0))).collect();
    let mut px = vec![[0.0; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 / cell as f64, y as f64 / cell as f64);
            let (ix, iy) = (fx as usize, fy as usize);
            let (ax, ay) = (fx - ix as f64, fy - iy as f64);
            let g = |i: usize, j: usize| grid[j * gw + i];
            for c in 0..3 {
                let top = g(ix, iy)[c] * (1.0 - ax) + g(ix + 1, iy)[c] * ax;
                let bot = g(ix, iy + 1)[c] * (1.0 - ax) + g(ix + 1, iy + 1)[c] * ax;
                px[y * w + x][c] = top * (1.0 - ay) + bot * ay;
            }
        }
    }
    for _ in 0..spec.clutter {
        let (rw, rh) = (rng.gen_range(4..28), rng.gen_range(4..28));
        let (x0, y0) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let color = [0; 3].map(|_: i32| rng.gen_range(30.0..225.0));
        for y in y0..(y0 + rh).min(h) {
            for x in x0..(x0 + rw).min(w) {
                px[y * w + x] = color;
            }
        }
    }
    px
}

const BLOCKS: usize = 4;

fn saturated_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let hue = rng.gen_range(0..6);
    let hi = rng.gen_range(200.0..255.0);
    let lo = rng.gen_range(0.0..50.0);
    let mid = rng.gen_range(lo..hi);
    match hue {
        0 => [hi, mid, lo],
        1 => [mid, hi, lo],
        2 => [lo, hi, mid],
        3 => [lo, mid, hi],
        4 => [mid, lo, hi],
        _ => [hi, lo, mid],
    }
}

fn target_palette(rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    (0..BLOCKS * BLOCKS).map(|_| saturated_color(rng)).collect()
}

/// Block-coloured texture with smooth shading.
fn target_texture(spec: &SynthSpec) -> (usize, usize, Vec<[f64; 3]>) {
    let mut rng = stream(spec.seed, 2);
    let palette = target_palette(&mut rng);
    shaded_texture(spec, &palette, rng.gen_range(0.0..std::f64::consts::TAU))
}

fn shaded_texture(spec: &SynthSpec, palette: &[[f64; 3]], phase: f64) -> (usize, usize, Vec<[f64; 3]>) {
    let tw = spec.target_w.round().max(4.0) as usize;
    let th = spec.target_h.round().max(4.0) as usize;
    let blocks = BLOCKS;
    let mut tex = vec![[0.0; 3]; tw * th];
    for y in 0..th {
        for x in 0..tw {
            let b = (y * blocks / th) * blocks + x * blocks / tw;
            let (u, v) = (x as f64 / tw as f64, y as f64 / th as f64);
            let shade = 0.8 + 0.2 * (std::f64::consts::TAU * (1.3 * u + 0.7 * v) + phase).sin();
            tex[y * tw + x] = palette[b].map(|c| c * shade);
        }
    }
    (tw, th, tex)
}

struct Distractor {
    start: (f64, f64),
    velocity: (f64, f64),
    tex: (usize, usize, Vec<[f64; 3]>),
}

/// Half of each distractor's blocks reuse target colours.
fn distractors(spec: &SynthSpec) -> Vec<Distractor> {
    let target = target_palette(&mut stream(spec.seed, 2));
    (0..spec.distractors)
        .map(|k| {
            let mut rng = stream(spec.seed, 10 + k as u64);
            let palette: Vec<[f64; 3]> = (0..BLOCKS * BLOCKS)
                .map(|_| if rng.gen_bool(0.5) { target[rng.gen_range(0..target.len())] } else { saturated_color(&mut rng) })
                .collect();
            let start = (rng.gen_range(0.0..spec.width as f64), rng.gen_range(0.0..spec.height as f64));
            let velocity = (rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5));
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            Distractor { start, velocity, tex: shaded_texture(spec, &palette, phase) }
        })
        .collect()
}

fn paint(frame: &mut [[f64; 3]], w: usize, h: usize, b: &BoxF64, tex: &(usize, usize, Vec<[f64; 3]>)) {
    let (tw, th, tex) = (tex.0, tex.1, &tex.2);
    let x_lo = b.x.floor().max(0.0) as usize;
    let y_lo = b.y.floor().max(0.0) as usize;
    let x_hi = ((b.x + b.w).ceil().max(0.0) as usize + 1).min(w);
    let y_hi = ((b.y + b.h).ceil().max(0.0) as usize + 1).min(h);
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            if covers(b, x, y) {
                let u = (((x as f64 + 0.5 - b.x) / b.w * tw as f64) as usize).min(tw - 1);
                let v = (((y as f64 + 0.5 - b.y) / b.h * th as f64) as usize).min(th - 1);
                frame[y * w + x] = tex[v * tw + u];
            }
        }
    }
}

fn covers(b: &BoxF64, x: usize, y: usize) -> bool {
    let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
    cx >= b.x && cx < b.x + b.w && cy >= b.y && cy < b.y + b.h
}

pub fn synth_sequence(spec: &SynthSpec) -> Result<SyntheticSequence> {
    spec.validate()?;
    let (w, h) = (spec.width as usize, spec.height as usize);
    let bg = background(spec);
    let (tw, th, tex) = target_texture(spec);
    let others = distractors(spec);
    let mut occluder_rng = stream(spec.seed, 3);
    let occluder_tex: Vec<f64> = (0..64 * 64).map(|_| occluder_rng.gen_range(20.0..90.0)).collect();

    let mut images = Vec::with_capacity(spec.frames);
    let mut groundtruth = Vec::with_capacity(spec.frames);
    let mut occluded_fraction = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let b = spec.box_at(t);
        let occ = spec.occlusion_at(t);
        let occ_right = occ.map(|f| b.x + f * b.w + 1.0);
        let mut frame = bg.clone();
        for d in &others {
            let (mw, mh) = (b.w, b.h);
            let cx = reflect(d.start.0 + d.velocity.0 * t as f64, mw / 2.0, spec.width as f64 - mw / 2.0);
            let cy = reflect(d.start.1 + d.velocity.1 * t as f64, mh / 2.0, spec.height as f64 - mh / 2.0);
            paint(&mut frame, w, h, &BoxF64 { x: cx - mw / 2.0, y: cy - mh / 2.0, w: mw, h: mh }, &d.tex);
        }
        let (mut target_px, mut hidden_px) = (0usize, 0usize);
        let x_lo = b.x.floor().max(0.0) as usize;
        let y_lo = b.y.floor().max(0.0) as usize;
        let x_hi = ((b.x + b.w).ceil() as usize + 1).min(w);
        let y_hi = ((b.y + b.h).ceil() as usize + 1).min(h);
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                if !covers(&b, x, y) {
                    continue;
                }
                target_px += 1;
                let u = (((x as f64 + 0.5 - b.x) / b.w * tw as f64) as usize).min(tw - 1);
                let v = (((y as f64 + 0.5 - b.y) / b.h * th as f64) as usize).min(th - 1);
                frame[y * w + x] = tex[v * tw + u];
                if let Some(right) = occ_right {
                    if (x as f64 + 0.5) < right {
                        let g = occluder_tex[(y % 64) * 64 + x % 64];
                        frame[y * w + x] = [g, g, g * 1.1];
                        hidden_px += 1;
                    }
                }
            }
        }
        occluded_fraction.push(if target_px == 0 { 0.0 } else { hidden_px as f64 / target_px as f64 });

        let gain = (1.0 + spec.illumination_drift * t as f64).max(0.0);
        let mut noise_rng = stream(spec.seed, 1000 + t as u64);
        let mut img = RgbImage::new(spec.width, spec.height);
        for (i, p) in img.pixels_mut().enumerate() {
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let n = if spec.noise > 0.0 { noise_rng.gen_range(-spec.noise..=spec.noise) } else { 0.0 };
                rgb[c] = (frame[i][c] * gain + n).round().clamp(0.0, 255.0) as u8;
            }
            *p = Rgb(rgb);
        }
        images.push(img);
        groundtruth.push(b);
    }
    Ok(SyntheticSequence { name: spec.name.clone(), images, groundtruth, occluded_fraction })
}

/// Parses a `key = value` spec. `occlusion = first,last,fraction` uses
/// one-based inclusive frame numbers and may repeat.
pub fn parse_synth_spec(text: &str, file: &str) -> Result<SynthSpec> {
    let mut s = SynthSpec::default();
    for e in parse_key_values(text, file)? {
        match e.key.as_str() {
            "name" => s.name = e.value.clone(),
            "width" => s.width = parse_value(&e, file)?,
            "height" => s.height = parse_value(&e, file)?,
            "frames" => s.frames = parse_value(&e, file)?,
            "target_w" => s.target_w = parse_value(&e, file)?,
            "target_h" => s.target_h = parse_value(&e, file)?,
            "start_x" => s.start_x = parse_value(&e, file)?,
            "start_y" => s.start_y = parse_value(&e, file)?,
            "velocity_x" => s.velocity_x = parse_value(&e, file)?,
            "velocity_y" => s.velocity_y = parse_value(&e, file)?,
            "scale_amplitude" => s.scale_amplitude = parse_value(&e, file)?,
            "scale_period" => s.scale_period = parse_value(&e, file)?,
            "deformation" => s.deformation = parse_value(&e, file)?,
            "deformation_period" => s.deformation_period = parse_value(&e, file)?,
            "illumination_drift" => s.illumination_drift = parse_value(&e, file)?,
            "noise" => s.noise = parse_value(&e, file)?,
            "clutter" => s.clutter = parse_value(&e, file)?,
            "shake" => s.shake = parse_value(&e, file)?,
            "distractors" => s.distractors = parse_value(&e, file)?,
            "seed" => s.seed = parse_value(&e, file)?,
            "occlusion" => {
                let parts: Vec<&str> = e.value.split(',').map(str::trim).collect();
                let bad = || EvalError::Parse {
                    file: file.into(),
                    line: e.line,
                    message: format!("occlusion must be first,last,fraction, got {:?}", e.value),
                };
                if parts.len() != 3 {
                    return Err(bad());
                }
                let first: usize = parts[0].parse().map_err(|_| bad())?;
                let last: usize = parts[1].parse().map_err(|_| bad())?;
                let fraction: f64 = parts[2].parse().map_err(|_| bad())?;
                if first == 0 || last < first {
                    return Err(bad());
                }
                s.occlusions.push(Occlusion { start: first - 1, length: last - first + 1, fraction });
            }
            _ => return Err(unknown_key(&e, file)),
        }
    }
    s.validate()?;
    Ok(s)
}

/// 100 frames, 2 px/frame motion, ±10% scale, one 10-frame 40% occlusion.
pub fn standard_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        name: format!("standard_{seed}"),
        velocity_x: 2.0,
        scale_amplitude: 0.1,
        occlusions: vec![Occlusion { start: 45, length: 10, fraction: 0.4 }],
        seed,
        ..SynthSpec::default()
    }
}

/// Ten sequences of `frames` frames mixing abrupt motion, look-alike
/// distractors, partial occlusion, scale change, deformation and brightness
/// drift.
pub fn synthetic_suite(frames: usize) -> Vec<SynthSpec> {
    (0..10u64)
        .map(|i| {
            let k = i as usize;
            let angle = i as f64 * 0.7;
            let speed = 1.5 + (i % 4) as f64 * 0.75;
            let occ_start = frames / 3 + (k * 3) % (frames / 4).max(1);
            let mut occlusions =
                vec![Occlusion { start: occ_start, length: 8 + (k % 3) * 2, fraction: 0.3 + 0.1 * (i % 3) as f64 }];
            if k % 3 == 2 {
                occlusions.push(Occlusion { start: 2 * frames / 3 + k % 5, length: 6, fraction: 0.5 });
            }
            SynthSpec {
                name: format!("suite_{i:02}"),
                frames,
                target_w: 34.0 + (i % 3) as f64 * 6.0,
                target_h: 30.0 + (i % 4) as f64 * 5.0,
                start_x: 120.0 + 20.0 * angle.cos(),
                start_y: 90.0 + 20.0 * angle.sin(),
                velocity_x: speed * angle.cos(),
                velocity_y: speed * angle.sin(),
                scale_amplitude: 0.05 + 0.03 * (i % 3) as f64,
                scale_period: 30.0 + 5.0 * i as f64,
                deformation: 0.04 * (i % 2) as f64,
                occlusions,
                illumination_drift: if i % 2 == 0 { 0.002 } else { -0.002 },
                noise: 4.0 + (i % 3) as f64 * 2.0,
                clutter: 30 + 10 * (k % 4),
                shake: [0.0, 3.0, 6.0][k % 3],
                distractors: [0, 1, 1, 2][k % 4],
                seed: 100 + i,
                ..SynthSpec::default()
            }
        })
        .collect()
}
