//! Synthetic photoluminescence wafers with ground-truth class maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::sample::{Augmentation, Class, SampleMeta, WaferSample};
use crate::error::{Error, Result};

/// Generator parameters. Sizes are fractions of the disc radius unless noted;
/// counts are inclusive `(min, max)` ranges.
///
/// Canvas dims and seed are not part of the serialised form; callers set
/// them per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(skip)]
    pub height: usize,
    #[serde(skip)]
    pub width: usize,
    /// Disc radius in pixels; `None` picks 0.48 of the shorter side.
    pub disc_radius: Option<f64>,
    /// Disc center `(row, col)`; `None` centers it on the canvas.
    pub disc_center: Option<(f64, f64)>,
    pub base_brightness: (f64, f64),
    pub gradient_amplitude: f64,
    pub edge_falloff: f64,
    pub spot_count: (usize, usize),
    pub spot_radius: (f64, f64),
    pub spot_amplitude: f64,
    /// Per-pixel Gaussian noise, brightness units.
    pub noise_std: f64,
    pub functional_lines: (usize, usize),
    /// Isolated defective chips per disc pixel.
    pub single_defect_density: (f64, f64),
    pub cracks: (usize, usize),
    pub crack_length: (f64, f64),
    pub voids: (usize, usize),
    pub void_radius: (f64, f64),
    pub clusters: (usize, usize),
    pub cluster_lobes: (usize, usize),
    pub cluster_lobe_radius: (f64, f64),
    /// Brightness multiplier range applied inside defect structures.
    pub defect_darkening: (f64, f64),
    pub film_tears: (usize, usize),
    pub film_tear_length: (f64, f64),
    pub film_tear_darkening: (f64, f64),
    pub artefacts: (usize, usize),
    pub artefact_radius: (f64, f64),
    pub artefact_brightening: (f64, f64),
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::for_dims(442, 440, 0)
    }
}

impl SynthConfig {
    /// Defaults for a `height x width` canvas.
    pub fn for_dims(height: usize, width: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            disc_radius: None,
            disc_center: None,
            base_brightness: (130.0, 190.0),
            gradient_amplitude: 30.0,
            edge_falloff: 25.0,
            spot_count: (1, 5),
            spot_radius: (0.08, 0.25),
            spot_amplitude: 20.0,
            noise_std: 3.0,
            functional_lines: (0, 2),
            single_defect_density: (0.001, 0.004),
            cracks: (0, 3),
            crack_length: (0.15, 0.45),
            voids: (0, 4),
            void_radius: (0.02, 0.05),
            clusters: (1, 2),
            cluster_lobes: (3, 6),
            cluster_lobe_radius: (0.05, 0.11),
            defect_darkening: (0.1, 0.55),
            film_tears: (0, 2),
            film_tear_length: (0.3, 0.8),
            film_tear_darkening: (0.6, 0.8),
            artefacts: (0, 3),
            artefact_radius: (0.01, 0.03),
            artefact_brightening: (1.2, 1.45),
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_dims(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }

    /// Same generator with every structure count forced to zero.
    pub fn without_structures(mut self) -> Self {
        for range in [
            &mut self.functional_lines,
            &mut self.cracks,
            &mut self.voids,
            &mut self.clusters,
            &mut self.film_tears,
            &mut self.artefacts,
        ] {
            *range = (0, 0);
        }
        self.single_defect_density = (0.0, 0.0);
        self
    }

    pub fn radius(&self) -> f64 {
        self.disc_radius
            .unwrap_or(0.48 * self.height.min(self.width) as f64)
    }

    pub fn center(&self) -> (f64, f64) {
        self.disc_center.unwrap_or((
            (self.height as f64 - 1.0) / 2.0,
            (self.width as f64 - 1.0) / 2.0,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        let gen = |msg: String| Err(Error::Generation(msg));
        if self.height == 0 || self.width == 0 {
            return gen(format!("empty canvas {}x{}", self.height, self.width));
        }
        let r = self.radius();
        let (cy, cx) = self.center();
        if r.is_nan() || r < 2.0 {
            return gen(format!("disc radius {r} is too small"));
        }
        if cy - r < -0.5 || cx - r < -0.5 || cy + r > self.height as f64 - 0.5 || cx + r > self.width as f64 - 0.5 {
            return gen(format!(
                "disc of radius {r} at ({cy}, {cx}) does not fit {}x{}",
                self.height, self.width
            ));
        }
        let counts = [
            ("functional_lines", self.functional_lines),
            ("cracks", self.cracks),
            ("voids", self.voids),
            ("clusters", self.clusters),
            ("cluster_lobes", self.cluster_lobes),
            ("film_tears", self.film_tears),
            ("artefacts", self.artefacts),
            ("spot_count", self.spot_count),
        ];
        for (name, (lo, hi)) in counts {
            if lo > hi {
                return gen(format!("{name}: min {lo} exceeds max {hi}"));
            }
        }
        let sizes = [
            ("spot_radius", self.spot_radius),
            ("crack_length", self.crack_length),
            ("void_radius", self.void_radius),
            ("cluster_lobe_radius", self.cluster_lobe_radius),
            ("film_tear_length", self.film_tear_length),
            ("artefact_radius", self.artefact_radius),
        ];
        for (name, (lo, hi)) in sizes {
            if !(lo > 0.0 && lo <= hi) {
                return gen(format!("{name}: invalid range ({lo}, {hi})"));
            }
            if hi > 1.0 {
                return gen(format!("{name}: size {hi} of the radius cannot fit the disc"));
            }
        }
        if self.clusters.1 > 0 && self.cluster_lobe_radius.1 * 2.0 > 1.0 {
            return gen("cluster lobes larger than the disc".into());
        }
        let (d0, d1) = self.single_defect_density;
        if !(0.0 <= d0 && d0 <= d1 && d1 <= 1.0) {
            return gen(format!("single_defect_density ({d0}, {d1}) outside 0..=1"));
        }
        let factors = [
            ("defect_darkening", self.defect_darkening, 1.0),
            ("film_tear_darkening", self.film_tear_darkening, 1.0),
            ("artefact_brightening", self.artefact_brightening, 4.0),
        ];
        for (name, (lo, hi), cap) in factors {
            if !(lo >= 0.0 && lo <= hi && hi <= cap) {
                return gen(format!("{name}: invalid factor range ({lo}, {hi})"));
            }
        }
        let (b0, b1) = self.base_brightness;
        if !(0.0 <= b0 && b0 <= b1 && b1 <= 255.0) {
            return gen(format!("base_brightness ({b0}, {b1}) outside 0..=255"));
        }
        if !(self.noise_std >= 0.0 && self.gradient_amplitude >= 0.0 && self.edge_falloff >= 0.0 && self.spot_amplitude >= 0.0) {
            return gen("amplitudes must be non-negative".into());
        }
        Ok(())
    }
}

/// A generated sample together with the mask of every pixel a defect
/// structure was drawn on.
#[derive(Debug, Clone)]
pub struct Synthesized {
    pub sample: WaferSample,
    pub defect_mask: Vec<bool>,
}

pub fn synthesize(cfg: &SynthConfig) -> Result<WaferSample> {
    Ok(synthesize_with_mask(cfg)?.sample)
}

pub fn synthesize_with_mask(cfg: &SynthConfig) -> Result<Synthesized> {
    cfg.validate()?;
    Canvas::new(cfg).generate()
}

struct Canvas<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    h: usize,
    w: usize,
    radius: f64,
    center: (f64, f64),
    disc: Vec<bool>,
    functional: Vec<bool>,
    defect: Vec<bool>,
    /// Multiplicative brightness factor per pixel.
    factor: Vec<f64>,
}

fn pick(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn count(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

impl<'a> Canvas<'a> {
    fn new(cfg: &'a SynthConfig) -> Self {
        let (h, w) = (cfg.height, cfg.width);
        let radius = cfg.radius();
        let center = cfg.center();
        let disc = (0..h * w)
            .map(|i| {
                let dy = (i / w) as f64 - center.0;
                let dx = (i % w) as f64 - center.1;
                dy * dy + dx * dx <= radius * radius
            })
            .collect();
        Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            h,
            w,
            radius,
            center,
            disc,
            functional: vec![false; h * w],
            defect: vec![false; h * w],
            factor: vec![1.0; h * w],
        }
    }

    fn index(&self, r: f64, c: f64) -> Option<usize> {
        let (r, c) = (r.round(), c.round());
        if r < 0.0 || c < 0.0 || r >= self.h as f64 || c >= self.w as f64 {
            return None;
        }
        let i = r as usize * self.w + c as usize;
        self.disc[i].then_some(i)
    }

    fn random_point(&mut self, within: f64) -> (f64, f64) {
        let rho = self.radius * within * self.rng.random::<f64>().sqrt();
        let theta = self.rng.random_range(0.0..std::f64::consts::TAU);
        (self.center.0 + rho * theta.sin(), self.center.1 + rho * theta.cos())
    }

    fn mark_defect(&mut self, i: usize, f: f64) {
        if self.functional[i] {
            return;
        }
        if self.defect[i] {
            self.factor[i] = self.factor[i].min(f);
        } else {
            self.defect[i] = true;
            self.factor[i] = f;
        }
    }

    fn generate(mut self) -> Result<Synthesized> {
        let cfg = self.cfg;
        let base = self.base_field();
        self.functional_lines();
        for _ in 0..count(&mut self.rng, cfg.clusters) {
            self.cluster();
        }
        for _ in 0..count(&mut self.rng, cfg.voids) {
            self.void();
        }
        for _ in 0..count(&mut self.rng, cfg.cracks) {
            self.crack();
        }
        let disc_pixels = self.disc.iter().filter(|&&d| d).count() as f64;
        let (d0, d1) = cfg.single_defect_density;
        let singles = ((disc_pixels * d0).round() as usize, (disc_pixels * d1).round() as usize);
        for _ in 0..count(&mut self.rng, singles) {
            let (r, c) = self.random_point(1.0);
            if let Some(i) = self.index(r, c) {
                let f = pick(&mut self.rng, cfg.defect_darkening);
                self.mark_defect(i, f);
            }
        }
        for _ in 0..count(&mut self.rng, cfg.film_tears) {
            self.film_tear();
        }
        for _ in 0..count(&mut self.rng, cfg.artefacts) {
            self.artefact();
        }

        let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::Generation(e.to_string()))?;
        let n = self.h * self.w;
        let mut image = vec![0u8; n];
        let mut labels = vec![Class::Background as u8; n];
        for i in 0..n {
            if !self.disc[i] || self.functional[i] {
                continue;
            }
            let jitter = if cfg.noise_std > 0.0 { noise.sample(&mut self.rng) } else { 0.0 };
            let v = base[i] * self.factor[i] + jitter;
            image[i] = v.round().clamp(1.0, 255.0) as u8;
            labels[i] = if self.defect[i] { Class::Defect } else { Class::InSpec } as u8;
        }
        let meta = SampleMeta {
            source: format!("synth-{}", cfg.seed),
            augmentation: Augmentation::Original,
        };
        Ok(Synthesized {
            sample: WaferSample::new(self.h, self.w, image, labels, meta)?,
            defect_mask: self.defect,
        })
    }

    /// Base brightness with a linear gradient, darker rim and soft spots.
    fn base_field(&mut self) -> Vec<f64> {
        let cfg = self.cfg;
        let offset = pick(&mut self.rng, cfg.base_brightness);
        let angle = self.rng.random_range(0.0..std::f64::consts::TAU);
        let amp = self.rng.random_range(0.0..=1.0) * cfg.gradient_amplitude;
        let spots: Vec<(f64, f64, f64, f64)> = (0..count(&mut self.rng, cfg.spot_count))
            .map(|_| {
                let (r, c) = self.random_point(0.9);
                let rad = pick(&mut self.rng, cfg.spot_radius) * self.radius;
                let a = self.rng.random_range(-1.0..=1.0) * cfg.spot_amplitude;
                (r, c, rad, a)
            })
            .collect();
        let (sin, cos) = angle.sin_cos();
        (0..self.h * self.w)
            .map(|i| {
                if !self.disc[i] {
                    return 0.0;
                }
                let dy = ((i / self.w) as f64 - self.center.0) / self.radius;
                let dx = ((i % self.w) as f64 - self.center.1) / self.radius;
                let rho2 = dy * dy + dx * dx;
                let mut v = offset + amp * 0.5 * (dy * sin + dx * cos) - cfg.edge_falloff * rho2 * rho2;
                for &(sr, sc, rad, a) in &spots {
                    let d2 = ((i / self.w) as f64 - sr).powi(2) + ((i % self.w) as f64 - sc).powi(2);
                    v += a * (-d2 / (2.0 * rad * rad)).exp();
                }
                v
            })
            .collect()
    }

    fn functional_lines(&mut self) {
        for _ in 0..count(&mut self.rng, self.cfg.functional_lines) {
            let horizontal = self.rng.random_bool(0.5);
            let offset = self.rng.random_range(-0.6..0.6) * self.radius;
            if horizontal {
                let r = (self.center.0 + offset).round();
                for c in 0..self.w {
                    if let Some(i) = self.index(r, c as f64) {
                        self.functional[i] = true;
                    }
                }
            } else {
                let c = (self.center.1 + offset).round();
                for r in 0..self.h {
                    if let Some(i) = self.index(r as f64, c) {
                        self.functional[i] = true;
                    }
                }
            }
        }
    }

    fn fill_ellipse(&mut self, (cy, cx): (f64, f64), a: f64, b: f64, theta: f64) -> Vec<usize> {
        let reach = a.max(b).ceil() as i64 + 1;
        let (sin, cos) = theta.sin_cos();
        let mut hits = Vec::new();
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (r, c) = (cy.round() + dr as f64, cx.round() + dc as f64);
                let (y, x) = (r - cy, c - cx);
                let u = x * cos + y * sin;
                let v = -x * sin + y * cos;
                if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                    if let Some(i) = self.index(r, c) {
                        hits.push(i);
                    }
                }
            }
        }
        hits
    }

    /// Irregular region built from overlapping ellipses. Darkening varies
    /// smoothly from a dark core towards a lighter rim with a sharp edge.
    fn cluster(&mut self) {
        let cfg = self.cfg;
        let center = self.random_point(0.8);
        let core = pick(&mut self.rng, cfg.defect_darkening);
        let rim = pick(&mut self.rng, (core, cfg.defect_darkening.1));
        let lobes = count(&mut self.rng, cfg.cluster_lobes);
        let mut extent: f64 = 1.0;
        let mut cells = Vec::new();
        for _ in 0..lobes {
            let a = (pick(&mut self.rng, cfg.cluster_lobe_radius) * self.radius).max(0.75);
            let b = (a * self.rng.random_range(0.4..=1.0)).max(0.75);
            let theta = self.rng.random_range(0.0..std::f64::consts::PI);
            let jitter = cfg.cluster_lobe_radius.1 * self.radius;
            let lobe_center = (
                center.0 + self.rng.random_range(-1.0..=1.0) * jitter,
                center.1 + self.rng.random_range(-1.0..=1.0) * jitter,
            );
            extent = extent.max(a + jitter * std::f64::consts::SQRT_2);
            cells.extend(self.fill_ellipse(lobe_center, a, b, theta));
        }
        for i in cells {
            let d = (((i / self.w) as f64 - center.0).powi(2) + ((i % self.w) as f64 - center.1).powi(2)).sqrt();
            let t = (d / extent).clamp(0.0, 1.0);
            let smooth = t * t * (3.0 - 2.0 * t);
            self.mark_defect(i, core + (rim - core) * smooth);
        }
    }

    fn void(&mut self) {
        let cfg = self.cfg;
        let center = self.random_point(0.95);
        let a = (pick(&mut self.rng, cfg.void_radius) * self.radius).max(0.75);
        let b = (a * self.rng.random_range(0.7..=1.0)).max(0.75);
        let theta = self.rng.random_range(0.0..std::f64::consts::PI);
        let f = pick(&mut self.rng, (cfg.defect_darkening.0, (cfg.defect_darkening.0 + cfg.defect_darkening.1) / 2.0));
        for i in self.fill_ellipse(center, a, b, theta) {
            self.mark_defect(i, f);
        }
    }

    /// Traces a jittered polyline and returns the pixels it passes through.
    fn trace(&mut self, length: f64, segments: usize, bend: f64) -> Vec<usize> {
        let (mut r, mut c) = self.random_point(0.9);
        let mut heading = self.rng.random_range(0.0..std::f64::consts::TAU);
        let seg_len = length / segments as f64;
        let mut hits = Vec::new();
        for _ in 0..segments {
            let steps = (seg_len * 2.0).ceil().max(1.0) as usize;
            let (s, co) = heading.sin_cos();
            for _ in 0..steps {
                r += 0.5 * s;
                c += 0.5 * co;
                if let Some(i) = self.index(r, c) {
                    if hits.last() != Some(&i) {
                        hits.push(i);
                    }
                }
            }
            heading += self.rng.random_range(-bend..=bend);
        }
        hits
    }

    fn crack(&mut self) {
        let cfg = self.cfg;
        let length = pick(&mut self.rng, cfg.crack_length) * self.radius;
        let segments = self.rng.random_range(2..=4);
        let f = pick(&mut self.rng, cfg.defect_darkening);
        for i in self.trace(length, segments, 0.6) {
            self.mark_defect(i, f);
        }
    }

    /// Long, gently curved, moderately dark streak; stays in-spec.
    fn film_tear(&mut self) {
        let cfg = self.cfg;
        let length = pick(&mut self.rng, cfg.film_tear_length) * self.radius;
        let f = pick(&mut self.rng, cfg.film_tear_darkening);
        let thick = self.radius > 60.0;
        for i in self.trace(length, 6, 0.15) {
            let mut cells = vec![i];
            if thick && i + 1 < self.h * self.w && self.disc[i + 1] {
                cells.push(i + 1);
            }
            for j in cells {
                self.factor[j] *= f;
            }
        }
    }

    /// Small bright blob from the measurement; stays in-spec.
    fn artefact(&mut self) {
        let cfg = self.cfg;
        let center = self.random_point(0.9);
        let a = (pick(&mut self.rng, cfg.artefact_radius) * self.radius).max(0.75);
        let f = pick(&mut self.rng, cfg.artefact_brightening);
        for i in self.fill_ellipse(center, a, a, 0.0) {
            if !self.defect[i] {
                self.factor[i] *= f;
            }
        }
    }
}
