//! Synthetic scenes that stress the two kinds of semantic boundary:
//! adjacent objects of different classes (inter-class) and touching objects
//! of the same class separated by a thin background gap (intra-class).
//!
//! Class 0 is background. Each pixel's intensity is the base intensity of
//! its class plus Gaussian noise. Every sample draws from its own RNG stream
//! derived from `(seed, index)`, so samples can be generated in any order.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::field::LabelMap;
use crate::image::Image;
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SceneKind {
    /// A chain of rectangles, one per object class, each sharing an edge with
    /// the next.
    AdjacentRects,
    /// For each object class, two disks of that class separated by a
    /// background gap of `gap` pixels.
    TouchingDisks,
    /// Random star-shaped polygons with random object classes.
    RandomPolygons,
    /// Alternates `AdjacentRects` (even indices) and `TouchingDisks` (odd).
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub noise_sigma: f64,
    /// Base intensity per class, background first.
    pub intensities: Vec<f64>,
    pub count: usize,
    pub seed: u64,
    /// Background gap between same-class disks, in pixels (1 or 2).
    pub gap: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            kind: SceneKind::Mixed,
            height: 64,
            width: 64,
            classes: 3,
            noise_sigma: 1.0 / 6.0,
            intensities: vec![0.0, 0.5, 1.0],
            count: 200,
            seed: 0,
            gap: 1,
        }
    }
}

/// Smallest image side the layouts support.
pub const MIN_SIDE: usize = 16;

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes (background + object)"));
        }
        if self.intensities.len() != self.classes {
            return Err(Error::InvalidConfig("one base intensity per class required"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig("noise sigma must be finite and nonnegative"));
        }
        if self.intensities.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("intensities must be finite"));
        }
        for (i, a) in self.intensities.iter().enumerate() {
            for b in &self.intensities[i + 1..] {
                let sep = libm::fabs(a - b);
                if sep == 0.0 || sep < 3.0 * self.noise_sigma {
                    return Err(Error::InvalidConfig(
                        "class intensities must differ by at least 3 sigma",
                    ));
                }
            }
        }
        if self.height < MIN_SIDE || self.width < MIN_SIDE {
            return Err(Error::SceneDoesNotFit("image sides must be at least 16 pixels"));
        }
        if !(1..=2).contains(&self.gap) {
            return Err(Error::InvalidConfig("gap must be 1 or 2 pixels"));
        }
        let objects = self.classes - 1;
        match self.kind {
            SceneKind::AdjacentRects | SceneKind::Mixed
                if 4 * objects + 4 > self.height.max(self.width) =>
            {
                Err(Error::SceneDoesNotFit("too many rectangles for the image size"))
            }
            SceneKind::TouchingDisks | SceneKind::Mixed
                if self.width / objects < 9 || self.height < 4 * 3 + 4 + self.gap =>
            {
                Err(Error::SceneDoesNotFit("too many disk pairs for the image size"))
            }
            _ => Ok(()),
        }
    }
}

/// One image and its annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub labels: LabelMap,
}

/// Generates `spec.count` samples.
pub fn generate_dataset(spec: &SceneSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    (0..spec.count).map(|i| generate_sample(spec, i)).collect()
}

/// Generates sample `index` of the dataset described by `spec`.
pub fn generate_sample(spec: &SceneSpec, index: usize) -> Result<Sample> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, stream::DATASET, index as u64);
    let kind = match spec.kind {
        SceneKind::Mixed if index % 2 == 0 => SceneKind::AdjacentRects,
        SceneKind::Mixed => SceneKind::TouchingDisks,
        k => k,
    };
    let mut canvas = Canvas::new(spec.height, spec.width);
    match kind {
        SceneKind::AdjacentRects => adjacent_rects(&mut canvas, spec.classes - 1, &mut rng),
        SceneKind::TouchingDisks => touching_disks(&mut canvas, spec.classes - 1, spec.gap, &mut rng),
        SceneKind::RandomPolygons => random_polygons(&mut canvas, spec.classes - 1, &mut rng),
        SceneKind::Mixed => unreachable!("resolved above"),
    }
    let labels = LabelMap::new(spec.height, spec.width, spec.classes, canvas.labels)?;
    let mut pixels: Vec<f64> = labels
        .data()
        .iter()
        .map(|&l| spec.intensities[l as usize])
        .collect();
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|_| Error::InvalidConfig("noise sigma"))?;
        for v in &mut pixels {
            *v += normal.sample(&mut rng);
        }
    }
    // Images are stored as float32; keep them exactly representable.
    for v in &mut pixels {
        *v = f64::from(*v as f32);
    }
    let image = Image::new(1, spec.height, spec.width, pixels)?;
    Ok(Sample { image, labels })
}

struct Canvas {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl Canvas {
    fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    /// Fills rows `y0..y1`, columns `x0..x1`, with the roles of the axes
    /// swapped when `transpose` is set.
    fn fill_rect(&mut self, y0: usize, y1: usize, x0: usize, x1: usize, transpose: bool, class: u32) {
        let (y0, y1, x0, x1) = if transpose {
            (x0, x1, y0, y1)
        } else {
            (y0, y1, x0, x1)
        };
        for y in y0..y1 {
            for x in x0..x1 {
                self.labels[y * self.width + x] = class;
            }
        }
    }

    fn fill_disk(&mut self, cy: isize, cx: isize, r: isize, transpose: bool, class: u32) {
        let (cy, cx) = if transpose { (cx, cy) } else { (cy, cx) };
        for y in (cy - r).max(0)..(cy + r + 1).min(self.height as isize) {
            for x in (cx - r).max(0)..(cx + r + 1).min(self.width as isize) {
                if (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r {
                    self.labels[y as usize * self.width + x as usize] = class;
                }
            }
        }
    }
}

/// Splits `total` into `parts` segment lengths, each at least `min`.
fn split_lengths(total: usize, parts: usize, min: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let extra = total - parts * min;
    let mut cuts: Vec<usize> = (0..parts - 1).map(|_| rng.random_range(0..=extra)).collect();
    cuts.sort_unstable();
    let mut lengths = Vec::with_capacity(parts);
    let mut prev = 0;
    for &c in &cuts {
        lengths.push(min + c - prev);
        prev = c;
    }
    lengths.push(min + extra - prev);
    lengths
}

fn object_classes(objects: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut classes: Vec<u32> = (1..=objects as u32).collect();
    classes.shuffle(rng);
    classes
}

fn adjacent_rects(canvas: &mut Canvas, objects: usize, rng: &mut ChaCha8Rng) {
    const MIN_LEN: usize = 4;
    const MARGIN: usize = 2;
    // The chain runs along the "x" axis of the layout; transposing turns it
    // into a vertical chain.
    let square = canvas.height == canvas.width;
    let horizontal_fits = 2 * MARGIN + MIN_LEN * objects <= canvas.width;
    let transpose = if square {
        rng.random_bool(0.5)
    } else {
        !horizontal_fits
    };
    let (along, across) = if transpose {
        (canvas.height, canvas.width)
    } else {
        (canvas.width, canvas.height)
    };

    let min_total = MIN_LEN * objects;
    let total = rng.random_range(min_total.max(along / 3)..=along - 2 * MARGIN);
    let start = rng.random_range(MARGIN..=along - MARGIN - total);
    let lengths = split_lengths(total, objects, MIN_LEN, rng);

    // A shared core interval on the cross axis guarantees every consecutive
    // pair shares an edge segment; each rectangle may extend past it.
    let core_len = rng.random_range(MIN_LEN.max(across / 4)..=across / 2);
    let core0 = rng.random_range(MARGIN..=across - MARGIN - core_len);
    let core1 = core0 + core_len;

    let classes = object_classes(objects, rng);
    let mut a = start;
    for (len, class) in lengths.into_iter().zip(classes) {
        let lo = core0 - rng.random_range(0..=core0 - MARGIN);
        let hi = core1 + rng.random_range(0..=across - MARGIN - core1);
        canvas.fill_rect(lo, hi, a, a + len, transpose, class);
        a += len;
    }
}

fn touching_disks(canvas: &mut Canvas, objects: usize, gap: usize, rng: &mut ChaCha8Rng) {
    let transpose = canvas.height == canvas.width && rng.random_bool(0.5);
    let (rows, cols) = (canvas.height as i64, canvas.width as i64);
    let strip = cols / objects as i64;
    let gap = gap as i64;
    let r_max = ((strip - 3) / 2).min((rows - 4 - gap - 2) / 4).min(14);
    let r_min = 3.min(r_max);

    let classes = object_classes(objects, rng);
    for (i, class) in classes.into_iter().enumerate() {
        let ra = rng.random_range(r_min..=r_max);
        let rb = rng.random_range(r_min..=r_max);
        let rw = ra.max(rb);
        let x0 = i as i64 * strip;
        let cx = rng.random_range(x0 + rw + 1..=x0 + strip - rw - 2);
        // pixel rows strictly between the two disks along the centre column
        let span = ra + rb + 1 + gap;
        let cy_a = rng.random_range(ra + 1..=rows - 2 - span - rb);
        let cy_b = cy_a + span;
        canvas.fill_disk(cy_a as isize, cx as isize, ra as isize, transpose, class);
        canvas.fill_disk(cy_b as isize, cx as isize, rb as isize, transpose, class);
    }
}

fn random_polygons(canvas: &mut Canvas, objects: usize, rng: &mut ChaCha8Rng) {
    let (h, w) = (canvas.height as f64, canvas.width as f64);
    let count = rng.random_range(1..=4);
    for _ in 0..count {
        let class = rng.random_range(1..=objects as u32);
        let radius = rng.random_range(4.0..(h.min(w) / 4.0).max(4.5));
        let cy = rng.random_range(radius..h - radius);
        let cx = rng.random_range(radius..w - radius);
        let n = rng.random_range(3..=7usize);
        let mut angles: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0.0..core::f64::consts::TAU))
            .collect();
        angles.sort_by(f64::total_cmp);
        let verts: Vec<(f64, f64)> = angles
            .iter()
            .map(|&a| {
                let r = radius * rng.random_range(0.6..=1.0);
                (cy + r * libm::sin(a), cx + r * libm::cos(a))
            })
            .collect();
        for y in 0..canvas.height {
            for x in 0..canvas.width {
                if point_in_polygon(y as f64 + 0.5, x as f64 + 0.5, &verts) {
                    canvas.labels[y * canvas.width + x] = class;
                }
            }
        }
    }
}

/// Even-odd rule.
fn point_in_polygon(py: f64, px: f64, verts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = verts.len() - 1;
    for i in 0..verts.len() {
        let (yi, xi) = verts[i];
        let (yj, xj) = verts[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_lengths_respects_minimum() {
        let mut rng = stream_rng(3, 0, 0);
        for parts in 1..5 {
            let l = split_lengths(30, parts, 4, &mut rng);
            assert_eq!(l.len(), parts);
            assert_eq!(l.iter().sum::<usize>(), 30);
            assert!(l.iter().all(|&v| v >= 4));
        }
    }

    #[test]
    fn polygon_membership() {
        let square = [(0.0, 0.0), (0.0, 4.0), (4.0, 4.0), (4.0, 0.0)];
        assert!(point_in_polygon(2.0, 2.0, &square));
        assert!(!point_in_polygon(5.0, 2.0, &square));
    }

    #[test]
    fn validation() {
        assert!(SceneSpec::default().validate().is_ok());
        let bad_k = SceneSpec {
            classes: 1,
            intensities: vec![0.0],
            ..SceneSpec::default()
        };
        assert!(bad_k.validate().is_err());
        let close = SceneSpec {
            noise_sigma: 0.2,
            ..SceneSpec::default()
        };
        assert!(close.validate().is_err());
        let tiny = SceneSpec {
            height: 8,
            width: 8,
            ..SceneSpec::default()
        };
        assert!(matches!(tiny.validate(), Err(Error::SceneDoesNotFit(_))));
    }
}
