//! Region and boundary quality metrics for label maps.
//!
//! Boundary pixels are pixels with at least one 4-neighbour of a different
//! label; the image border does not create boundaries. Distances are
//! Chebyshev (8-connected), computed exactly by multi-source BFS.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result, ShapeDesc};
use crate::field::LabelMap;

/// Per-class IoU (`None` for classes absent from both maps) and their mean.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

fn check_pair(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::ShapeMismatch {
            what: "label maps",
            expected: ShapeDesc([1, 1, gt.height(), gt.width()]),
            found: ShapeDesc([1, 1, pred.height(), pred.width()]),
        });
    }
    Ok(())
}

fn check_classes(map: &LabelMap, classes: usize) -> Result<()> {
    let max = map.max_label();
    if max as usize >= classes {
        return Err(Error::LabelOutOfRange {
            label: max,
            classes,
        });
    }
    Ok(())
}

/// Intersection and union pixel counts per class, pooled over any number of
/// label-map pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IouAccumulator {
    intersection: Vec<u64>,
    union: Vec<u64>,
}

impl IouAccumulator {
    pub fn new(classes: usize) -> Self {
        Self {
            intersection: vec![0; classes],
            union: vec![0; classes],
        }
    }

    /// Adds one pair; with `mask`, only pixels where it is `true` count.
    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap, mask: Option<&[bool]>) -> Result<()> {
        check_pair(pred, gt)?;
        let k = self.intersection.len();
        check_classes(pred, k)?;
        check_classes(gt, k)?;
        for (p, (&a, &b)) in pred.data().iter().zip(gt.data()).enumerate() {
            if mask.is_some_and(|m| !m[p]) {
                continue;
            }
            let (a, b) = (a as usize, b as usize);
            self.union[a] += 1;
            if a == b {
                self.intersection[a] += 1;
            } else {
                self.union[b] += 1;
            }
        }
        Ok(())
    }

    /// Whether any pixel has been counted.
    pub fn is_empty(&self) -> bool {
        self.union.iter().all(|&u| u == 0)
    }

    pub fn report(&self) -> IouReport {
        let per_class: Vec<Option<f64>> = self
            .intersection
            .iter()
            .zip(&self.union)
            .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let miou = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        IouReport { per_class, miou }
    }
}

/// Per-class IoU and mean IoU over classes present in either map.
pub fn miou(pred: &LabelMap, gt: &LabelMap, classes: usize) -> Result<IouReport> {
    let mut acc = IouAccumulator::new(classes);
    acc.add(pred, gt, None)?;
    Ok(acc.report())
}

/// Marks pixels that have a 4-neighbour with a different label.
pub fn boundary_pixels(labels: &LabelMap) -> Vec<bool> {
    let (h, w) = (labels.height(), labels.width());
    let d = labels.data();
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let v = d[y * w + x];
            let differs = (y > 0 && d[(y - 1) * w + x] != v)
                || (y + 1 < h && d[(y + 1) * w + x] != v)
                || (x > 0 && d[y * w + x - 1] != v)
                || (x + 1 < w && d[y * w + x + 1] != v);
            out[y * w + x] = differs;
        }
    }
    out
}

/// Chebyshev distance from every pixel to the nearest `true` source, or
/// `u32::MAX` when there is no source.
pub fn chebyshev_distance(sources: &[bool], height: usize, width: usize) -> Vec<u32> {
    let mut dist = vec![u32::MAX; height * width];
    let mut queue = VecDeque::new();
    for (p, &s) in sources.iter().enumerate() {
        if s {
            dist[p] = 0;
            queue.push_back(p);
        }
    }
    while let Some(p) = queue.pop_front() {
        let (y, x) = ((p / width) as isize, (p % width) as isize);
        let next = dist[p] + 1;
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= height as isize || nx >= width as isize {
                    continue;
                }
                let q = ny as usize * width + nx as usize;
                if dist[q] == u32::MAX {
                    dist[q] = next;
                    queue.push_back(q);
                }
            }
        }
    }
    dist
}

/// Pixels within Chebyshev distance `width` of a ground-truth boundary pixel.
pub fn boundary_band(gt: &LabelMap, width: u32) -> Vec<bool> {
    let edges = boundary_pixels(gt);
    chebyshev_distance(&edges, gt.height(), gt.width())
        .into_iter()
        .map(|d| d <= width)
        .collect()
}

/// Mean IoU restricted to the boundary band of `gt`; `None` if the band is
/// empty (no boundary in the ground truth).
pub fn trimap_iou(pred: &LabelMap, gt: &LabelMap, classes: usize, width: u32) -> Result<Option<f64>> {
    check_pair(pred, gt)?;
    let band = boundary_band(gt, width);
    let mut acc = IouAccumulator::new(classes);
    acc.add(pred, gt, Some(&band))?;
    Ok((!acc.is_empty()).then(|| acc.report().miou))
}

/// Matched and total boundary pixel counts for precision and recall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BoundaryCounts {
    pub pred_matched: u64,
    pub pred_total: u64,
    pub gt_matched: u64,
    pub gt_total: u64,
}

impl BoundaryCounts {
    pub fn merge(&mut self, other: &BoundaryCounts) {
        self.pred_matched += other.pred_matched;
        self.pred_total += other.pred_total;
        self.gt_matched += other.gt_matched;
        self.gt_total += other.gt_total;
    }

    /// F = 2PR / (P + R); 1 when both boundary sets are empty, 0 when only
    /// one is.
    pub fn fmeasure(&self) -> f64 {
        match (self.pred_total, self.gt_total) {
            (0, 0) => 1.0,
            (0, _) | (_, 0) => 0.0,
            _ => {
                let p = self.pred_matched as f64 / self.pred_total as f64;
                let r = self.gt_matched as f64 / self.gt_total as f64;
                if p + r == 0.0 {
                    0.0
                } else {
                    2.0 * p * r / (p + r)
                }
            }
        }
    }
}

/// Per-class distance maps to the boundary pixels of one label map.
struct ClassBoundaryDistances {
    edges: Vec<bool>,
    dist: Vec<Vec<u32>>,
}

impl ClassBoundaryDistances {
    fn new(labels: &LabelMap, classes: usize) -> Self {
        let edges = boundary_pixels(labels);
        let dist = (0..classes)
            .map(|c| {
                let src: Vec<bool> = edges
                    .iter()
                    .zip(labels.data())
                    .map(|(&e, &l)| e && l as usize == c)
                    .collect();
                chebyshev_distance(&src, labels.height(), labels.width())
            })
            .collect();
        Self { edges, dist }
    }
}

fn match_counts(
    pred: &LabelMap,
    gt: &LabelMap,
    pred_d: &ClassBoundaryDistances,
    gt_d: &ClassBoundaryDistances,
    tol: u32,
) -> BoundaryCounts {
    let mut counts = BoundaryCounts::default();
    for p in 0..pred.len() {
        if pred_d.edges[p] {
            counts.pred_total += 1;
            if gt_d.dist[pred.data()[p] as usize][p] <= tol {
                counts.pred_matched += 1;
            }
        }
        if gt_d.edges[p] {
            counts.gt_total += 1;
            if pred_d.dist[gt.data()[p] as usize][p] <= tol {
                counts.gt_matched += 1;
            }
        }
    }
    counts
}

fn class_count(pred: &LabelMap, gt: &LabelMap) -> usize {
    (pred.max_label().max(gt.max_label()) as usize + 1)
        .max(pred.classes())
        .max(gt.classes())
}

/// Boundary counts of one pair at tolerance `tol`.
pub fn boundary_counts(pred: &LabelMap, gt: &LabelMap, tol: u32) -> Result<BoundaryCounts> {
    check_pair(pred, gt)?;
    let k = class_count(pred, gt);
    let pd = ClassBoundaryDistances::new(pred, k);
    let gd = ClassBoundaryDistances::new(gt, k);
    Ok(match_counts(pred, gt, &pd, &gd, tol))
}

/// Boundary F-measure: a predicted boundary pixel is a hit when a
/// ground-truth boundary pixel of the same class lies within Chebyshev
/// distance `tol`, and symmetrically for recall.
pub fn boundary_fmeasure(pred: &LabelMap, gt: &LabelMap, tol: u32) -> Result<f64> {
    Ok(boundary_counts(pred, gt, tol)?.fmeasure())
}

/// Dataset-level evaluation report.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    /// Band width to trimap IoU; `None` when no image has a boundary.
    pub trimap_iou: BTreeMap<u32, Option<f64>>,
    /// Tolerance to boundary F-measure.
    pub boundary_f: BTreeMap<u32, f64>,
    pub images: usize,
}

/// Pools IoU, trimap IoU and boundary counts over a dataset.
///
/// Counts are summed over images before ratios are taken.
#[derive(Debug, Clone)]
pub struct Evaluator {
    classes: usize,
    iou: IouAccumulator,
    trimap: Vec<(u32, IouAccumulator)>,
    boundary: Vec<(u32, BoundaryCounts)>,
    images: usize,
}

impl Evaluator {
    pub fn new(classes: usize, widths: &[u32], tolerances: &[u32]) -> Self {
        Self {
            classes,
            iou: IouAccumulator::new(classes),
            trimap: widths
                .iter()
                .map(|&w| (w, IouAccumulator::new(classes)))
                .collect(),
            boundary: tolerances
                .iter()
                .map(|&t| (t, BoundaryCounts::default()))
                .collect(),
            images: 0,
        }
    }

    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        check_pair(pred, gt)?;
        self.iou.add(pred, gt, None)?;
        if !self.trimap.is_empty() {
            let dist = chebyshev_distance(&boundary_pixels(gt), gt.height(), gt.width());
            for (width, acc) in &mut self.trimap {
                let band: Vec<bool> = dist.iter().map(|&d| d <= *width).collect();
                acc.add(pred, gt, Some(&band))?;
            }
        }
        if !self.boundary.is_empty() {
            let pd = ClassBoundaryDistances::new(pred, self.classes);
            let gd = ClassBoundaryDistances::new(gt, self.classes);
            for (tol, counts) in &mut self.boundary {
                counts.merge(&match_counts(pred, gt, &pd, &gd, *tol));
            }
        }
        self.images += 1;
        Ok(())
    }

    pub fn report(&self) -> EvalReport {
        let iou = self.iou.report();
        EvalReport {
            per_class_iou: iou.per_class,
            miou: iou.miou,
            trimap_iou: self
                .trimap
                .iter()
                .map(|(w, acc)| (*w, (!acc.is_empty()).then(|| acc.report().miou)))
                .collect(),
            boundary_f: self
                .boundary
                .iter()
                .map(|(t, c)| (*t, c.fmeasure()))
                .collect(),
            images: self.images,
        }
    }
}
