//! Label maps, probability fields and potential fields.
//!
//! All tensors are stored row-major in a flat `Vec<f64>`. Probability fields
//! are laid out `[class][y][x]`; potential field sets are direction-major,
//! `[direction][class][y][x]`.

mod conv;

pub use conv::{
    anisotropic_adjoint, anisotropic_convolve, potential_oracle, standard_adjoint,
    standard_convolve, Conversion,
};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result, ShapeDesc};

/// Integer class-index image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 || classes == 0 {
            return Err(Error::InvalidShape("label map dimensions must be positive"));
        }
        if data.len() != height * width {
            return Err(Error::InvalidShape("label buffer length != height * width"));
        }
        if let Some(&label) = data.iter().find(|&&v| v as usize >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            height,
            width,
            classes,
            data,
        })
    }

    /// Constant map filled with `label`.
    pub fn filled(height: usize, width: usize, classes: usize, label: u32) -> Result<Self> {
        Self::new(height, width, classes, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.data[y * self.width + x]
    }

    /// Largest label present.
    pub fn max_label(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Same pixels, reinterpreted with a different class count.
    pub fn with_classes(&self, classes: usize) -> Result<Self> {
        Self::new(self.height, self.width, classes, self.data.clone())
    }

    /// Applies `perm` to every label (`new = perm[old]`).
    pub fn relabel(&self, perm: &[u32]) -> Result<Self> {
        let data = self.data.iter().map(|&v| perm[v as usize]).collect();
        Self::new(self.height, self.width, self.classes, data)
    }
}

/// Per-class, per-pixel probability tensor (`K x H x W`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityField {
    classes: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ProbabilityField {
    pub fn new(classes: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if classes == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidShape("field dimensions must be positive"));
        }
        if data.len() != classes * height * width {
            return Err(Error::InvalidShape("field buffer length != K * H * W"));
        }
        Ok(Self {
            classes,
            height,
            width,
            data,
        })
    }

    pub fn zeros(classes: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(classes, height, width, vec![0.0; classes * height * width])
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, class: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[class * n..(class + 1) * n]
    }

    pub fn plane_mut(&mut self, class: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[class * n..(class + 1) * n]
    }

    #[inline]
    pub fn get(&self, class: usize, y: usize, x: usize) -> f64 {
        self.data[(class * self.height + y) * self.width + x]
    }

    pub fn shape(&self) -> ShapeDesc {
        ShapeDesc([1, self.classes, self.height, self.width])
    }

    pub(crate) fn expect_same_shape(&self, other: &Self, what: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                what,
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    pub(crate) fn expect_matches_labels(&self, labels: &LabelMap, what: &'static str) -> Result<()> {
        if self.height != labels.height() || self.width != labels.width() {
            return Err(Error::ShapeMismatch {
                what,
                expected: self.shape(),
                found: ShapeDesc([1, labels.classes(), labels.height(), labels.width()]),
            });
        }
        if labels.max_label() as usize >= self.classes {
            return Err(Error::LabelOutOfRange {
                label: labels.max_label(),
                classes: self.classes,
            });
        }
        Ok(())
    }

    /// Largest deviation of a per-pixel class sum from 1.
    pub fn max_simplex_deviation(&self) -> f64 {
        let n = self.plane_len();
        (0..n)
            .map(|p| {
                let s: f64 = (0..self.classes).map(|c| self.data[c * n + p]).sum();
                libm::fabs(s - 1.0)
            })
            .fold(0.0, f64::max)
    }

    /// Arg-max class per pixel; ties go to the lower class index.
    pub fn argmax(&self) -> LabelMap {
        let n = self.plane_len();
        let data = (0..n)
            .map(|p| {
                let mut best = 0usize;
                for c in 1..self.classes {
                    if self.data[c * n + p] > self.data[best * n + p] {
                        best = c;
                    }
                }
                best as u32
            })
            .collect();
        LabelMap {
            height: self.height,
            width: self.width,
            classes: self.classes,
            data,
        }
    }

    /// Reorders class channels: output channel `perm[c]` holds input channel `c`.
    pub fn permute_classes(&self, perm: &[u32]) -> Self {
        let n = self.plane_len();
        let mut out = vec![0.0; self.data.len()];
        for (c, &dst) in perm.iter().enumerate().take(self.classes) {
            let dst = dst as usize;
            out[dst * n..(dst + 1) * n].copy_from_slice(self.plane(c));
        }
        Self {
            data: out,
            ..*self
        }
    }
}

/// Dimensions of a probability field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FieldDims {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
}

/// One-hot encodes `labels` into a `K`-channel field.
pub fn one_hot(labels: &LabelMap, classes: usize) -> Result<ProbabilityField> {
    if let Some(&label) = labels.data().iter().find(|&&v| v as usize >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let n = labels.len();
    let mut data = vec![0.0; classes * n];
    for (p, &label) in labels.data().iter().enumerate() {
        data[label as usize * n + p] = 1.0;
    }
    ProbabilityField::new(classes, labels.height(), labels.width(), data)
}

/// Which directional stencil an anisotropic convolution uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SplitterKind {
    /// Up, down, left, right.
    A,
    /// The four diagonals.
    B,
    /// Axis directions followed by diagonals.
    C,
}

impl SplitterKind {
    pub const ALL: [SplitterKind; 3] = [SplitterKind::A, SplitterKind::B, SplitterKind::C];

    pub fn name(self) -> &'static str {
        match self {
            SplitterKind::A => "A",
            SplitterKind::B => "B",
            SplitterKind::C => "C",
        }
    }
}

impl core::str::FromStr for SplitterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(SplitterKind::A),
            "B" | "b" => Ok(SplitterKind::B),
            "C" | "c" => Ok(SplitterKind::C),
            _ => Err(Error::InvalidConfig("splitter must be one of A, B, C")),
        }
    }
}

/// Unit pixel offset `(dy, dx)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Direction {
    pub dy: i8,
    pub dx: i8,
}

impl Direction {
    pub const UP: Direction = Direction { dy: -1, dx: 0 };
    pub const DOWN: Direction = Direction { dy: 1, dx: 0 };
    pub const LEFT: Direction = Direction { dy: 0, dx: -1 };
    pub const RIGHT: Direction = Direction { dy: 0, dx: 1 };
    pub const UP_LEFT: Direction = Direction { dy: -1, dx: -1 };
    pub const UP_RIGHT: Direction = Direction { dy: -1, dx: 1 };
    pub const DOWN_LEFT: Direction = Direction { dy: 1, dx: -1 };
    pub const DOWN_RIGHT: Direction = Direction { dy: 1, dx: 1 };

    pub fn reversed(self) -> Direction {
        Direction {
            dy: -self.dy,
            dx: -self.dx,
        }
    }
}

/// Ordered set of directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splitter {
    kind: SplitterKind,
    directions: Vec<Direction>,
}

impl Splitter {
    pub fn kind(&self) -> SplitterKind {
        self.kind
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// Builds splitter `kind`.
///
/// Order: A is up, down, left, right; B is up-left, up-right, down-left,
/// down-right; C is A followed by B.
pub fn make_splitter(kind: SplitterKind) -> Splitter {
    use Direction as D;
    let axis = [D::UP, D::DOWN, D::LEFT, D::RIGHT];
    let diagonal = [D::UP_LEFT, D::UP_RIGHT, D::DOWN_LEFT, D::DOWN_RIGHT];
    let directions = match kind {
        SplitterKind::A => axis.to_vec(),
        SplitterKind::B => diagonal.to_vec(),
        SplitterKind::C => axis.iter().chain(diagonal.iter()).copied().collect(),
    };
    Splitter { kind, directions }
}

/// Anisotropic convolution settings: a fixed all-ones `w x w` box masked per
/// direction to the centre pixel plus the `r = w / 2` pixels along it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcConfig {
    kernel_size: usize,
    splitter: Splitter,
}

impl AcConfig {
    pub fn new(kernel_size: usize, kind: SplitterKind) -> Result<Self> {
        validate_kernel_size(kernel_size)?;
        Ok(Self {
            kernel_size,
            splitter: make_splitter(kind),
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn radius(&self) -> usize {
        self.kernel_size / 2
    }

    pub fn splitter(&self) -> &Splitter {
        &self.splitter
    }
}

/// Kernel sizes must be odd and at least 3.
pub fn validate_kernel_size(w: usize) -> Result<()> {
    if w < 3 || w % 2 == 0 {
        return Err(Error::InvalidKernelSize(w));
    }
    Ok(())
}

/// Potential energies per direction, class and pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialFieldSet {
    directions: usize,
    classes: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl PotentialFieldSet {
    pub fn new(
        directions: usize,
        classes: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if directions == 0 || classes == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidShape("potential field dimensions must be positive"));
        }
        if data.len() != directions * classes * height * width {
            return Err(Error::InvalidShape("potential buffer length != S * K * H * W"));
        }
        Ok(Self {
            directions,
            classes,
            height,
            width,
            data,
        })
    }

    pub fn directions(&self) -> usize {
        self.directions
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.directions, self.classes, self.height, self.width]
    }

    pub fn shape(&self) -> ShapeDesc {
        ShapeDesc(self.dims())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Energy plane for `(direction, class)`.
    pub fn plane(&self, direction: usize, class: usize) -> &[f64] {
        let n = self.plane_len();
        let start = (direction * self.classes + class) * n;
        &self.data[start..start + n]
    }

    pub fn plane_mut(&mut self, direction: usize, class: usize) -> &mut [f64] {
        let n = self.plane_len();
        let start = (direction * self.classes + class) * n;
        &mut self.data[start..start + n]
    }

    pub(crate) fn expect_same_shape(&self, other: &Self, what: &'static str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch {
                what,
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    /// Reorders class channels like [`ProbabilityField::permute_classes`].
    pub fn permute_classes(&self, perm: &[u32]) -> Self {
        let mut out = self.clone();
        for s in 0..self.directions {
            for (c, &dst) in perm.iter().enumerate().take(self.classes) {
                out.plane_mut(s, dst as usize)
                    .copy_from_slice(self.plane(s, c));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_single_pixel() {
        let labels = LabelMap::new(1, 1, 2, vec![0]).unwrap();
        let f = one_hot(&labels, 2).unwrap();
        assert_eq!(f.plane(0), &[1.0]);
        assert_eq!(f.plane(1), &[0.0]);
    }

    #[test]
    fn one_hot_checkerboard() {
        let labels = LabelMap::new(2, 2, 2, vec![0, 1, 1, 0]).unwrap();
        let f = one_hot(&labels, 2).unwrap();
        assert_eq!(f.plane(0), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(f.plane(1), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn one_hot_rejects_large_label() {
        let labels = LabelMap::new(1, 2, 4, vec![0, 3]).unwrap();
        assert_eq!(
            one_hot(&labels, 3),
            Err(Error::LabelOutOfRange {
                label: 3,
                classes: 3
            })
        );
    }

    #[test]
    fn label_map_validates() {
        assert!(LabelMap::new(0, 2, 2, vec![]).is_err());
        assert!(LabelMap::new(1, 2, 2, vec![0]).is_err());
        assert!(matches!(
            LabelMap::new(1, 2, 2, vec![0, 2]),
            Err(Error::LabelOutOfRange { label: 2, .. })
        ));
    }

    #[test]
    fn splitter_sets() {
        let a = make_splitter(SplitterKind::A);
        let b = make_splitter(SplitterKind::B);
        let c = make_splitter(SplitterKind::C);
        assert_eq!(a.len(), 4);
        assert_eq!(b.len(), 4);
        assert_eq!(c.len(), 8);
        assert_eq!(
            a.directions(),
            &[Direction::UP, Direction::DOWN, Direction::LEFT, Direction::RIGHT]
        );
        for d in b.directions() {
            assert!(!a.directions().contains(d));
            assert!(d.dx != 0 && d.dy != 0);
        }
        for (i, d) in c.directions().iter().enumerate() {
            assert!(a.directions().contains(d) || b.directions().contains(d));
            assert!(!c.directions()[..i].contains(d), "duplicate direction");
            assert!(d.dx != 0 || d.dy != 0);
        }
    }

    #[test]
    fn kernel_size_validation() {
        assert!(AcConfig::new(5, SplitterKind::A).is_ok());
        assert_eq!(
            AcConfig::new(4, SplitterKind::A),
            Err(Error::InvalidKernelSize(4))
        );
        assert_eq!(
            AcConfig::new(1, SplitterKind::A),
            Err(Error::InvalidKernelSize(1))
        );
        assert_eq!(AcConfig::new(7, SplitterKind::C).unwrap().radius(), 3);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let f = ProbabilityField::new(2, 1, 2, vec![0.5, 0.2, 0.5, 0.8]).unwrap();
        assert_eq!(f.argmax().data(), &[0, 1]);
    }
}
