use alloc::vec;
use alloc::vec::Vec;

use super::{
    validate_kernel_size, AcConfig, Direction, PotentialFieldSet, ProbabilityField,
};
use crate::error::{Error, Result};

/// Sums `input` along the ray `p, p + s, ..., p + r*s` for every pixel `p`,
/// writing into `out`. Out-of-image samples contribute zero.
///
/// Runs in O(H*W) regardless of `r`: a suffix sum along `s` is built in a
/// traversal order where `p + s` is always visited before `p`, and each ray sum
/// is the difference of two suffix sums. On nonnegative input the difference
/// is never negative, and segments of exact zeros give exact zeros.
fn ray_sum_plane(
    input: &[f64],
    height: usize,
    width: usize,
    dir: Direction,
    radius: usize,
    suffix: &mut [f64],
    out: &mut [f64],
) {
    let (h, w) = (height as isize, width as isize);
    let (dy, dx) = (dir.dy as isize, dir.dx as isize);
    let ys: Vec<isize> = if dy > 0 {
        (0..h).rev().collect()
    } else {
        (0..h).collect()
    };
    let xs: Vec<isize> = if dx > 0 {
        (0..w).rev().collect()
    } else {
        (0..w).collect()
    };
    let inside = |y: isize, x: isize| y >= 0 && y < h && x >= 0 && x < w;

    for &y in &ys {
        for &x in &xs {
            let p = (y * w + x) as usize;
            let (ny, nx) = (y + dy, x + dx);
            let next = if inside(ny, nx) {
                suffix[(ny * w + nx) as usize]
            } else {
                0.0
            };
            suffix[p] = input[p] + next;
        }
    }

    let step = radius as isize + 1;
    for y in 0..h {
        for x in 0..w {
            let p = (y * w + x) as usize;
            let (ey, ex) = (y + step * dy, x + step * dx);
            let tail = if inside(ey, ex) {
                suffix[(ey * w + ex) as usize]
            } else {
                0.0
            };
            out[p] = suffix[p] - tail;
        }
    }
}

/// Converts a probability field into per-direction potential fields.
///
/// `E_s(c)[p] = sum_{t=0..=r} field[c][p + t*s]` with zero padding, for each
/// direction `s` of the splitter and each class `c`.
pub fn anisotropic_convolve(field: &ProbabilityField, cfg: &AcConfig) -> PotentialFieldSet {
    let dirs = cfg.splitter().directions();
    convolve_along(field, dirs, cfg.radius())
}

/// Adjoint of [`anisotropic_convolve`]: scatters potential-field gradients back
/// onto the probability field. The adjoint of a ray sum along `s` is the ray
/// sum along `-s`, accumulated over all directions.
pub fn anisotropic_adjoint(grad: &PotentialFieldSet, cfg: &AcConfig) -> ProbabilityField {
    let dirs = cfg.splitter().directions();
    assert_eq!(grad.directions(), dirs.len(), "direction count mismatch");
    let (k, h, w) = (grad.classes(), grad.height(), grad.width());
    let n = h * w;
    let mut out = vec![0.0; k * n];
    let mut suffix = vec![0.0; n];
    let mut plane = vec![0.0; n];
    for (s, dir) in dirs.iter().enumerate() {
        for c in 0..k {
            ray_sum_plane(
                grad.plane(s, c),
                h,
                w,
                dir.reversed(),
                cfg.radius(),
                &mut suffix,
                &mut plane,
            );
            for (o, v) in out[c * n..(c + 1) * n].iter_mut().zip(&plane) {
                *o += v;
            }
        }
    }
    ProbabilityField::new(k, h, w, out).expect("shape derived from a valid set")
}

fn convolve_along(field: &ProbabilityField, dirs: &[Direction], radius: usize) -> PotentialFieldSet {
    let (k, h, w) = (field.classes(), field.height(), field.width());
    let n = h * w;
    let mut data = vec![0.0; dirs.len() * k * n];
    let mut suffix = vec![0.0; n];
    for (s, dir) in dirs.iter().enumerate() {
        for c in 0..k {
            let start = (s * k + c) * n;
            ray_sum_plane(
                field.plane(c),
                h,
                w,
                *dir,
                radius,
                &mut suffix,
                &mut data[start..start + n],
            );
        }
    }
    PotentialFieldSet::new(dirs.len(), k, h, w, data).expect("shape derived from a valid field")
}

/// Reference conversion by direct per-pixel ray summation.
///
/// Same contract as [`anisotropic_convolve`]; quadratic in the radius and
/// kept deliberately naive so it can serve as a test oracle.
pub fn potential_oracle(field: &ProbabilityField, cfg: &AcConfig) -> PotentialFieldSet {
    let dirs = cfg.splitter().directions();
    let (k, h, w) = (field.classes(), field.height(), field.width());
    let r = cfg.radius() as isize;
    let mut data = Vec::with_capacity(dirs.len() * k * h * w);
    for dir in dirs {
        for c in 0..k {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = 0.0;
                    for t in 0..=r {
                        let yy = y + t * dir.dy as isize;
                        let xx = x + t * dir.dx as isize;
                        if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                            acc += field.get(c, yy as usize, xx as usize);
                        }
                    }
                    data.push(acc);
                }
            }
        }
    }
    PotentialFieldSet::new(dirs.len(), k, h, w, data).expect("shape derived from a valid field")
}

/// Zero-padded `(2r+1) x (2r+1)` box sum of each `h x w` plane via a
/// summed-area table.
fn box_filter(input: &[f64], planes: usize, h: usize, w: usize, r: usize) -> Vec<f64> {
    let n = h * w;
    let mut data = vec![0.0; planes * n];
    // summed-area table with a zero first row/column
    let tw = w + 1;
    let mut table = vec![0.0; (h + 1) * tw];
    for c in 0..planes {
        let plane = &input[c * n..(c + 1) * n];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += plane[y * w + x];
                table[(y + 1) * tw + x + 1] = table[y * tw + x + 1] + row;
            }
        }
        let out = &mut data[c * n..(c + 1) * n];
        for y in 0..h {
            let y0 = y.saturating_sub(r);
            let y1 = (y + r + 1).min(h);
            for x in 0..w {
                let x0 = x.saturating_sub(r);
                let x1 = (x + r + 1).min(w);
                out[y * w + x] = table[y1 * tw + x1] - table[y0 * tw + x1] - table[y1 * tw + x0]
                    + table[y0 * tw + x0];
            }
        }
    }
    data
}

/// Per-class `w x w` all-ones box filter with zero padding, returned as a
/// single-direction potential field set.
pub fn standard_convolve(field: &ProbabilityField, kernel_size: usize) -> Result<PotentialFieldSet> {
    validate_kernel_size(kernel_size)?;
    let (k, h, w) = (field.classes(), field.height(), field.width());
    let mut data = box_filter(field.data(), k, h, w, kernel_size / 2);
    // Clamp round-off from the table differences.
    for v in &mut data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    PotentialFieldSet::new(1, k, h, w, data)
}

/// Adjoint of [`standard_convolve`]; the zero-padded box is self-adjoint.
pub fn standard_adjoint(grad: &PotentialFieldSet, kernel_size: usize) -> Result<ProbabilityField> {
    validate_kernel_size(kernel_size)?;
    if grad.directions() != 1 {
        return Err(Error::InvalidShape("standard convolution has a single plane per class"));
    }
    let (k, h, w) = (grad.classes(), grad.height(), grad.width());
    let data = box_filter(grad.data(), k, h, w, kernel_size / 2);
    ProbabilityField::new(k, h, w, data)
}

/// Probability-to-potential conversion used by the losses: the anisotropic
/// convolution, or the plain box filter for the standard-convolution ablation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Conversion {
    Anisotropic(AcConfig),
    Standard { kernel_size: usize },
}

impl Conversion {
    pub fn kernel_size(&self) -> usize {
        match self {
            Conversion::Anisotropic(cfg) => cfg.kernel_size(),
            Conversion::Standard { kernel_size } => *kernel_size,
        }
    }

    /// Number of equipotential levels, `floor(w / 2)`.
    pub fn radius(&self) -> usize {
        self.kernel_size() / 2
    }

    pub fn directions(&self) -> usize {
        match self {
            Conversion::Anisotropic(cfg) => cfg.splitter().len(),
            Conversion::Standard { .. } => 1,
        }
    }

    pub fn apply(&self, field: &ProbabilityField) -> PotentialFieldSet {
        match self {
            Conversion::Anisotropic(cfg) => anisotropic_convolve(field, cfg),
            Conversion::Standard { kernel_size } => {
                standard_convolve(field, *kernel_size).expect("kernel size validated on construction")
            }
        }
    }

    pub fn adjoint(&self, grad: &PotentialFieldSet) -> ProbabilityField {
        match self {
            Conversion::Anisotropic(cfg) => anisotropic_adjoint(grad, cfg),
            Conversion::Standard { kernel_size } => {
                standard_adjoint(grad, *kernel_size).expect("kernel size validated on construction")
            }
        }
    }

    pub fn standard(kernel_size: usize) -> Result<Self> {
        validate_kernel_size(kernel_size)?;
        Ok(Conversion::Standard { kernel_size })
    }
}
