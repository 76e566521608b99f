//! A tiny fully convolutional segmentation network with hand-written
//! backpropagation.
//!
//! Architecture: 3x3 conv (`C_in -> 8`) + ReLU, 3x3 conv (`8 -> 8`) + ReLU,
//! 1x1 conv (`8 -> K`), per-pixel softmax. All convolutions zero-pad.
//! Parameters live in one flat vector laid out as
//! `[w1, b1, w2, b2, w3, b3]` with weights `[out][in][ky][kx]`.

mod train;

pub use train::{train, EpochRecord, History, MonitorConfig, TrainConfig, TrainOutcome};

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result, ShapeDesc};
use crate::field::{Conversion, LabelMap, PotentialFieldSet, ProbabilityField};
use crate::image::Image;
use crate::losses::{ground_truth_energy, training_objective, LossBreakdown, LossConfig};
use crate::rng::{stream, stream_rng};

/// Hidden width of both 3x3 layers.
pub const HIDDEN: usize = 8;

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

impl Layout {
    fn new(in_channels: usize, classes: usize) -> Self {
        let w1 = 0;
        let b1 = w1 + 9 * in_channels * HIDDEN;
        let w2 = b1 + HIDDEN;
        let b2 = w2 + 9 * HIDDEN * HIDDEN;
        let w3 = b2 + HIDDEN;
        let b3 = w3 + HIDDEN * classes;
        Self {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            len: b3 + classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyNet {
    in_channels: usize,
    classes: usize,
    params: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    hidden1: Vec<f64>,
    hidden2: Vec<f64>,
    pub probs: ProbabilityField,
}

impl TinyNet {
    /// Number of parameters for the given input channels and classes.
    pub fn param_count(in_channels: usize, classes: usize) -> usize {
        Layout::new(in_channels, classes).len
    }

    pub fn zeros(in_channels: usize, classes: usize) -> Result<Self> {
        if in_channels == 0 || classes < 2 {
            return Err(Error::InvalidConfig("network needs >= 1 input channel and >= 2 classes"));
        }
        Ok(Self {
            in_channels,
            classes,
            params: vec![0.0; Self::param_count(in_channels, classes)],
        })
    }

    /// Uniform `(-a, a)` initialisation with `a = sqrt(1 / fan_in)` for both
    /// weights and biases of every layer.
    pub fn init(in_channels: usize, classes: usize, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(in_channels, classes)?;
        let l = net.layout();
        let mut rng = stream_rng(seed, stream::INIT, 0);
        let blocks = [
            (l.w1, l.w2, 9 * in_channels),
            (l.w2, l.w3, 9 * HIDDEN),
            (l.w3, l.len, HIDDEN),
        ];
        for (start, end, fan_in) in blocks {
            let a = libm::sqrt(1.0 / fan_in as f64);
            for p in &mut net.params[start..end] {
                *p = rng.random_range(-a..a);
            }
        }
        Ok(net)
    }

    pub fn from_params(in_channels: usize, classes: usize, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(in_channels, classes)?;
        if params.len() != net.params.len() {
            return Err(Error::InvalidShape("parameter vector length does not match architecture"));
        }
        net.params = params;
        Ok(net)
    }

    fn layout(&self) -> Layout {
        Layout::new(self.in_channels, self.classes)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Multiply-accumulate count of one forward pass on an `h x w` image.
    pub fn forward_macs(&self, height: usize, width: usize) -> usize {
        let n = height * width;
        n * (9 * self.in_channels * HIDDEN + 9 * HIDDEN * HIDDEN + HIDDEN * self.classes)
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        if image.channels() != self.in_channels {
            return Err(Error::ShapeMismatch {
                what: "network input",
                expected: ShapeDesc([1, self.in_channels, image.height(), image.width()]),
                found: ShapeDesc([1, image.channels(), image.height(), image.width()]),
            });
        }
        Ok(())
    }

    /// Per-pixel class probabilities.
    pub fn forward(&self, image: &Image) -> Result<ProbabilityField> {
        Ok(self.forward_cached(image)?.probs)
    }

    pub fn forward_cached(&self, image: &Image) -> Result<Activations> {
        self.check_image(image)?;
        let l = self.layout();
        let (h, w) = (image.height(), image.width());
        let p = &self.params;
        let mut hidden1 = conv3x3(
            image.data(),
            self.in_channels,
            HIDDEN,
            h,
            w,
            &p[l.w1..l.b1],
            &p[l.b1..l.w2],
        );
        relu(&mut hidden1);
        let mut hidden2 = conv3x3(&hidden1, HIDDEN, HIDDEN, h, w, &p[l.w2..l.b2], &p[l.b2..l.w3]);
        relu(&mut hidden2);
        let logits = conv1x1(&hidden2, HIDDEN, self.classes, h * w, &p[l.w3..l.b3], &p[l.b3..]);
        let probs = softmax(&logits, self.classes, h, w)?;
        Ok(Activations {
            hidden1,
            hidden2,
            probs,
        })
    }

    /// Gradient of the loss with respect to the parameters, given the
    /// gradient of the loss with respect to the output probabilities.
    pub fn backward_from_probs(
        &self,
        image: &Image,
        acts: &Activations,
        grad_probs: &[f64],
    ) -> Vec<f64> {
        let l = self.layout();
        let (h, w) = (image.height(), image.width());
        let n = h * w;
        let p = &self.params;
        let mut grad = vec![0.0; p.len()];

        let d_logits = softmax_backward(&acts.probs, grad_probs);

        let (gw3, rest) = grad[l.w3..].split_at_mut(l.b3 - l.w3);
        let mut d_hidden2 = vec![0.0; HIDDEN * n];
        conv1x1_backward(
            &acts.hidden2,
            &d_logits,
            HIDDEN,
            self.classes,
            n,
            &p[l.w3..l.b3],
            gw3,
            rest,
            &mut d_hidden2,
        );
        relu_backward(&acts.hidden2, &mut d_hidden2);

        let mut d_hidden1 = vec![0.0; HIDDEN * n];
        {
            let (gw2, gb2) = grad[l.w2..l.w3].split_at_mut(l.b2 - l.w2);
            conv3x3_backward(
                &acts.hidden1,
                &d_hidden2,
                HIDDEN,
                HIDDEN,
                h,
                w,
                &p[l.w2..l.b2],
                gw2,
                gb2,
                Some(&mut d_hidden1),
            );
        }
        relu_backward(&acts.hidden1, &mut d_hidden1);

        let (gw1, gb1) = grad[l.w1..l.w2].split_at_mut(l.b1 - l.w1);
        conv3x3_backward(
            image.data(),
            &d_hidden1,
            self.in_channels,
            HIDDEN,
            h,
            w,
            &p[l.w1..l.b1],
            gw1,
            gb1,
            None,
        );
        grad
    }
}

/// Loss components and parameter gradient of the full training objective on
/// one sample. `gt_energy` may be passed in to reuse a cached conversion of
/// the labels.
pub fn backward(
    net: &TinyNet,
    image: &Image,
    labels: &LabelMap,
    conversion: &Conversion,
    cfg: &LossConfig,
    gt_energy: Option<&PotentialFieldSet>,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let acts = net.forward_cached(image)?;
    let owned;
    let gt_energy = match gt_energy {
        Some(e) => e,
        None => {
            owned = ground_truth_energy(labels, conversion)?;
            &owned
        }
    };
    let (breakdown, grad_probs) = training_objective(&acts.probs, labels, gt_energy, conversion, cfg)?;
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite("training objective"));
    }
    Ok((breakdown, net.backward_from_probs(image, &acts, &grad_probs)))
}

fn relu(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the ReLU output was not positive.
fn relu_backward(output: &[f64], grad: &mut [f64]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Column range `x` such that `x + kx - 1` stays inside `0..w`.
#[inline]
fn valid_range(k: usize, len: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { len - 1 } else { len };
    (lo, hi)
}

fn conv3x3(
    input: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let n = h * w;
    let mut out = vec![0.0; cout * n];
    for o in 0..cout {
        let plane = &mut out[o * n..(o + 1) * n];
        plane.fill(bias[o]);
        for i in 0..cin {
            let src = &input[i * n..(i + 1) * n];
            for ky in 0..3 {
                let (y0, y1) = valid_range(ky, h);
                for kx in 0..3 {
                    let wv = weights[((o * cin + i) * 3 + ky) * 3 + kx];
                    let (x0, x1) = valid_range(kx, w);
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let dst = &mut plane[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (d, &v) in dst.iter_mut().zip(s) {
                            *d += wv * v;
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    d_out: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    d_weights: &mut [f64],
    d_bias: &mut [f64],
    mut d_input: Option<&mut Vec<f64>>,
) {
    let n = h * w;
    for o in 0..cout {
        let go = &d_out[o * n..(o + 1) * n];
        d_bias[o] += go.iter().sum::<f64>();
        for i in 0..cin {
            let src = &input[i * n..(i + 1) * n];
            for ky in 0..3 {
                let (y0, y1) = valid_range(ky, h);
                for kx in 0..3 {
                    let widx = ((o * cin + i) * 3 + ky) * 3 + kx;
                    let (x0, x1) = valid_range(kx, w);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let g = &go[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        acc += g.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                    }
                    d_weights[widx] += acc;
                    if let Some(di) = d_input.as_deref_mut() {
                        let wv = weights[widx];
                        let di = &mut di[i * n..(i + 1) * n];
                        for y in y0..y1 {
                            let sy = y + ky - 1;
                            let g = &go[y * w + x0..y * w + x1];
                            let d = &mut di[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                            for (dv, &gv) in d.iter_mut().zip(g) {
                                *dv += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv1x1(input: &[f64], cin: usize, cout: usize, n: usize, weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cout * n];
    for o in 0..cout {
        let plane = &mut out[o * n..(o + 1) * n];
        plane.fill(bias[o]);
        for i in 0..cin {
            let wv = weights[o * cin + i];
            for (d, &v) in plane.iter_mut().zip(&input[i * n..(i + 1) * n]) {
                *d += wv * v;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv1x1_backward(
    input: &[f64],
    d_out: &[f64],
    cin: usize,
    cout: usize,
    n: usize,
    weights: &[f64],
    d_weights: &mut [f64],
    d_bias: &mut [f64],
    d_input: &mut [f64],
) {
    for o in 0..cout {
        let go = &d_out[o * n..(o + 1) * n];
        d_bias[o] += go.iter().sum::<f64>();
        for i in 0..cin {
            let src = &input[i * n..(i + 1) * n];
            d_weights[o * cin + i] += go.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
            let wv = weights[o * cin + i];
            for (d, &g) in d_input[i * n..(i + 1) * n].iter_mut().zip(go) {
                *d += wv * g;
            }
        }
    }
}

/// Per-pixel softmax over the class axis of `[K][H][W]` logits.
pub fn softmax(logits: &[f64], classes: usize, height: usize, width: usize) -> Result<ProbabilityField> {
    let n = height * width;
    let mut out = vec![0.0; logits.len()];
    for p in 0..n {
        let max = (0..classes)
            .map(|c| logits[c * n + p])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..classes {
            let e = libm::exp(logits[c * n + p] - max);
            out[c * n + p] = e;
            sum += e;
        }
        for c in 0..classes {
            out[c * n + p] /= sum;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax"));
    }
    ProbabilityField::new(classes, height, width, out)
}

/// Pulls a gradient on softmax outputs back to the logits:
/// `dz_k = y_k (g_k - sum_j g_j y_j)`.
pub fn softmax_backward(probs: &ProbabilityField, grad: &[f64]) -> Vec<f64> {
    let (k, n) = (probs.classes(), probs.plane_len());
    let y = probs.data();
    let mut out = vec![0.0; y.len()];
    for p in 0..n {
        let dot: f64 = (0..k).map(|c| grad[c * n + p] * y[c * n + p]).sum();
        for c in 0..k {
            out[c * n + p] = y[c * n + p] * (grad[c * n + p] - dot);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_formula() {
        for (cin, k) in [(1, 2), (1, 3), (3, 5)] {
            let expect = 9 * cin * 8 + 8 + 9 * 8 * 8 + 8 + 8 * k + k;
            assert_eq!(TinyNet::param_count(cin, k), expect);
            assert_eq!(TinyNet::init(cin, k, 1).unwrap().params().len(), expect);
        }
    }

    #[test]
    fn zero_network_is_uniform() {
        let net = TinyNet::zeros(1, 4).unwrap();
        let img = Image::new(1, 3, 5, (0..15).map(|v| v as f64).collect()).unwrap();
        let probs = net.forward(&img).unwrap();
        assert!(probs.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let a = TinyNet::init(1, 3, 5).unwrap();
        let b = TinyNet::init(1, 3, 5).unwrap();
        let c = TinyNet::init(1, 3, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = libm::sqrt(1.0 / 9.0);
        assert!(a.params()[..72].iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn wrong_channel_count() {
        let net = TinyNet::zeros(2, 3).unwrap();
        let img = Image::zeros(1, 4, 4);
        assert!(matches!(net.forward(&img), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn conv3x3_identity_kernel() {
        // centre tap only: output equals input plus bias
        let mut weights = vec![0.0; 9];
        weights[4] = 1.0;
        let input: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let out = conv3x3(&input, 1, 1, 3, 4, &weights, &[0.5]);
        for (o, i) in out.iter().zip(&input) {
            assert_eq!(*o, i + 0.5);
        }
        // top-left tap reads the up-left neighbour, zero outside
        let mut weights = vec![0.0; 9];
        weights[0] = 1.0;
        let out = conv3x3(&input, 1, 1, 3, 4, &weights, &[0.0]);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[5], input[0]);
        assert_eq!(out[11], input[6]);
    }
}
