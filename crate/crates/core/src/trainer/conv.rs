//! 3×3 convolutions (padding 1) via im2col, and the three-layer encoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{BroError, Result};
use crate::episodes::FEATURE_STRIDE;
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

const K: usize = 3;
const PAD: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    /// `[out, in, 3, 3]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub stride: usize,
}

fn out_extent(n: usize, stride: usize) -> usize {
    (n + 2 * PAD - K) / stride + 1
}

/// `(C·9) × (OH·OW)` patch matrix; rows ordered `(c, ky, kx)` to match the weight layout.
fn im2col(x: &Tensor, stride: usize) -> Result<(Tensor, usize, usize)> {
    let (c, h, w) = x.dims3()?;
    let (oh, ow) = (out_extent(h, stride), out_extent(w, stride));
    let src = x.data();
    let mut cols = vec![0.0; c * K * K * oh * ow];
    for ci in 0..c {
        for ky in 0..K {
            for kx in 0..K {
                let row = (ci * K + ky) * K + kx;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - PAD as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - PAD as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst[oy * ow + ox] = src[(ci * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::new(vec![c * K * K, oh * ow], cols)?, oh, ow))
}

fn col2im(cols: &Tensor, c: usize, h: usize, w: usize, stride: usize) -> Tensor {
    let (oh, ow) = (out_extent(h, stride), out_extent(w, stride));
    let src = cols.data();
    let mut x = vec![0.0; c * h * w];
    for ci in 0..c {
        for ky in 0..K {
            for kx in 0..K {
                let row = (ci * K + ky) * K + kx;
                let col = &src[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - PAD as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - PAD as isize;
                        if ix >= 0 && (ix as usize) < w {
                            x[(ci * h + iy as usize) * w + ix as usize] += col[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, h, w], x).expect("c×h×w buffer")
}

/// Patch matrix and input extents kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache {
    cols: Tensor,
    input: (usize, usize, usize),
}

/// Gradients of one convolution's parameters.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    /// He-normal weights, zero bias.
    pub fn he_init(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, stride: usize) -> Self {
        let fan_in = (c_in * K * K) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let weight = (0..c_out * c_in * K * K).map(|_| normal.sample(rng)).collect();
        Self {
            weight: Tensor::new(vec![c_out, c_in, K, K], weight).expect("weight buffer"),
            bias: Tensor::zeros(&[c_out]),
            stride,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn weight_matrix(&self) -> Tensor {
        self.weight
            .reshape(&[self.out_channels(), self.in_channels() * K * K])
            .expect("conv weight is out×in×3×3")
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        let input = x.dims3()?;
        if input.0 != self.in_channels() {
            return Err(BroError::Dimension {
                op: "conv2d",
                left: x.shape().to_vec(),
                right: self.weight.shape().to_vec(),
            });
        }
        let (cols, oh, ow) = im2col(x, self.stride)?;
        let mut y = matmul(&self.weight_matrix(), &cols)?;
        let plane = oh * ow;
        for (o, b) in self.bias.data().iter().enumerate() {
            y.data_mut()[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v += b);
        }
        Ok((y.reshape(&[self.out_channels(), oh, ow])?, ConvCache { cols, input }))
    }

    /// Returns the input gradient and the parameter gradients.
    pub fn backward(&self, cache: &ConvCache, grad_y: &Tensor) -> Result<(Tensor, ConvGrads)> {
        let out = self.out_channels();
        let g = grad_y.reshape(&[out, grad_y.len() / out])?;
        let g_w = matmul_nt(&g, &cache.cols)?.reshape(self.weight.shape())?;
        let g_b = Tensor::new(vec![out], g.data().chunks(g.shape()[1]).map(|r| r.iter().sum()).collect())?;
        let g_cols = matmul_tn(&self.weight_matrix(), &g)?;
        let (c, h, w) = cache.input;
        Ok((
            col2im(&g_cols, c, h, w, self.stride),
            ConvGrads {
                weight: g_w,
                bias: g_b,
            },
        ))
    }
}

/// Zero mean and unit variance per image; a constant image only loses its mean.
pub fn standardize(image: &Tensor) -> Tensor {
    let n = image.len() as f64;
    let mean = image.sum() / n;
    let var = image.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = if var > 1e-24 { 1.0 / var.sqrt() } else { 1.0 };
    image.map(|v| (v - mean) * inv)
}

/// Input is standardized first. `1 → 8 → 16 → D` channels, strides `(2, 2, 1)`, ReLU after the first two
/// layers; the last layer is linear so features can take either sign.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub layers: Vec<Conv2d>,
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    convs: Vec<ConvCache>,
    /// Post-ReLU activations of the hidden layers.
    hidden: Vec<Tensor>,
}

impl Encoder {
    pub const WIDTHS: [usize; 2] = [8, 16];
    pub const STRIDES: [usize; 3] = [2, 2, 1];

    pub fn new(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = [1, Self::WIDTHS[0], Self::WIDTHS[1], channels];
        Self {
            layers: (0..3)
                .map(|i| Conv2d::he_init(&mut rng, c[i], c[i + 1], Self::STRIDES[i]))
                .collect(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, Conv2d::out_channels)
    }

    /// Maps an H×W image to a D×(H/4)×(W/4) feature map.
    pub fn forward(&self, image: &Tensor) -> Result<(Tensor, EncoderCache)> {
        let (h, w) = image.dims2()?;
        if h % FEATURE_STRIDE != 0 || w % FEATURE_STRIDE != 0 {
            return Err(BroError::Shape {
                shape: vec![h, w],
                reason: format!("image extents must be divisible by {FEATURE_STRIDE}"),
            });
        }
        let mut x = standardize(image).reshape(&[1, h, w])?;
        let mut convs = Vec::with_capacity(self.layers.len());
        let mut hidden = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, cache) = layer.forward(&x)?;
            convs.push(cache);
            x = if i < last {
                let a = y.map(|v| v.max(0.0));
                hidden.push(a.clone());
                a
            } else {
                y
            };
        }
        Ok((x, EncoderCache { convs, hidden }))
    }

    pub fn backward(&self, cache: &EncoderCache, grad_out: &Tensor) -> Result<Vec<ConvGrads>> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                // ReLU: pass gradient where the activation is positive
                for (gv, &a) in g.data_mut().iter_mut().zip(cache.hidden[i].data()) {
                    if a <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            let (g_in, pg) = self.layers[i].backward(&cache.convs[i], &g)?;
            grads.push(pg);
            g = g_in;
        }
        grads.reverse();
        Ok(grads)
    }
}
