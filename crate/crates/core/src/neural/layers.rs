//! Layer primitives with explicit forward caches and backward passes.
//!
//! Activations are `channels × length` buffers stored channel-major. Dense layers
//! take flat inputs (`length == 1`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ParamTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub length: usize,
}

impl Shape {
    pub const fn new(channels: usize, length: usize) -> Self {
        Self { channels, length }
    }

    pub const fn flat(n: usize) -> Self {
        Self { channels: n, length: 1 }
    }

    pub fn size(&self) -> usize {
        self.channels * self.length
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
}

const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense { out: usize },
    /// Stride-1 convolution with zero "same" padding; `kernel` must be odd.
    Conv1d { out_channels: usize, kernel: usize },
    Activation { function: Activation },
    Dropout { p: f64 },
    AvgPool { size: usize },
    GlobalAvgPool,
    Flatten,
}

impl LayerSpec {
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let bad = |m: String| Err(Error::config(m));
        match *self {
            LayerSpec::Dense { out } => {
                if input.length != 1 {
                    return bad(format!("dense layer needs flat input, got {input:?}"));
                }
                if out == 0 {
                    return bad("dense layer with zero outputs".into());
                }
                Ok(Shape::flat(out))
            }
            LayerSpec::Conv1d { out_channels, kernel } => {
                if kernel % 2 == 0 || kernel == 0 || out_channels == 0 {
                    return bad(format!("conv1d needs odd kernel and outputs, got k={kernel}"));
                }
                Ok(Shape::new(out_channels, input.length))
            }
            LayerSpec::Activation { .. } | LayerSpec::Dropout { .. } => {
                if let LayerSpec::Dropout { p } = *self {
                    if !(0.0..1.0).contains(&p) {
                        return bad(format!("dropout probability {p} outside [0, 1)"));
                    }
                }
                Ok(input)
            }
            LayerSpec::AvgPool { size } => {
                if size == 0 || input.length < size {
                    return bad(format!("pool size {size} invalid for length {}", input.length));
                }
                Ok(Shape::new(input.channels, input.length / size))
            }
            LayerSpec::GlobalAvgPool => Ok(Shape::new(input.channels, 1)),
            LayerSpec::Flatten => Ok(Shape::flat(input.size())),
        }
    }

    /// Shapes of the weight and bias tensors, if the layer has parameters.
    pub fn param_shapes(&self, input: Shape) -> Option<[Vec<usize>; 2]> {
        match *self {
            LayerSpec::Dense { out } => Some([vec![out, input.channels], vec![out]]),
            LayerSpec::Conv1d { out_channels, kernel } => {
                Some([vec![out_channels, input.channels, kernel], vec![out_channels]])
            }
            _ => None,
        }
    }

    pub fn fan_in(&self, input: Shape) -> usize {
        match *self {
            LayerSpec::Dense { .. } => input.channels,
            LayerSpec::Conv1d { kernel, .. } => input.channels * kernel,
            _ => 0,
        }
    }
}

/// What a layer keeps from its forward pass to run backward.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Vec<f64>),
    Output(Vec<f64>),
    Mask(Vec<f64>),
    None,
}

/// Runs one layer forward. `params` holds `[weight, bias]` for parametric layers.
pub fn forward(
    layer: &LayerSpec,
    input_shape: Shape,
    params: &[ParamTensor],
    x: &[f64],
    dropout: Option<&mut dyn rand::RngCore>,
    keep_cache: bool,
) -> (Vec<f64>, Cache) {
    let keep = |v: &[f64]| if keep_cache { Cache::Input(v.to_vec()) } else { Cache::None };
    match *layer {
        LayerSpec::Dense { out } => {
            let (w, b) = (&params[0].values, &params[1].values);
            let n_in = input_shape.channels;
            let y = (0..out)
                .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
                .collect();
            (y, keep(x))
        }
        LayerSpec::Conv1d { out_channels, kernel } => {
            let y = conv_forward(&params[0].values, &params[1].values, x, input_shape, out_channels, kernel);
            (y, keep(x))
        }
        LayerSpec::Activation { function } => {
            let y: Vec<f64> = match function {
                Activation::Relu => x.iter().map(|v| v.max(0.0)).collect(),
                Activation::LeakyRelu => x.iter().map(|&v| if v > 0.0 { v } else { LEAKY_SLOPE * v }).collect(),
                Activation::Tanh => x.iter().map(|v| v.tanh()).collect(),
            };
            let cache = match (keep_cache, function) {
                (false, _) => Cache::None,
                (true, Activation::Tanh) => Cache::Output(y.clone()),
                (true, _) => Cache::Input(x.to_vec()),
            };
            (y, cache)
        }
        LayerSpec::Dropout { p } => match dropout {
            Some(rng) if p > 0.0 => {
                let scale = 1.0 / (1.0 - p);
                let mask: Vec<f64> = x
                    .iter()
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
                    .collect();
                let y = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
                (y, if keep_cache { Cache::Mask(mask) } else { Cache::None })
            }
            _ => (x.to_vec(), Cache::None),
        },
        LayerSpec::AvgPool { size } => {
            let out_len = input_shape.length / size;
            let mut y = Vec::with_capacity(input_shape.channels * out_len);
            for c in 0..input_shape.channels {
                let row = &x[c * input_shape.length..(c + 1) * input_shape.length];
                y.extend((0..out_len).map(|j| row[j * size..(j + 1) * size].iter().sum::<f64>() / size as f64));
            }
            (y, Cache::None)
        }
        LayerSpec::GlobalAvgPool => {
            let l = input_shape.length;
            let y = (0..input_shape.channels)
                .map(|c| x[c * l..(c + 1) * l].iter().sum::<f64>() / l as f64)
                .collect();
            (y, Cache::None)
        }
        LayerSpec::Flatten => (x.to_vec(), Cache::None),
    }
}

/// Propagates `dy` back through one layer, accumulating parameter gradients.
pub fn backward(layer: &LayerSpec, input_shape: Shape, params: &mut [ParamTensor], cache: &Cache, dy: &[f64]) -> Vec<f64> {
    match *layer {
        LayerSpec::Dense { out } => {
            let Cache::Input(x) = cache else { unreachable!("dense cache") };
            let n_in = input_shape.channels;
            let mut dx = vec![0.0; n_in];
            let (w_part, b_part) = params.split_at_mut(1);
            let w = &mut w_part[0];
            for o in 0..out {
                let g = dy[o];
                b_part[0].grad[o] += g;
                let row = o * n_in..(o + 1) * n_in;
                for ((gw, wv), (xv, d)) in w.grad[row.clone()].iter_mut().zip(&w.values[row]).zip(x.iter().zip(dx.iter_mut())) {
                    *gw += g * xv;
                    *d += g * wv;
                }
            }
            dx
        }
        LayerSpec::Conv1d { out_channels, kernel } => {
            let Cache::Input(x) = cache else { unreachable!("conv cache") };
            conv_backward(params, x, dy, input_shape, out_channels, kernel)
        }
        LayerSpec::Activation { function } => match (function, cache) {
            (Activation::Tanh, Cache::Output(y)) => dy.iter().zip(y).map(|(g, v)| g * (1.0 - v * v)).collect(),
            (Activation::Relu, Cache::Input(x)) => {
                dy.iter().zip(x).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect()
            }
            (Activation::LeakyRelu, Cache::Input(x)) => dy
                .iter()
                .zip(x)
                .map(|(g, v)| if *v > 0.0 { *g } else { LEAKY_SLOPE * g })
                .collect(),
            _ => unreachable!("activation cache"),
        },
        LayerSpec::Dropout { .. } => match cache {
            Cache::Mask(m) => dy.iter().zip(m).map(|(g, k)| g * k).collect(),
            _ => dy.to_vec(),
        },
        LayerSpec::AvgPool { size } => {
            let out_len = input_shape.length / size;
            let mut dx = vec![0.0; input_shape.size()];
            for c in 0..input_shape.channels {
                for j in 0..out_len {
                    let g = dy[c * out_len + j] / size as f64;
                    let base = c * input_shape.length + j * size;
                    dx[base..base + size].iter_mut().for_each(|d| *d = g);
                }
            }
            dx
        }
        LayerSpec::GlobalAvgPool => {
            let l = input_shape.length;
            (0..input_shape.channels)
                .flat_map(|c| std::iter::repeat_n(dy[c] / l as f64, l))
                .collect()
        }
        LayerSpec::Flatten => dy.to_vec(),
    }
}

fn conv_forward(w: &[f64], b: &[f64], x: &[f64], shape: Shape, out_channels: usize, kernel: usize) -> Vec<f64> {
    let (cin, len) = (shape.channels, shape.length);
    let pad = kernel / 2;
    let mut y = vec![0.0; out_channels * len];
    for o in 0..out_channels {
        let yo = &mut y[o * len..(o + 1) * len];
        yo.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..cin {
            let xi = &x[i * len..(i + 1) * len];
            for k in 0..kernel {
                let wv = w[(o * cin + i) * kernel + k];
                // y[t] += w * x[t + k - pad] for all t with a valid source index.
                let t0 = pad.saturating_sub(k);
                let t1 = (len + pad).saturating_sub(k).min(len);
                if t0 >= t1 {
                    continue;
                }
                let s0 = t0 + k - pad;
                for (yv, xv) in yo[t0..t1].iter_mut().zip(&xi[s0..s0 + (t1 - t0)]) {
                    *yv += wv * xv;
                }
            }
        }
    }
    y
}

fn conv_backward(params: &mut [ParamTensor], x: &[f64], dy: &[f64], shape: Shape, out_channels: usize, kernel: usize) -> Vec<f64> {
    let (cin, len) = (shape.channels, shape.length);
    let pad = kernel / 2;
    let mut dx = vec![0.0; cin * len];
    let (w_part, b_part) = params.split_at_mut(1);
    let w = &mut w_part[0];
    for o in 0..out_channels {
        let go = &dy[o * len..(o + 1) * len];
        b_part[0].grad[o] += go.iter().sum::<f64>();
        for i in 0..cin {
            let xi = &x[i * len..(i + 1) * len];
            let dxi = &mut dx[i * len..(i + 1) * len];
            for k in 0..kernel {
                let idx = (o * cin + i) * kernel + k;
                let wv = w.values[idx];
                let t0 = pad.saturating_sub(k);
                let t1 = (len + pad).saturating_sub(k).min(len);
                if t0 >= t1 {
                    continue;
                }
                let s0 = t0 + k - pad;
                let n = t1 - t0;
                let mut acc = 0.0;
                for ((g, xv), d) in go[t0..t1].iter().zip(&xi[s0..s0 + n]).zip(dxi[s0..s0 + n].iter_mut()) {
                    acc += g * xv;
                    *d += g * wv;
                }
                w.grad[idx] += acc;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_rules() {
        let s = Shape::new(3, 150);
        assert_eq!(LayerSpec::Conv1d { out_channels: 8, kernel: 5 }.output_shape(s).unwrap(), Shape::new(8, 150));
        assert_eq!(LayerSpec::AvgPool { size: 2 }.output_shape(s).unwrap(), Shape::new(3, 75));
        assert_eq!(LayerSpec::Flatten.output_shape(s).unwrap(), Shape::flat(450));
        assert!(LayerSpec::Dense { out: 4 }.output_shape(s).is_err());
        assert!(LayerSpec::Conv1d { out_channels: 8, kernel: 4 }.output_shape(s).is_err());
        assert!(LayerSpec::Dropout { p: 1.0 }.output_shape(s).is_err());
    }

    #[test]
    fn same_padding_conv_matches_direct_sum() {
        let shape = Shape::new(2, 6);
        let x: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 2.0).collect();
        let w: Vec<f64> = (0..2 * 2 * 3).map(|v| (v as f64).sin()).collect();
        let b = vec![0.1, -0.2];
        let y = conv_forward(&w, &b, &x, shape, 2, 3);
        for o in 0..2 {
            for t in 0..6 {
                let mut acc = b[o];
                for i in 0..2 {
                    for k in 0..3 {
                        let s = t as isize + k as isize - 1;
                        if (0..6).contains(&s) {
                            acc += w[(o * 2 + i) * 3 + k] * x[i * 6 + s as usize];
                        }
                    }
                }
                assert!((y[o * 6 + t] - acc).abs() < 1e-12);
            }
        }
    }
}
