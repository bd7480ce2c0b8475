//! Scaled-down architectures for the three modalities.
//!
//! Every model ends in a dense layer with four outputs read as
//! `[mu_sbp, s_sbp, mu_dbp, s_dbp]`.

use super::layers::{Activation, LayerSpec, Shape};
use super::NetworkSpec;

pub const DEFAULT_DROPOUT_RPPG: f64 = 0.2;
pub const DEFAULT_DROPOUT_PPG: f64 = 0.5;
pub const DEFAULT_DROPOUT_IMAGE: f64 = 0.5;

const HEAD_OUTPUTS: usize = 4;

fn relu() -> LayerSpec {
    LayerSpec::Activation {
        function: Activation::Relu,
    }
}

fn tanh() -> LayerSpec {
    LayerSpec::Activation {
        function: Activation::Tanh,
    }
}

/// Two conv blocks over a `rows × frames` rPPG window, then a dense head.
pub fn rppg_model(rows: usize, frames: usize, p: f64) -> NetworkSpec {
    NetworkSpec::Sequential {
        input: Shape::new(rows, frames),
        layers: vec![
            LayerSpec::Conv1d {
                out_channels: 8,
                kernel: 7,
            },
            relu(),
            LayerSpec::AvgPool { size: 2 },
            LayerSpec::Dropout { p },
            LayerSpec::Conv1d {
                out_channels: 8,
                kernel: 5,
            },
            relu(),
            LayerSpec::Dropout { p },
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { out: 16 },
            tanh(),
            LayerSpec::Dropout { p },
            LayerSpec::Dense { out: HEAD_OUTPUTS },
        ],
    }
}

fn branch() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv1d {
            out_channels: 6,
            kernel: 5,
        },
        relu(),
        LayerSpec::AvgPool { size: 2 },
        LayerSpec::Conv1d {
            out_channels: 6,
            kernel: 5,
        },
        relu(),
        LayerSpec::GlobalAvgPool,
    ]
}

/// Pulse reconstruction from a spatio-temporal map followed by PPG/VPG/APG branches.
pub fn ppg_model(map_rows: usize, frames: usize, p: f64) -> NetworkSpec {
    NetworkSpec::PulseBp {
        input: Shape::new(map_rows, frames),
        recon: vec![
            LayerSpec::Conv1d {
                out_channels: 8,
                kernel: 1,
            },
            tanh(),
            LayerSpec::Conv1d {
                out_channels: 1,
                kernel: 5,
            },
        ],
        branches: [branch(), branch(), branch()],
        head: vec![
            LayerSpec::Dropout { p },
            LayerSpec::Dense { out: 16 },
            tanh(),
            LayerSpec::Dropout { p },
            LayerSpec::Dense { out: HEAD_OUTPUTS },
        ],
    }
}

/// Dense network over an appearance feature vector.
pub fn image_model(features: usize, p: f64) -> NetworkSpec {
    NetworkSpec::Sequential {
        input: Shape::flat(features),
        layers: vec![
            LayerSpec::Dense { out: 32 },
            relu(),
            LayerSpec::Dropout { p },
            LayerSpec::Dense { out: 32 },
            relu(),
            LayerSpec::Dropout { p },
            LayerSpec::Dense { out: HEAD_OUTPUTS },
        ],
    }
}
