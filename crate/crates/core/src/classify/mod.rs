//! ROI classifier: convolution primitives with MAC accounting, a small
//! depthwise-separable network, training and a binary weight format.

mod net;
mod ops;

pub use net::{
    classify_rois, decode_weights, encode_weights, load_weights, save_weights, train, Gradients, Layer, LayerKind,
    NetConfig, ToyNet, TrainConfig, DEFAULT_LABELS,
};
pub use ops::{
    conv2d, conv2d_counted, cross_entropy, depthwise_conv2d, depthwise_conv2d_counted, flops_separable,
    flops_standard, pointwise_conv2d, pointwise_conv2d_counted, ratio_matches_reduction, relu, softmax, ConvSpec,
    Tally, Tensor, PROB_FLOOR,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("class id {0} out of range")]
    Label(usize),
    #[error("weight file at byte {offset}: {reason}")]
    Weights { offset: usize, reason: &'static str },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ClassifyError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClassLabel {
    pub id: usize,
    pub name: String,
}
