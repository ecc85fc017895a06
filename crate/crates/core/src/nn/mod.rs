//! Neural building blocks: LSTM cell, pyramidal subsampling, layer
//! normalization and windowed multi-head attention.

mod attention;
mod layer_norm;
mod lstm;

pub use attention::{AttentionWeights, HeadMemory, Projection, SelfAttention};
pub use layer_norm::{layer_norm, LayerNorm, LAYER_NORM_EPS};
pub use lstm::{pyramid_subsample, LstmCell, LstmState};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::Tensor;

pub(crate) fn uniform_tensor(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}
