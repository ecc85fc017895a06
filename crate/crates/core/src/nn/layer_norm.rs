use alloc::format;
use alloc::vec::Vec;

use crate::ops::{self, Ops};
use crate::{Error, ParamId, ParamStore, Result, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn register(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("{prefix}: layer norm needs dim >= 2, got {dim}")));
        }
        let gain = Tensor::vector(alloc::vec![1.0; dim]);
        Ok(Self {
            gain: store.add(format!("{prefix}.gain"), gain)?,
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[dim]))?,
            dim,
            eps: LAYER_NORM_EPS,
        })
    }

    pub fn bind(store: &ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: crate::model::bind(store, &format!("{prefix}.gain"), &[dim])?,
            bias: crate::model::bind(store, &format!("{prefix}.bias"), &[dim])?,
            dim,
            eps: LAYER_NORM_EPS,
        })
    }

    pub fn apply<O: Ops>(&self, ops: &mut O, x: &O::V) -> O::V {
        let g = ops.param(self.gain);
        let b = ops.param(self.bias);
        ops.layer_norm(x, &g, &b, self.eps)
    }
}

/// `gain ⊙ (x − mean) / sqrt(var + eps) + bias` with population variance.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::Dimension(format!("layer norm needs at least 2 entries, got {}", x.len())));
    }
    if gain.len() != x.len() || bias.len() != x.len() {
        return Err(Error::Dimension(format!(
            "layer norm over {} entries with gain {} / bias {}",
            x.len(),
            gain.len(),
            bias.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::Config("layer norm epsilon must be positive".into()));
    }
    Ok(ops::layer_norm(x, gain, bias, eps).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn constant_vector_maps_to_zero() {
        let y = layer_norm(&[3.0; 5], &[1.0; 5], &[0.0; 5], LAYER_NORM_EPS).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn closed_form_two_entries() {
        let y = layer_norm(&[1.0, 3.0], &[1.0; 2], &[0.0; 2], 1e-300).unwrap();
        assert!((y[0] + 1.0).abs() < 1e-15 && (y[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shift_invariant() {
        let x = vec![0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = x.iter().map(|v| v + 17.0).collect();
        let a = layer_norm(&x, &[1.0; 4], &[0.0; 4], LAYER_NORM_EPS).unwrap();
        let b = layer_norm(&shifted, &[1.0; 4], &[0.0; 4], LAYER_NORM_EPS).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(layer_norm(&[1.0], &[1.0], &[0.0], LAYER_NORM_EPS).is_err());
        assert!(layer_norm(&[1.0, 2.0], &[1.0], &[0.0, 0.0], LAYER_NORM_EPS).is_err());
        assert!(layer_norm(&[1.0, 2.0], &[1.0; 2], &[0.0; 2], 0.0).is_err());
        let mut store = ParamStore::new();
        assert!(LayerNorm::register(&mut store, "ln", 1).is_err());
    }
}
