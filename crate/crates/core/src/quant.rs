//! Symmetric per-tensor 8-bit weight quantization.

use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, ParamStore, Result, Tensor};

pub const QMAX: f64 = 127.0;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub scale: f32,
    pub data: Vec<i8>,
}

impl QuantizedTensor {
    pub fn dequantize(&self) -> Tensor {
        let s = f64::from(self.scale);
        Tensor::new(self.shape.clone(), self.data.iter().map(|&q| s * f64::from(q)).collect())
            .expect("quantized data matches its shape")
    }
}

/// `scale = max|w| / 127` (1 for an all-zero tensor), rounded to f32 since
/// that is what gets stored; values are rounded half away from zero.
pub fn quantize_tensor(t: &Tensor) -> Result<QuantizedTensor> {
    if t.data().iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite);
    }
    let max = t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !max.is_finite() {
        return Err(Error::NonFinite);
    }
    let scale = if max == 0.0 { 1.0 } else { (max / QMAX) as f32 };
    let s = f64::from(scale);
    let data = t.data().iter().map(|&w| libm::round(w / s).clamp(-QMAX, QMAX) as i8).collect();
    Ok(QuantizedTensor { shape: t.shape().to_vec(), scale, data })
}

/// Whether a parameter is stored as 8-bit. Matrices (including the
/// embedding) are; biases and LayerNorm parameters stay in float.
pub fn is_weight(t: &Tensor) -> bool {
    t.shape().len() >= 2
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    Float(Tensor),
    Int8(QuantizedTensor),
}

impl StoredTensor {
    pub fn to_tensor(&self) -> Tensor {
        match self {
            Self::Float(t) => t.clone(),
            Self::Int8(q) => q.dequantize(),
        }
    }
}

/// Named tensors in parameter order, some quantized.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedParams {
    pub tensors: Vec<(String, StoredTensor)>,
}

pub fn quantize_weights(params: &ParamStore) -> Result<QuantizedParams> {
    let tensors = params
        .iter()
        .map(|p| {
            let stored = if is_weight(&p.tensor) {
                StoredTensor::Int8(quantize_tensor(&p.tensor)?)
            } else {
                if p.tensor.data().iter().any(|v| v.is_nan()) {
                    return Err(Error::NonFinite);
                }
                StoredTensor::Float(p.tensor.clone())
            };
            Ok((p.name.clone(), stored))
        })
        .collect::<Result<_>>()?;
    Ok(QuantizedParams { tensors })
}

/// Dequantizes into a parameter store with the original names and order.
pub fn dequantize_params(q: &QuantizedParams) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for (name, t) in &q.tensors {
        store.add(name, t.to_tensor())?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_matrix() {
        let q = quantize_tensor(&Tensor::zeros(&[2, 3])).unwrap();
        assert_eq!(q.scale, 1.0);
        assert!(q.data.iter().all(|&v| v == 0));
    }

    #[test]
    fn unit_extremes_round_trip() {
        let t = Tensor::new(alloc::vec![1, 2], alloc::vec![-1.0, 1.0]).unwrap();
        let q = quantize_tensor(&t).unwrap();
        assert_eq!(q.scale, (1.0f64 / 127.0) as f32);
        assert_eq!(q.data, [-127, 127]);
        let back = q.dequantize();
        for (a, b) in back.data().iter().zip(t.data()) {
            assert!((a - b).abs() <= f64::from(q.scale) / 2.0);
        }
    }

    #[test]
    fn half_rounds_away_from_zero() {
        let t = Tensor::new(alloc::vec![1, 3], alloc::vec![127.0, 2.5, -2.5]).unwrap();
        let q = quantize_tensor(&t).unwrap();
        assert_eq!(q.scale, 1.0);
        assert_eq!(q.data, [127, 3, -3]);
    }

    #[test]
    fn nan_is_rejected() {
        let t = Tensor::new(alloc::vec![1, 2], alloc::vec![f64::NAN, 1.0]).unwrap();
        assert!(quantize_tensor(&t).is_err());
    }

    #[test]
    fn only_matrices_are_quantized() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(alloc::vec![2, 2], alloc::vec![0.1, -0.2, 0.3, 0.4]).unwrap()).unwrap();
        s.add("b", Tensor::vector(alloc::vec![0.123456789])).unwrap();
        let q = quantize_weights(&s).unwrap();
        assert!(matches!(q.tensors[0].1, StoredTensor::Int8(_)));
        assert!(matches!(&q.tensors[1].1, StoredTensor::Float(t) if t.data() == [0.123456789]));
        let back = dequantize_params(&q).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.iter().nth(1).unwrap().tensor.data(), &[0.123456789]);
    }

    proptest! {
        #[test]
        fn error_bound_and_idempotence(v in prop::collection::vec(-10.0f64..10.0, 1..64)) {
            let t = Tensor::new(alloc::vec![1, v.len()], v).unwrap();
            let q = quantize_tensor(&t).unwrap();
            let half = f64::from(q.scale) / 2.0;
            for (a, b) in q.dequantize().data().iter().zip(t.data()) {
                prop_assert!((a - b).abs() <= half + 1e-12);
            }
            let again = quantize_tensor(&q.dequantize()).unwrap();
            prop_assert_eq!(&again.data, &q.data);
        }
    }
}
