//! Finite-difference verification of reverse-mode gradients.
//!
//! Errors are compared per parameter tensor as
//! `‖g_a − g_fd‖ / max(1e-8, ‖g_a‖ + ‖g_fd‖)` with Euclidean norms, so that
//! entries whose gradient is at the finite-difference noise floor do not
//! dominate the result.

use alloc::string::String;
use alloc::vec::Vec;

use crate::model::Model;
use crate::ops::{Eval, Ops};
use crate::tape::{Gradients, Tape};
use crate::{math, ParamStore, Result};

/// Default step of the five-point central stencil.
pub const FD_STEP: f64 = 3e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Relative error per parameter tensor, in store order.
    pub per_param: Vec<(String, f64)>,
    pub max_relative: f64,
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| math::sqrt(v.map(|x| x * x).sum());
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    diff / scale.max(1e-8)
}

/// Compares `analytic` with fourth-order central differences of `f` around
/// `params`.
pub fn check_gradients(
    params: &ParamStore,
    analytic: &Gradients,
    f: impl Fn(&ParamStore) -> Result<f64>,
    step: f64,
) -> Result<GradCheck> {
    let mut work = params.clone();
    let mut per_param = Vec::with_capacity(params.len());
    for (idx, (p, g)) in params.iter().zip(analytic.iter()).enumerate() {
        let id = crate::ParamId(idx);
        let mut numeric = Vec::with_capacity(p.tensor.len());
        for i in 0..p.tensor.len() {
            let orig = p.tensor.data()[i];
            let mut at = |k: f64| {
                work.get_mut(id).data_mut()[i] = orig + k * step;
                f(&work)
            };
            let (p2, p1, m1, m2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
            work.get_mut(id).data_mut()[i] = orig;
            numeric.push((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step));
        }
        per_param.push((p.name.clone(), relative_error(g.data(), &numeric)));
    }
    let max_relative = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheck { per_param, max_relative })
}

/// End-to-end check of the transducer loss of one utterance with respect to
/// every model parameter (teacher forcing, no scheduled sampling).
pub fn check_model(model: &Model, features: &[Vec<f64>], targets: &[usize], step: f64) -> Result<GradCheck> {
    let mut tape = Tape::new(model.params());
    let loss = model.utterance_nll(&mut tape, features, targets, targets)?;
    let grads = tape.backward(loss)?;
    // model code reaches parameters only through the executor
    check_gradients(
        model.params(),
        &grads,
        |ps| {
            let mut ops = Eval::new(ps);
            let v = model.utterance_nll(&mut ops, features, targets, targets)?;
            Ok(ops.value(&v).item())
        },
        step,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Touches every differentiable op once.
    fn composite<O: Ops>(ops: &mut O, ids: &[crate::ParamId], x: &Tensor) -> Result<O::V> {
        let [w1, m, g, b, w2] = [ids[0], ids[1], ids[2], ids[3], ids[4]].map(|i| ops.param(i));
        let x = ops.constant(x.clone());
        let h = ops.matvec(&w1, &x);
        let h = ops.tanh(&h);
        let t = ops.matvec_t(&m, &h);
        let s = ops.sigmoid(&t);
        let p = ops.mul(&s, &t);
        let ln = ops.layer_norm(&p, &g, &b, 1e-5);
        let c = ops.concat(&[ln.clone(), h.clone()]);
        let sl = ops.slice(&c, 1, 6);
        let sm = ops.softmax(&sl);
        let sc = ops.scale(&sm, 3.0);
        let sum = ops.add(&sl, &sc);
        let st = ops.stack(&[sc, sum]);
        let r = ops.row(&st, 1);
        let lsm = ops.log_softmax(&r);
        let z = ops.matvec(&w2, &r);
        let mut rows = Vec::new();
        for k in 0..6 {
            let zz = ops.scale(&z, 1.0 + k as f64 * 0.3);
            let v = ops.add(&zz, &lsm);
            rows.push(ops.slice(&v, k % 3, 3));
        }
        let logits = ops.stack(&rows);
        let nll = ops.transducer_nll(&logits, 2, &[1, 2])?;
        Ok(ops.sum(&[nll, lsm]))
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let ids = [
                store.add("w1", random(&mut rng, &[5, 4])).unwrap(),
                store.add("m", random(&mut rng, &[5, 4])).unwrap(),
                store.add("g", random(&mut rng, &[4])).unwrap(),
                store.add("b", random(&mut rng, &[4])).unwrap(),
                store.add("w2", random(&mut rng, &[6, 6])).unwrap(),
            ];
            let x = random(&mut rng, &[4]);
            let mut tape = Tape::new(&store);
            let loss = composite(&mut tape, &ids, &x).unwrap();
            let grads = tape.backward(loss).unwrap();
            let check = check_gradients(
                &store,
                &grads,
                |ps| {
                    let mut ops = Eval::new(ps);
                    let v = composite(&mut ops, &ids, &x)?;
                    Ok(ops.value(&v).item())
                },
                FD_STEP,
            )
            .unwrap();
            assert!(check.max_relative <= 1e-6, "seed {seed}: {:?}", check.per_param);
        }
    }

    #[test]
    fn unreached_parameters_get_zero() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::vector(alloc::vec![1.0, 2.0])).unwrap();
        store.add("unused", Tensor::vector(alloc::vec![3.0])).unwrap();
        let mut tape = Tape::new(&store);
        let p = tape.param(a);
        let s = tape.sum(&[p]);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.get(a).data(), &[1.0, 1.0]);
        assert_eq!(g.iter().nth(1).unwrap().data(), &[0.0]);
        assert!(tape.backward(s).is_err());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::vector(alloc::vec![1.0, 2.0])).unwrap();
        let mut tape = Tape::new(&store);
        let p = tape.param(a);
        assert!(tape.backward(p).is_err());
    }

    #[test]
    fn tiny_model_end_to_end() {
        let cfg = ModelConfig {
            feature_dim: 3,
            pyramid_layers: 2,
            lstm_layers: 1,
            encoder_dim: 8,
            decoder_dim: 8,
            heads: 2,
            context: 1,
            chunk_width: 2,
            vocab_size: 3,
            ..Default::default()
        };
        let model = Model::new(cfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let feats: Vec<Vec<f64>> = (0..16).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let check = check_model(&model, &feats, &[2, 1], FD_STEP).unwrap();
        assert!(check.max_relative <= 1e-5, "{:?}", check.per_param);
    }
}
