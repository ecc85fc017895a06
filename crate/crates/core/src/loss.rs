//! Transducer negative log-likelihood over the chunk-by-label grid.
//!
//! The grid has one column per encoder chunk (`C`) and one row per target
//! prefix length (`U + 1`). From node `(c, u)` a path either emits blank and
//! moves to chunk `c + 1`, or emits `y_{u+1}` and stays in chunk `c`. Every
//! path starts at `(0, 0)` and terminates with a blank emitted at
//! `(C - 1, U)`.
//!
//! All recursions run in log space. Gradients are formed analytically from
//! edge occupancies rather than by taping the recursion.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{self, log_add};
use crate::{Error, Result, Tensor};

pub const BLANK: usize = 0;

/// Largest `C + U` accepted by [`enumerate_paths`].
pub const ENUMERATION_LIMIT: usize = 14;

/// Tolerance on `logsumexp_k log_probs[c][u][k] = 0`.
const NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentGrid {
    chunks: usize,
    classes: usize,
    targets: Vec<usize>,
    log_probs: Vec<f64>,
}

impl AlignmentGrid {
    /// Builds a grid from log-probabilities laid out `[C][U + 1][classes]`.
    pub fn new(chunks: usize, classes: usize, targets: &[usize], log_probs: Vec<f64>) -> Result<Self> {
        let grid = Self::unchecked(chunks, classes, targets, log_probs)?;
        let u1 = targets.len() + 1;
        for slice in 0..chunks * u1 {
            let row = &grid.log_probs[slice * classes..(slice + 1) * classes];
            if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::NonFinite);
            }
            let lse = math::logsumexp_unchecked(row);
            if !(lse.abs() < NORMALIZATION_TOL) {
                return Err(Error::Contract(alloc::format!(
                    "grid slice {slice} is not a log-distribution (logsumexp = {lse})"
                )));
            }
        }
        Ok(grid)
    }

    /// Builds a grid by log-softmax normalizing logits laid out
    /// `[C * (U + 1), classes]`.
    pub fn from_logits(logits: &Tensor, chunks: usize, targets: &[usize]) -> Result<Self> {
        let classes = logits.cols();
        if logits.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut lp = Vec::with_capacity(logits.len());
        for r in 0..logits.rows() {
            lp.extend(crate::ops::log_softmax(logits.row(r)));
        }
        Self::unchecked(chunks, classes, targets, lp)
    }

    fn unchecked(chunks: usize, classes: usize, targets: &[usize], log_probs: Vec<f64>) -> Result<Self> {
        if chunks == 0 {
            return Err(Error::Contract("alignment grid needs at least one chunk".into()));
        }
        if classes < 2 {
            return Err(Error::Contract("alignment grid needs blank plus at least one unit".into()));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y == BLANK || y >= classes) {
            return Err(Error::Contract(alloc::format!("target label {bad} is blank or out of range")));
        }
        let expected = chunks * (targets.len() + 1) * classes;
        if log_probs.len() != expected {
            return Err(Error::Shape {
                expected: vec![chunks, targets.len() + 1, classes],
                got: vec![log_probs.len()],
            });
        }
        Ok(Self { chunks, classes, targets: targets.to_vec(), log_probs })
    }

    pub fn chunks(&self) -> usize {
        self.chunks
    }

    pub fn labels(&self) -> usize {
        self.targets.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    /// Number of stored log-probabilities, `C · (U + 1) · classes`.
    pub fn num_elements(&self) -> usize {
        self.log_probs.len()
    }

    #[inline]
    fn index(&self, c: usize, u: usize, k: usize) -> usize {
        (c * (self.targets.len() + 1) + u) * self.classes + k
    }

    #[inline]
    pub fn log_prob(&self, c: usize, u: usize, k: usize) -> f64 {
        self.log_probs[self.index(c, u, k)]
    }

    #[inline]
    fn blank(&self, c: usize, u: usize) -> f64 {
        self.log_prob(c, u, BLANK)
    }

    /// Log-probability of emitting `y_{u+1}` at `(c, u)`; requires `u < U`.
    #[inline]
    fn emit(&self, c: usize, u: usize) -> f64 {
        self.log_prob(c, u, self.targets[u])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub nll: f64,
    /// `∂nll / ∂log_probs`, same layout as the grid.
    pub grad_log_probs: Vec<f64>,
    /// `∂nll / ∂logits` when the grid is the log-softmax of logits.
    pub grad_logits: Vec<f64>,
    /// `log p(y|x)` from the α recursion.
    pub log_likelihood_forward: f64,
    /// `log p(y|x)` from the β recursion.
    pub log_likelihood_backward: f64,
}

fn alphas(grid: &AlignmentGrid) -> Vec<f64> {
    let (cs, u1) = (grid.chunks, grid.labels() + 1);
    let mut alpha = vec![f64::NEG_INFINITY; cs * u1];
    for c in 0..cs {
        for u in 0..u1 {
            alpha[c * u1 + u] = if c == 0 && u == 0 {
                0.0
            } else {
                let from_blank =
                    if c > 0 { alpha[(c - 1) * u1 + u] + grid.blank(c - 1, u) } else { f64::NEG_INFINITY };
                let from_emit =
                    if u > 0 { alpha[c * u1 + u - 1] + grid.emit(c, u - 1) } else { f64::NEG_INFINITY };
                log_add(from_blank, from_emit)
            };
        }
    }
    alpha
}

fn betas(grid: &AlignmentGrid) -> Vec<f64> {
    let (cs, u1) = (grid.chunks, grid.labels() + 1);
    let mut beta = vec![f64::NEG_INFINITY; cs * u1];
    for c in (0..cs).rev() {
        for u in (0..u1).rev() {
            let via_blank = if c + 1 < cs {
                grid.blank(c, u) + beta[(c + 1) * u1 + u]
            } else if u + 1 == u1 {
                grid.blank(c, u)
            } else {
                f64::NEG_INFINITY
            };
            let via_emit =
                if u + 1 < u1 { grid.emit(c, u) + beta[c * u1 + u + 1] } else { f64::NEG_INFINITY };
            beta[c * u1 + u] = log_add(via_blank, via_emit);
        }
    }
    beta
}

/// `-log p(y|x)` from the α recursion alone.
pub fn nll(grid: &AlignmentGrid) -> Result<f64> {
    let alpha = alphas(grid);
    let u1 = grid.labels() + 1;
    let ll = alpha[(grid.chunks - 1) * u1 + grid.labels()] + grid.blank(grid.chunks - 1, grid.labels());
    if ll == f64::NEG_INFINITY {
        return Err(Error::ImpossibleTarget);
    }
    Ok(-ll)
}

/// Forward-backward over the grid: loss plus gradients with respect to the
/// log-probabilities and to the underlying logits.
pub fn forward_backward(grid: &AlignmentGrid) -> Result<LossResult> {
    let (cs, u_len, k) = (grid.chunks, grid.labels(), grid.classes);
    let u1 = u_len + 1;
    let alpha = alphas(grid);
    let beta = betas(grid);
    let ll_fwd = alpha[(cs - 1) * u1 + u_len] + grid.blank(cs - 1, u_len);
    let ll_bwd = beta[0];
    if ll_fwd == f64::NEG_INFINITY || ll_bwd == f64::NEG_INFINITY {
        return Err(Error::ImpossibleTarget);
    }

    let mut grad_lp = vec![0.0; grid.num_elements()];
    let mut grad_logits = vec![0.0; grid.num_elements()];
    for c in 0..cs {
        for u in 0..u1 {
            let a = alpha[c * u1 + u];
            if a == f64::NEG_INFINITY {
                continue;
            }
            let base = grid.index(c, u, 0);
            let after_blank = if c + 1 < cs {
                beta[(c + 1) * u1 + u]
            } else if u == u_len {
                0.0
            } else {
                f64::NEG_INFINITY
            };
            let gamma_blank = math::exp(a + grid.blank(c, u) + after_blank - ll_fwd);
            let gamma_emit =
                if u < u_len { math::exp(a + grid.emit(c, u) + beta[c * u1 + u + 1] - ll_fwd) } else { 0.0 };
            grad_lp[base + BLANK] -= gamma_blank;
            if u < u_len {
                grad_lp[base + grid.targets[u]] -= gamma_emit;
            }
            // occupancy of the node equals the mass leaving it
            let occupancy = gamma_blank + gamma_emit;
            for j in 0..k {
                grad_logits[base + j] = math::exp(grid.log_probs[base + j]) * occupancy + grad_lp[base + j];
            }
        }
    }

    Ok(LossResult {
        nll: -ll_fwd,
        grad_log_probs: grad_lp,
        grad_logits,
        log_likelihood_forward: ll_fwd,
        log_likelihood_backward: ll_bwd,
    })
}

/// Path-enumeration oracle: log-adds the probability of every alignment.
/// Returns `(nll, number of paths)`.
pub fn enumerate_paths(grid: &AlignmentGrid) -> Result<(f64, u64)> {
    let size = grid.chunks + grid.labels();
    if size > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge { limit: ENUMERATION_LIMIT, got: size });
    }
    let mut total = f64::NEG_INFINITY;
    let mut count = 0u64;
    walk(grid, 0, 0, 0.0, &mut total, &mut count);
    if total == f64::NEG_INFINITY {
        return Err(Error::ImpossibleTarget);
    }
    Ok((-total, count))
}

fn walk(grid: &AlignmentGrid, c: usize, u: usize, acc: f64, total: &mut f64, count: &mut u64) {
    let last_chunk = c + 1 == grid.chunks;
    if last_chunk && u == grid.labels() {
        *total = log_add(*total, acc + grid.blank(c, u));
        *count += 1;
        return;
    }
    if u < grid.labels() {
        walk(grid, c, u + 1, acc + grid.emit(c, u), total, count);
    }
    if !last_chunk {
        walk(grid, c + 1, u, acc + grid.blank(c, u), total, count);
    }
}

/// Frames left after `n_p` floor-halvings.
pub fn subsampled_length(frames: usize, pyramid_layers: u32) -> usize {
    (0..pyramid_layers).fold(frames, |t, _| t / 2)
}

/// Blanks per alignment (= chunk count `C`) for `frames` input frames,
/// total subsampling `mu = 2^{n_p}` and chunk width `w`.
pub fn blank_count_per_alignment(frames: usize, mu: usize, w: usize) -> Result<usize> {
    if !mu.is_power_of_two() {
        return Err(Error::Config(alloc::format!("subsampling factor {mu} is not a power of two")));
    }
    if w == 0 {
        return Err(Error::Config("chunk width must be at least 1".into()));
    }
    if frames < mu {
        return Err(Error::UtteranceTooShort { frames, required: mu });
    }
    let enc = subsampled_length(frames, mu.trailing_zeros());
    Ok(enc.div_ceil(w))
}

/// Element count of the joint output over the chunk grid,
/// `C · (U + 1) · (|Y| + 1)`.
pub fn chunk_grid_elements(chunks: usize, labels: usize, classes: usize) -> usize {
    chunks * (labels + 1) * classes
}

/// Element count of a frame-level transducer joint output over `frames`
/// positions, `T · (U + 1) · (|Y| + 1)`.
pub fn frame_grid_elements(frames: usize, labels: usize, classes: usize) -> usize {
    frames * (labels + 1) * classes
}
