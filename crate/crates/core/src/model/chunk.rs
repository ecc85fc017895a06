use alloc::vec::Vec;
use core::ops::Range;

/// Encoder outputs split into consecutive non-overlapping chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkedEncoderOutput<T> {
    pub chunks: Vec<Vec<T>>,
}

impl<T> ChunkedEncoderOutput<T> {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.chunks.iter().map(Vec::len).collect()
    }

    pub fn flatten(self) -> Vec<T> {
        self.chunks.into_iter().flatten().collect()
    }
}

/// `ceil(len / w)` ranges; all of width `w` except possibly the last.
pub fn chunk_ranges(len: usize, w: usize) -> Vec<Range<usize>> {
    assert!(w >= 1, "chunk width must be positive");
    (0..len.div_ceil(w)).map(|c| c * w..((c + 1) * w).min(len)).collect()
}

pub fn chunk_encoder_outputs<T: Clone>(h: &[T], w: usize) -> ChunkedEncoderOutput<T> {
    ChunkedEncoderOutput { chunks: chunk_ranges(h.len(), w).into_iter().map(|r| h[r].to_vec()).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn widths() {
        let h: Vec<usize> = (0..100).collect();
        let c = chunk_encoder_outputs(&h, 4);
        assert_eq!(c.len(), 25);
        assert!(c.widths().iter().all(|&w| w == 4));
        assert_eq!(chunk_encoder_outputs(&h[..10], 4).widths(), [4, 4, 2]);
        assert_eq!(chunk_encoder_outputs(&h[..3], 4).widths(), [3]);
    }

    proptest! {
        #[test]
        fn concatenation_is_identity(len in 1usize..200, w in 1usize..20) {
            let h: Vec<usize> = (0..len).collect();
            let c = chunk_encoder_outputs(&h, w);
            prop_assert_eq!(c.len(), len.div_ceil(w));
            prop_assert_eq!(c.widths().iter().sum::<usize>(), len);
            prop_assert_eq!(c.flatten(), h);
        }
    }
}
