//! Token error rate with an insertion / deletion / substitution breakdown.

use alloc::vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub insertions: usize,
    pub deletions: usize,
    pub substitutions: usize,
    /// Reference length.
    pub reference: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.insertions + self.deletions + self.substitutions
    }

    /// `errors / reference`, or the raw insertion count for an empty reference.
    pub fn rate(&self) -> f64 {
        if self.reference == 0 {
            self.insertions as f64
        } else {
            self.errors() as f64 / self.reference as f64
        }
    }

    /// `1 − rate` over the accumulated corpus.
    pub fn accuracy(&self) -> f64 {
        1.0 - self.rate()
    }
}

impl core::ops::AddAssign for EditCounts {
    fn add_assign(&mut self, o: Self) {
        self.insertions += o.insertions;
        self.deletions += o.deletions;
        self.substitutions += o.substitutions;
        self.reference += o.reference;
    }
}

impl core::iter::Sum for EditCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |mut a, b| {
            a += b;
            a
        })
    }
}

/// Unit-cost Levenshtein alignment. Among minimum-cost alignments the
/// backtrace prefers match/substitution, then deletion, then insertion.
pub fn edit_counts<T: PartialEq>(hyp: &[T], reference: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut c = EditCounts { reference: n, ..Default::default() };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(reference[i - 1] != hyp[j - 1]) {
            if reference[i - 1] != hyp[j - 1] {
                c.substitutions += 1;
            }
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

/// `(rate, insertions, deletions, substitutions)`.
pub fn token_error_rate<T: PartialEq>(hyp: &[T], reference: &[T]) -> (f64, usize, usize, usize) {
    let c = edit_counts(hyp, reference);
    (c.rate(), c.insertions, c.deletions, c.substitutions)
}
