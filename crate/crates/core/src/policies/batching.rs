use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchingKind {
    #[default]
    Fifo,
    /// Length-aware batching around the head-of-line request.
    Lab,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchingConfig {
    pub kind: BatchingKind,
    pub max_batch_size: usize,
    /// How long an idle target waits for a batch to fill.
    pub window_ms: f64,
    pub similarity_fraction: f64,
}

impl Default for BatchingConfig {
    fn default() -> Self {
        BatchingConfig {
            kind: BatchingKind::Fifo,
            max_batch_size: 16,
            window_ms: 0.0,
            similarity_fraction: 0.2,
        }
    }
}

impl BatchingConfig {
    /// Picks members from `lengths` (queue order, all eligible).
    pub fn select(&self, lengths: &[u32]) -> Vec<usize> {
        match self.kind {
            BatchingKind::Fifo => batch_fifo(lengths.len(), self.max_batch_size),
            BatchingKind::Lab => batch_lab(lengths, self.max_batch_size, self.similarity_fraction),
        }
    }
}

/// The first `min(max_batch_size, queue_len)` entries.
pub fn batch_fifo(queue_len: usize, max_batch_size: usize) -> Vec<usize> {
    (0..queue_len.min(max_batch_size.max(1))).collect()
}

/// Head-of-line entry plus, in queue order, every entry whose length lies
/// within `similarity_fraction * head_length` of the head's.
pub fn batch_lab(lengths: &[u32], max_batch_size: usize, similarity_fraction: f64) -> Vec<usize> {
    let Some(&head) = lengths.first() else {
        return Vec::new();
    };
    let cap = max_batch_size.max(1);
    let band = similarity_fraction * f64::from(head);
    let mut out = vec![0];
    for (i, &len) in lengths.iter().enumerate().skip(1) {
        if out.len() >= cap {
            break;
        }
        if (f64::from(len) - f64::from(head)).abs() <= band {
            out.push(i);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fifo_examples() {
        assert_eq!(batch_fifo(3, 2), vec![0, 1]);
        assert_eq!(batch_fifo(1, 8), vec![0]);
        assert_eq!(batch_fifo(5, 8), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn lab_twenty_percent_band() {
        assert_eq!(batch_lab(&[100, 110, 300, 95], 8, 0.2), vec![0, 1, 3]);
    }

    #[test]
    fn lab_equal_lengths_is_fifo() {
        let lens = [7u32; 10];
        assert_eq!(batch_lab(&lens, 4, 0.2), batch_fifo(10, 4));
    }

    #[test]
    fn lab_zero_fraction_exact_matches() {
        assert_eq!(batch_lab(&[50, 51, 50, 49, 50], 8, 0.0), vec![0, 2, 4]);
    }

    proptest! {
        #[test]
        fn lab_never_skips_head(
            lens in proptest::collection::vec(1u32..1000, 1..40),
            cap in 1usize..16,
            frac in 0.0f64..1.0,
        ) {
            let b = batch_lab(&lens, cap, frac);
            prop_assert_eq!(b[0], 0);
            prop_assert!(b.len() <= cap);
            prop_assert!(b.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
