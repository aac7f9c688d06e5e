//! Flat storage for the topic-pair tables.
//!
//! Two shapes appear throughout: an upper-triangular table over unordered
//! distinct pairs (within-week co-occurrence) and a full square table over
//! ordered pairs (across-week transitions). Both are stored as flat vectors;
//! these helpers map between (topic, topic) and flat indices.
//!
//! Topics are 1-based ids; rows iterate `a < b` for the triangular shape and
//! row-major `(a, b)` for the square shape.

use crate::taxonomy::TopicId;

/// Number of unordered distinct pairs over `m` topics.
pub fn tri_len(m: usize) -> usize {
    m * (m - 1) / 2
}

/// Flat index of the unordered pair `{a, b}`, `a != b`, ids 1-based.
pub fn tri_index(m: usize, a: TopicId, b: TopicId) -> usize {
    let (lo, hi) = if a.get() < b.get() { (a, b) } else { (b, a) };
    let i = (lo.get() - 1) as usize;
    let j = (hi.get() - 1) as usize;
    debug_assert!(j < m);
    // row i holds pairs (i, i+1..m): offset of row i is sum of previous rows
    i * (2 * m - i - 1) / 2 + (j - i - 1)
}

/// Inverse of [`tri_index`]: the `(a, b)` pair (a < b) at a flat index.
pub fn tri_pair_at(m: usize, mut idx: usize) -> (TopicId, TopicId) {
    let mut i = 0usize;
    loop {
        let row = m - i - 1;
        if idx < row {
            return (TopicId::new((i + 1) as u16), TopicId::new((i + idx + 2) as u16));
        }
        idx -= row;
        i += 1;
    }
}

/// Flat index of the ordered pair `(a, b)` in an `m x m` table, ids 1-based.
pub fn sq_index(m: usize, a: TopicId, b: TopicId) -> usize {
    let i = (a.get() - 1) as usize;
    let j = (b.get() - 1) as usize;
    debug_assert!(i < m && j < m);
    i * m + j
}

/// Inverse of [`sq_index`].
pub fn sq_pair_at(m: usize, idx: usize) -> (TopicId, TopicId) {
    (
        TopicId::new((idx / m + 1) as u16),
        TopicId::new((idx % m + 1) as u16),
    )
}

/// Iterate all unordered pairs `(a, b)`, `a < b`, in flat-index order.
pub fn tri_pairs(m: usize) -> impl Iterator<Item = (TopicId, TopicId)> {
    (1..=m as u16).flat_map(move |a| {
        (a + 1..=m as u16).map(move |b| (TopicId::new(a), TopicId::new(b)))
    })
}
