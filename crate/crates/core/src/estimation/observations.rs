//! Flattening review sequences into regression observations.

use std::collections::BTreeMap;

use crate::memory::ReviewSequence;

/// One row per review: gap since the previous review (or exposure), observed
/// recall score and the per-bin success/failure counts before it.
#[derive(Clone, Debug, Default)]
pub(crate) struct Observations {
    pub item_names: Vec<String>,
    /// Half-open ranges into the row arrays, one per item, rows sorted by item.
    pub item_rows: Vec<std::ops::Range<usize>>,
    pub delta: Vec<f64>,
    pub p: Vec<f64>,
    pub label: Vec<bool>,
    /// `2 * bins` counts per row: successes per bin, then failures per bin.
    pub counts: Vec<u16>,
    pub bins: usize,
    pub skipped_zero_gap: usize,
    /// Count updates per bin: successes, failures.
    pub updates: Vec<(usize, usize)>,
}

/// Bin of a review gap given interior cut points: `[0, c1), [c1, c2), ..., [c_{K-1}, ∞)`.
pub(crate) fn bin_of(cuts: &[f64], gap: f64) -> usize {
    cuts.partition_point(|&c| c <= gap)
}

impl Observations {
    /// `items` fixes the item index space so train/validation splits agree.
    pub fn build(seqs: &[&ReviewSequence], items: &[String], cuts: &[f64]) -> Observations {
        let bins = cuts.len() + 1;
        let index: BTreeMap<&str, usize> = items
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        // (item, delta, p, label, counts)
        let mut rows: Vec<(usize, f64, f64, bool, Vec<u16>)> = Vec::new();
        let mut skipped = 0;
        let mut updates = vec![(0usize, 0usize); bins];
        for seq in seqs {
            let item = index[seq.item.as_str()];
            let mut counts = vec![0u16; 2 * bins];
            let mut prev = seq.start;
            for e in &seq.events {
                let gap = e.t - prev;
                if gap > 0.0 {
                    let p = e.p_recall.unwrap_or(if e.recall { 1.0 } else { 0.0 });
                    rows.push((item, gap, p, e.recall, counts.clone()));
                } else {
                    skipped += 1;
                }
                let b = bin_of(cuts, gap.max(0.0));
                if e.recall {
                    counts[b] = counts[b].saturating_add(1);
                    updates[b].0 += 1;
                } else {
                    counts[bins + b] = counts[bins + b].saturating_add(1);
                    updates[b].1 += 1;
                }
                prev = e.t;
            }
        }
        rows.sort_by_key(|r| r.0);
        let mut obs = Observations {
            item_names: items.to_vec(),
            item_rows: vec![0..0; items.len()],
            bins,
            skipped_zero_gap: skipped,
            updates,
            ..Default::default()
        };
        let mut start = 0;
        for (i, row) in rows.iter().enumerate() {
            if i + 1 == rows.len() || rows[i + 1].0 != row.0 {
                obs.item_rows[row.0] = start..i + 1;
                start = i + 1;
            }
        }
        for (_, d, p, l, c) in rows {
            obs.delta.push(d);
            obs.p.push(p);
            obs.label.push(l);
            obs.counts.extend_from_slice(&c);
        }
        obs
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn row_counts(&self, row: usize) -> &[u16] {
        &self.counts[row * 2 * self.bins..(row + 1) * 2 * self.bins]
    }
}

/// Sorted distinct item ids.
pub(crate) fn item_ids(seqs: &[&ReviewSequence]) -> Vec<String> {
    let mut ids: Vec<String> = seqs.iter().map(|s| s.item.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}
