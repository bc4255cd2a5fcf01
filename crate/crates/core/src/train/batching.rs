//! Epoch batch schedules.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{EpvtError, Result};

/// Shuffles `0..n` and cuts it into batches of `batch_size`; the last batch
/// may be shorter.
pub fn shuffled_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Domain-balanced schedule for one epoch.
///
/// The epoch has `ceil(n / batch_size)` full batches. Batch slots are dealt
/// to the domains present in round-robin order continuing across batch
/// boundaries, so every batch holds near-equal counts per domain and the
/// per-domain totals over the epoch differ by at most one. Each domain
/// draws from its own shuffled queue, reshuffled whenever it runs dry, so
/// small domains are oversampled and large ones subsampled.
pub fn balanced_batches<R: Rng + ?Sized>(
    domains: &[usize],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if domains.is_empty() || batch_size == 0 {
        return Err(EpvtError::EmptyDataset("nothing to batch".into()));
    }
    let max_domain = domains.iter().copied().max().unwrap_or(0);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); max_domain + 1];
    for (i, &d) in domains.iter().enumerate() {
        pools[d].push(i);
    }
    let present: Vec<usize> = (0..pools.len()).filter(|&d| !pools[d].is_empty()).collect();
    let mut queues: Vec<Vec<usize>> = vec![Vec::new(); pools.len()];

    let n_batches = domains.len().div_ceil(batch_size);
    let mut turn = 0usize;
    let mut batches = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let d = present[turn % present.len()];
            turn += 1;
            if queues[d].is_empty() {
                queues[d] = pools[d].clone();
                queues[d].shuffle(rng);
            }
            batch.push(queues[d].pop().expect("refilled above"));
        }
        batch.shuffle(rng);
        batches.push(batch);
    }
    Ok(batches)
}
