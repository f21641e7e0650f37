use rayon::prelude::*;

use super::decode::decode_serial_with_known;
use super::{syndrome, LdpcError, SparseParityMatrix};
use crate::bits::BitString;

/// Splits `key` into `ceil(len / n_block)` blocks of `n_block` bits. The
/// last block is padded with zeros; returns the number of padding bits.
pub fn partition(key: &BitString, n_block: usize) -> Result<(Vec<BitString>, usize), LdpcError> {
    if n_block == 0 {
        return Err(LdpcError::BadParameters("n_block = 0".into()));
    }
    let n = key.len();
    let n_blocks = n.div_ceil(n_block);
    let mut blocks = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let start = b * n_block;
        let take = n_block.min(n - start);
        let mut blk = key.slice(start, take)?;
        for _ in take..n_block {
            blk.push(false);
        }
        blocks.push(blk);
    }
    Ok((blocks, n_blocks * n_block - n))
}

/// Bob's side: one syndrome per sub-block of his key.
pub fn bob_syndromes(h: &SparseParityMatrix, bob_key: &BitString) -> Result<Vec<BitString>, LdpcError> {
    let (blocks, _) = partition(bob_key, h.n_cols())?;
    blocks.iter().map(|b| syndrome(h, b)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockStats {
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reconciled {
    pub key: BitString,
    pub blocks: Vec<BlockStats>,
    /// Syndrome bits consumed, `n_rows` per block.
    pub disclosed_bits: usize,
}

/// Alice's side: decodes every sub-block of `alice_key` towards Bob's
/// syndromes with at most `workers` decodes in flight, and reassembles the
/// corrected blocks in order with padding stripped.
pub fn reconcile(
    alice_key: &BitString,
    bob_syndromes: &[BitString],
    h: &SparseParityMatrix,
    q: f64,
    workers: usize,
    max_iters: usize,
) -> Result<Reconciled, LdpcError> {
    if workers == 0 {
        return Err(LdpcError::BadParameters("workers = 0".into()));
    }
    let (blocks, padding) = partition(alice_key, h.n_cols())?;
    if blocks.len() != bob_syndromes.len() {
        return Err(LdpcError::Dimension { what: "syndromes", got: bob_syndromes.len(), expected: blocks.len() });
    }
    let last = blocks.len().saturating_sub(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| LdpcError::BadParameters(format!("thread pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        blocks
            .par_iter()
            .zip(bob_syndromes.par_iter())
            .enumerate()
            .map(|(i, (blk, s))| {
                let known = if i == last { padding } else { 0 };
                decode_serial_with_known(h, blk, s, q, max_iters, known)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let stats: Vec<BlockStats> =
        results.iter().map(|r| BlockStats { converged: r.converged, iterations: r.iterations }).collect();
    let failed = stats.iter().filter(|s| !s.converged).count();
    if failed > 0 {
        return Err(LdpcError::ReconciliationFailed { failed, total: stats.len() });
    }
    let mut key = BitString::with_capacity(blocks.len() * h.n_cols());
    for r in &results {
        key.extend_from(&r.corrected);
    }
    key.truncate(alice_key.len());
    Ok(Reconciled { key, blocks: stats, disclosed_bits: bob_syndromes.iter().map(BitString::len).sum() })
}
