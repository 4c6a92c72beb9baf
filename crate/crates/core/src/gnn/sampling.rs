//! Layer-wise neighbor sampling into message-flow blocks.

use rand::Rng;

use crate::graph_data::Adjacency;
use crate::seed;

/// One layer's message-flow block.
///
/// The first `num_dst` entries of `src` are the destination nodes; layer
/// inputs are rows indexed by position in `src`, outputs by position in the
/// destination prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub src: Vec<usize>,
    pub num_dst: usize,
    /// Per destination: sampled neighbors as positions in `src`.
    pub neighbors: Vec<Vec<usize>>,
}

/// Sample up to `fanout` neighbors of `v`.
///
/// Nodes with at least `fanout` neighbors are sampled without replacement;
/// smaller neighborhoods are sampled with replacement; `fanout == 0` returns
/// the whole neighborhood. The draw depends only on `(seed, layer, v)`.
pub fn sample_neighbors(adj: &Adjacency, v: usize, fanout: usize, seed: u64, layer: usize) -> Vec<usize> {
    let all = adj.neighbors(v);
    if all.is_empty() {
        return Vec::new();
    }
    if fanout == 0 {
        return all.to_vec();
    }
    let mut rng = seed::rng(seed::mix3(seed, layer as u64, v as u64));
    if all.len() >= fanout {
        let mut pool = all.to_vec();
        for i in 0..fanout {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(fanout);
        pool
    } else {
        (0..fanout)
            .map(|_| all[rng.random_range(0..all.len())])
            .collect()
    }
}

/// Build blocks for computing `outputs` through `fanouts.len()` layers.
/// `blocks[0]` feeds the first layer.
pub fn build_blocks(adj: &Adjacency, outputs: &[usize], fanouts: &[usize], seed: u64) -> Vec<Block> {
    let mut blocks = Vec::with_capacity(fanouts.len());
    let mut dst: Vec<usize> = outputs.to_vec();
    let mut position = vec![usize::MAX; adj.node_count()];
    for layer in (0..fanouts.len()).rev() {
        let mut src = dst.clone();
        for (i, &v) in src.iter().enumerate() {
            position[v] = i;
        }
        let mut neighbors = Vec::with_capacity(dst.len());
        for &v in &dst {
            let sampled = sample_neighbors(adj, v, fanouts[layer], seed, layer);
            let local = sampled
                .into_iter()
                .map(|u| {
                    if position[u] == usize::MAX {
                        position[u] = src.len();
                        src.push(u);
                    }
                    position[u]
                })
                .collect();
            neighbors.push(local);
        }
        for &v in &src {
            position[v] = usize::MAX;
        }
        blocks.push(Block {
            num_dst: dst.len(),
            src: src.clone(),
            neighbors,
        });
        dst = src;
    }
    blocks.reverse();
    blocks
}
