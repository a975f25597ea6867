//! Path generators for the experiment worlds.
//!
//! All generators are deterministic in `(params, seed)`. Paths are produced in
//! fixed-size blocks; block `k` draws from its own stream `(seed, k)`, so the
//! output does not depend on how many threads fill the blocks.

mod binomial;
mod bs;
mod var;

pub use binomial::{binomial_tree, simulate_binomial, BinomialParams};
pub use bs::{bs_call_price, bs_put_price, simulate_bs, simulate_bs_with_options, BsParams};
pub use var::{
    fit_var, synthetic_fixture, simulate_var, VarModel, VarParams, VarSimReport,
};

pub(crate) const BLOCK: usize = 1024;

/// Run `f(block_index, first_path, n_in_block)` for every block and
/// concatenate the results in block order.
pub(crate) fn blocks<T, F>(n_paths: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize, usize) -> T + Sync + Send,
{
    let n_blocks = n_paths.div_ceil(BLOCK);
    crate::par::map(n_blocks, |b| {
        let first = b * BLOCK;
        f(b, first, BLOCK.min(n_paths - first))
    })
}
