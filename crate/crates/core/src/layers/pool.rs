use crate::error::{Error, Result};
use crate::numerics::Var;

/// Length after `pools` successive non-overlapping max-pools of width 2 (ceil semantics).
pub fn pooled_length(len: usize, pools: usize) -> usize {
    (0..pools).fold(len, |t, _| t.div_ceil(2))
}

/// Elementwise max over non-overlapping windows of `pool` frames; a short
/// trailing window is kept.
pub fn max_pool_time<'t>(xs: &[Var<'t>], pool: usize) -> Result<Vec<Var<'t>>> {
    if xs.is_empty() {
        return Err(Error::Empty("pooling input".into()));
    }
    if pool == 0 {
        return Err(Error::InvalidArgument("pool size must be positive".into()));
    }
    xs.chunks(pool)
        .map(|w| w[1..].iter().try_fold(w[0], |acc, &x| acc.max(x)))
        .collect()
}
