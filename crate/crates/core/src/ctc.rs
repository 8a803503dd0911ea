//! Connectionist temporal classification loss over frame-level log-probabilities.
//!
//! The blank symbol is the last column of the frame matrix. All dynamic
//! programming runs in log space.

use crate::error::{Error, Result};
use crate::numerics::{Tensor, Var};

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Minimum number of frames an alignment of `target` needs: one per label
/// plus one separating blank between each pair of equal neighbours.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Forward and backward variables of one CTC evaluation.
#[derive(Debug, Clone)]
pub struct CtcLattice {
    /// Label sequence with blanks interleaved, length `2J + 1`.
    pub extended: Vec<usize>,
    /// `alpha[t][s]`: log-probability of all prefixes ending in state `s` at frame `t`, emissions included.
    pub alpha: Vec<Vec<f64>>,
    /// `beta[t][s]`: log-probability of completing from state `s` at frame `t`, emissions after `t` only.
    pub beta: Vec<Vec<f64>>,
    pub log_prob_forward: f64,
    pub log_prob_backward: f64,
}

fn check_inputs(frame_logprobs: &Tensor, target: &[usize]) -> Result<(usize, usize)> {
    if frame_logprobs.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "frame log-probabilities must be a matrix, got {:?}",
            frame_logprobs.shape()
        )));
    }
    if target.is_empty() {
        return Err(Error::Empty("CTC target".into()));
    }
    let (frames, classes) = (frame_logprobs.rows(), frame_logprobs.cols());
    let blank = classes - 1;
    if let Some(&bad) = target.iter().find(|&&l| l >= blank) {
        return Err(Error::TokenOutOfRange { id: bad, size: blank });
    }
    let required = min_frames(target);
    if required > frames {
        return Err(Error::CtcInfeasible {
            required,
            available: frames,
        });
    }
    Ok((frames, classes))
}

/// Runs the forward-backward recursion.
pub fn ctc_lattice(frame_logprobs: &Tensor, target: &[usize]) -> Result<CtcLattice> {
    let (frames, classes) = check_inputs(frame_logprobs, target)?;
    let blank = classes - 1;
    let mut extended = Vec::with_capacity(2 * target.len() + 1);
    extended.push(blank);
    for &l in target {
        extended.push(l);
        extended.push(blank);
    }
    let states = extended.len();
    let y = |t: usize, s: usize| frame_logprobs.get2(t, extended[s]);
    // skipping a blank is allowed only between different labels
    let can_skip = |s: usize| s >= 2 && extended[s] != blank && extended[s] != extended[s - 2];

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![vec![neg; states]; frames];
    alpha[0][0] = y(0, 0);
    alpha[0][1] = y(0, 1);
    for t in 1..frames {
        for s in 0..states {
            let mut acc = alpha[t - 1][s];
            if s >= 1 {
                acc = log_add(acc, alpha[t - 1][s - 1]);
            }
            if can_skip(s) {
                acc = log_add(acc, alpha[t - 1][s - 2]);
            }
            if acc != neg {
                alpha[t][s] = acc + y(t, s);
            }
        }
    }
    let log_prob_forward = log_add(alpha[frames - 1][states - 1], alpha[frames - 1][states - 2]);

    let mut beta = vec![vec![neg; states]; frames];
    beta[frames - 1][states - 1] = 0.0;
    beta[frames - 1][states - 2] = 0.0;
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let mut acc = beta[t + 1][s] + y(t + 1, s);
            if s + 1 < states {
                acc = log_add(acc, beta[t + 1][s + 1] + y(t + 1, s + 1));
            }
            if s + 2 < states && can_skip(s + 2) {
                acc = log_add(acc, beta[t + 1][s + 2] + y(t + 1, s + 2));
            }
            beta[t][s] = acc;
        }
    }
    let log_prob_backward = log_add(beta[0][0] + y(0, 0), beta[0][1] + y(0, 1));

    if !log_prob_forward.is_finite() {
        return Err(Error::NonFinite("CTC forward pass".into()));
    }
    Ok(CtcLattice {
        extended,
        alpha,
        beta,
        log_prob_forward,
        log_prob_backward,
    })
}

/// `-log p_ctc(target | frames)`.
pub fn ctc_loss(frame_logprobs: &Tensor, target: &[usize]) -> Result<f64> {
    Ok(-ctc_lattice(frame_logprobs, target)?.log_prob_forward)
}

/// Gradient of `-log p_ctc` with respect to each frame log-probability,
/// treating the entries as independent inputs. Entry `(t, k)` equals minus the
/// posterior occupancy of class `k` at frame `t`.
pub fn ctc_grad(frame_logprobs: &Tensor, target: &[usize]) -> Result<Tensor> {
    let lattice = ctc_lattice(frame_logprobs, target)?;
    Ok(grad_from_lattice(frame_logprobs, &lattice))
}

fn grad_from_lattice(frame_logprobs: &Tensor, lattice: &CtcLattice) -> Tensor {
    let (frames, classes) = (frame_logprobs.rows(), frame_logprobs.cols());
    let mut grad = vec![0.0; frames * classes];
    let logp = lattice.log_prob_forward;
    for t in 0..frames {
        for (s, &k) in lattice.extended.iter().enumerate() {
            let a = lattice.alpha[t][s];
            let b = lattice.beta[t][s];
            if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
                continue;
            }
            grad[t * classes + k] -= (a + b - logp).exp();
        }
    }
    Tensor::from_parts(vec![frames, classes], grad)
}

/// Records `-log p_ctc` of a `frames x classes` log-probability var.
pub fn ctc_loss_var<'t>(frame_logprobs: Var<'t>, target: &[usize]) -> Result<Var<'t>> {
    let values = frame_logprobs.value();
    let lattice = ctc_lattice(&values, target)?;
    let grad = grad_from_lattice(&values, &lattice);
    frame_logprobs.scalar_with_grad(-lattice.log_prob_forward, grad)
}

/// Upper bound on the number of paths [`ctc_brute_force`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Collapses repeats, then drops blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != blank {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Sums the probability of every frame-level path that collapses to `target`.
/// `frame_probs` holds probabilities (not logs), blank last.
pub fn ctc_brute_force(frame_probs: &Tensor, target: &[usize]) -> Result<f64> {
    if frame_probs.shape().len() != 2 {
        return Err(Error::Shape("frame probabilities must be a matrix".into()));
    }
    let (frames, classes) = (frame_probs.rows(), frame_probs.cols());
    let paths = (classes as u128).checked_pow(frames as u32).unwrap_or(u128::MAX);
    if paths > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(paths));
    }
    let blank = classes - 1;
    let mut path = vec![0usize; frames];
    let mut total = 0.0;
    loop {
        if collapse(&path, blank) == target {
            total += path
                .iter()
                .enumerate()
                .map(|(t, &k)| frame_probs.get2(t, k))
                .product::<f64>();
        }
        // odometer increment
        let mut t = frames;
        loop {
            if t == 0 {
                return Ok(total);
            }
            t -= 1;
            path[t] += 1;
            if path[t] < classes {
                break;
            }
            path[t] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logs(rows: usize, cols: usize, probs: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, probs.iter().map(|p| p.ln()).collect()).unwrap()
    }

    #[test]
    fn single_frame_single_label() {
        // classes {a, blank}
        let lp = logs(1, 2, &[0.3, 0.7]);
        let l = ctc_loss(&lp, &[0]).unwrap();
        assert!((l + 0.3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_frames_uniform() {
        // paths (a,a), (a,∅), (∅,a) each 0.25
        let lp = logs(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let l = ctc_loss(&lp, &[0]).unwrap();
        assert!((l + 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn repeated_label_needs_blank() {
        let lp = logs(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert!(matches!(
            ctc_loss(&lp, &[0, 0]),
            Err(Error::CtcInfeasible { required: 3, available: 2 })
        ));
        let lp3 = logs(3, 2, &[0.5; 6]);
        // only a ∅ a
        let l = ctc_loss(&lp3, &[0, 0]).unwrap();
        assert!((l + 0.125f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn forward_matches_backward() {
        let lp = logs(4, 3, &[0.2, 0.3, 0.5, 0.6, 0.1, 0.3, 0.25, 0.25, 0.5, 0.1, 0.7, 0.2]);
        let lat = ctc_lattice(&lp, &[0, 1]).unwrap();
        assert!((lat.log_prob_forward - lat.log_prob_backward).abs() < 1e-12);
        assert_eq!(lat.extended.len(), 5);
    }

    #[test]
    fn unused_labels_get_zero_gradient() {
        // classes {a, b, c, blank}; target uses only a
        let probs = [0.1, 0.2, 0.3, 0.4, 0.25, 0.25, 0.25, 0.25, 0.4, 0.3, 0.2, 0.1];
        let g = ctc_grad(&logs(3, 4, &probs), &[0]).unwrap();
        for t in 0..3 {
            assert_eq!(g.get2(t, 1), 0.0);
            assert_eq!(g.get2(t, 2), 0.0);
            // occupancies of each frame sum to one
            let s: f64 = g.row(t).iter().sum();
            assert!((s + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn brute_force_basics() {
        let p = Tensor::matrix(2, 2, vec![0.5; 4]).unwrap();
        assert!((ctc_brute_force(&p, &[0]).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(ctc_brute_force(&p, &[0, 0, 0]).unwrap(), 0.0);
        let degenerate = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        assert_eq!(ctc_brute_force(&degenerate, &[0]).unwrap(), 1.0);
        let big = Tensor::matrix(20, 5, vec![0.2; 100]).unwrap();
        assert!(matches!(ctc_brute_force(&big, &[0]), Err(Error::TooLarge(_))));
    }

    #[test]
    fn long_sequences_do_not_underflow() {
        let frames = 1000;
        let classes = 5;
        let mut probs = Vec::new();
        for t in 0..frames {
            for k in 0..classes {
                // far from uniform, smallest entries 1e-30
                probs.push(if k == t % classes { 1.0 - 4e-30 } else { 1e-30 });
            }
        }
        let target: Vec<usize> = (0..200).map(|i| i % 4).collect();
        let l = ctc_loss(&logs(frames, classes, &probs), &target).unwrap();
        assert!(l.is_finite() && l > 0.0);
    }
}
