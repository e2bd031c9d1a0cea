//! Frame-index selection: a consecutive window (loop-padded for short clips)
//! followed by subsampling of that window.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// `window` consecutive source-frame indices starting at a uniformly random
/// position. Clips shorter than `window` are looped from a random start.
pub fn sample_window(frame_count: usize, window: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    check_window(frame_count, window)?;
    let start = if frame_count >= window {
        rng.gen_range(0..=frame_count - window)
    } else {
        rng.gen_range(0..frame_count)
    };
    Ok(window_from(frame_count, window, start))
}

/// Deterministic counterpart of [`sample_window`]: the window starts at
/// frame 0.
pub fn eval_window(frame_count: usize, window: usize) -> Result<Vec<usize>> {
    check_window(frame_count, window)?;
    Ok(window_from(frame_count, window, 0))
}

fn check_window(frame_count: usize, window: usize) -> Result<()> {
    if frame_count == 0 {
        return Err(Error::Input("clip has no frames".into()));
    }
    if window == 0 {
        return Err(Error::Input("window length must be >= 1".into()));
    }
    Ok(())
}

fn window_from(frame_count: usize, window: usize, start: usize) -> Vec<usize> {
    (0..window).map(|i| (start + i) % frame_count).collect()
}

/// `n` distinct positions of a `window_len` window, drawn uniformly without
/// replacement and returned in ascending order.
pub fn subsample_train(window_len: usize, n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    check_subsample(window_len, n)?;
    let mut picks = index::sample(rng, window_len, n).into_vec();
    picks.sort_unstable();
    Ok(picks)
}

/// Evenly strided positions `floor(j · window_len / n)` for `j = 0..n`.
pub fn subsample_eval(window_len: usize, n: usize) -> Result<Vec<usize>> {
    check_subsample(window_len, n)?;
    Ok((0..n).map(|j| j * window_len / n).collect())
}

fn check_subsample(window_len: usize, n: usize) -> Result<()> {
    if n == 0 || n > window_len {
        return Err(Error::Input(format!(
            "cannot pick {n} frames from a window of {window_len}"
        )));
    }
    Ok(())
}

/// Source-frame indices for one training draw.
pub fn train_indices(
    frame_count: usize,
    window: usize,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let win = sample_window(frame_count, window, rng)?;
    let picks = subsample_train(window, n, rng)?;
    Ok(picks.into_iter().map(|p| win[p]).collect())
}

/// Source-frame indices used at evaluation time.
pub fn eval_indices(frame_count: usize, window: usize, n: usize) -> Result<Vec<usize>> {
    let win = eval_window(frame_count, window)?;
    let picks = subsample_eval(window, n)?;
    Ok(picks.into_iter().map(|p| win[p]).collect())
}
