//! Patch edge scores (mean Sobel gradient magnitude) and threshold pruning.

use crate::error::{Error, Result};
use crate::pixels::PatchView;

/// Mean gradient magnitude of a patch interior on the 0–255 intensity scale.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EdgeScore(pub f64);

impl EdgeScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Unnormalized 3×3 Sobel responses `(gx, gy)` centered on `(x, y)`.
///
/// `(x, y)` must have a full 3×3 neighbourhood inside the patch.
#[inline]
pub fn sobel_at(patch: &PatchView, x: usize, y: usize) -> (i32, i32) {
    let p = |dx: usize, dy: usize| i32::from(patch.get(x + dx - 1, y + dy - 1));
    let gx = (p(2, 0) + 2 * p(2, 1) + p(2, 2)) - (p(0, 0) + 2 * p(0, 1) + p(0, 2));
    let gy = (p(0, 2) + 2 * p(1, 2) + p(2, 2)) - (p(0, 0) + 2 * p(1, 0) + p(2, 0));
    (gx, gy)
}

pub fn edge_score(patch: &PatchView) -> Result<EdgeScore> {
    let n = patch.size;
    if n < 3 {
        return Err(Error::invalid(format!("edge score needs a patch of at least 3x3, got {n}x{n}")));
    }
    let mut sum = 0.0f64;
    for y in 1..n - 1 {
        for x in 1..n - 1 {
            let (gx, gy) = sobel_at(patch, x, y);
            sum += f64::from(gx * gx + gy * gy).sqrt();
        }
    }
    let interior = ((n - 2) * (n - 2)) as f64;
    Ok(EdgeScore(sum / interior))
}

/// Keeps the patches whose edge score is strictly above `lambda`, in input order.
///
/// Patches too small to score carry no edge evidence and are dropped.
pub fn prune(patches: &[PatchView], lambda: f64) -> Vec<PatchView> {
    patches
        .iter()
        .filter(|p| retained(p, lambda))
        .cloned()
        .collect()
}

#[inline]
pub fn retained(patch: &PatchView, lambda: f64) -> bool {
    edge_score(patch).is_ok_and(|s| s.0 > lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(size: usize, f: impl Fn(usize, usize) -> u8) -> PatchView {
        let mut px = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                px.push(f(x, y));
            }
        }
        PatchView::from_pixels(size, px).unwrap()
    }

    #[test]
    fn constant_patch_scores_zero() {
        for v in [0u8, 17, 255] {
            assert_eq!(edge_score(&patch(8, |_, _| v)).unwrap().0, 0.0);
        }
    }

    #[test]
    fn vertical_step_matches_hand_sobel() {
        // 4x4, columns 0-1 black, 2-3 white. Interior pixels (1,1),(2,1),(1,2),(2,2)
        // all straddle the step: gx = (255+510+255) - 0 = 1020, gy = 0.
        let p = patch(4, |x, _| if x < 2 { 0 } else { 255 });
        assert_eq!(edge_score(&p).unwrap().0, 1020.0);
    }

    #[test]
    fn too_small_patch_is_rejected() {
        assert!(edge_score(&patch(2, |_, _| 0)).is_err());
    }

    #[test]
    fn lambda_ten_separates_step_from_flat() {
        let step = patch(8, |x, _| if x < 4 { 0 } else { 255 });
        let flat = patch(8, |_, _| 90);
        let kept = prune(&[step.clone(), flat], 10.0);
        assert_eq!(kept, vec![step]);
    }

    #[test]
    fn extreme_thresholds() {
        let ps = vec![patch(4, |_, _| 0), patch(4, |x, _| (x * 60) as u8)];
        assert_eq!(prune(&ps, -1.0).len(), 2);
        assert!(prune(&ps, f64::INFINITY).is_empty());
    }

    #[test]
    fn threshold_is_strict() {
        let p = patch(4, |x, _| if x < 2 { 0 } else { 255 });
        assert!(prune(std::slice::from_ref(&p), 1020.0).is_empty());
        assert_eq!(prune(std::slice::from_ref(&p), 1019.9).len(), 1);
    }
}
