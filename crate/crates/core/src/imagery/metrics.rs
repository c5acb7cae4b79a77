//! Endpoint error and outlier-rate metrics.

use serde::Serialize;

use super::FlowField;
use crate::error::{ensure, Error, Result};

/// Absolute endpoint-error threshold for an outlier, in pixels.
pub const FI_ABS_THRESHOLD: f64 = 3.0;
/// Relative endpoint-error threshold for an outlier, as a fraction of |gt|.
pub const FI_REL_THRESHOLD: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlowMetrics {
    /// Mean endpoint error over evaluated pixels.
    pub epe_all: f64,
    pub epe_valid_count: usize,
    pub fi_rate: f64,
    pub fi_outlier_count: usize,
}

/// EPE and FI over pixels valid in `gt` and, when given, set in `mask`.
///
/// Prediction values are used as stored, whether or not they are flagged valid.
pub fn flow_metrics(pred: &FlowField, gt: &FlowField, mask: Option<&[bool]>) -> Result<FlowMetrics> {
    ensure!(
        pred.width() == gt.width() && pred.height() == gt.height(),
        "prediction is {}x{}, ground truth is {}x{}",
        pred.width(),
        pred.height(),
        gt.width(),
        gt.height()
    );
    if let Some(m) = mask {
        ensure!(m.len() == gt.len(), "mask length {} != {}", m.len(), gt.len());
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    let mut outliers = 0usize;
    for i in 0..gt.len() {
        if !gt.valid()[i] || mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let (gu, gv) = (gt.u()[i] as f64, gt.v()[i] as f64);
        let du = pred.u()[i] as f64 - gu;
        let dv = pred.v()[i] as f64 - gv;
        let err = du.hypot(dv);
        sum += err;
        count += 1;
        if err > FI_ABS_THRESHOLD && err > FI_REL_THRESHOLD * gu.hypot(gv) {
            outliers += 1;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric("no valid ground-truth pixels".into()));
    }
    Ok(FlowMetrics {
        epe_all: sum / count as f64,
        epe_valid_count: count,
        fi_rate: outliers as f64 / count as f64,
        fi_outlier_count: outliers,
    })
}

/// Mean endpoint error over pixels valid in `gt`.
pub fn epe(pred: &FlowField, gt: &FlowField) -> Result<f64> {
    flow_metrics(pred, gt, None).map(|m| m.epe_all)
}

/// Mean endpoint error restricted to an external mask (e.g. non-occluded pixels).
pub fn epe_masked(pred: &FlowField, gt: &FlowField, mask: &[bool]) -> Result<f64> {
    flow_metrics(pred, gt, Some(mask)).map(|m| m.epe_all)
}

/// Fraction of pixels valid in `gt` whose error exceeds 3 px and 5% of |gt|.
pub fn fi_rate(pred: &FlowField, gt: &FlowField) -> Result<f64> {
    flow_metrics(pred, gt, None).map(|m| m.fi_rate)
}

pub fn fi_rate_masked(pred: &FlowField, gt: &FlowField, mask: &[bool]) -> Result<f64> {
    flow_metrics(pred, gt, Some(mask)).map(|m| m.fi_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant(w: usize, h: usize, u: f32, v: f32) -> FlowField {
        FlowField::from_fn(w, h, |_, _| (u, v))
    }

    #[test]
    fn identical_fields_score_zero() {
        let gt = FlowField::from_fn(5, 4, |x, y| (x as f32, y as f32 * 0.5));
        let m = flow_metrics(&gt, &gt, None).unwrap();
        assert_eq!(m.epe_all, 0.0);
        assert_eq!(m.fi_rate, 0.0);
        assert_eq!(m.epe_valid_count, 20);
    }

    #[test]
    fn three_four_five() {
        let gt = constant(3, 3, 1.0, 1.0);
        let pred = constant(3, 3, 4.0, 5.0);
        assert!((epe(&pred, &gt).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn two_pixel_mean() {
        let gt = FlowField::zeros(2, 1);
        let pred = FlowField::from_parts(2, 1, vec![1.0, 0.0], vec![0.0, 2.0], vec![true; 2]).unwrap();
        assert!((epe(&pred, &gt).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn outlier_thresholds() {
        let gt = constant(4, 4, 100.0, 0.0);
        assert_eq!(fi_rate(&constant(4, 4, 110.0, 0.0), &gt).unwrap(), 1.0);
        assert_eq!(fi_rate(&constant(4, 4, 102.0, 0.0), &gt).unwrap(), 0.0);
        // 4 px is above 3 px but below 5% of 100 px.
        assert_eq!(fi_rate(&constant(4, 4, 104.0, 0.0), &gt).unwrap(), 0.0);
    }

    #[test]
    fn invalid_gt_pixels_are_ignored() {
        let mut gt = FlowField::zeros(2, 1);
        gt.set_invalid(1, 0);
        let pred = FlowField::from_parts(2, 1, vec![0.0, 50.0], vec![0.0, 0.0], vec![true; 2]).unwrap();
        assert_eq!(epe(&pred, &gt).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        let a = FlowField::zeros(2, 2);
        let b = FlowField::zeros(3, 2);
        assert!(matches!(epe(&a, &b), Err(Error::Contract(_))));
        let mut gt = FlowField::zeros(1, 1);
        gt.set_invalid(0, 0);
        assert!(matches!(
            epe(&FlowField::zeros(1, 1), &gt),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn external_mask_restricts_pixels() {
        let gt = FlowField::zeros(2, 1);
        let pred = FlowField::from_parts(2, 1, vec![2.0, 8.0], vec![0.0, 0.0], vec![true; 2]).unwrap();
        assert_eq!(epe_masked(&pred, &gt, &[true, false]).unwrap(), 2.0);
        assert_eq!(epe_masked(&pred, &gt, &[false, true]).unwrap(), 8.0);
    }

    proptest! {
        #[test]
        fn fi_is_monotone_in_error(
            gts in proptest::collection::vec((-20f32..20.0, -20f32..20.0), 16),
            errs in proptest::collection::vec((-10f32..10.0, -10f32..10.0), 16),
            grow in 1.0f32..4.0,
        ) {
            let gt = FlowField::from_fn(4, 4, |x, y| gts[y * 4 + x]);
            let small = FlowField::from_fn(4, 4, |x, y| {
                let (g, e) = (gts[y * 4 + x], errs[y * 4 + x]);
                (g.0 + e.0, g.1 + e.1)
            });
            let large = FlowField::from_fn(4, 4, |x, y| {
                let (g, e) = (gts[y * 4 + x], errs[y * 4 + x]);
                (g.0 + grow * e.0, g.1 + grow * e.1)
            });
            prop_assert!(fi_rate(&large, &gt).unwrap() >= fi_rate(&small, &gt).unwrap());
        }

        #[test]
        fn epe_is_permutation_invariant(
            vals in proptest::collection::vec((-5f32..5.0, -5f32..5.0, -5f32..5.0, -5f32..5.0), 12),
        ) {
            let pred = FlowField::from_fn(12, 1, |x, _| (vals[x].0, vals[x].1));
            let gt = FlowField::from_fn(12, 1, |x, _| (vals[x].2, vals[x].3));
            let pred_r = FlowField::from_fn(12, 1, |x, _| (vals[11 - x].0, vals[11 - x].1));
            let gt_r = FlowField::from_fn(12, 1, |x, _| (vals[11 - x].2, vals[11 - x].3));
            let a = epe(&pred, &gt).unwrap();
            let b = epe(&pred_r, &gt_r).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
