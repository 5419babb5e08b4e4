//! The click-simulation expert.
//!
//! Places the next click at the deepest pixel of whichever error region has
//! the larger maximal distance to its boundary. Equal maxima go negative.

use crate::edt::{argmax_point, edt_sq};
use crate::env::Action;
use crate::error::Result;
use crate::mask::{BitMask, NormPoint};

/// Where the expert clicked and why, in pixel space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpertClick {
    pub positive: bool,
    pub pixel: (usize, usize),
    /// Squared distance of the clicked pixel to its region boundary.
    pub depth_sq: u64,
}

pub fn next_click_detail(pred: &BitMask, gt: &BitMask) -> Result<Option<ExpertClick>> {
    let false_neg = gt.and_not(pred)?;
    let false_pos = pred.and_not(gt)?;
    let fn_field = edt_sq(&false_neg);
    let fp_field = edt_sq(&false_pos);
    let (fn_px, fn_max) = argmax_point(&fn_field);
    let (fp_px, fp_max) = argmax_point(&fp_field);
    if fn_max == 0 && fp_max == 0 {
        return Ok(None);
    }
    Ok(Some(if fn_max > fp_max {
        ExpertClick {
            positive: true,
            pixel: fn_px,
            depth_sq: fn_max,
        }
    } else {
        ExpertClick {
            positive: false,
            pixel: fp_px,
            depth_sq: fp_max,
        }
    }))
}

pub fn next_click(pred: &BitMask, gt: &BitMask) -> Result<Option<Action>> {
    let (w, h) = gt.dims();
    Ok(next_click_detail(pred, gt)?.map(|c| {
        let p = NormPoint::from_pixel(c.pixel.0, c.pixel.1, w, h);
        if c.positive {
            Action::PositiveClick(p)
        } else {
            Action::NegativeClick(p)
        }
    }))
}
