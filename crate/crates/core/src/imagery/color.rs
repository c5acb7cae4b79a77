//! Middlebury color-wheel flow rendering.

use std::f32::consts::PI;

use super::{FlowField, Image};

/// Normalization for [`flow_to_color`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaxMagnitude {
    /// Largest valid magnitude in the field.
    Auto,
    Fixed(f32),
}

const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;
const NCOLS: usize = RY + YG + GC + CB + BM + MR;

fn colorwheel() -> [[f32; 3]; NCOLS] {
    let mut wheel = [[0.0f32; 3]; NCOLS];
    let mut k = 0;
    let segments: [(usize, fn(f32) -> [f32; 3]); 6] = [
        (RY, |t| [1.0, t, 0.0]),
        (YG, |t| [1.0 - t, 1.0, 0.0]),
        (GC, |t| [0.0, 1.0, t]),
        (CB, |t| [0.0, 1.0 - t, 1.0]),
        (BM, |t| [t, 0.0, 1.0]),
        (MR, |t| [1.0, 0.0, 1.0 - t]),
    ];
    for (len, ramp) in segments {
        for i in 0..len {
            wheel[k] = ramp(i as f32 / len as f32);
            k += 1;
        }
    }
    wheel
}

/// Color for a flow direction `angle = atan2(v, u)` at normalized magnitude
/// `radius`; radii above 1 saturate.
pub fn wheel_color(angle: f32, radius: f32) -> [f32; 3] {
    let wheel = colorwheel();
    // Wheel position follows the (-u, -v) direction, as in the reference coder.
    let mut t = (angle + PI) / (2.0 * PI);
    t = t.rem_euclid(1.0);
    let fk = t * NCOLS as f32;
    let k0 = (fk.floor() as usize) % NCOLS;
    let k1 = (k0 + 1) % NCOLS;
    let f = fk - fk.floor();
    let rad = radius.clamp(0.0, 1.0);
    let mut out = [0.0; 3];
    for c in 0..3 {
        let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
        out[c] = 1.0 - rad * (1.0 - col);
    }
    out
}

/// Renders `flow` with the Middlebury color wheel. Invalid pixels are black.
pub fn flow_to_color(flow: &FlowField, max_magnitude: MaxMagnitude) -> Image {
    let max = match max_magnitude {
        MaxMagnitude::Fixed(m) => m,
        MaxMagnitude::Auto => flow
            .u()
            .iter()
            .zip(flow.v())
            .zip(flow.valid())
            .filter(|(_, &ok)| ok)
            .map(|((a, b), _)| a.hypot(*b))
            .fold(0.0f32, f32::max),
    };
    let max = if max > 0.0 && max.is_finite() { max } else { 1.0 };
    Image::from_fn(flow.width(), flow.height(), |x, y| {
        if !flow.is_valid(x, y) {
            return [0.0; 3];
        }
        let (u, v) = flow.get(x, y);
        wheel_color(v.atan2(u), u.hypot(v) / max)
    })
}
