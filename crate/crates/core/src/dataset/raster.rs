//! Procedural top-down drawings of spiral coils.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::{CoilGeometry, CoilShape};
use crate::error::Result;
use crate::model::IMAGE_SIDE;
use crate::tensor::Tensor;

/// Side of the high-resolution drawing canvas.
pub const CANVAS_SIDE: usize = 256;
/// Physical width covered by the canvas, in metres.
pub const FIELD_OF_VIEW: f64 = 72e-3;
const PX_PER_M: f64 = CANVAS_SIDE as f64 / FIELD_OF_VIEW;
const FACTOR: usize = CANVAS_SIDE / IMAGE_SIDE;
const MAX_SHIFT_PX: f64 = 2.0;
const MAX_TILT: f64 = PI / 18.0;
const BACKGROUND: u8 = 1;
const INK: u8 = 0;

/// Renders `g` as a dark coil on a light background, `[1, 64, 64]` in
/// `[0, 1]`. The coil centre, tilt and winding start angle are jittered
/// from `render_seed`. Pixel values are multiples of 1/255 so the image
/// survives an 8-bit PGM round trip unchanged.
pub fn rasterize(g: &CoilGeometry, render_seed: u64) -> Result<Tensor> {
    g.validate()?;
    let canvas = draw(g, render_seed);
    Ok(downsample(&canvas))
}

fn draw(g: &CoilGeometry, render_seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(render_seed);
    let half = CANVAS_SIDE as f64 / 2.0;
    let cx = half + rng.gen_range(-MAX_SHIFT_PX..=MAX_SHIFT_PX);
    let cy = half + rng.gen_range(-MAX_SHIFT_PX..=MAX_SHIFT_PX);
    let tilt = rng.gen_range(-MAX_TILT..=MAX_TILT);
    let start = rng.gen_range(0.0..2.0 * PI);

    let mut canvas = vec![BACKGROUND; CANVAS_SIDE * CANVAS_SIDE];
    let wire_px = 2.0 * g.wire_radius * PX_PER_M;
    let pen = (wire_px.max(1.0)) / 2.0;

    if g.has_core {
        let core = 0.8 * g.inner_diameter / 2.0 * PX_PER_M;
        let profile = |phi: f64| match g.shape {
            CoilShape::Circular => 1.0,
            CoilShape::Square => square_profile(phi - tilt),
        };
        fill_where(&mut canvas, |x, y| {
            let (dx, dy) = (x - cx, y - cy);
            (dx * dx + dy * dy).sqrt() <= core * profile(dy.atan2(dx))
        });
    }

    // The wire centreline runs from the inner to the outer edge of the
    // winding in `turns` revolutions.
    let r0 = (g.inner_diameter / 2.0 + g.wire_radius) * PX_PER_M;
    let r1 = (g.outer_diameter / 2.0 - g.wire_radius) * PX_PER_M;
    let sweep = 2.0 * PI * g.turns as f64;
    let steps = (sweep * r1 / 0.25).ceil().max(16.0) as usize;
    for i in 0..=steps {
        let t = sweep * i as f64 / steps as f64;
        let rho = r0 + (r1 - r0) * t / sweep;
        let phi = start + t;
        let reach = match g.shape {
            CoilShape::Circular => rho,
            CoilShape::Square => rho * square_profile(phi - tilt),
        };
        stamp(&mut canvas, cx + reach * phi.cos(), cy + reach * phi.sin(), pen);
    }
    canvas
}

/// Scales a circle of radius 1 onto the axis-aligned unit square.
fn square_profile(phi: f64) -> f64 {
    1.0 / phi.cos().abs().max(phi.sin().abs())
}

fn fill_where(canvas: &mut [u8], inside: impl Fn(f64, f64) -> bool) {
    for (y, row) in canvas.chunks_exact_mut(CANVAS_SIDE).enumerate() {
        for (x, px) in row.iter_mut().enumerate() {
            if inside(x as f64 + 0.5, y as f64 + 0.5) {
                *px = INK;
            }
        }
    }
}

/// Inks every pixel whose centre lies within `radius` of `(x, y)`, plus
/// the pixel containing the point itself so thin wires never vanish.
fn stamp(canvas: &mut [u8], x: f64, y: f64, radius: f64) {
    let side = CANVAS_SIDE as isize;
    let lo = |v: f64| ((v - radius).floor() as isize).max(0);
    let hi = |v: f64| ((v + radius).ceil() as isize).min(side - 1);
    for py in lo(y)..=hi(y) {
        for px in lo(x)..=hi(x) {
            let dx = px as f64 + 0.5 - x;
            let dy = py as f64 + 0.5 - y;
            if dx * dx + dy * dy <= radius * radius {
                canvas[py as usize * CANVAS_SIDE + px as usize] = INK;
            }
        }
    }
    let (px, py) = (x.floor() as isize, y.floor() as isize);
    if (0..side).contains(&px) && (0..side).contains(&py) {
        canvas[py as usize * CANVAS_SIDE + px as usize] = INK;
    }
}

/// Fraction of pixels darker than the background.
pub fn ink_fraction(img: &Tensor) -> f64 {
    img.data().iter().filter(|&&p| p < 1.0).count() as f64 / img.len() as f64
}

fn downsample(canvas: &[u8]) -> Tensor {
    let area = (FACTOR * FACTOR) as f64;
    let mut out = Tensor::zeros(&[1, IMAGE_SIDE, IMAGE_SIDE]);
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let (oy, ox) = (i / IMAGE_SIDE, i % IMAGE_SIDE);
        let mut sum = 0u32;
        for y in oy * FACTOR..(oy + 1) * FACTOR {
            for x in ox * FACTOR..(ox + 1) * FACTOR {
                sum += canvas[y * CANVAS_SIDE + x] as u32;
            }
        }
        *v = (sum as f64 / area * 255.0).round() / 255.0;
    }
    out
}
