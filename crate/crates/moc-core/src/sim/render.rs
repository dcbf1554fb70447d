//! Deterministic top-down rasterization: flat background, filled shapes.
//!
//! A pixel belongs to an object when the pixel's center, in workspace
//! coordinates, lies inside the shape at its pose. No anti-aliasing, so
//! identical poses produce bit-identical pixels and a moved object only
//! touches the pixels of its old and new footprints.

use super::{SimState, BACKGROUND, OBJECT_RADIUS, PALETTE};
use crate::sim::Shape;

/// Default square render resolution.
pub const DEFAULT_RESOLUTION: usize = 64;

/// One rendered RGB frame, row-major, channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<f32>,
}

/// Rasterizer for a fixed resolution.
#[derive(Clone, Copy, Debug)]
pub struct Renderer {
    pub h: usize,
    pub w: usize,
}

impl Default for Renderer {
    fn default() -> Self {
        Self {
            h: DEFAULT_RESOLUTION,
            w: DEFAULT_RESOLUTION,
        }
    }
}

const BLOCK_HALF_SIDE: f64 = 0.042;
const DISC_RADIUS: f64 = 0.05;
const STAR_OUTER: f64 = 0.055;
const STAR_INNER: f64 = 0.024;

fn rotate(dx: f64, dy: f64, theta_deg: f64) -> (f64, f64) {
    let t = theta_deg.to_radians();
    let (s, c) = t.sin_cos();
    (c * dx + s * dy, -s * dx + c * dy)
}

fn star_vertices(theta_deg: f64) -> [(f64, f64); 10] {
    let mut verts = [(0.0, 0.0); 10];
    for (i, v) in verts.iter_mut().enumerate() {
        let r = if i % 2 == 0 { STAR_OUTER } else { STAR_INNER };
        let angle = (theta_deg - 90.0 + i as f64 * 36.0).to_radians();
        *v = (r * angle.cos(), r * angle.sin());
    }
    verts
}

fn point_in_polygon(p: (f64, f64), verts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = verts.len() - 1;
    for i in 0..verts.len() {
        let (xi, yi) = verts[i];
        let (xj, yj) = verts[j];
        if ((yi > p.1) != (yj > p.1)) && p.0 < (xj - xi) * (p.1 - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn point_in_shape(shape: Shape, theta: f64, dx: f64, dy: f64) -> bool {
    match shape {
        Shape::Block => {
            let (rx, ry) = rotate(dx, dy, -theta);
            rx.abs() <= BLOCK_HALF_SIDE && ry.abs() <= BLOCK_HALF_SIDE
        }
        Shape::Disc => dx * dx + dy * dy <= DISC_RADIUS * DISC_RADIUS,
        Shape::Star => {
            let (rx, ry) = rotate(dx, dy, -theta);
            point_in_polygon((rx, ry), &star_vertices(0.0))
        }
    }
}

impl Renderer {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w }
    }

    pub fn render(&self, state: &SimState) -> Frame {
        let mut pixels = Vec::with_capacity(self.h * self.w * 3);
        for _ in 0..self.h * self.w {
            pixels.extend_from_slice(&BACKGROUND);
        }
        for o in &state.objects {
            let color = PALETTE[o.color].1;
            // Pixel rows/cols whose centers can fall inside the footprint.
            let row_lo = (((o.pose.y - OBJECT_RADIUS) * self.h as f64).floor().max(0.0)) as usize;
            let row_hi = (((o.pose.y + OBJECT_RADIUS) * self.h as f64).ceil() as usize).min(self.h);
            let col_lo = (((o.pose.x - OBJECT_RADIUS) * self.w as f64).floor().max(0.0)) as usize;
            let col_hi = (((o.pose.x + OBJECT_RADIUS) * self.w as f64).ceil() as usize).min(self.w);
            for row in row_lo..row_hi {
                let py = (row as f64 + 0.5) / self.h as f64;
                for col in col_lo..col_hi {
                    let px = (col as f64 + 0.5) / self.w as f64;
                    if point_in_shape(o.shape, o.pose.theta, px - o.pose.x, py - o.pose.y) {
                        let base = (row * self.w + col) * 3;
                        pixels[base..base + 3].copy_from_slice(&color);
                    }
                }
            }
        }
        Frame {
            h: self.h,
            w: self.w,
            pixels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Pose, SimObject, SimState};

    fn state_with(objects: Vec<SimObject>) -> SimState {
        SimState {
            objects,
            step_count: 0,
            move_log: Vec::new(),
        }
    }

    fn obj(id: usize, shape: Shape, x: f64, y: f64, theta: f64) -> SimObject {
        SimObject {
            id,
            shape,
            color: id % PALETTE.len(),
            pose: Pose { x, y, theta },
        }
    }

    #[test]
    fn empty_state_renders_uniform_background() {
        let frame = Renderer::default().render(&state_with(vec![]));
        assert_eq!(frame.pixels.len(), 64 * 64 * 3);
        for px in frame.pixels.chunks(3) {
            assert_eq!(px, BACKGROUND);
        }
    }

    #[test]
    fn render_is_pure() {
        let state = state_with(vec![
            obj(0, Shape::Block, 0.3, 0.4, 30.0),
            obj(1, Shape::Disc, 0.7, 0.6, 0.0),
            obj(2, Shape::Star, 0.5, 0.8, -45.0),
        ]);
        let r = Renderer::default();
        assert_eq!(r.render(&state), r.render(&state));
    }

    #[test]
    fn each_shape_paints_some_pixels() {
        for shape in [Shape::Block, Shape::Disc, Shape::Star] {
            let state = state_with(vec![obj(0, shape, 0.5, 0.5, 15.0)]);
            let frame = Renderer::default().render(&state);
            let painted = frame
                .pixels
                .chunks(3)
                .filter(|px| *px != BACKGROUND)
                .count();
            assert!(painted > 4, "{shape:?} painted only {painted} pixels");
        }
    }

    #[test]
    fn moving_one_object_changes_only_its_footprints() {
        let before = state_with(vec![
            obj(0, Shape::Disc, 0.25, 0.25, 0.0),
            obj(1, Shape::Block, 0.75, 0.75, 10.0),
        ]);
        let mut after = before.clone();
        after.objects[0].pose.x = 0.6;
        after.objects[0].pose.y = 0.3;

        let r = Renderer::default();
        let fa = r.render(&before);
        let fb = r.render(&after);
        let margin = OBJECT_RADIUS + 2.0 / 64.0;
        for row in 0..64 {
            for col in 0..64 {
                let base = (row * 64 + col) * 3;
                if fa.pixels[base..base + 3] == fb.pixels[base..base + 3] {
                    continue;
                }
                let px = (col as f64 + 0.5) / 64.0;
                let py = (row as f64 + 0.5) / 64.0;
                let near_old = ((px - 0.25).powi(2) + (py - 0.25).powi(2)).sqrt() <= margin;
                let near_new = ((px - 0.6).powi(2) + (py - 0.3).powi(2)).sqrt() <= margin;
                assert!(
                    near_old || near_new,
                    "pixel ({row},{col}) changed outside both footprints"
                );
            }
        }
    }
}
