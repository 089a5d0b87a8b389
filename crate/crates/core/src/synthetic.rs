//! Seeded synthetic images for demos and tests: a two-colour gradient with a
//! few filled rectangles and discs on top.

use rand::Rng;

use crate::imagexform::Image;
use crate::util::seeded_rng;

enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Disc { cx: f64, cy: f64, r: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
        }
    }
}

pub fn desk_image(seed: u64, width: u32, height: u32) -> Image {
    let mut rng = seeded_rng(seed);
    let mut colour = || [rng.gen::<u8>(), rng.gen::<u8>(), rng.gen::<u8>()];
    let top = colour();
    let bottom = colour();
    let fills: Vec<[u8; 3]> = (0..4).map(|_| colour()).collect();
    let (w, h) = (f64::from(width), f64::from(height));
    let shapes: Vec<(Shape, [u8; 3])> = fills
        .into_iter()
        .map(|fill| {
            let shape = if rng.gen_bool(0.5) {
                let (x0, y0) = (rng.gen_range(0.0..w * 0.8), rng.gen_range(0.0..h * 0.8));
                Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + rng.gen_range(w * 0.1..w * 0.5),
                    y1: y0 + rng.gen_range(h * 0.1..h * 0.5),
                }
            } else {
                Shape::Disc {
                    cx: rng.gen_range(0.0..w),
                    cy: rng.gen_range(0.0..h),
                    r: rng.gen_range(0.05..0.3) * w.min(h),
                }
            };
            (shape, fill)
        })
        .collect();
    Image::from_fn(width, height, |x, y| {
        let (fx, fy) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
        if let Some((_, fill)) = shapes.iter().rev().find(|(s, _)| s.contains(fx, fy)) {
            return *fill;
        }
        let t = fy / h;
        let mut px = [0u8; 3];
        for c in 0..3 {
            px[c] = (f64::from(top[c]) * (1.0 - t) + f64::from(bottom[c]) * t).round() as u8;
        }
        px
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_sized() {
        let a = desk_image(3, 40, 30);
        assert_eq!((a.width(), a.height()), (40, 30));
        assert_eq!(a, desk_image(3, 40, 30));
        assert_ne!(a, desk_image(4, 40, 30));
    }
}
