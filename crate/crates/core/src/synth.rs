//! Synthetic concrete-surface scenes with known geometry, used for
//! calibration checks, demos and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::types::ImageBuffer;

/// Grayscale drawing surface. Shapes cover the pixels whose centers fall
/// inside them.
#[derive(Debug, Clone)]
pub struct Canvas {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Canvas {
    pub fn new(width: u32, height: u32, background: u8) -> Self {
        assert!(width > 0 && height > 0, "canvas must be non-empty");
        Self { width, height, pixels: vec![background; width as usize * height as usize] }
    }

    fn paint(mut self, mut inside: impl FnMut(f64, f64) -> bool, value: u8) -> Self {
        for y in 0..self.height {
            for x in 0..self.width {
                if inside(x as f64 + 0.5, y as f64 + 0.5) {
                    self.pixels[y as usize * self.width as usize + x as usize] = value;
                }
            }
        }
        self
    }

    /// Fills pixels `x0..x1` by `y0..y1`.
    pub fn rect(self, x0: u32, y0: u32, x1: u32, y1: u32, value: u8) -> Self {
        let (x0, y0, x1, y1) = (x0 as f64, y0 as f64, x1 as f64, y1 as f64);
        self.paint(|x, y| x >= x0 && x < x1 && y >= y0 && y < y1, value)
    }

    pub fn disc(self, cx: f64, cy: f64, radius: f64, value: u8) -> Self {
        self.paint(|x, y| (x - cx).powi(2) + (y - cy).powi(2) <= radius * radius, value)
    }

    /// Segment with round caps of the given total thickness.
    pub fn thick_line(self, x0: f64, y0: f64, x1: f64, y1: f64, thickness: f64, value: u8) -> Self {
        let (dx, dy) = (x1 - x0, y1 - y0);
        let len2 = dx * dx + dy * dy;
        let r2 = (thickness / 2.0).powi(2);
        self.paint(
            |x, y| {
                let t = if len2 == 0.0 { 0.0 } else { (((x - x0) * dx + (y - y0) * dy) / len2).clamp(0.0, 1.0) };
                let (px, py) = (x0 + t * dx - x, y0 + t * dy - y);
                px * px + py * py <= r2
            },
            value,
        )
    }

    /// Scatters `count` isolated 2x2 dots of `value` at seeded positions.
    pub fn speckle(mut self, seed: u64, count: usize, value: u8) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..count {
            let x = rng.random_range(0..self.width.saturating_sub(1).max(1));
            let y = rng.random_range(0..self.height.saturating_sub(1).max(1));
            for (ox, oy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let (px, py) = (x + ox, y + oy);
                if px < self.width && py < self.height {
                    self.pixels[py as usize * self.width as usize + px as usize] = value;
                }
            }
        }
        self
    }

    /// Single-pixel speckle restricted to pixels outside the rectangle `x0..x1` by `y0..y1`.
    pub fn speckle_outside(mut self, seed: u64, count: usize, value: u8, keep_out: (u32, u32, u32, u32)) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (kx0, ky0, kx1, ky1) = keep_out;
        let mut placed = 0;
        while placed < count {
            let x = rng.random_range(0..self.width);
            let y = rng.random_range(0..self.height);
            if (kx0..kx1).contains(&x) && (ky0..ky1).contains(&y) {
                continue;
            }
            self.pixels[y as usize * self.width as usize + x as usize] = value;
            placed += 1;
        }
        self
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn into_image(self) -> ImageBuffer {
        ImageBuffer::new(self.width, self.height, 1, self.pixels).expect("canvas dimensions are valid")
    }
}

/// Two spalls on a concrete background: one high-contrast and one faint,
/// laid out so the reference detector scores them at `(230-60)/255 ≈ 0.667`
/// and `(230-150)/255 ≈ 0.314`.
pub fn two_spall_scene() -> ImageBuffer {
    Canvas::new(320, 200, 230)
        .disc(90.0, 100.0, 40.0, 60)
        .disc(230.0, 100.0, 35.0, 150)
        .into_image()
}

/// Horizontal crack `thickness_px` thick and `length_px` long centered
/// in a light image.
pub fn straight_crack_scene(length_px: u32, thickness_px: u32) -> ImageBuffer {
    let w = length_px + 80;
    let h = thickness_px + 80;
    Canvas::new(w, h, 215)
        .rect(40, 40, 40 + length_px, 40 + thickness_px, 45)
        .into_image()
}
