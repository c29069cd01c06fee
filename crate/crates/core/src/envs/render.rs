//! Tiny software rasterizer: filled discs and thick segments on an RGB canvas.

pub type Rgb = [u8; 3];

pub struct Canvas {
    pub size: usize,
    pub pixels: Vec<u8>,
}

impl Canvas {
    pub fn new(size: usize, background: Rgb) -> Self {
        let mut pixels = Vec::with_capacity(size * size * 3);
        for _ in 0..size * size {
            pixels.extend_from_slice(&background);
        }
        Self { size, pixels }
    }

    /// Maps world coordinates in `[-1, 1]²` (y up) to pixel-centre space.
    fn to_world(&self, px: usize, py: usize) -> (f64, f64) {
        let s = self.size as f64;
        let x = (px as f64 + 0.5) / s * 2.0 - 1.0;
        let y = 1.0 - (py as f64 + 0.5) / s * 2.0;
        (x, y)
    }

    fn fill(&mut self, color: Rgb, inside: impl Fn(f64, f64) -> bool) {
        for py in 0..self.size {
            for px in 0..self.size {
                let (x, y) = self.to_world(px, py);
                if inside(x, y) {
                    let i = (py * self.size + px) * 3;
                    self.pixels[i..i + 3].copy_from_slice(&color);
                }
            }
        }
    }

    pub fn disc(&mut self, cx: f64, cy: f64, r: f64, color: Rgb) {
        self.fill(color, |x, y| (x - cx).powi(2) + (y - cy).powi(2) <= r * r);
    }

    pub fn segment(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), half_width: f64, color: Rgb) {
        let (dx, dy) = (x1 - x0, y1 - y0);
        let len2 = dx * dx + dy * dy;
        self.fill(color, |x, y| {
            let t = if len2 == 0.0 {
                0.0
            } else {
                (((x - x0) * dx + (y - y0) * dy) / len2).clamp(0.0, 1.0)
            };
            let (qx, qy) = (x0 + t * dx, y0 + t * dy);
            (x - qx).powi(2) + (y - qy).powi(2) <= half_width * half_width
        });
    }
}
