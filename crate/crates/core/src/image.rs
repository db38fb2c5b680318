//! Minimal RGB8 raster with binary PPM (P6) I/O and the few drawing primitives the
//! renderer needs.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major interleaved RGB.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Channel-planar `[3, H, W]` floats in `[0, 1]`.
    pub fn to_chw_f32(&self) -> Vec<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0f32; 3 * plane];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = f32::from(px[c]) / 255.0;
            }
        }
        out
    }

    pub fn fill_disk(&mut self, cx: f64, cy: f64, radius: f64, rgb: [u8; 3]) {
        let (x0, x1) = self.span(cx - radius, cx + radius, self.width);
        let (y0, y1) = self.span(cy - radius, cy + radius, self.height);
        let r2 = radius * radius;
        for y in y0..y1 {
            for x in x0..x1 {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                if dx * dx + dy * dy <= r2 {
                    self.put(x, y, rgb);
                }
            }
        }
    }

    /// Fills a convex polygon given in order (either winding).
    pub fn fill_convex(&mut self, pts: &[[f64; 2]], rgb: [u8; 3]) {
        if pts.len() < 3 {
            return;
        }
        let xs = pts.iter().map(|p| p[0]);
        let ys = pts.iter().map(|p| p[1]);
        let (x0, x1) = self.span(
            xs.clone().fold(f64::INFINITY, f64::min),
            xs.fold(f64::NEG_INFINITY, f64::max),
            self.width,
        );
        let (y0, y1) = self.span(
            ys.clone().fold(f64::INFINITY, f64::min),
            ys.fold(f64::NEG_INFINITY, f64::max),
            self.height,
        );
        for y in y0..y1 {
            for x in x0..x1 {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let mut pos = false;
                let mut neg = false;
                for i in 0..pts.len() {
                    let a = pts[i];
                    let b = pts[(i + 1) % pts.len()];
                    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                    pos |= cross > 0.0;
                    neg |= cross < 0.0;
                }
                if !(pos && neg) {
                    self.put(x, y, rgb);
                }
            }
        }
    }

    pub fn draw_segment(&mut self, a: [f64; 2], b: [f64; 2], half_width: f64, rgb: [u8; 3]) {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let steps = (len * 2.0).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let x = a[0] + t * (b[0] - a[0]);
            let y = a[1] + t * (b[1] - a[1]);
            self.fill_disk(x, y, half_width, rgb);
        }
    }

    fn span(&self, lo: f64, hi: f64, limit: usize) -> (usize, usize) {
        let lo = lo.floor().max(0.0) as usize;
        let hi = (hi.ceil().max(0.0) as usize).min(limit);
        (lo.min(limit), hi)
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write!(f, "P6\n{} {}\n255\n", self.width, self.height)
            .and_then(|_| f.write_all(&self.data))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::load(path, e))?;
        let mut r = BufReader::new(f);
        let mut header = Vec::new();
        // Magic, width, height, maxval: four whitespace-separated tokens.
        while header.len() < 4 {
            let mut line = String::new();
            if r.read_line(&mut line).map_err(|e| Error::load(path, e))? == 0 {
                return Err(Error::load(path, "truncated PPM header"));
            }
            let line = line.split('#').next().unwrap_or("");
            header.extend(line.split_whitespace().map(str::to_owned));
        }
        if header[0] != "P6" || header[3] != "255" {
            return Err(Error::load(path, "expected binary 8-bit PPM (P6, maxval 255)"));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::load(path, format!("bad PPM dimension `{s}`")))
        };
        let width = parse(&header[1])?;
        let height = parse(&header[2])?;
        let mut data = vec![0u8; width * height * 3];
        r.read_exact(&mut data)
            .map_err(|e| Error::load(path, format!("pixel data: {e}")))?;
        Ok(Self {
            width,
            height,
            data,
        })
    }
}
