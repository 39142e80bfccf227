//! Minimal single-channel float image used by the matching and retrieval
//! stages. Pixel `(x, y)` is centred on integer coordinates.

use image::{GrayImage, Luma, RgbImage};

#[derive(Debug, Clone, PartialEq)]
pub struct GrayF32 {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayF32 {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "buffer size mismatch");
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_gray8(img: &GrayImage) -> Self {
        Self::from_vec(
            img.width() as usize,
            img.height() as usize,
            img.as_raw().iter().map(|&p| p as f32).collect(),
        )
    }

    /// Rec. 601 luma.
    pub fn from_rgb8(img: &RgbImage) -> Self {
        Self::from_vec(
            img.width() as usize,
            img.height() as usize,
            img.pixels().map(|p| luma(p.0)).collect(),
        )
    }

    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([self.get(x as usize, y as usize).round().clamp(0.0, 255.0) as u8])
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample; `None` outside the pixel-centre hull.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Option<f32> {
        let maxx = (self.width - 1) as f64;
        let maxy = (self.height - 1) as f64;
        if !(x >= 0.0 && y >= 0.0 && x <= maxx && y <= maxy) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let a = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let b = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        Some(a * (1.0 - fy) + b * fy)
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }

    /// Resample to a new size. Axes that shrink use area averaging, axes that
    /// grow use linear interpolation.
    pub fn resize(&self, new_w: usize, new_h: usize) -> Self {
        if new_w == self.width && new_h == self.height {
            return self.clone();
        }
        let wx = axis_weights(self.width, new_w);
        let wy = axis_weights(self.height, new_h);
        let mut tmp = vec![0.0f32; new_w * self.height];
        for y in 0..self.height {
            let row = &self.data[y * self.width..(y + 1) * self.width];
            for (ox, taps) in wx.iter().enumerate() {
                tmp[y * new_w + ox] = taps.iter().map(|&(i, w)| row[i] * w).sum();
            }
        }
        let mut out = Self::new(new_w, new_h);
        for (oy, taps) in wy.iter().enumerate() {
            for ox in 0..new_w {
                let v: f32 = taps.iter().map(|&(i, w)| tmp[i * new_w + ox] * w).sum();
                out.data[oy * new_w + ox] = v;
            }
        }
        out
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Separable box blur with the given radius, clamped at the borders.
    pub fn box_blur(&self, radius: usize) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let blur_line = |src: &[f32], dst: &mut [f32]| {
            let n = src.len();
            let mut prefix = vec![0.0f64; n + 1];
            for i in 0..n {
                prefix[i + 1] = prefix[i] + src[i] as f64;
            }
            for (i, d) in dst.iter_mut().enumerate() {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius + 1).min(n);
                *d = ((prefix[hi] - prefix[lo]) / (hi - lo) as f64) as f32;
            }
        };
        let mut tmp = self.clone();
        for y in 0..self.height {
            let r = y * self.width..(y + 1) * self.width;
            blur_line(&self.data[r.clone()], &mut tmp.data[r]);
        }
        let mut out = tmp.clone();
        let mut col = vec![0.0f32; self.height];
        let mut res = vec![0.0f32; self.height];
        for x in 0..self.width {
            for y in 0..self.height {
                col[y] = tmp.get(x, y);
            }
            blur_line(&col, &mut res);
            for y in 0..self.height {
                out.set(x, y, res[y]);
            }
        }
        out
    }
}

#[inline]
pub fn luma(p: [u8; 3]) -> f32 {
    0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32
}

/// Per-output-sample taps `(source index, weight)` for resampling an axis of
/// `n_in` samples onto `n_out` samples spanning the same extent.
fn axis_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f32)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            if scale > 1.0 {
                // area average over [o*scale, (o+1)*scale)
                let lo = o as f64 * scale;
                let hi = lo + scale;
                let mut taps = Vec::new();
                let mut i = lo.floor() as usize;
                while (i as f64) < hi && i < n_in {
                    let cover = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    if cover > 0.0 {
                        taps.push((i, (cover / scale) as f32));
                    }
                    i += 1;
                }
                taps
            } else {
                let c = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = c.floor() as usize;
                let f = c - i0 as f64;
                if f > 0.0 && i0 + 1 < n_in {
                    vec![(i0, (1.0 - f) as f32), (i0 + 1, f as f32)]
                } else {
                    vec![(i0, 1.0)]
                }
            }
        })
        .collect()
}

/// An image paired with a validity mask (`false` marks fill pixels).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedImage {
    pub image: GrayF32,
    pub valid: Vec<bool>,
}

impl MaskedImage {
    pub fn full(image: GrayF32) -> Self {
        let valid = vec![true; image.width() * image.height()];
        Self { image, valid }
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.image.width() + x]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Resample image and mask together; a resampled pixel is valid when its
    /// interpolated mask weight exceeds one half.
    pub fn resize(&self, w: usize, h: usize) -> Self {
        let (iw, ih) = (self.image.width(), self.image.height());
        let m = GrayF32::from_vec(iw, ih, self.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect());
        let masked = GrayF32::from_vec(
            iw,
            ih,
            self.image.data().iter().zip(&self.valid).map(|(&p, &v)| if v { p } else { 0.0 }).collect(),
        );
        let mr = m.resize(w, h);
        let ir = masked.resize(w, h);
        let mut image = GrayF32::new(w, h);
        let mut valid = vec![false; w * h];
        for i in 0..w * h {
            let wgt = mr.data()[i];
            if wgt > 0.5 {
                valid[i] = true;
                image.data[i] = ir.data()[i] / wgt;
            }
        }
        Self { image, valid }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_midpoint() {
        let img = GrayF32::from_vec(2, 2, vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(img.sample(0.5, 0.5), Some(0.5));
        assert_eq!(img.sample(1.0, 1.0), Some(1.0));
        assert_eq!(img.sample(1.01, 0.0), None);
    }

    #[test]
    fn resize_preserves_constant_and_mean() {
        let c = GrayF32::from_vec(10, 6, vec![7.0; 60]);
        for &(w, h) in &[(3, 2), (20, 12), (10, 6), (7, 9)] {
            let r = c.resize(w, h);
            assert!(r.data().iter().all(|&v| (v - 7.0).abs() < 1e-4));
        }
        let ramp = GrayF32::from_fn(40, 40, |x, y| (x + 2 * y) as f32);
        let half = ramp.resize(20, 20);
        assert!((half.mean() - ramp.mean()).abs() < 1e-3);
    }

    #[test]
    fn box_blur_constant() {
        let c = GrayF32::from_vec(9, 5, vec![3.0; 45]);
        assert!(c.box_blur(2).data().iter().all(|&v| (v - 3.0).abs() < 1e-6));
    }
}
