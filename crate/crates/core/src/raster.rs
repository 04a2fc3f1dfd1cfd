//! Row-major 2-D rasters and the resampling helpers the matchers build on.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Panics if `data.len() != width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "raster payload size");
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copy of the `width × height` block whose top-left pixel is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Option<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return None;
        }
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + width]);
        }
        Some(Self { width, height, data })
    }
}

pub type GrayImage = Raster<u8>;
pub type DepthImage = Raster<f64>;
pub type FloatImage = Raster<f64>;

pub fn to_float(img: &GrayImage) -> FloatImage {
    img.map(f64::from)
}

/// Axis-aligned pixel rectangle; `x`, `y` address the top-left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl PixelRect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self { x, y, width, height }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn right(&self) -> usize {
        self.x + self.width
    }

    pub fn bottom(&self) -> usize {
        self.y + self.height
    }

    pub fn contains(&self, other: &PixelRect) -> bool {
        other.x >= self.x && other.y >= self.y && other.right() <= self.right() && other.bottom() <= self.bottom()
    }

    pub fn intersection(&self, other: &PixelRect) -> Option<PixelRect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| PixelRect::new(x0, y0, x1 - x0, y1 - y0))
    }
}

/// Summed-area table with a zero border: `sum[(y)(w+1) + x]` is the sum of
/// all pixels strictly above and left of `(x, y)`.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    sum: Vec<f64>,
}

impl IntegralImage {
    pub fn new(img: &FloatImage) -> Self {
        Self::from_fn(img, |v| v)
    }

    pub fn squared(img: &FloatImage) -> Self {
        Self::from_fn(img, |v| v * v)
    }

    fn from_fn(img: &FloatImage, f: impl Fn(f64) -> f64) -> Self {
        let (w, h) = (img.width(), img.height());
        let stride = w + 1;
        let mut sum = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(img.get(x, y));
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row;
            }
        }
        Self { width: w, height: h, sum }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.sum[y * (self.width + 1) + x]
    }

    /// Sum over pixels `x0..x1`, `y0..y1` (exclusive upper bounds).
    #[inline]
    pub fn block_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        self.at(x1, y1) - self.at(x0, y1) - self.at(x1, y0) + self.at(x0, y0)
    }

    /// Integral of the piecewise-constant image over `[0, x] × [0, y]` in
    /// edge coordinates (pixel `i` spans `[i, i + 1]`), clamped to the image.
    fn continuous(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, self.width as f64);
        let y = y.clamp(0.0, self.height as f64);
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(1));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(1));
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let a = self.at(x0, y0);
        let b = self.at(x0 + 1, y0);
        let c = self.at(x0, y0 + 1);
        let d = self.at(x0 + 1, y0 + 1);
        a * (1.0 - fx) * (1.0 - fy) + b * fx * (1.0 - fy) + c * (1.0 - fx) * fy + d * fx * fy
    }

    /// Mean of the image over a box given in pixel-center coordinates
    /// (pixel `i` covers `[i − ½, i + ½]`). The box is clipped to the image;
    /// returns `None` when nothing of it remains.
    pub fn box_mean(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> Option<f64> {
        let ex0 = (x0 + 0.5).max(0.0);
        let ey0 = (y0 + 0.5).max(0.0);
        let ex1 = (x1 + 0.5).min(self.width as f64);
        let ey1 = (y1 + 0.5).min(self.height as f64);
        let area = (ex1 - ex0) * (ey1 - ey0);
        if !(ex1 > ex0 && ey1 > ey0) || area <= 1e-12 {
            return None;
        }
        let s = self.continuous(ex1, ey1) - self.continuous(ex0, ey1) - self.continuous(ex1, ey0)
            + self.continuous(ex0, ey0);
        Some(s / area)
    }
}

/// Resamples `img` onto a grid whose pixel `(i, j)` is the box average of
/// `img` over the square of side `step` centered at
/// `(origin_x + step·i, origin_y + step·j)` in source pixel coordinates.
/// Output pixels whose box leaves the source are dropped from the grid by
/// sizing the output to the largest fully covered extent.
pub fn area_resample(integral: &IntegralImage, step: f64, origin_x: f64, origin_y: f64) -> FloatImage {
    let half = step / 2.0;
    let fit = |extent: usize, origin: f64| -> usize {
        // largest n with origin + step·(n−1) + half ≤ extent − ½
        let last = (extent as f64 - 0.5 - half - origin) / step;
        if last < 0.0 {
            0
        } else {
            last.floor() as usize + 1
        }
    };
    let w = fit(integral.width, origin_x);
    let h = fit(integral.height, origin_y);
    Raster::from_fn(w, h, |i, j| {
        let cx = origin_x + step * i as f64;
        let cy = origin_y + step * j as f64;
        integral.box_mean(cx - half, cy - half, cx + half, cy + half).unwrap_or(0.0)
    })
}

/// Block-average downsampling by an integer factor; pixel `i` of the output
/// covers source pixels `f·i .. f·i + f`.
pub fn downsample(img: &FloatImage, factor: usize) -> FloatImage {
    if factor <= 1 {
        return img.clone();
    }
    let w = img.width() / factor;
    let h = img.height() / factor;
    let norm = 1.0 / (factor * factor) as f64;
    Raster::from_fn(w, h, |x, y| {
        let mut s = 0.0;
        for yy in y * factor..(y + 1) * factor {
            for xx in x * factor..(x + 1) * factor {
                s += img.get(xx, yy);
            }
        }
        s * norm
    })
}

/// Bilinear sample at continuous pixel-center coordinates; `None` outside.
pub fn bilinear(img: &FloatImage, x: f64, y: f64) -> Option<f64> {
    if !(x >= 0.0 && y >= 0.0 && x <= (img.width() - 1) as f64 && y <= (img.height() - 1) as f64) {
        return None;
    }
    let x0 = (x.floor() as usize).min(img.width().saturating_sub(2));
    let y0 = (y.floor() as usize).min(img.height().saturating_sub(2));
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    Some(
        img.get(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + img.get(x1, y0) * fx * (1.0 - fy)
            + img.get(x0, y1) * (1.0 - fx) * fy
            + img.get(x1, y1) * fx * fy,
    )
}
