//! Row-major raster types shared by every stage of the pipeline.

use crate::error::{Error, Result};

/// A dense row-major image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type ImageGray = Image<u8>;
pub type ImageFloat = Image<f32>;
pub type ImageRgb = Image<[u8; 3]>;
pub type Mask = Image<bool>;

impl<T: Clone> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Image {
            width,
            height,
            data: vec![value; width * height],
        })
    }
}

impl<T> Image<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::invalid(
                "image",
                format!(
                    "{} values supplied for a {}x{} image",
                    data.len(),
                    width,
                    height
                ),
            ));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
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

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn ensure_same_dims<U>(&self, other: &Image<U>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(
            "image",
            format!("dimensions must be positive, got {width}x{height}"),
        ));
    }
    Ok(())
}

/// Axis-aligned pixel rectangle `[x, x+w) x [y, y+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Rect { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x + self.w <= width && self.y + self.h <= height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    /// Shrinks by `m` pixels on every side (saturating at an empty rect).
    pub fn inset(&self, m: usize) -> Rect {
        let w = self.w.saturating_sub(2 * m);
        let h = self.h.saturating_sub(2 * m);
        Rect::new(self.x + m, self.y + m, w, h)
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y..self.y + self.h).flat_map(move |y| (self.x..self.x + self.w).map(move |x| (x, y)))
    }

    pub(crate) fn check_in<T>(&self, img: &Image<T>) -> Result<()> {
        if self.area() == 0 {
            return Err(Error::Degenerate("empty region".into()));
        }
        if !self.fits(img.width(), img.height()) {
            return Err(Error::invalid(
                "region",
                format!("{self:?} outside {}x{} image", img.width(), img.height()),
            ));
        }
        Ok(())
    }
}

/// Mean of a float image over a region.
pub fn region_mean(img: &ImageFloat, r: &Rect) -> Result<f64> {
    r.check_in(img)?;
    let sum: f64 = r.pixels().map(|(x, y)| *img.get(x, y) as f64).sum();
    Ok(sum / r.area() as f64)
}

/// Per-channel mean of an RGB image over a region, on the 0..255 scale.
pub fn region_mean_rgb(img: &ImageRgb, r: &Rect) -> Result<[f64; 3]> {
    r.check_in(img)?;
    let mut acc = [0.0f64; 3];
    for (x, y) in r.pixels() {
        let p = img.get(x, y);
        for c in 0..3 {
            acc[c] += p[c] as f64;
        }
    }
    let n = r.area() as f64;
    Ok(acc.map(|v| v / n))
}

/// Metric depth per camera pixel with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    depth: ImageFloat,
    valid: Mask,
}

impl DepthMap {
    /// Builds a depth map; fails if a valid pixel is non-finite or non-positive.
    pub fn new(depth: ImageFloat, valid: Mask) -> Result<Self> {
        depth.ensure_same_dims(&valid)?;
        for (i, (&d, &v)) in depth.data().iter().zip(valid.data()).enumerate() {
            if v && !(d.is_finite() && d > 0.0) {
                return Err(Error::invalid(
                    "depth map",
                    format!("valid pixel {i} has depth {d}"),
                ));
            }
        }
        Ok(DepthMap { depth, valid })
    }

    /// All pixels invalid, depth zero.
    pub fn invalid(width: usize, height: usize) -> Result<Self> {
        Ok(DepthMap {
            depth: Image::filled(width, height, 0.0)?,
            valid: Image::filled(width, height, false)?,
        })
    }

    /// Positive finite values become valid; everything else invalid (stored as 0).
    pub fn from_values(depth: ImageFloat) -> Self {
        let valid = depth.map(|&d| d.is_finite() && d > 0.0);
        let depth = Image {
            width: depth.width,
            height: depth.height,
            data: depth
                .data
                .iter()
                .zip(&valid.data)
                .map(|(&d, &v)| if v { d } else { 0.0 })
                .collect(),
        };
        DepthMap { depth, valid }
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.depth.dims()
    }

    pub fn depth(&self) -> &ImageFloat {
        &self.depth
    }

    pub fn valid(&self) -> &Mask {
        &self.valid
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Option<f32> {
        if *self.valid.get(x, y) {
            Some(*self.depth.get(x, y))
        } else {
            None
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.data().iter().filter(|&&v| v).count()
    }

    /// Valid depth values in row-major order.
    pub fn valid_values(&self) -> Vec<f32> {
        self.depth
            .data()
            .iter()
            .zip(self.valid.data())
            .filter_map(|(&d, &v)| v.then_some(d))
            .collect()
    }

    pub fn into_parts(self) -> (ImageFloat, Mask) {
        (self.depth, self.valid)
    }
}

pub const CLASS_BACKGROUND: u8 = 0;
pub const CLASS_LEAVES: u8 = 1;
pub const CLASS_BRANCHES: u8 = 2;
pub const NUM_CLASSES: usize = 3;

/// Per-pixel class ids: 0 background, 1 leaves, 2 branches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap(Image<u8>);

impl LabelMap {
    pub fn new(labels: Image<u8>) -> Result<Self> {
        if let Some(bad) = labels.data().iter().find(|&&c| c as usize >= NUM_CLASSES) {
            return Err(Error::invalid("label map", format!("class id {bad} out of range")));
        }
        Ok(LabelMap(labels))
    }

    pub fn filled(width: usize, height: usize, class: u8) -> Result<Self> {
        Self::new(Image::filled(width, height, class)?)
    }

    pub fn image(&self) -> &Image<u8> {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        *self.0.get(x, y)
    }

    pub fn into_image(self) -> Image<u8> {
        self.0
    }
}
