//! Dense row-major rasters: RGB images, depth maps, masks and label maps.

use crate::error::{Error, Result};

/// Depth value marking pixels without a rendered surface.
pub const NO_DEPTH: f64 = -1.0;

/// Label assigned to pixels whose coverage falls below the coverage floor.
pub const BACKGROUND_LABEL: u8 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type ImageRgb = Grid<[f64; 3]>;
pub type DepthMap = Grid<f64>;
pub type BinaryMask = Grid<bool>;
pub type LabelMap = Grid<u8>;
pub type ScalarImage = Grid<f64>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Validation(format!(
                "raster of {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid {
            width,
            height,
            data,
        }
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
        debug_assert!(x < self.width && y < self.height);
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
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Errors unless `other` has the same resolution.
    pub fn check_same_dims<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Resolution {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims()
            && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn and_not(&self, other: &BinaryMask) -> BinaryMask {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a && !b)
            .collect();
        Grid {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn intersection(&self, other: &BinaryMask) -> BinaryMask {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a && b)
            .collect();
        Grid {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

impl DepthMap {
    #[inline]
    pub fn is_valid_at(&self, x: usize, y: usize) -> bool {
        *self.get(x, y) > 0.0
    }
}

impl ImageRgb {
    /// Copy of the image with every masked pixel set to black.
    pub fn masked_out(&self, mask: &BinaryMask) -> ImageRgb {
        let data = self
            .data
            .iter()
            .zip(mask.as_slice())
            .map(|(&c, &m)| if m { [0.0; 3] } else { c })
            .collect();
        Grid {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Flattened channel-interleaved view (`r, g, b, r, g, b, ...`).
    pub fn channel_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().flat_map(|c| c.iter().copied())
    }
}
