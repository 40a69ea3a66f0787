use crate::error::{BroError, Result};

/// H×W binary mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if h == 0 || w == 0 || data.len() != h * w {
            return Err(BroError::Shape {
                shape: vec![h, w],
                reason: format!("mask needs {} cells, got {}", h * w, data.len()),
            });
        }
        Ok(Self { h, w, data })
    }

    pub fn empty(h: usize, w: usize) -> Self {
        Self::from_fn(h, w, |_, _| false)
    }

    pub fn full(h: usize, w: usize) -> Self {
        Self::from_fn(h, w, |_, _| true)
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        Self { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn invert(&self) -> Self {
        Self {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| !v).collect(),
        }
    }

    /// Flat indices of active pixels.
    pub fn active(&self) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| v.then_some(i))
            .collect()
    }

    pub fn intersection_count(&self, other: &Self) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    /// Nearest-neighbour resampling to `h × w`, sampling source pixel centres.
    pub fn resize_nearest(&self, h: usize, w: usize) -> Self {
        let sy = self.h as f64 / h as f64;
        let sx = self.w as f64 / w as f64;
        Self::from_fn(h, w, |y, x| {
            let src_y = (((y as f64 + 0.5) * sy) as usize).min(self.h - 1);
            let src_x = (((x as f64 + 0.5) * sx) as usize).min(self.w - 1);
            self.get(src_y, src_x)
        })
    }

    /// Values {0, 1} as `f64`, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
    }
}
