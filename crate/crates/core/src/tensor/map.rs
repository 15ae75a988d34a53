use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// A single-channel 2D grid of `f32`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Map2d {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Map2d {
    pub fn zeros(h: usize, w: usize) -> Self {
        Map2d {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn full(h: usize, w: usize, value: f32) -> Self {
        Map2d {
            h,
            w,
            data: vec![value; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(format!(
                "{} values cannot fill a {h}x{w} map",
                data.len()
            )));
        }
        Ok(Map2d { h, w, data })
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Map2d { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.w + x] = v;
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Map2d {
        Map2d {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// The map as a `(1, 1, H, W)` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, self.h, self.w), self.data.clone())
            .expect("map dimensions are consistent")
    }
}

/// Nearest-neighbour enlargement: `out[i, j] = m[⌊i·h/out_h⌋, ⌊j·w/out_w⌋]`.
pub fn upsample_nearest(m: &Map2d, out_h: usize, out_w: usize) -> Result<Map2d> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!(
            "upsample target {out_h}x{out_w} is empty"
        )));
    }
    if m.is_empty() || out_h < m.h || out_w < m.w {
        return Err(Error::invalid(format!(
            "cannot upsample a {}x{} map to {out_h}x{out_w}",
            m.h, m.w
        )));
    }
    Ok(Map2d::from_fn(out_h, out_w, |i, j| {
        m.get(i * m.h / out_h, j * m.w / out_w)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_source_broadcasts() {
        let m = Map2d::full(1, 1, 2.5);
        let up = upsample_nearest(&m, 3, 5).unwrap();
        assert!(up.data().iter().all(|&v| v == 2.5));
        assert_eq!((up.height(), up.width()), (3, 5));
    }

    #[test]
    fn integer_ratio_quadrants() {
        let m = Map2d::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let up = upsample_nearest(&m, 4, 4).unwrap();
        #[rustfmt::skip]
        let expected = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(up.data(), &expected);
    }

    #[test]
    fn non_integer_ratio_matches_index_formula() {
        let m = Map2d::from_fn(3, 3, |y, x| (y * 3 + x) as f32);
        let up = upsample_nearest(&m, 7, 7).unwrap();
        // rows/cols map 0,0,0,1,1,2,2 under ⌊i·3/7⌋
        let src = [0usize, 0, 0, 1, 1, 2, 2];
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(up.get(i, j), (src[i] * 3 + src[j]) as f32);
            }
        }
    }

    #[test]
    fn rejects_empty_or_shrinking_target() {
        let m = Map2d::zeros(4, 4);
        assert!(upsample_nearest(&m, 0, 4).is_err());
        assert!(upsample_nearest(&m, 2, 8).is_err());
    }
}
