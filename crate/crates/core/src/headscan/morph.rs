//! Binary closing with a 3x3 square element.
//!
//! Border convention: dilation treats outside pixels as 0; erosion only
//! requires the in-bounds neighbors to be set. With a symmetric element the
//! two are adjoint on the finite grid, so the closing stays extensive and
//! idempotent.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        BinaryMask {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        BinaryMask { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[i * self.cols + j] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    /// True when every one in `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    fn window(&self, i: usize, j: usize) -> impl Iterator<Item = bool> + '_ {
        let r = i.saturating_sub(1)..=(i + 1).min(self.rows - 1);
        r.flat_map(move |y| {
            let c = j.saturating_sub(1)..=(j + 1).min(self.cols - 1);
            c.map(move |x| self.get(y, x))
        })
    }
}

pub fn dilate(b: &BinaryMask) -> BinaryMask {
    BinaryMask::from_fn(b.rows, b.cols, |i, j| b.window(i, j).any(|v| v))
}

pub fn erode(b: &BinaryMask) -> BinaryMask {
    BinaryMask::from_fn(b.rows, b.cols, |i, j| b.window(i, j).all(|v| v))
}

/// One dilation followed by one erosion.
pub fn morph_close(b: &BinaryMask) -> BinaryMask {
    erode(&dilate(b))
}
