//! Row-major 2-D value grids and validity masks shared across the crate.

/// A dense `n_h x n_w` map of binary32 values (depth maps, logit maps,
/// gradient maps). Storage is row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    data: Vec<f32>,
    n_h: usize,
    n_w: usize,
}

impl Grid {
    pub fn zeros(n_h: usize, n_w: usize) -> Self {
        Self::filled(n_h, n_w, 0.0)
    }

    pub fn filled(n_h: usize, n_w: usize, value: f32) -> Self {
        Grid { data: vec![value; n_h * n_w], n_h, n_w }
    }

    pub fn from_vec(n_h: usize, n_w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), n_h * n_w, "grid data must be n_h * n_w long");
        Grid { data, n_h, n_w }
    }

    pub fn from_fn(n_h: usize, n_w: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(n_h * n_w);
        for i in 0..n_h {
            for j in 0..n_w {
                data.push(f(i, j));
            }
        }
        Grid { data, n_h, n_w }
    }

    pub fn n_h(&self) -> usize {
        self.n_h
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.n_h == other.n_h && self.n_w == other.n_w
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.n_w + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f32) {
        self.data[i * self.n_w + j] = value;
    }

    /// Value at a row-major flat index.
    #[inline]
    pub fn at(&self, idx: usize) -> f32 {
        self.data[idx]
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Elementwise map into a new grid of the same shape.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Grid {
        Grid {
            data: self.data.iter().map(|&v| f(v)).collect(),
            n_h: self.n_h,
            n_w: self.n_w,
        }
    }
}

/// A `n_h x n_w` validity mask. `true` marks a valid pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    data: Vec<bool>,
    n_h: usize,
    n_w: usize,
}

impl Mask {
    pub fn all_valid(n_h: usize, n_w: usize) -> Self {
        Mask { data: vec![true; n_h * n_w], n_h, n_w }
    }

    pub fn none_valid(n_h: usize, n_w: usize) -> Self {
        Mask { data: vec![false; n_h * n_w], n_h, n_w }
    }

    pub fn from_vec(n_h: usize, n_w: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), n_h * n_w, "mask data must be n_h * n_w long");
        Mask { data, n_h, n_w }
    }

    pub fn from_fn(n_h: usize, n_w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(n_h * n_w);
        for i in 0..n_h {
            for j in 0..n_w {
                data.push(f(i, j));
            }
        }
        Mask { data, n_h, n_w }
    }

    pub fn n_h(&self) -> usize {
        self.n_h
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n_w + j]
    }

    /// Validity bit at a row-major flat index.
    #[inline]
    pub fn bit(&self, idx: usize) -> bool {
        self.data[idx]
    }

    pub fn set(&mut self, i: usize, j: usize, valid: bool) {
        self.data[i * self.n_w + j] = valid;
    }

    pub fn bits(&self) -> &[bool] {
        &self.data
    }

    /// Number of valid pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn matches_grid(&self, grid: &Grid) -> bool {
        self.n_h == grid.n_h() && self.n_w == grid.n_w()
    }

    /// Pixelwise conjunction of two masks of the same shape.
    pub fn and(&self, other: &Mask) -> Mask {
        assert_eq!((self.n_h, self.n_w), (other.n_h, other.n_w));
        Mask {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect(),
            n_h: self.n_h,
            n_w: self.n_w,
        }
    }
}
