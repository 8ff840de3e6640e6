//! Minimal dense row-major matrices. Parameters are stored as `f32`
//! (the checkpoint dtype, so save/load is bit-exact), while all math
//! runs in `f64` so analytic gradients can be validated against finite
//! differences to tight tolerances.

/// Row-major `rows × cols` storage over any scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBase<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// Parameter storage dtype.
pub type Tensor2 = TensorBase<f32>;
/// Activation / gradient dtype.
pub type Mat = TensorBase<f64>;

impl<T: Copy + Default> TensorBase<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        TensorBase { rows, cols, data: vec![T::default(); rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_cols), "ragged rows");
        TensorBase { rows: n_rows, cols: n_cols, data: rows.into_iter().flatten().collect() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: T) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn fill(&mut self, value: T) {
        self.data.fill(value);
    }
}

impl Tensor2 {
    /// Copies into the compute dtype.
    pub fn widen(&self) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v as f64).collect() }
    }
}

impl Mat {
    /// Rounds back to the storage dtype.
    pub fn quantize(&self) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    /// `self · other`, shapes `[m×k]·[k×n] → [m×n]`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(i);
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`, shapes `[m×k]·[n×k]ᵀ → [m×n]`.
    pub fn matmul_transb(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_transb inner dimension");
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                let dot: f64 =
                    self.row(i).iter().zip(other.row(j)).map(|(&a, &b)| a * b).sum();
                out.set(i, j, dot);
            }
        }
        out
    }

    /// `selfᵀ · other`, shapes `[k×m]ᵀ·[k×n] → [m×n]`.
    pub fn matmul_transa(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "matmul_transa inner dimension");
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            for i in 0..self.cols {
                let a = self.get(k, i);
                if a == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(i);
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_computation() {
        let a = Mat::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let b = Mat::from_rows(vec![vec![7.0, 8.0, 9.0], vec![10.0, 11.0, 12.0]]);
        let c = a.matmul(&b);
        assert_eq!(c.shape(), (3, 3));
        assert_eq!(c.row(0), &[27.0, 30.0, 33.0]);
        assert_eq!(c.row(2), &[95.0, 106.0, 117.0]);
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let a = Mat::from_rows(vec![vec![1.0, -2.0, 0.5], vec![0.0, 3.0, 1.0]]);
        let b = Mat::from_rows(vec![vec![2.0, 1.0, -1.0], vec![4.0, 0.0, 2.0]]);
        // a · bᵀ equals matmul against an explicitly transposed b.
        let bt = Mat::from_rows(vec![vec![2.0, 4.0], vec![1.0, 0.0], vec![-1.0, 2.0]]);
        assert_eq!(a.matmul_transb(&b), a.matmul(&bt));
        // aᵀ · b equals matmul of the explicit transpose.
        let at = Mat::from_rows(vec![vec![1.0, 0.0], vec![-2.0, 3.0], vec![0.5, 1.0]]);
        assert_eq!(a.matmul_transa(&b), at.matmul(&b));
    }

    #[test]
    fn widen_and_quantize_round_trip_f32_values() {
        let mut t = Tensor2::zeros(2, 2);
        t.set(0, 0, 0.1);
        t.set(1, 1, -3.5e-8);
        let back = t.widen().quantize();
        assert_eq!(t, back);
    }

    #[test]
    fn row_accessors_index_row_major_storage() {
        let mut m = Mat::zeros(3, 4);
        m.set(1, 2, 9.0);
        assert_eq!(m.row(1), &[0.0, 0.0, 9.0, 0.0]);
        m.row_mut(2)[0] = 5.0;
        assert_eq!(m.get(2, 0), 5.0);
        assert_eq!(m.data()[8], 5.0);
    }
}
