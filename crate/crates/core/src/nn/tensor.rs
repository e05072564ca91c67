use crate::error::{Error, Result};

/// Dense row-major array of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Stacks equally long rows into `[rows, 1, len]`.
    pub fn from_traces<T: AsRef<[f64]>>(rows: &[T]) -> Result<Self> {
        let len = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * len);
        for r in rows {
            let r = r.as_ref();
            if r.len() != len {
                return Err(Error::Shape("ragged trace batch".into()));
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), 1, len], data)
    }

    /// Stacks equally long rows into `[rows, len]`.
    pub fn from_rows<T: AsRef<[f64]>>(rows: &[T]) -> Result<Self> {
        let len = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let data: Vec<f64> = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(vec![rows.len(), len], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same data under a new shape with the same element count.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Rows of a rank-2 (or flattened leading-axis) tensor.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        let width = self.data.len() / self.shape[0];
        self.data.chunks(width)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }
}
