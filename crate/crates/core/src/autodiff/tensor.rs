use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// Feature maps are laid out channel-major, either `[C, T]` or batched
/// `[N, C, T]`. Scalars use shape `[1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidShape {
                shape,
                reason: "extents must be positive".into(),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("buffer holds {} values", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && !shape.contains(&0),
            "extents must be positive: {shape:?}"
        );
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty tensor");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a `[rows, cols]` tensor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                expected: self.shape,
                got: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Row `i` of a `[rows, cols]` tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Interprets a feature-map shape as `(batch, channels, time)`.
///
/// Rank-2 `[C, T]` maps are treated as a batch of one.
pub(crate) fn ncl(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, t] => Ok((1, c, t)),
        [n, c, t] => Ok((n, c, t)),
        _ => Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: format!("{op} expects [C, T] or [N, C, T]"),
        }),
    }
}

/// Rebuilds a feature-map shape with the same rank as `like`.
pub(crate) fn with_ncl(like: &[usize], n: usize, c: usize, t: usize) -> Vec<usize> {
    if like.len() == 2 {
        vec![c, t]
    } else {
        vec![n, c, t]
    }
}
