use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

/// A `T × N` sample matrix, stored row-major (one row per timestep).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    len: usize,
    channels: usize,
    data: Vec<f64>,
    names: Option<Vec<String>>,
}

impl TimeSeries {
    pub fn new(len: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if len == 0 || channels == 0 {
            return Err(invalid("time series needs at least one timestep and one channel"));
        }
        if data.len() != len * channels {
            return Err(Error::ShapeMismatch {
                op: "time_series",
                got: alloc::vec![alloc::vec![data.len()]],
                expected: format!("{len}x{channels} = {} values", len * channels),
            });
        }
        Ok(Self { len, channels, data, names: None })
    }

    pub fn univariate(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(n, 1, values)
    }

    /// Builds from per-channel columns of equal length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let channels = columns.len();
        let len = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != len) {
            return Err(invalid("columns have unequal lengths"));
        }
        let mut data = Vec::with_capacity(len * channels);
        for t in 0..len {
            data.extend(columns.iter().map(|c| c[t]));
        }
        Self::new(len, channels, data)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.channels {
            return Err(invalid(format!("{} names for {} channels", names.len(), self.channels)));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.len, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn get(&self, t: usize, ch: usize) -> f64 {
        self.data[t * self.channels + ch]
    }

    pub fn channel(&self, ch: usize) -> Vec<f64> {
        (0..self.len).map(|t| self.get(t, ch)).collect()
    }

    /// Rows `start..end` as a new series.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len {
            return Err(invalid(format!("window {start}..{end} outside 0..{}", self.len)));
        }
        let mut s =
            Self::new(end - start, self.channels, self.data[start * self.channels..end * self.channels].to_vec())?;
        s.names.clone_from(&self.names);
        Ok(s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { data: self.data.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub(crate) fn ensure_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                got: alloc::vec![alloc::vec![self.len, self.channels], alloc::vec![other.len, other.channels]],
                expected: String::from("identical T x N shapes"),
            });
        }
        Ok(())
    }
}

/// Mean squared error over every entry.
pub fn mse(a: &TimeSeries, b: &TimeSeries) -> Result<f64> {
    a.ensure_same_shape(b, "mse")?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64)
}

/// Mean absolute error over every entry.
pub fn mae(a: &TimeSeries, b: &TimeSeries) -> Result<f64> {
    a.ensure_same_shape(b, "mae")?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len() as f64)
}
