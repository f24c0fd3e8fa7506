use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Aligned observations. `z` is row-major `len × z_dim`. `x_star` is the true
/// treatment and is only present where ground truth is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub z_dim: usize,
    pub z: Vec<f64>,
    pub x_star: Option<Vec<f64>>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(
        z_dim: usize,
        z: Vec<f64>,
        x_star: Option<Vec<f64>>,
        x: Vec<f64>,
        y: Vec<f64>,
    ) -> Result<Self> {
        if z_dim == 0 {
            return Err(Error::invalid("z_dim must be positive"));
        }
        let n = x.len();
        check_len("dataset z", n * z_dim, z.len())?;
        check_len("dataset y", n, y.len())?;
        if let Some(xs) = &x_star {
            check_len("dataset x_star", n, xs.len())?;
        }
        Ok(Self {
            z_dim,
            z,
            x_star,
            x,
            y,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.z_dim..(i + 1) * self.z_dim]
    }

    pub fn x_star(&self) -> Result<&[f64]> {
        self.x_star
            .as_deref()
            .ok_or(Error::Empty("dataset has no x_star column"))
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let d = self.z_dim;
        let mut z = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            z.extend_from_slice(self.z_row(i));
        }
        Dataset {
            z_dim: d,
            z,
            x_star: self
                .x_star
                .as_ref()
                .map(|xs| idx.iter().map(|&i| xs[i]).collect()),
            x: idx.iter().map(|&i| self.x[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

/// Row-major `[z | t]` design matrix for networks taking `(z, t)`.
pub fn concat_z_t(z: &[f64], z_dim: usize, t: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut out = Vec::with_capacity(n * (z_dim + 1));
    for i in 0..n {
        out.extend_from_slice(&z[i * z_dim..(i + 1) * z_dim]);
        out.push(t[i]);
    }
    out
}

/// Row-major `[z | x | y]` design matrix for the encoder.
pub fn concat_z_x_y(z: &[f64], z_dim: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n * (z_dim + 2));
    for i in 0..n {
        out.extend_from_slice(&z[i * z_dim..(i + 1) * z_dim]);
        out.push(x[i]);
        out.push(y[i]);
    }
    out
}
