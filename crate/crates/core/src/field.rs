//! Single-channel raster grids and the paired LR/HR sample type.
//!
//! `FieldGrid` is the unit every generator, metric, and loss operates on. Values
//! are held in f64 so the statistical machinery downstream keeps full precision;
//! on-disk containers store float32-le (see `container`).

use ndarray::Array2;

use crate::error::{Error, Result};

/// A single-channel H×W real-valued raster.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    data: Array2<f64>,
}

/// One multi-channel field: a stack of co-registered grids.
pub type FieldStack = Vec<FieldGrid>;

impl FieldGrid {
    /// Wraps an array, rejecting empty shapes and non-finite values.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (h, w) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::invalid(format!("field shape {h}x{w} must be positive")));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("field contains non-finite values".into()));
        }
        Ok(Self { data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("field shape {height}x{width} must be positive")));
        }
        Ok(Self { data: Array2::zeros((height, width)) })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        let mut f = Self::zeros(height, width)?;
        if !value.is_finite() {
            return Err(Error::NonFinite("constant field value".into()));
        }
        f.data.fill(value);
        Ok(f)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::new(Array2::from_shape_fn((height, width), |(i, j)| f(i, j)))
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.data
    }

    /// Mutable access. Callers are responsible for keeping values finite;
    /// consumers that require the invariant re-validate at their boundary.
    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    /// Row-major contiguous view.
    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("FieldGrid storage is standard row-major")
    }

    pub fn mean(&self) -> f64 {
        self.data.mean().unwrap_or(0.0)
    }

    /// Population variance (1/n normalization).
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }

    /// Shifts and scales to zero mean, unit population variance.
    pub fn standardize(&self) -> Result<Self> {
        let m = self.mean();
        let sd = self.variance().sqrt();
        if sd == 0.0 {
            return Err(Error::invalid("cannot standardize a constant field"));
        }
        Self::new(self.data.mapv(|v| (v - m) / sd))
    }

    /// True when sample mean is 0 ± tol and population variance 1 ± tol.
    pub fn is_standardized(&self, tol: f64) -> bool {
        self.mean().abs() <= tol && (self.variance() - 1.0).abs() <= tol
    }

    /// Block-averages factor×factor regions: each LR pixel is the arithmetic
    /// mean of its HR block. Errors when the shape does not divide evenly.
    pub fn coarsen(&self, factor: usize) -> Result<FieldGrid> {
        if factor == 0 {
            return Err(Error::invalid("coarsening factor must be positive"));
        }
        let (h, w) = self.shape();
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::invalid(format!(
                "shape {h}x{w} not divisible by coarsening factor {factor}"
            )));
        }
        let (lh, lw) = (h / factor, w / factor);
        let inv = 1.0 / (factor * factor) as f64;
        let mut out = Array2::zeros((lh, lw));
        for bi in 0..lh {
            for bj in 0..lw {
                let mut acc = 0.0;
                for di in 0..factor {
                    for dj in 0..factor {
                        acc += self.data[(bi * factor + di, bj * factor + dj)];
                    }
                }
                out[(bi, bj)] = acc * inv;
            }
        }
        Ok(FieldGrid { data: out })
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.as_slice().iter().map(|&v| v as f32).collect()
    }

    pub fn from_f32_slice(height: usize, width: usize, values: &[f32]) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "expected {}x{}={} values, got {}",
                height,
                width,
                height * width,
                values.len()
            )));
        }
        Self::new(Array2::from_shape_vec((height, width), values.iter().map(|&v| v as f64).collect()).expect("shape checked"))
    }
}

/// Aligned LR covariates, optional HR covariates, and HR targets for one timestep.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub lr: FieldStack,
    pub hr_covariates: FieldStack,
    pub hr_target: FieldStack,
}

impl PairedSample {
    /// Validates the HR-dims = LR-dims × factor contract across all stacks.
    pub fn validate(&self, factor: usize) -> Result<()> {
        let (lh, lw) = self
            .lr
            .first()
            .map(|f| f.shape())
            .ok_or_else(|| Error::invalid("paired sample has no LR covariates"))?;
        let (th, tw) = self
            .hr_target
            .first()
            .map(|f| f.shape())
            .ok_or_else(|| Error::invalid("paired sample has no HR targets"))?;
        if th != lh * factor || tw != lw * factor {
            return Err(Error::shape(format!(
                "HR target {th}x{tw} is not LR {lh}x{lw} times factor {factor}"
            )));
        }
        for f in &self.lr {
            if f.shape() != (lh, lw) {
                return Err(Error::shape("LR covariate shapes differ within sample"));
            }
        }
        for f in self.hr_covariates.iter().chain(&self.hr_target) {
            if f.shape() != (th, tw) {
                return Err(Error::shape("HR shapes differ within sample"));
            }
        }
        Ok(())
    }
}

/// N stochastic HR realisations for one conditioning set, plus an optional
/// truth ensemble drawn from the same conditional distribution.
#[derive(Debug, Clone)]
pub struct EnsembleSet {
    pub members: Vec<FieldStack>,
    pub truth: Option<FieldStack>,
}

impl EnsembleSet {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .members
            .first()
            .ok_or_else(|| Error::invalid("ensemble has no members"))?;
        let shape: Vec<_> = first.iter().map(|f| f.shape()).collect();
        for m in &self.members {
            let s: Vec<_> = m.iter().map(|f| f.shape()).collect();
            if s != shape {
                return Err(Error::shape("ensemble members have differing shapes"));
            }
        }
        Ok(())
    }
}
