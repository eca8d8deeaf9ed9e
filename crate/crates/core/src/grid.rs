//! Regular periodic grids over phase space and functions sampled on them.
//!
//! A grid covers the box `[-E_x, E_x]^d × [-E_v, E_v]^d` with cell-centred
//! nodes. Axes are ordered `x_1..x_d, v_1..v_d` and values are stored
//! row-major, so the last velocity axis is contiguous.

use std::io::{Read, Write};

use crate::error::{config, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    d: usize,
    extent_x: f64,
    extent_v: f64,
    resolution_x: usize,
    resolution_v: usize,
}

impl GridSpec {
    pub fn new(
        d: usize,
        extent_x: f64,
        extent_v: f64,
        resolution_x: usize,
        resolution_v: usize,
    ) -> Result<Self> {
        if d == 0 {
            return config("grid dimension must be at least 1");
        }
        if !(extent_x > 0.0 && extent_x.is_finite() && extent_v > 0.0 && extent_v.is_finite()) {
            return config(format!(
                "grid extents must be positive and finite (got {extent_x}, {extent_v})"
            ));
        }
        for r in [resolution_x, resolution_v] {
            if r < 8 || !r.is_power_of_two() {
                return config(format!("grid resolution {r} must be a power of two >= 8"));
            }
        }
        Ok(Self {
            d,
            extent_x,
            extent_v,
            resolution_x,
            resolution_v,
        })
    }

    /// Same extent and resolution on every axis.
    pub fn square(d: usize, extent: f64, resolution: usize) -> Result<Self> {
        Self::new(d, extent, extent, resolution, resolution)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn extent_x(&self) -> f64 {
        self.extent_x
    }

    pub fn extent_v(&self) -> f64 {
        self.extent_v
    }

    pub fn resolution_x(&self) -> usize {
        self.resolution_x
    }

    pub fn resolution_v(&self) -> usize {
        self.resolution_v
    }

    pub fn spacing_x(&self) -> f64 {
        2.0 * self.extent_x / self.resolution_x as f64
    }

    pub fn spacing_v(&self) -> f64 {
        2.0 * self.extent_v / self.resolution_v as f64
    }

    /// Number of nodes along each of the `2d` axes.
    pub fn shape(&self) -> Vec<usize> {
        let mut s = vec![self.resolution_x; self.d];
        s.extend(std::iter::repeat_n(self.resolution_v, self.d));
        s
    }

    pub fn len(&self) -> usize {
        self.resolution_x.pow(self.d as u32) * self.resolution_v.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of position nodes (product over the x axes).
    pub fn x_len(&self) -> usize {
        self.resolution_x.pow(self.d as u32)
    }

    /// Number of velocity nodes (product over the v axes).
    pub fn v_len(&self) -> usize {
        self.resolution_v.pow(self.d as u32)
    }

    pub fn cell_volume_x(&self) -> f64 {
        self.spacing_x().powi(self.d as i32)
    }

    pub fn cell_volume_v(&self) -> f64 {
        self.spacing_v().powi(self.d as i32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume_x() * self.cell_volume_v()
    }

    pub fn node_x(&self, i: usize) -> f64 {
        -self.extent_x + (i as f64 + 0.5) * self.spacing_x()
    }

    pub fn node_v(&self, i: usize) -> f64 {
        -self.extent_v + (i as f64 + 0.5) * self.spacing_v()
    }

    /// Phase-space coordinates of flat index `idx`.
    pub fn point(&self, idx: usize, x: &mut [f64], v: &mut [f64]) {
        let mut rem = idx;
        for a in (0..self.d).rev() {
            v[a] = self.node_v(rem % self.resolution_v);
            rem /= self.resolution_v;
        }
        for a in (0..self.d).rev() {
            x[a] = self.node_x(rem % self.resolution_x);
            rem /= self.resolution_x;
        }
    }

    /// Flat index of the cell containing `(x, v)`, folding periodically into
    /// the box.
    pub fn cell_of(&self, x: &[f64], v: &[f64]) -> usize {
        let fold = |c: f64, e: f64, res: usize| -> usize {
            let w = 2.0 * e;
            let u = ((c + e) / w).rem_euclid(1.0);
            ((u * res as f64) as usize).min(res - 1)
        };
        let mut idx = 0;
        for &c in x {
            idx = idx * self.resolution_x + fold(c, self.extent_x, self.resolution_x);
        }
        for &c in v {
            idx = idx * self.resolution_v + fold(c, self.extent_v, self.resolution_v);
        }
        idx
    }

    /// Angular frequency of FFT index `k` along an axis of the given kind.
    pub fn frequency(&self, k: usize, velocity_axis: bool) -> f64 {
        let (res, ext) = if velocity_axis {
            (self.resolution_v, self.extent_v)
        } else {
            (self.resolution_x, self.extent_x)
        };
        let signed = if k < res / 2 {
            k as f64
        } else {
            k as f64 - res as f64
        };
        2.0 * std::f64::consts::PI * signed / (2.0 * ext)
    }
}

/// Real values of a function on a [`GridSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    spec: GridSpec,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::Mismatch(format!(
                "grid expects {} values, got {}",
                spec.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("grid values must be finite".into()));
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.len();
        Self {
            spec,
            values: vec![0.0; n],
        }
    }

    /// Samples `f(x, v)` at every node.
    pub fn from_fn<F: FnMut(&[f64], &[f64]) -> f64>(spec: GridSpec, mut f: F) -> Result<Self> {
        let d = spec.dim();
        let mut x = vec![0.0; d];
        let mut v = vec![0.0; d];
        let values = (0..spec.len())
            .map(|i| {
                spec.point(i, &mut x, &mut v);
                f(&x, &v)
            })
            .collect();
        Self::new(spec, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            spec: self.spec.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// Pointwise `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.spec != other.spec {
            return Err(Error::Mismatch("grid specs differ".into()));
        }
        Ok(Self {
            spec: self.spec.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// Midpoint-rule integral over the box.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_volume()
    }

    /// Little-endian binary: `d, resolution_x, resolution_v` as u64,
    /// `extent_x, extent_v` as f64, then the values row-major as f64.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let s = &self.spec;
        for n in [s.d, s.resolution_x, s.resolution_v] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for e in [s.extent_x, s.extent_v] {
            w.write_all(&e.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut buf)?;
            Ok(buf)
        };
        let d = u64::from_le_bytes(next(&mut r)?) as usize;
        let rx = u64::from_le_bytes(next(&mut r)?) as usize;
        let rv = u64::from_le_bytes(next(&mut r)?) as usize;
        let ex = f64::from_le_bytes(next(&mut r)?);
        let ev = f64::from_le_bytes(next(&mut r)?);
        let spec = GridSpec::new(d, ex, ev, rx, rv)?;
        let mut values = Vec::with_capacity(spec.len());
        for _ in 0..spec.len() {
            values.push(f64::from_le_bytes(next(&mut r)?));
        }
        Self::new(spec, values)
    }

    /// CSV with header `x,v,value`; only defined for `d = 1`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if self.spec.d != 1 {
            return config("CSV export is only defined for d = 1 grids");
        }
        writeln!(w, "x,v,value")?;
        let rv = self.spec.resolution_v;
        for (idx, val) in self.values.iter().enumerate() {
            let x = self.spec.node_x(idx / rv);
            let v = self.spec.node_v(idx % rv);
            writeln!(w, "{x},{v},{val}")?;
        }
        Ok(())
    }
}
