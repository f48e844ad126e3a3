//! Compactly supported tapers and observation locations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TaperKernel {
    /// (1 − d/r)⁴₊ (4d/r + 1)
    #[default]
    Wendland,
    /// Identically one; only meaningful with a range covering the whole design.
    Unit,
}

/// Space (and optionally time) taper. The space-time taper is the product of the two
/// one-dimensional kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaperSpec<T> {
    pub spatial_range: T,
    #[serde(default)]
    pub temporal_range: Option<T>,
    #[serde(default)]
    pub kernel: TaperKernel,
}

impl<T: Real> TaperSpec<T> {
    pub fn wendland(spatial_range: T) -> Result<Self> {
        let t = Self {
            spatial_range,
            temporal_range: None,
            kernel: TaperKernel::Wendland,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn space_time(spatial_range: T, temporal_range: T) -> Result<Self> {
        let t = Self {
            spatial_range,
            temporal_range: Some(temporal_range),
            kernel: TaperKernel::Wendland,
        };
        t.validate()?;
        Ok(t)
    }

    /// T ≡ 1: the tapered likelihood becomes the full likelihood.
    pub fn none() -> Self {
        Self {
            spatial_range: T::infinity(),
            temporal_range: None,
            kernel: TaperKernel::Unit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.spatial_range > T::zero()
            && self.temporal_range.is_none_or(|r| r > T::zero());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid taper {self:?}")))
        }
    }

    /// Taper weight at spatial lag `h` and temporal lag `u`; zero at or beyond either range.
    #[inline]
    pub fn value(&self, h: T, u: T) -> T {
        let spatial = kernel_1d(self.kernel, h, self.spatial_range);
        match self.temporal_range {
            Some(r) => spatial * kernel_1d(self.kernel, u, r),
            None => spatial,
        }
    }

    /// Whether a pair at these lags gets a stored entry.
    #[inline]
    pub fn within(&self, h: T, u: T) -> bool {
        h < self.spatial_range && self.temporal_range.is_none_or(|r| u < r)
    }
}

#[inline]
fn kernel_1d<T: Real>(kernel: TaperKernel, d: T, range: T) -> T {
    if d >= range {
        return T::zero();
    }
    match kernel {
        TaperKernel::Unit => T::one(),
        TaperKernel::Wendland => {
            let x = d / range;
            let one_minus = T::one() - x;
            let sq = one_minus * one_minus;
            sq * sq * (T::of(4.0) * x + T::one())
        }
    }
}

pub fn taper_value<T: Real>(spec: &TaperSpec<T>, h: T, u: Option<T>) -> T {
    spec.value(h, u.unwrap_or(T::zero()))
}

/// Planar coordinates with optional observation times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Locations<T> {
    pub coords: Vec<[T; 2]>,
    #[serde(default)]
    pub times: Option<Vec<T>>,
}

impl<T: Real> Locations<T> {
    pub fn new(coords: Vec<[T; 2]>, times: Option<Vec<T>>) -> Result<Self> {
        if let Some(t) = &times {
            if t.len() != coords.len() {
                return Err(Error::DimensionMismatch {
                    expected: coords.len(),
                    found: t.len(),
                });
            }
        }
        if coords.is_empty() {
            return Err(Error::Empty("locations"));
        }
        Ok(Self { coords, times })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> T {
        let (a, b) = (self.coords[i], self.coords[j]);
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        (dx * dx + dy * dy).sqrt()
    }

    #[inline]
    pub fn time_lag(&self, i: usize, j: usize) -> T {
        match &self.times {
            Some(t) => (t[i] - t[j]).abs(),
            None => T::zero(),
        }
    }

    pub fn diameter(&self) -> T {
        let mut d = T::zero();
        for i in 0..self.len() {
            for j in 0..i {
                d = d.max(self.distance(i, j));
            }
        }
        d
    }
}

/// m × m regular grid with the given spacing, row-major from the origin.
pub fn grid_locations<T: Real>(m: usize, spacing: T) -> Result<Locations<T>> {
    if m == 0 {
        return Err(Error::InvalidArgument("grid size must be at least 1".into()));
    }
    let mut coords = Vec::with_capacity(m * m);
    for r in 0..m {
        for c in 0..m {
            coords.push([T::of_usize(c) * spacing, T::of_usize(r) * spacing]);
        }
    }
    Locations::new(coords, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taper_examples() {
        let t = TaperSpec::wendland(4.0).unwrap();
        assert_eq!(taper_value(&t, 0.0, None), 1.0);
        assert_eq!(taper_value(&t, 6.0, None), 0.0);
        assert_eq!(taper_value(&t, 4.0, None), 0.0);
        let v = taper_value(&t, 2.0, None);
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn space_time_taper_is_product() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let st = TaperSpec::space_time(3.0, 10.0).unwrap();
        let s = TaperSpec::wendland(3.0).unwrap();
        let tm = TaperSpec::wendland(10.0).unwrap();
        for _ in 0..20 {
            let h: f64 = rng.random_range(0.0..4.0);
            let u: f64 = rng.random_range(0.0..12.0);
            assert_eq!(st.value(h, u), s.value(h, 0.0) * tm.value(u, 0.0));
        }
    }

    #[test]
    fn grid_examples() {
        let g = grid_locations(2, 1.0).unwrap();
        assert_eq!(g.coords, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        assert_eq!(grid_locations(40, 1.0).unwrap().len(), 1600);
        let g = grid_locations(5, 0.5).unwrap();
        let mut min = f64::INFINITY;
        for i in 0..g.len() {
            for j in 0..i {
                min = min.min(g.distance(i, j));
            }
        }
        assert_eq!(min, 0.5);
    }
}
