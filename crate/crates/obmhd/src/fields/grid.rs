use crate::{Error, Result};

/// Horizontal period of every periodic coordinate (`T = [-1, 1)`).
pub const PERIOD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Geometry {
    /// `T¹ × (0,1)`; fields are independent of `x2` (2.5D).
    Strip2,
    /// `T² × (0,1)`.
    Strip3,
    /// `T²`; no vertical direction.
    Torus2,
}

impl Geometry {
    pub fn tag(self) -> u32 {
        match self {
            Geometry::Strip2 => 0,
            Geometry::Strip3 => 1,
            Geometry::Torus2 => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Geometry::Strip2),
            1 => Ok(Geometry::Strip3),
            2 => Ok(Geometry::Torus2),
            t => Err(Error::Field(format!("unknown geometry tag {t}"))),
        }
    }

    pub fn is_strip(self) -> bool {
        !matches!(self, Geometry::Torus2)
    }
}

/// Tensor grid: `n1 × n2` Fourier points horizontally, `n3` vertex-centred
/// points on `[0,1]` (both walls included). Storage order is `x1` fastest,
/// then `x2`, then `x3`.
///
/// `Strip2` is stored with `n2 = 1` and `Torus2` with `n3 = 1`, so one set of
/// kernels serves all three geometries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    pub geometry: Geometry,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
}

fn check_pow2(n: usize, what: &str) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Field(format!("{what} = {n} must be a power of two")));
    }
    Ok(())
}

impl Grid {
    pub fn strip2(n1: usize, n3: usize) -> Result<Self> {
        Grid::new(Geometry::Strip2, n1, 1, n3)
    }

    pub fn strip3(n1: usize, n2: usize, n3: usize) -> Result<Self> {
        Grid::new(Geometry::Strip3, n1, n2, n3)
    }

    pub fn torus2(n1: usize, n2: usize) -> Result<Self> {
        Grid::new(Geometry::Torus2, n1, n2, 1)
    }

    pub fn new(geometry: Geometry, n1: usize, n2: usize, n3: usize) -> Result<Self> {
        check_pow2(n1, "n1")?;
        check_pow2(n2, "n2")?;
        match geometry {
            Geometry::Strip2 if n2 != 1 => {
                return Err(Error::Field("Strip2 grids carry n2 = 1".into()))
            }
            Geometry::Torus2 if n3 != 1 => {
                return Err(Error::Field("Torus2 grids carry n3 = 1".into()))
            }
            Geometry::Strip2 | Geometry::Strip3 if n3 < 3 => {
                return Err(Error::Field(format!("strip grids need n3 >= 3, got {n3}")))
            }
            _ => {}
        }
        Ok(Grid { geometry, n1, n2, n3 })
    }

    /// The periodic cross-section (a `Torus2` grid; `n2 = 1` for `Strip2`).
    pub fn horizontal(&self) -> Grid {
        Grid { geometry: Geometry::Torus2, n1: self.n1, n2: self.n2, n3: 1 }
    }

    pub fn layer_len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2 * self.n3
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h1(&self) -> f64 {
        PERIOD / self.n1 as f64
    }

    pub fn h2(&self) -> f64 {
        PERIOD / self.n2 as f64
    }

    /// Vertical spacing; zero on the torus.
    pub fn h3(&self) -> f64 {
        if self.n3 > 1 {
            1.0 / (self.n3 - 1) as f64
        } else {
            0.0
        }
    }

    pub fn x1(&self, i: usize) -> f64 {
        -1.0 + i as f64 * self.h1()
    }

    pub fn x2(&self, j: usize) -> f64 {
        -1.0 + j as f64 * self.h2()
    }

    pub fn x3(&self, k: usize) -> f64 {
        k as f64 * self.h3()
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n1 * (j + self.n2 * k)
    }

    /// Coordinates of the flat index.
    pub fn coords(&self, idx: usize) -> (f64, f64, f64) {
        let i = idx % self.n1;
        let j = (idx / self.n1) % self.n2;
        let k = idx / self.layer_len();
        (self.x1(i), self.x2(j), self.x3(k))
    }

    /// Domain measure: horizontal area times unit depth.
    pub fn volume(&self) -> f64 {
        match self.geometry {
            Geometry::Strip2 => PERIOD,
            _ => PERIOD * PERIOD,
        }
    }

    /// Vertical quadrature weights (trapezoidal, summing to one).
    pub fn vertical_weights(&self) -> Vec<f64> {
        if self.n3 == 1 {
            return vec![1.0];
        }
        let h = self.h3();
        (0..self.n3)
            .map(|k| if k == 0 || k == self.n3 - 1 { 0.5 * h } else { h })
            .collect()
    }

    /// Largest mode index retained by the 2/3 dealiasing rule along a
    /// direction with `n` points.
    pub fn dealias_cutoff(n: usize) -> usize {
        n / 3
    }

    /// Largest resolved horizontal wavenumber after dealiasing.
    pub fn max_wavenumber(&self) -> f64 {
        let m = Grid::dealias_cutoff(self.n1.max(self.n2)).max(1);
        std::f64::consts::PI * m as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_rules() {
        assert!(Grid::strip2(64, 65).is_ok());
        assert!(Grid::strip2(48, 65).is_err());
        assert!(Grid::strip2(64, 2).is_err());
        assert!(Grid::new(Geometry::Strip2, 8, 2, 9).is_err());
        let g = Grid::strip3(8, 4, 5).unwrap();
        assert_eq!(g.len(), 160);
        assert_eq!(g.horizontal(), Grid::torus2(8, 4).unwrap());
        assert_eq!(g.x3(4), 1.0);
        assert_eq!(g.x1(0), -1.0);
        let w: f64 = g.vertical_weights().iter().sum();
        assert!((w - 1.0).abs() < 1e-15);
        assert_eq!(Geometry::from_tag(Geometry::Strip3.tag()).unwrap(), Geometry::Strip3);
    }
}
