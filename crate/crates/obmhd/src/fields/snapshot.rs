//! Binary field snapshots.
//!
//! Layout (little endian): magic `OBMQ`, `u32` version, `u32` geometry tag,
//! `u32` n1, n2, n3, `u32` field count, then per field an 8-byte NUL-padded
//! name followed by `n1·n2·n3` `f64` values.

use std::io::{Read, Write};

use super::{Geometry, Grid, ScalarField};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"OBMQ";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub grid: Grid,
    pub fields: Vec<(String, Vec<f64>)>,
}

impl Snapshot {
    pub fn new(grid: Grid) -> Self {
        Snapshot { grid, fields: Vec::new() }
    }

    pub fn push(&mut self, name: &str, f: &ScalarField) -> Result<()> {
        if *f.grid() != self.grid {
            return Err(Error::Field(format!("snapshot field {name} on a different grid")));
        }
        if name.is_empty() || name.len() > 8 || name.contains('\0') {
            return Err(Error::Field(format!("snapshot field name {name:?} must be 1..=8 bytes")));
        }
        self.fields.push((name.to_string(), f.data().to_vec()));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<ScalarField> {
        self.fields
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| ScalarField::from_vec(self.grid, d.clone()))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        let g = &self.grid;
        for v in [VERSION, g.geometry.tag(), g.n1 as u32, g.n2 as u32, g.n3 as u32, self.fields.len() as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for (name, data) in &self.fields {
            let mut tag = [0u8; 8];
            tag[..name.len()].copy_from_slice(name.as_bytes());
            w.write_all(&tag)?;
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Field("not a snapshot file".into()));
        }
        let mut u = || -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let version = u()?;
        if version != VERSION {
            return Err(Error::Field(format!("unsupported snapshot version {version}")));
        }
        let geometry = Geometry::from_tag(u()?)?;
        let (n1, n2, n3) = (u()? as usize, u()? as usize, u()? as usize);
        let count = u()?;
        let grid = Grid::new(geometry, n1, n2, n3)?;
        let mut fields = Vec::with_capacity(count as usize);
        let mut buf = vec![0u8; 8 * grid.len()];
        for _ in 0..count {
            let mut tag = [0u8; 8];
            r.read_exact(&mut tag)?;
            let end = tag.iter().position(|&b| b == 0).unwrap_or(8);
            let name = String::from_utf8(tag[..end].to_vec())
                .map_err(|_| Error::Field("snapshot field name is not UTF-8".into()))?;
            r.read_exact(&mut buf)?;
            let data = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            fields.push((name, data));
        }
        Ok(Snapshot { grid, fields })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Snapshot::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bitwise() {
        let g = Grid::strip2(8, 5).unwrap();
        let f = ScalarField::from_fn(g, |x, _, z| (3.0 * x).sin() * z + 1e-300);
        let mut s = Snapshot::new(g);
        s.push("theta1", &f).unwrap();
        s.push("b1", &ScalarField::constant(g, -0.0)).unwrap();
        let mut bytes = Vec::new();
        s.write_to(&mut bytes).unwrap();
        let back = Snapshot::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back.grid, g);
        assert_eq!(back.fields.len(), 2);
        for ((n0, a), (n1, b)) in s.fields.iter().zip(&back.fields) {
            assert_eq!(n0, n1);
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert!(back.get("theta1").is_some());
    }

    #[test]
    fn rejects_garbage() {
        assert!(Snapshot::read_from(&b"NOPE0000"[..]).is_err());
        let g = Grid::torus2(4, 4).unwrap();
        assert!(Snapshot::new(g).push("far_too_long", &ScalarField::zeros(g)).is_err());
    }
}
