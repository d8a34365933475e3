use super::volume::Volume;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::tensor::Tensor;

/// Cubes of side `2γ` sampled at every control point of one segment.
/// Each cube is stored `[z, y, x]`, cubes back to back.
#[derive(Clone, Debug, PartialEq)]
pub struct CubeSequence {
    pub segment: usize,
    side: usize,
    len: usize,
    data: Vec<f64>,
}

impl CubeSequence {
    /// Wraps cubes stored back to back; `data` must hold whole cubes.
    pub fn new(segment: usize, side: usize, data: Vec<f64>) -> Result<Self> {
        let n = side.pow(3);
        if side == 0 || data.len() % n != 0 {
            return Err(Error::dim("cube sequence", &[data.len()], &[side, side, side]));
        }
        Ok(Self {
            segment,
            side,
            len: data.len() / n,
            data,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn cube(&self, k: usize) -> &[f64] {
        let n = self.side.pow(3);
        &self.data[k * n..(k + 1) * n]
    }

    /// All cubes as a `[len × 1 × side × side × side]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let s = self.side;
        Tensor::new(vec![self.len, 1, s, s, s], self.data.clone()).expect("cube layout")
    }
}

/// One cube per point, centered on the nearest voxel. Voxel `c - γ + i`
/// along each axis fills cube index `i`; outside the volume `fill` is used.
pub fn extract_cubes(
    volume: &Volume,
    points: &[Vec3],
    gamma: usize,
    fill: f64,
    segment: usize,
) -> CubeSequence {
    let side = 2 * gamma;
    let g = gamma as i64;
    let mut data = Vec::with_capacity(points.len() * side.pow(3));
    for p in points {
        let c = [p.x.round() as i64, p.y.round() as i64, p.z.round() as i64];
        for dz in 0..side as i64 {
            for dy in 0..side as i64 {
                for dx in 0..side as i64 {
                    data.push(
                        volume
                            .get_checked(c[0] - g + dx, c[1] - g + dy, c[2] - g + dz)
                            .unwrap_or(fill),
                    );
                }
            }
        }
    }
    CubeSequence {
        segment,
        side,
        len: points.len(),
        data,
    }
}
