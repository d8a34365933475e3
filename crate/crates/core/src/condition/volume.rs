//! Scalar intensity volumes and their on-disk format: a JSON header plus a
//! raw little-endian payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VOLUME_FORMAT_VERSION: u32 = 1;

/// Intensities on a regular grid. Voxel `(x, y, z)` is stored at
/// `(z * ny + y) * nx + x`; `dims` is `[nx, ny, nz]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f64>) -> Result<Self> {
        if spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config(format!("voxel spacing must be > 0, got {spacing:?}")));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::dim("volume", &dims, &[data.len()]));
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: f64) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    /// Value at integer coordinates, or `None` outside the grid.
    pub fn get_checked(&self, x: i64, y: i64, z: i64) -> Option<f64> {
        let [nx, ny, nz] = self.dims;
        if x < 0 || y < 0 || z < 0 || x >= nx as i64 || y >= ny as i64 || z >= nz as i64 {
            return None;
        }
        Some(self.get(x as usize, y as usize, z as usize))
    }

    /// Trilinear interpolation at continuous voxel coordinates, clamped to
    /// the grid.
    pub fn sample(&self, pos: [f64; 3]) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let max = (self.dims[a] - 1) as f64;
            let p = pos[a].clamp(0.0, max);
            let f = p.floor().min((self.dims[a].max(2) - 2) as f64).max(0.0);
            base[a] = f as usize;
            frac[a] = if self.dims[a] > 1 { p - f } else { 0.0 };
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let hi = (corner >> a) & 1 == 1;
                w *= if hi { frac[a] } else { 1.0 - frac[a] };
                idx[a] = (base[a] + usize::from(hi)).min(self.dims[a] - 1);
            }
            if w != 0.0 {
                acc += w * self.get(idx[0], idx[1], idx[2]);
            }
        }
        acc
    }

    pub fn mean_std(&self) -> (f64, f64) {
        let n = self.data.len().max(1) as f64;
        let mean = self.data.iter().sum::<f64>() / n;
        let var = self.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Zero-mean, unit-variance copy along with the shift and scale used.
    pub fn standardized(&self) -> (Volume, f64, f64) {
        let (mean, std) = self.mean_std();
        let scale = if std > 0.0 { std } else { 1.0 };
        let mut out = self.clone();
        for v in &mut out.data {
            *v = (*v - mean) / scale;
        }
        (out, mean, scale)
    }
}

/// Resamples to isotropic `target_spacing` with trilinear interpolation.
/// Output voxel `i` sits at input coordinate `i * target / spacing`, so the
/// grids share their first voxel.
pub fn resample_volume(v: &Volume, target_spacing: f64) -> Result<Volume> {
    if !(target_spacing > 0.0) {
        return Err(Error::Config(format!(
            "target spacing must be > 0, got {target_spacing}"
        )));
    }
    if v.is_empty() {
        return Err(Error::Degenerate("empty volume".into()));
    }
    if v.spacing.iter().all(|&s| s == target_spacing) {
        return Ok(v.clone());
    }
    let mut dims = [0usize; 3];
    let mut step = [0.0; 3];
    for a in 0..3 {
        let extent = v.dims[a] as f64 * v.spacing[a];
        dims[a] = ((extent / target_spacing).round() as usize).max(1);
        step[a] = target_spacing / v.spacing[a];
    }
    let mut data = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                data.push(v.sample([
                    x as f64 * step[0],
                    y as f64 * step[1],
                    z as f64 * step[2],
                ]));
            }
        }
    }
    Volume::new(dims, [target_spacing; 3], data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ByteOrder {
    Little,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub version: u32,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub data_type: ScalarType,
    pub byte_order: ByteOrder,
    /// Payload file name, relative to the header's directory.
    pub payload: String,
}

fn payload_path(header: &Path, name: &str) -> PathBuf {
    header.parent().unwrap_or_else(|| Path::new("")).join(name)
}

impl Volume {
    /// Writes a header at `path` and the payload next to it with a `.raw`
    /// extension.
    pub fn save(&self, path: &Path, data_type: ScalarType) -> Result<()> {
        let raw = path.with_extension("raw");
        let header = VolumeHeader {
            version: VOLUME_FORMAT_VERSION,
            dims: self.dims,
            spacing: self.spacing,
            data_type,
            byte_order: ByteOrder::Little,
            payload: raw
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_owned(),
        };
        let mut bytes = Vec::new();
        match data_type {
            ScalarType::F32 => {
                for v in &self.data {
                    bytes.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
            ScalarType::F64 => {
                for v in &self.data {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
        fs::write(path, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Volume> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let header: VolumeHeader = serde_json::from_str(&text)?;
        if header.version != VOLUME_FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported volume format version {}", header.version),
            ));
        }
        let raw = payload_path(path, &header.payload);
        let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
        let n: usize = header.dims.iter().product();
        let width = match header.data_type {
            ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        };
        if bytes.len() != n * width {
            return Err(Error::format(
                &raw,
                format!("expected {} bytes, found {}", n * width, bytes.len()),
            ));
        }
        let data = match header.data_type {
            ScalarType::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            ScalarType::F64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        Volume::new(header.dims, header.spacing, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3], spacing: f64, slope: f64) -> Volume {
        let mut data = Vec::new();
        for _z in 0..dims[2] {
            for _y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(x as f64 * slope);
                }
            }
        }
        Volume::new(dims, [spacing; 3], data).unwrap()
    }

    #[test]
    fn same_spacing_is_identity() {
        let v = ramp([5, 4, 3], 0.5, 2.0);
        let r = resample_volume(&v, 0.5).unwrap();
        assert_eq!(r, v);
    }

    #[test]
    fn constant_stays_constant() {
        let v = Volume::filled([6, 5, 4], [0.7, 0.7, 1.1], 3.25).unwrap();
        let r = resample_volume(&v, 0.5).unwrap();
        assert!(r.data().iter().all(|x| (x - 3.25).abs() < 1e-12));
        assert_eq!(r.dims(), [8, 7, 9]);
    }

    #[test]
    fn halving_spacing_halves_slope() {
        let v = ramp([10, 3, 3], 1.0, 4.0);
        let r = resample_volume(&v, 0.5).unwrap();
        assert_eq!(r.dims(), [20, 6, 6]);
        // Interior voxels away from the clamped upper border.
        for x in 0..18 {
            let d = r.get(x + 1, 2, 2) - r.get(x, 2, 2);
            assert!((d - 2.0).abs() < 1e-9, "x={x} d={d}");
        }
    }

    #[test]
    fn physical_extent_is_preserved() {
        let v = Volume::filled([7, 9, 11], [0.8, 0.6, 1.25], 0.0).unwrap();
        let r = resample_volume(&v, 0.5).unwrap();
        for a in 0..3 {
            let before = v.dims()[a] as f64 * v.spacing()[a];
            let after = r.dims()[a] as f64 * 0.5;
            assert!((before - after).abs() <= 0.5);
        }
    }

    #[test]
    fn empty_volume_is_degenerate() {
        let v = Volume::new([0, 3, 3], [1.0; 3], vec![]).unwrap();
        assert!(matches!(resample_volume(&v, 0.5), Err(Error::Degenerate(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = ramp([4, 3, 2], 0.5, 0.25);
        let path = dir.path().join("v.json");
        v.save(&path, ScalarType::F64).unwrap();
        assert_eq!(Volume::load(&path).unwrap(), v);
        v.save(&path, ScalarType::F32).unwrap();
        let back = Volume::load(&path).unwrap();
        assert!(back.data().iter().zip(v.data()).all(|(a, b)| (a - b).abs() < 1e-6));
    }
}
