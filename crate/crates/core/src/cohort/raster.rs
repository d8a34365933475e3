use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::template::GeneratedTree;
use crate::condition::Volume;
use crate::error::Result;
use crate::geometry::Vec3;

/// Intensity model for rasterized trees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RasterParams {
    pub dims: [usize; 3],
    /// Millimetres per voxel.
    pub spacing: f64,
    pub background: f64,
    /// Peak intensity on the centerline above background.
    pub contrast: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
}

impl Default for RasterParams {
    fn default() -> Self {
        Self {
            dims: [88, 88, 88],
            spacing: 0.5,
            background: 0.0,
            contrast: 1.0,
            noise: 0.1,
        }
    }
}

/// Per-branch count of centerline points that fell outside the volume.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipReport {
    pub clipped_points: Vec<usize>,
}

impl ClipReport {
    pub fn total(&self) -> usize {
        self.clipped_points.iter().sum()
    }
}

/// Densifies a polyline so consecutive points are at most `step` apart.
fn densify(points: &[Vec3], step: f64) -> Vec<Vec3> {
    let mut out = vec![points[0]];
    for w in points.windows(2) {
        let n = (w[0].distance(w[1]) / step).ceil().max(1.0) as usize;
        for i in 1..=n {
            out.push(w[0].lerp(w[1], i as f64 / n as f64));
        }
    }
    out
}

/// Tubes with a Gaussian cross-section of width equal to the branch radius,
/// combined by maximum, plus additive noise.
pub fn rasterize_volume(
    tree: &GeneratedTree,
    params: &RasterParams,
    rng: &mut impl Rng,
) -> Result<(Volume, ClipReport)> {
    let [nx, ny, nz] = params.dims;
    let mut tube = vec![0.0f64; nx * ny * nz];
    let mut report = ClipReport::default();
    for (line, info) in tree.centerlines.branches.iter().zip(&tree.branches) {
        let r = info.radius;
        let reach = (2.5 * r).ceil() as i64;
        let inv = 1.0 / (2.0 * r * r);
        let inside = |p: Vec3| {
            p.x >= 0.0
                && p.y >= 0.0
                && p.z >= 0.0
                && p.x <= (nx - 1) as f64
                && p.y <= (ny - 1) as f64
                && p.z <= (nz - 1) as f64
        };
        report
            .clipped_points
            .push(line.points.iter().filter(|p| !inside(**p)).count());
        for c in densify(&line.points, 0.5) {
            let (cx, cy, cz) = (c.x.round() as i64, c.y.round() as i64, c.z.round() as i64);
            for z in (cz - reach).max(0)..=(cz + reach).min(nz as i64 - 1) {
                for y in (cy - reach).max(0)..=(cy + reach).min(ny as i64 - 1) {
                    for x in (cx - reach).max(0)..=(cx + reach).min(nx as i64 - 1) {
                        let d2 = Vec3::new(x as f64, y as f64, z as f64) - c;
                        let v = (-d2.dot(d2) * inv).exp();
                        let idx = (z as usize * ny + y as usize) * nx + x as usize;
                        if v > tube[idx] {
                            tube[idx] = v;
                        }
                    }
                }
            }
        }
    }
    let noise = (params.noise > 0.0).then(|| Normal::new(0.0, params.noise).expect("finite noise"));
    let data = tube
        .into_iter()
        .map(|t| {
            let n = noise.as_ref().map_or(0.0, |d| d.sample(rng));
            params.background + params.contrast * t + n
        })
        .collect();
    if report.total() > 0 {
        log::warn!("{} centerline points outside the volume", report.total());
    }
    Ok((Volume::new(params.dims, [params.spacing; 3], data)?, report))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::cohort::template::BranchInfo;
    use crate::geometry::{Centerline, CenterlineTree};
    use crate::AnatomicalLabel;

    fn straight_tree(radius: f64) -> GeneratedTree {
        let pts = (0..20).map(|i| Vec3::new(5.0 + i as f64, 16.0, 16.0)).collect();
        GeneratedTree {
            centerlines: CenterlineTree::new(vec![Centerline::new(pts, Some(AnatomicalLabel::Lad))]),
            branches: vec![BranchInfo {
                label: AnatomicalLabel::Lad,
                parent: None,
                radius,
            }],
        }
    }

    fn quiet(dims: [usize; 3]) -> RasterParams {
        RasterParams {
            dims,
            noise: 0.0,
            ..RasterParams::default()
        }
    }

    #[test]
    fn profile_decreases_away_from_centerline() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (v, report) = rasterize_volume(&straight_tree(2.0), &quiet([32, 32, 32]), &mut rng).unwrap();
        assert_eq!(report.total(), 0);
        let on = v.get(12, 16, 16);
        let off = v.get(12, 20, 16);
        assert!((on - 1.0).abs() < 1e-12);
        assert!(on >= off);
    }

    #[test]
    fn empty_tree_is_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tree = GeneratedTree {
            centerlines: CenterlineTree::new(vec![]),
            branches: vec![],
        };
        let (v, _) = rasterize_volume(&tree, &quiet([8, 8, 8]), &mut rng).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn out_of_bounds_points_are_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, report) = rasterize_volume(&straight_tree(1.0), &quiet([16, 32, 32]), &mut rng).unwrap();
        assert_eq!(report.clipped_points, vec![9]);
    }
}
