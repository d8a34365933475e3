//! Position-domain node features.
//!
//! Layout of the 35 values, in order: first point, center point, last
//! point, first→last direction, start tangent. Each block is three
//! coordinates followed by the four entries of its S² matrix. Point
//! coordinates are relative to the tree's bounding-box center and divided by
//! its diagonal; directions are unit vectors. S² matrices are computed in
//! the segment's own local frame.

use super::frame::{sct_s2, segment_frame, LocalFrame};
use super::resample::{cumulative_lengths, point_at};
use super::segments::{Segment, SegmentGraph};
use super::vec3::Vec3;

pub const FEATURE_DIM: usize = 35;
pub const BLOCK_DIM: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositionFeatures(pub [f64; FEATURE_DIM]);

impl PositionFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// The `k`-th 7-value block.
    pub fn block(&self, k: usize) -> &[f64] {
        &self.0[k * BLOCK_DIM..(k + 1) * BLOCK_DIM]
    }

    /// The four S² matrix entries of block `k`.
    pub fn s2_block(&self, k: usize) -> &[f64] {
        &self.block(k)[3..]
    }
}

/// Scale-free placement of points within one tree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeNormalization {
    pub center: Vec3,
    pub diagonal: f64,
}

impl TreeNormalization {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for &p in points {
            lo = lo.min(p);
            hi = hi.max(p);
        }
        if !lo.x.is_finite() {
            return Self {
                center: Vec3::ZERO,
                diagonal: 1.0,
            };
        }
        let diagonal = hi.distance(lo);
        Self {
            center: (lo + hi) * 0.5,
            diagonal: if diagonal > 0.0 { diagonal } else { 1.0 },
        }
    }

    pub fn of_graph(graph: &SegmentGraph) -> Self {
        Self::from_points(graph.nodes.iter().flat_map(|s| s.points.iter()))
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        (p - self.center) / self.diagonal
    }
}

/// Point halfway along the segment's arc length.
pub fn center_point(points: &[Vec3]) -> Vec3 {
    let cum = cumulative_lengths(points);
    let half = cum.last().copied().unwrap_or(0.0) * 0.5;
    point_at(points, &cum, half)
}

fn fill(out: &mut [f64], xyz: Vec3, local: Vec3) {
    out[..3].copy_from_slice(&xyz.to_array());
    out[3..].copy_from_slice(&sct_s2(local).matrix());
}

fn features_in_frame(seg: &Segment, frame: &LocalFrame, norm: &TreeNormalization) -> PositionFeatures {
    let pts = &seg.points;
    let first = pts[0];
    let last = pts[pts.len() - 1];
    let center = center_point(pts);
    let direction = (last - first).normalized().unwrap_or(Vec3::ZERO);
    let tangent = (pts[1] - first).normalized().unwrap_or(Vec3::ZERO);

    let mut v = [0.0; FEATURE_DIM];
    let blocks = [
        (norm.apply(first), frame.to_local(first)),
        (norm.apply(center), frame.to_local(center)),
        (norm.apply(last), frame.to_local(last)),
        (direction, frame.rotate_in(direction)),
        (tangent, frame.rotate_in(tangent)),
    ];
    for (k, (xyz, local)) in blocks.into_iter().enumerate() {
        fill(&mut v[k * BLOCK_DIM..(k + 1) * BLOCK_DIM], xyz, local);
    }
    PositionFeatures(v)
}

/// Features of one resampled segment. Segments with fewer than two distinct
/// points get a frame at their first point aligned with the world axes.
pub fn position_features(seg: &Segment, norm: &TreeNormalization) -> PositionFeatures {
    let frame = segment_frame(&seg.points).unwrap_or(LocalFrame {
        origin: seg.points[0],
        x_axis: Vec3::X,
        y_axis: Vec3::Y,
        z_axis: Vec3::Z,
        degenerate: true,
    });
    if seg.points.len() < 2 {
        let mut padded = seg.clone();
        padded.points.push(seg.points[0]);
        return features_in_frame(&padded, &frame, norm);
    }
    features_in_frame(seg, &frame, norm)
}

/// Row-major `n × 35` feature matrix for every node of a graph.
pub fn graph_features(graph: &SegmentGraph) -> Vec<f64> {
    let norm = TreeNormalization::of_graph(graph);
    graph
        .nodes
        .iter()
        .flat_map(|s| position_features(s, &norm).0)
        .collect()
}
