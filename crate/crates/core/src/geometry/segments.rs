//! Splitting traced branches into bifurcation-free segments and linking
//! them into a directed parent → child graph.

use serde::{Deserialize, Serialize};

use super::centerline::Centerline;
use super::resample::{cumulative_lengths, point_at, resample_uniform};
use super::spline::catmull_rom_smooth;
use super::vec3::Vec3;
use crate::error::{Error, Result};
use crate::labels::AnatomicalLabel;

/// Piece of a branch between bifurcations (or branch ends).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub points: Vec<Vec3>,
    pub parent: Option<usize>,
    pub label: Option<AnatomicalLabel>,
    /// Index of the source branch in the input list.
    pub branch: usize,
}

impl Segment {
    pub fn first(&self) -> Vec3 {
        self.points[0]
    }

    pub fn last(&self) -> Vec3 {
        *self.points.last().expect("non-empty segment")
    }

    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].distance(w[1])).sum()
    }
}

/// Closest point on a polyline: distance and arc-length position.
fn project(points: &[Vec3], cumulative: &[f64], q: Vec3) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    for (i, w) in points.windows(2).enumerate() {
        let d = w[1] - w[0];
        let len2 = d.dot(d);
        let t = if len2 > 0.0 {
            ((q - w[0]).dot(d) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let p = w[0] + d * t;
        let dist = p.distance(q);
        if dist < best.0 {
            best = (dist, cumulative[i] + t * (cumulative[i + 1] - cumulative[i]));
        }
    }
    if points.len() == 1 {
        best = (points[0].distance(q), 0.0);
    }
    best
}

#[derive(Clone, Copy, Debug)]
struct Attachment {
    parent: usize,
    s: f64,
}

fn find_attachments(lines: &[Centerline], merge_radius: f64) -> Vec<Option<Attachment>> {
    let cums: Vec<Vec<f64>> = lines.iter().map(|l| cumulative_lengths(&l.points)).collect();
    lines
        .iter()
        .enumerate()
        .map(|(ci, child)| {
            let q = child.first();
            let mut best: Option<(f64, Attachment)> = None;
            for (pi, parent) in lines.iter().enumerate() {
                if pi == ci {
                    continue;
                }
                let (dist, s) = project(&parent.points, &cums[pi], q);
                // A start shared with another branch's start makes them
                // siblings, not parent and child.
                if dist > merge_radius || s <= merge_radius {
                    continue;
                }
                if best.is_none_or(|(d, _)| dist < d) {
                    best = Some((dist, Attachment { parent: pi, s }));
                }
            }
            best.map(|(_, a)| a)
        })
        .collect()
}

fn check_acyclic(parents: &[Option<usize>]) -> Result<()> {
    // 0 = unvisited, 1 = on current chain, 2 = done
    let mut state = vec![0u8; parents.len()];
    for start in 0..parents.len() {
        let mut chain = Vec::new();
        let mut cur = Some(start);
        while let Some(i) = cur {
            match state[i] {
                2 => break,
                1 => {
                    return Err(Error::MalformedTree(format!(
                        "parent cycle through node {i}"
                    )))
                }
                _ => {
                    state[i] = 1;
                    chain.push(i);
                    cur = parents[i];
                    if let Some(p) = cur {
                        if p >= parents.len() {
                            return Err(Error::MalformedTree(format!(
                                "node {i} references missing parent {p}"
                            )));
                        }
                    }
                }
            }
        }
        for i in chain {
            state[i] = 2;
        }
    }
    Ok(())
}

/// Cuts polyline `points` at the sorted interior arc lengths `cuts`.
fn cut_polyline(points: &[Vec3], cumulative: &[f64], cuts: &[f64]) -> Vec<Vec<Vec3>> {
    let total = *cumulative.last().expect("non-empty");
    let mut bounds = vec![0.0];
    bounds.extend_from_slice(cuts);
    bounds.push(total);
    let eps = 1e-9;
    bounds
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let mut piece = vec![point_at(points, cumulative, a)];
            for (p, &s) in points.iter().zip(cumulative) {
                if s > a + eps && s < b - eps {
                    piece.push(*p);
                }
            }
            piece.push(point_at(points, cumulative, b));
            piece
        })
        .collect()
}

/// Splits branches at bifurcations. A branch whose first point lies within
/// `merge_radius` of another branch's centerline becomes that branch's
/// child; children whose attachment points are within `merge_radius` of one
/// another share one bifurcation point. Branches that touch nothing are roots.
pub fn split_into_segments(lines: &[Centerline], merge_radius: f64) -> Result<Vec<Segment>> {
    for (i, l) in lines.iter().enumerate() {
        if l.points.len() < 2 || l.arc_length() <= 0.0 {
            return Err(Error::Degenerate(format!("branch {i} has no extent")));
        }
    }
    let attach = find_attachments(lines, merge_radius);
    let branch_parent: Vec<Option<usize>> = attach.iter().map(|a| a.map(|a| a.parent)).collect();
    check_acyclic(&branch_parent)?;

    let cums: Vec<Vec<f64>> = lines.iter().map(|l| cumulative_lengths(&l.points)).collect();

    // Bifurcation clusters per parent branch.
    let mut cuts: Vec<Vec<f64>> = vec![Vec::new(); lines.len()];
    // For each child branch: (parent branch, piece index on the parent, bifurcation point).
    let mut child_link: Vec<Option<(usize, usize, Vec3)>> = vec![None; lines.len()];
    for (pi, parent) in lines.iter().enumerate() {
        let total = *cums[pi].last().expect("non-empty");
        let mut kids: Vec<(usize, f64)> = attach
            .iter()
            .enumerate()
            .filter_map(|(ci, a)| a.filter(|a| a.parent == pi).map(|a| (ci, a.s)))
            .collect();
        kids.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let mut clusters: Vec<Vec<(usize, f64)>> = Vec::new();
        for kid in kids {
            let joins = clusters.last().is_some_and(|c| {
                let anchor = c[0].1;
                point_at(&parent.points, &cums[pi], anchor)
                    .distance(point_at(&parent.points, &cums[pi], kid.1))
                    <= merge_radius
            });
            if joins {
                clusters.last_mut().expect("non-empty").push(kid);
            } else {
                clusters.push(vec![kid]);
            }
        }
        for cluster in clusters {
            let mean_s = cluster.iter().map(|k| k.1).sum::<f64>() / cluster.len() as f64;
            let at_end = total - mean_s <= merge_radius;
            let (piece, point) = if at_end {
                (usize::MAX, parent.last())
            } else {
                cuts[pi].push(mean_s);
                (cuts[pi].len() - 1, point_at(&parent.points, &cums[pi], mean_s))
            };
            for (ci, _) in cluster {
                child_link[ci] = Some((pi, piece, point));
            }
        }
    }

    let mut segments = Vec::new();
    let mut pieces_of: Vec<Vec<usize>> = vec![Vec::new(); lines.len()];
    for (bi, line) in lines.iter().enumerate() {
        let mut points = line.points.clone();
        if let Some((_, _, bif)) = child_link[bi] {
            points[0] = bif;
            while points.len() > 2 && points[1].distance(bif) < 1e-9 {
                points.remove(1);
            }
        }
        let cum = cumulative_lengths(&points);
        // Snapping moves the start, so cut positions shift by the change in length.
        let shift = cum.last().copied().unwrap_or(0.0) - cums[bi].last().copied().unwrap_or(0.0);
        let local_cuts: Vec<f64> = cuts[bi].iter().map(|c| c + shift).collect();
        for (k, piece) in cut_polyline(&points, &cum, &local_cuts).into_iter().enumerate() {
            let parent = if k == 0 { None } else { pieces_of[bi].last().copied() };
            pieces_of[bi].push(segments.len());
            segments.push(Segment {
                points: piece,
                parent,
                label: line.label,
                branch: bi,
            });
        }
    }
    for (ci, link) in child_link.iter().enumerate() {
        if let Some((pi, piece, _)) = *link {
            let parent_seg = if piece == usize::MAX {
                *pieces_of[pi].last().expect("parent has pieces")
            } else {
                pieces_of[pi][piece]
            };
            let first = pieces_of[ci][0];
            segments[first].parent = Some(parent_seg);
        }
    }
    Ok(segments)
}

/// Segments plus the directed adjacency: entry `(i, j)` is 1 iff segment
/// `i` is the parent of segment `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentGraph {
    pub nodes: Vec<Segment>,
    adjacency: Vec<u8>,
}

impl SegmentGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.len() + j] != 0
    }

    /// Row-major `n×n` 0/1 adjacency.
    pub fn adjacency(&self) -> &[u8] {
        &self.adjacency
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&a| a != 0).count()
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&j| self.nodes[j].parent.is_none())
            .collect()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.edge(i, j)).collect()
    }

    pub fn labels(&self) -> Vec<Option<AnatomicalLabel>> {
        self.nodes.iter().map(|s| s.label).collect()
    }
}

/// Builds the parent → child adjacency, rejecting cycles and dangling parents.
pub fn build_graph(segments: Vec<Segment>) -> Result<SegmentGraph> {
    let parents: Vec<Option<usize>> = segments.iter().map(|s| s.parent).collect();
    check_acyclic(&parents)?;
    let n = segments.len();
    let mut adjacency = vec![0u8; n * n];
    for (j, p) in parents.iter().enumerate() {
        if let Some(i) = *p {
            adjacency[i * n + j] = 1;
        }
    }
    Ok(SegmentGraph {
        nodes: segments,
        adjacency,
    })
}

/// Centerline preparation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryParams {
    pub samples_per_span: usize,
    pub merge_radius: f64,
    /// Control-point spacing after resampling, in voxels.
    pub spacing: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        Self {
            samples_per_span: 4,
            merge_radius: 3.0,
            spacing: 10.0,
        }
    }
}

/// Smooths each branch, splits at bifurcations, resamples every segment
/// uniformly and links the result into a graph.
pub fn prepare_tree(lines: &[Centerline], params: &GeometryParams) -> Result<SegmentGraph> {
    let smoothed = lines
        .iter()
        .map(|l| catmull_rom_smooth(l, params.samples_per_span))
        .collect::<Result<Vec<_>>>()?;
    let mut segments = split_into_segments(&smoothed, params.merge_radius)?;
    for seg in &mut segments {
        let line = Centerline::new(std::mem::take(&mut seg.points), seg.label);
        seg.points = resample_uniform(&line, params.spacing)?.points;
    }
    build_graph(segments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use AnatomicalLabel::*;

    fn polyline(points: &[[f64; 3]], label: AnatomicalLabel) -> Centerline {
        Centerline::new(points.iter().map(|&p| Vec3::from(p)).collect(), Some(label))
    }

    fn line_from(start: [f64; 3], dir: [f64; 3], len: f64, label: AnatomicalLabel) -> Centerline {
        let s = Vec3::from(start);
        let d = Vec3::from(dir).normalized().unwrap();
        let n = (len.ceil() as usize).max(2);
        Centerline::new(
            (0..=n).map(|i| s + d * (len * i as f64 / n as f64)).collect(),
            Some(label),
        )
    }

    #[test]
    fn single_line_is_one_segment() {
        let segs = split_into_segments(&[line_from([0.; 3], [1., 0., 0.], 30.0, Lad)], 3.0).unwrap();
        assert_eq!(segs.len(), 1);
        let g = build_graph(segs).unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn side_branch_splits_parent() {
        let parent = line_from([0.; 3], [1., 0., 0.], 40.0, Lad);
        let child = line_from([20., 0., 0.], [0., 1., 0.], 15.0, D);
        let segs = split_into_segments(&[parent, child], 3.0).unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[1].parent, Some(0));
        assert_eq!(segs[2].parent, Some(0));
        assert!(segs[0].last().distance(Vec3::new(20., 0., 0.)) < 1e-9);
        assert!(segs[2].first().distance(segs[0].last()) < 1e-9);
        assert_eq!(segs[2].label, Some(D));
    }

    #[test]
    fn cycle_is_rejected() {
        let mut a = Segment {
            points: vec![Vec3::ZERO, Vec3::X],
            parent: Some(1),
            label: None,
            branch: 0,
        };
        let mut b = a.clone();
        b.parent = Some(0);
        assert!(matches!(
            build_graph(vec![a.clone(), b]),
            Err(Error::MalformedTree(_))
        ));
        a.parent = Some(7);
        assert!(build_graph(vec![a]).is_err());
    }

    #[test]
    fn empty_input_gives_empty_graph() {
        let g = build_graph(Vec::new()).unwrap();
        assert!(g.is_empty());
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn siblings_sharing_a_start_are_not_linked() {
        let a = polyline(&[[0., 0., 0.], [10., 0., 0.], [20., 0., 0.]], Lad);
        let b = polyline(&[[0., 0., 0.], [0., 10., 0.], [0., 20., 0.]], Lcx);
        let segs = split_into_segments(&[a, b], 3.0).unwrap();
        assert_eq!(segs.len(), 2);
        assert!(segs.iter().all(|s| s.parent.is_none()));
    }
}
