//! Topology rules and random geometry for synthetic coronary trees.

use rand::Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::geometry::{Centerline, CenterlineTree, Vec3};
use crate::labels::AnatomicalLabel::{self, *};

/// How many copies of one branch class a parent spawns and how they look.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchRule {
    pub label: AnatomicalLabel,
    pub parent: Option<AnatomicalLabel>,
    /// `count_probs[k]` is the probability of exactly `k` copies.
    pub count_probs: Vec<f64>,
    /// Length range in voxels.
    pub length: [f64; 2],
    /// Range of the start position as a fraction of the parent's length.
    pub start: [f64; 2],
    /// Mean initial and final directions in the template frame.
    pub direction: [f64; 3],
    pub end_direction: [f64; 3],
    /// Vessel radius in voxels.
    pub radius: f64,
}

/// Anatomy template. Rules are listed parents first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeTemplate {
    pub rules: Vec<BranchRule>,
    /// Ostium positions relative to the volume center.
    pub left_ostium: [f64; 3],
    pub right_ostium: [f64; 3],
    /// Standard deviation of per-branch direction jitter, in degrees.
    pub direction_jitter_deg: f64,
    /// Standard deviation of the whole-tree rotation, in degrees.
    pub pose_jitter_deg: f64,
    /// Standard deviation of the whole-tree translation, in voxels.
    pub translation_jitter: f64,
    /// Relative standard deviation of branch radii.
    pub radius_jitter: f64,
    pub max_branches: usize,
    /// Centerline sample spacing, in voxels.
    pub point_spacing: f64,
}

fn rule(
    label: AnatomicalLabel,
    parent: Option<AnatomicalLabel>,
    count_probs: &[f64],
    length: [f64; 2],
    start: [f64; 2],
    direction: [f64; 3],
    end_direction: [f64; 3],
    radius: f64,
) -> BranchRule {
    BranchRule {
        label,
        parent,
        count_probs: count_probs.to_vec(),
        length,
        start,
        direction,
        end_direction,
        radius,
    }
}

impl Default for TreeTemplate {
    fn default() -> Self {
        let rules = vec![
            rule(Lm, None, &[0.0, 1.0], [7.0, 10.0], [0.0, 0.0], [0.7, 0.2, -0.3], [0.7, 0.3, -0.4], 3.6),
            rule(Rca, None, &[0.0, 1.0], [50.0, 62.0], [0.0, 0.0], [-0.7, 0.3, -0.4], [0.1, 0.8, -0.6], 3.0),
            rule(Lad, Some(Lm), &[0.0, 1.0], [38.0, 48.0], [1.0, 1.0], [0.2, 0.7, -0.6], [-0.2, 0.6, -0.8], 2.7),
            rule(Lcx, Some(Lm), &[0.03, 0.97], [28.0, 36.0], [1.0, 1.0], [0.8, -0.4, -0.4], [0.3, -0.6, -0.8], 2.5),
            rule(Ri, Some(Lm), &[0.7, 0.3], [18.0, 24.0], [1.0, 1.0], [0.7, 0.3, -0.6], [0.6, 0.2, -0.8], 2.0),
            rule(D, Some(Lad), &[0.15, 0.45, 0.3, 0.1], [14.0, 20.0], [0.2, 0.8], [0.8, 0.3, -0.5], [0.7, 0.2, -0.7], 1.7),
            rule(S, Some(Lad), &[0.45, 0.4, 0.15], [10.0, 14.0], [0.15, 0.7], [-0.7, 0.2, -0.7], [-0.6, 0.1, -0.8], 1.2),
            rule(Om, Some(Lcx), &[0.15, 0.45, 0.3, 0.1], [14.0, 20.0], [0.3, 0.9], [0.4, -0.1, -0.9], [0.2, 0.1, -1.0], 1.9),
            rule(Am, Some(Rca), &[0.4, 0.6], [12.0, 18.0], [0.35, 0.6], [-0.5, 0.0, -0.9], [-0.3, 0.1, -1.0], 1.6),
            rule(RPda, Some(Rca), &[0.2, 0.8], [16.0, 22.0], [1.0, 1.0], [0.3, 0.6, -0.7], [0.2, 0.8, -0.6], 1.8),
            rule(RPlb, Some(Rca), &[0.35, 0.5, 0.15], [12.0, 18.0], [0.85, 1.0], [0.8, 0.3, -0.2], [0.9, 0.1, -0.3], 1.4),
        ];
        Self {
            rules,
            left_ostium: [4.0, -16.0, 16.0],
            right_ostium: [-8.0, -14.0, 16.0],
            direction_jitter_deg: 25.0,
            pose_jitter_deg: 15.0,
            translation_jitter: 2.0,
            radius_jitter: 0.08,
            max_branches: 15,
            point_spacing: 2.0,
        }
    }
}

impl TreeTemplate {
    /// Template that produces every optional branch at its maximum count.
    pub fn maximal(&self) -> Self {
        let mut t = self.clone();
        for r in &mut t.rules {
            let n = r.count_probs.len();
            r.count_probs = vec![0.0; n];
            r.count_probs[n - 1] = 1.0;
        }
        t
    }

    /// Template that produces only branches that cannot be omitted.
    pub fn minimal(&self) -> Self {
        let mut t = self.clone();
        for r in &mut t.rules {
            let k = r.count_probs.iter().position(|&p| p > 0.0).unwrap_or(0);
            r.count_probs = vec![0.0; r.count_probs.len()];
            r.count_probs[k] = 1.0;
        }
        t
    }

    pub fn rule(&self, label: AnatomicalLabel) -> Option<&BranchRule> {
        self.rules.iter().find(|r| r.label == label)
    }

    /// Expected branch count, ignoring the `max_branches` cap.
    pub fn expected_branches(&self) -> f64 {
        // Child rules multiply by the expected count of their parent.
        let mut expected = std::collections::HashMap::new();
        for r in &self.rules {
            let own: f64 = r.count_probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
            let parent = r
                .parent
                .map_or(1.0, |p| expected.get(&p).copied().unwrap_or(0.0_f64).min(1.0));
            expected.insert(r.label, own * parent);
        }
        expected.values().sum()
    }
}

/// One generated branch before rasterization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchInfo {
    pub label: AnatomicalLabel,
    /// Index of the parent branch in the tree, if any.
    pub parent: Option<usize>,
    pub radius: f64,
}

/// A labeled tree with per-branch radii, aligned with its centerlines.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedTree {
    pub centerlines: CenterlineTree,
    pub branches: Vec<BranchInfo>,
}

fn bezier(p: [Vec3; 4], t: f64) -> Vec3 {
    let u = 1.0 - t;
    p[0] * (u * u * u) + p[1] * (3.0 * u * u * t) + p[2] * (3.0 * u * t * t) + p[3] * (t * t * t)
}

fn jitter(rng: &mut impl Rng, v: Vec3, sigma_deg: f64) -> Vec3 {
    if sigma_deg <= 0.0 {
        return v;
    }
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = Normal::new(0.0, sigma_deg.to_radians())
        .expect("finite sigma")
        .sample(rng);
    v.rotate(Vec3::from(axis), angle)
}

fn unit(v: [f64; 3]) -> Vec3 {
    Vec3::from(v).normalized().expect("non-zero template direction")
}

/// Smooth branch from a cubic Bézier through jittered template directions,
/// sampled roughly every `spacing` voxels.
fn branch_curve(
    rng: &mut impl Rng,
    rule: &BranchRule,
    start: Vec3,
    sigma_deg: f64,
    spacing: f64,
) -> Vec<Vec3> {
    let length = rng.random_range(rule.length[0]..=rule.length[1]);
    let d0 = jitter(rng, unit(rule.direction), sigma_deg);
    let d1 = jitter(rng, unit(rule.end_direction), sigma_deg);
    let chord = (d0 + d1).normalized().unwrap_or(d0);
    let end = start + chord * (0.9 * length);
    let ctrl = [start, start + d0 * (length / 3.0), end - d1 * (length / 3.0), end];
    let n = ((length / spacing).ceil() as usize).max(3);
    (0..=n).map(|i| bezier(ctrl, i as f64 / n as f64)).collect()
}

fn sample_count(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len().saturating_sub(1)
}

/// Point at fraction `t` of a polyline's arc length.
fn point_on(points: &[Vec3], t: f64) -> Vec3 {
    let cum = crate::geometry::cumulative_lengths(points);
    let total = cum.last().copied().unwrap_or(0.0);
    crate::geometry::point_at(points, &cum, t * total)
}

/// Samples one tree. Branch coordinates are voxel positions inside a volume
/// whose center is `center`.
pub fn generate_tree(rng: &mut impl Rng, template: &TreeTemplate, center: Vec3) -> GeneratedTree {
    let sigma = template.direction_jitter_deg;
    let mut lines: Vec<Centerline> = Vec::new();
    let mut infos: Vec<BranchInfo> = Vec::new();
    let mut cap_reached = false;
    for rule in &template.rules {
        let count = sample_count(rng, &rule.count_probs);
        let parents: Vec<usize> = match rule.parent {
            None => vec![usize::MAX],
            Some(p) => infos
                .iter()
                .enumerate()
                .filter(|(_, b)| b.label == p)
                .map(|(i, _)| i)
                .collect(),
        };
        for &parent in &parents {
            let mut starts: Vec<f64> = (0..count)
                .map(|_| rng.random_range(rule.start[0]..=rule.start[1]))
                .collect();
            starts.sort_by(f64::total_cmp);
            for t in starts {
                if lines.len() >= template.max_branches {
                    cap_reached = true;
                    break;
                }
                let (start, parent_idx) = if parent == usize::MAX {
                    let ostium = if rule.label.is_left() {
                        template.left_ostium
                    } else {
                        template.right_ostium
                    };
                    (center + Vec3::from(ostium), None)
                } else {
                    (point_on(&lines[parent].points, t), Some(parent))
                };
                let points = branch_curve(rng, rule, start, sigma, template.point_spacing);
                let scale: f64 = Normal::new(1.0, template.radius_jitter)
                    .expect("finite jitter")
                    .sample(rng);
                lines.push(Centerline::new(points, Some(rule.label)));
                infos.push(BranchInfo {
                    label: rule.label,
                    parent: parent_idx,
                    radius: (rule.radius * scale).clamp(0.5, 5.5),
                });
            }
        }
    }
    if cap_reached {
        log::debug!("branch cap of {} reached", template.max_branches);
    }

    // Whole-tree pose: rotation about the volume center plus a shift.
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = if template.pose_jitter_deg > 0.0 {
        Normal::new(0.0, template.pose_jitter_deg.to_radians())
            .expect("finite sigma")
            .sample(rng)
    } else {
        0.0
    };
    let shift = if template.translation_jitter > 0.0 {
        let n = Normal::new(0.0, template.translation_jitter).expect("finite sigma");
        Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
    } else {
        Vec3::ZERO
    };
    for line in &mut lines {
        for p in &mut line.points {
            *p = center + (*p - center).rotate(Vec3::from(axis), angle) + shift;
        }
    }
    GeneratedTree {
        centerlines: CenterlineTree::new(lines),
        branches: infos,
    }
}

/// Checks every branch against the parent rules; returns the offending
/// branch indices.
pub fn rule_violations(tree: &GeneratedTree) -> Vec<usize> {
    tree.branches
        .iter()
        .enumerate()
        .filter(|(_, b)| {
            let parent_label = b.parent.map(|p| tree.branches[p].label);
            parent_label != b.label.anatomical_parent()
        })
        .map(|(i, _)| i)
        .collect()
}
