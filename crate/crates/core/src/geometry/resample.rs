use super::centerline::Centerline;
use super::vec3::Vec3;
use crate::error::{Error, Result};

/// Cumulative arc length at every polyline vertex.
pub fn cumulative_lengths(points: &[Vec3]) -> Vec<f64> {
    let mut acc = Vec::with_capacity(points.len());
    let mut s = 0.0;
    acc.push(0.0);
    for w in points.windows(2) {
        s += w[0].distance(w[1]);
        acc.push(s);
    }
    acc
}

/// Point at arc length `s` along a polyline with precomputed cumulative lengths.
pub fn point_at(points: &[Vec3], cumulative: &[f64], s: f64) -> Vec3 {
    let total = *cumulative.last().expect("non-empty polyline");
    if s <= 0.0 {
        return points[0];
    }
    if s >= total {
        return *points.last().expect("non-empty polyline");
    }
    let i = cumulative.partition_point(|&c| c <= s).saturating_sub(1);
    let seg = cumulative[i + 1] - cumulative[i];
    if seg <= 0.0 {
        return points[i];
    }
    points[i].lerp(points[i + 1], (s - cumulative[i]) / seg)
}

/// Samples the polyline every `spacing` units of arc length. The first and
/// last input points are always kept; only the final gap may be shorter.
pub fn resample_uniform(line: &Centerline, spacing: f64) -> Result<Centerline> {
    if !(spacing > 0.0) {
        return Err(Error::Config(format!("resample spacing must be > 0, got {spacing}")));
    }
    if line.points.is_empty() {
        return Err(Error::Degenerate("empty centerline".into()));
    }
    let cum = cumulative_lengths(&line.points);
    let total = *cum.last().expect("non-empty");
    let mut out = vec![line.first()];
    let tail_tolerance = 1e-6 * spacing;
    let mut k = 1usize;
    loop {
        let s = k as f64 * spacing;
        if s >= total - tail_tolerance {
            break;
        }
        out.push(point_at(&line.points, &cum, s));
        k += 1;
    }
    if line.points.len() > 1 {
        out.push(line.last());
    }
    Ok(Centerline::new(out, line.label))
}
