//! Centripetal Catmull-Rom interpolation of centerline control points.

use super::centerline::Centerline;
use super::vec3::Vec3;
use crate::error::{Error, Result};

const ALPHA: f64 = 0.5;

/// One interpolating span between `p[1]` and `p[2]`.
#[derive(Clone, Copy, Debug)]
pub struct CatmullRomSpan {
    p: [Vec3; 4],
    t: [f64; 4],
}

impl CatmullRomSpan {
    pub fn new(p: [Vec3; 4]) -> Self {
        let mut t = [0.0; 4];
        for i in 1..4 {
            let d = p[i].distance(p[i - 1]).powf(ALPHA);
            // Coincident neighbours would collapse a knot interval.
            t[i] = t[i - 1] + d.max(1e-12);
        }
        Self { p, t }
    }

    /// Position at `u ∈ [0, 1]`; `u = 0` gives `p[1]` and `u = 1` gives `p[2]`
    /// (Barry-Goldman pyramid).
    pub fn eval(&self, u: f64) -> Vec3 {
        let [p0, p1, p2, p3] = self.p;
        let [t0, t1, t2, t3] = self.t;
        let t = t1 + u * (t2 - t1);
        let a1 = p0 * ((t1 - t) / (t1 - t0)) + p1 * ((t - t0) / (t1 - t0));
        let a2 = p1 * ((t2 - t) / (t2 - t1)) + p2 * ((t - t1) / (t2 - t1));
        let a3 = p2 * ((t3 - t) / (t3 - t2)) + p3 * ((t - t2) / (t3 - t2));
        let b1 = a1 * ((t2 - t) / (t2 - t0)) + a2 * ((t - t0) / (t2 - t0));
        let b2 = a2 * ((t3 - t) / (t3 - t1)) + a3 * ((t - t1) / (t3 - t1));
        b1 * ((t2 - t) / (t2 - t1)) + b2 * ((t - t1) / (t2 - t1))
    }
}

fn dedup(points: &[Vec3]) -> Vec<Vec3> {
    let mut out: Vec<Vec3> = Vec::with_capacity(points.len());
    for &p in points {
        if out.last().is_none_or(|q| q.distance(p) > 0.0) {
            out.push(p);
        }
    }
    out
}

/// Spans covering every consecutive control-point pair. Boundary tangents
/// come from phantom points reflected through the end points.
pub fn spans(points: &[Vec3]) -> Result<Vec<CatmullRomSpan>> {
    let pts = dedup(points);
    if pts.len() < 2 {
        return Err(Error::Degenerate(format!(
            "catmull-rom needs at least 2 distinct points, got {}",
            pts.len()
        )));
    }
    let n = pts.len();
    let before = pts[0] * 2.0 - pts[1];
    let after = pts[n - 1] * 2.0 - pts[n - 2];
    let at = |i: isize| -> Vec3 {
        if i < 0 {
            before
        } else if i as usize >= n {
            after
        } else {
            pts[i as usize]
        }
    };
    Ok((0..n as isize - 1)
        .map(|i| CatmullRomSpan::new([at(i - 1), at(i), at(i + 1), at(i + 2)]))
        .collect())
}

/// Densifies a centerline with `samples_per_span` samples per control-point
/// interval. Every control point is reproduced exactly in the output.
pub fn catmull_rom_smooth(line: &Centerline, samples_per_span: usize) -> Result<Centerline> {
    let spans = spans(&line.points)?;
    let per = samples_per_span.max(1);
    let mut out = Vec::with_capacity(spans.len() * per + 1);
    for span in &spans {
        out.push(span.p[1]);
        for k in 1..per {
            out.push(span.eval(k as f64 / per as f64));
        }
    }
    out.push(spans.last().expect("at least one span").p[2]);
    Ok(Centerline::new(out, line.label))
}
