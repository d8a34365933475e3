//! Hand-built inputs and dense oracles shared by several test targets.

use cprgcn::geometry::{Centerline, Segment, Vec3};
use cprgcn::AnatomicalLabel::{self, *};
use nalgebra::{DMatrix, DVector};

pub fn line(start: Vec3, dir: [f64; 3], len: f64, label: AnatomicalLabel) -> Centerline {
    let d = Vec3::from(dir).normalized().unwrap();
    let n = (len / 1.5).ceil() as usize;
    Centerline::new((0..=n).map(|i| start + d * (len * i as f64 / n as f64)).collect(), Some(label))
}

/// RCA giving off AM part-way, then ending where R-PLB and R-PDA start.
pub fn figure_four() -> Vec<Centerline> {
    let rca = line(Vec3::new(10., 10., 10.), [1., 0., 0.], 60.0, Rca);
    let am_start = rca.points[rca.points.len() / 2];
    let end = rca.last();
    vec![
        rca,
        line(am_start, [0., 1., -0.3], 20.0, Am),
        line(end, [0.5, 1., 0.], 18.0, RPlb),
        line(end, [0.5, -1., 0.2], 18.0, RPda),
    ]
}

/// Segment whose center point sits at local azimuth `phi`: the frame is
/// z = world z, y = world y, x = world x, and the arc-length midpoint is `p2`.
pub fn wrap_segment(phi: f64) -> Segment {
    let p0 = Vec3::ZERO;
    let p1 = Vec3::new(0.0, 0.0, 2.0);
    let p2 = p1 + Vec3::new(phi.cos(), phi.sin(), 0.0);
    let ux = -phi.cos() / 3.0;
    let u = Vec3::new(ux, (1.0 - ux * ux).sqrt(), 0.0);
    let p3 = p2 + u * 3.0;
    Segment {
        points: vec![p0, p1, p2, p3],
        parent: None,
        label: None,
        branch: 0,
    }
}

/// Helix with radius 20 and rise 2 per radian; arc length is `t·√404`.
pub fn helix(t: f64) -> Vec3 {
    Vec3::new(20.0 * t.cos(), 20.0 * t.sin(), 2.0 * t)
}

/// Number of weakly connected components, by union-find.
pub fn components(parents: &[Option<usize>]) -> usize {
    fn find(root: &mut [usize], mut i: usize) -> usize {
        while root[i] != i {
            root[i] = root[root[i]];
            i = root[i];
        }
        i
    }
    let mut root: Vec<usize> = (0..parents.len()).collect();
    for (j, p) in parents.iter().enumerate() {
        if let Some(i) = *p {
            let (a, b) = (find(&mut root, i), find(&mut root, j));
            root[a] = b;
        }
    }
    (0..parents.len()).filter(|&i| find(&mut root, i) == i).count()
}

/// Every parent assignment on `n` labelled nodes that is acyclic.
pub fn forests(n: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = Vec::new();
    let choices = n + 1;
    for code in 0..choices.pow(n as u32) {
        let mut c = code;
        let parents: Vec<Option<usize>> = (0..n)
            .map(|_| {
                let v = c % choices;
                c /= choices;
                (v < n).then_some(v)
            })
            .collect();
        let acyclic = (0..n).all(|start| {
            let mut cur = Some(start);
            let mut steps = 0;
            while let Some(i) = cur {
                cur = parents[i];
                steps += 1;
                if steps > n {
                    return false;
                }
            }
            true
        });
        if acyclic {
            out.push(parents);
        }
    }
    out
}

/// Dense evaluation of `D^{-1/2} (A + I) D^{-1/2}` with row-sum degrees.
pub fn dense_normalized(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let tilde = a + DMatrix::identity(n, n);
    let d: Vec<f64> = (0..n).map(|i| tilde.row(i).sum()).collect();
    let scale = DMatrix::from_diagonal(&DVector::from_iterator(n, d.iter().map(|v| 1.0 / v.sqrt())));
    &scale * tilde * &scale
}
