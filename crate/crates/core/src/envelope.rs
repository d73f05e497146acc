//! Directional quantile envelopes: intersections of the halfplanes
//! `{v : sᵀv ≥ q(s)}` over a grid of directions, plus coverage and curvature.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::DirectionGrid;
use crate::error::{Error, Result};
use crate::ps::CoefficientField;
use crate::spline::SplineBasis;

const BOX_HALF_WIDTH: f64 = 5e5;
const MERGE_TOL: f64 = 1e-9;

/// The convex region cut out by one set of directional quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub q: Vec<f64>,
    /// Counterclockwise vertices; empty when `empty` is set.
    pub vertices: Vec<[f64; 2]>,
    pub empty: bool,
    /// Directions whose boundary line touches the polygon.
    pub binding: Vec<usize>,
}

/// `q_r = xᵀ C(s_r) H(t)` for every direction of the field.
pub fn directional_quantiles(field: &CoefficientField, basis: &SplineBasis, x: &[f64], t: f64) -> Result<Vec<f64>> {
    let m = basis.dim();
    let k = field.coeffs.ncols();
    if x.len() * m != k {
        return Err(Error::invalid(format!(
            "covariate vector has length {} but field holds {} = p x {m} coefficients",
            x.len(),
            k
        )));
    }
    let h = basis.eval(t)?;
    Ok((0..field.directions())
        .map(|r| {
            let row = field.coeffs.row(r);
            x.iter().enumerate().map(|(p, xp)| xp * (0..m).map(|mm| row[p * m + mm] * h[mm]).sum::<f64>()).sum()
        })
        .collect())
}

#[derive(Debug, Clone, Copy)]
struct Line {
    normal: [f64; 2],
    offset: f64,
}

impl Line {
    fn value(&self, v: [f64; 2]) -> f64 {
        self.normal[0] * v[0] + self.normal[1] * v[1] - self.offset
    }

    fn meet(&self, other: &Line) -> Option<[f64; 2]> {
        let det = self.normal[0] * other.normal[1] - self.normal[1] * other.normal[0];
        if det.abs() < 1e-12 {
            return None;
        }
        Some([
            (self.offset * other.normal[1] - self.normal[1] * other.offset) / det,
            (self.normal[0] * other.offset - self.offset * other.normal[0]) / det,
        ])
    }
}

// A vertex with the supporting line of the edge that leaves it.
#[derive(Debug, Clone, Copy)]
struct Corner {
    point: [f64; 2],
    edge: usize,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn merge_duplicates(poly: &mut Vec<Corner>) {
    let mut i = 0;
    while poly.len() > 1 && i < poly.len() {
        let next = (i + 1) % poly.len();
        if dist(poly[i].point, poly[next].point) < MERGE_TOL {
            // Keep the first point; the surviving edge is the one leaving the second.
            poly[i].edge = poly[next].edge;
            poly.remove(next);
            if next < i {
                i -= 1;
            }
        } else {
            i += 1;
        }
    }
}

/// Intersects the halfplanes `sᵀv ≥ q_r` by successive clipping of a large
/// bounding square.
pub fn build_envelope(grid: &DirectionGrid, q: &[f64]) -> Result<Envelope> {
    if q.len() != grid.len() {
        return Err(Error::invalid(format!("{} quantiles for {} directions", q.len(), grid.len())));
    }
    let b = BOX_HALF_WIDTH;
    // Box sides as halfplanes sᵀv ≥ −b.
    let mut lines = vec![
        Line { normal: [0.0, 1.0], offset: -b },
        Line { normal: [-1.0, 0.0], offset: -b },
        Line { normal: [0.0, -1.0], offset: -b },
        Line { normal: [1.0, 0.0], offset: -b },
    ];
    let mut poly = vec![
        Corner { point: [-b, -b], edge: 0 },
        Corner { point: [b, -b], edge: 1 },
        Corner { point: [b, b], edge: 2 },
        Corner { point: [-b, b], edge: 3 },
    ];
    for (s, &qr) in grid.directions().iter().zip(q) {
        let id = lines.len();
        let line = Line { normal: *s, offset: qr };
        lines.push(line);
        // Points within rounding of the line count as inside, so degenerate
        // (zero-area) envelopes survive as segments or points.
        let eps = MERGE_TOL * qr.abs().max(1.0);
        let mut out = Vec::with_capacity(poly.len() + 1);
        for i in 0..poly.len() {
            let a = poly[i];
            let bpt = poly[(i + 1) % poly.len()].point;
            let fa = line.value(a.point);
            let fb = line.value(bpt);
            let cross = |fa: f64, fb: f64| {
                let w = fa / (fa - fb);
                [a.point[0] + w * (bpt[0] - a.point[0]), a.point[1] + w * (bpt[1] - a.point[1])]
            };
            if fa >= -eps {
                out.push(a);
                if fb < -eps {
                    out.push(Corner { point: cross(fa, fb), edge: id });
                }
            } else if fb >= -eps {
                out.push(Corner { point: cross(fa, fb), edge: a.edge });
            }
        }
        poly = out;
        merge_duplicates(&mut poly);
        if poly.is_empty() {
            return Ok(Envelope { q: q.to_vec(), vertices: Vec::new(), empty: true, binding: Vec::new() });
        }
    }

    // Recompute each vertex from its two supporting lines to shed the rounding
    // picked up while clipping long box edges.
    if poly.len() >= 3 {
        let n = poly.len();
        let refined: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let prev = poly[(i + n - 1) % n].edge;
                let cur = poly[i].edge;
                lines[prev].meet(&lines[cur]).unwrap_or(poly[i].point)
            })
            .collect();
        for (c, p) in poly.iter_mut().zip(refined) {
            c.point = p;
        }
        merge_duplicates(&mut poly);
    }
    let vertices: Vec<[f64; 2]> = poly.iter().map(|c| c.point).collect();
    let binding = grid
        .directions()
        .iter()
        .zip(q)
        .enumerate()
        .filter(|(_, (s, &qr))| {
            let slack = vertices.iter().map(|v| s[0] * v[0] + s[1] * v[1] - qr).fold(f64::INFINITY, f64::min);
            slack <= MERGE_TOL * qr.abs().max(1.0)
        })
        .map(|(r, _)| r)
        .collect();
    Ok(Envelope { q: q.to_vec(), vertices, empty: false, binding })
}

/// Whether `point` satisfies every halfplane constraint (closed, no tolerance).
pub fn contains(grid: &DirectionGrid, q: &[f64], point: [f64; 2]) -> bool {
    grid.directions().iter().zip(q).all(|(s, &qr)| s[0] * point[0] + s[1] * point[1] >= qr)
}

/// Fraction of `points` inside the envelope.
pub fn coverage(grid: &DirectionGrid, q: &[f64], points: &[[f64; 2]]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::invalid("coverage needs at least one point"));
    }
    let inside = points.iter().filter(|&&p| contains(grid, q, p)).count();
    Ok(inside as f64 / points.len() as f64)
}

/// Point-in-convex-polygon test against the vertex list, with tolerance `tol`.
pub fn polygon_contains(vertices: &[[f64; 2]], point: [f64; 2], tol: f64) -> bool {
    let n = vertices.len();
    if n < 3 {
        return false;
    }
    (0..n).all(|i| {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let cross = (b[0] - a[0]) * (point[1] - a[1]) - (b[1] - a[1]) * (point[0] - a[0]);
        cross >= -tol * dist(a, b)
    })
}

/// Signed area (positive for counterclockwise order).
pub fn polygon_area(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    0.5 * (0..n)
        .map(|i| {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            a[0] * b[1] - a[1] * b[0]
        })
        .sum::<f64>()
}

/// Vertex-averaged discrete curvature: the mean over vertices of the absolute
/// turning angle divided by the mean length of the two adjacent edges.
pub fn curvature(envelope: &Envelope) -> Result<f64> {
    let v = &envelope.vertices;
    if envelope.empty || v.len() < 3 {
        return Err(Error::UndefinedMetric("curvature needs a polygon with at least 3 vertices".into()));
    }
    if polygon_area(v).abs() < 1e-14 {
        return Err(Error::UndefinedMetric("curvature of a degenerate (collinear) polygon".into()));
    }
    let n = v.len();
    let total: f64 = (0..n)
        .map(|i| {
            let a = v[(i + n - 1) % n];
            let b = v[i];
            let c = v[(i + 1) % n];
            let e_in = [b[0] - a[0], b[1] - a[1]];
            let e_out = [c[0] - b[0], c[1] - b[1]];
            let turn = (e_in[0] * e_out[1] - e_in[1] * e_out[0]).atan2(e_in[0] * e_out[0] + e_in[1] * e_out[1]);
            let mean_len = 0.5 * (dist(a, b) + dist(b, c));
            turn.abs() / mean_len
        })
        .sum();
    Ok(total / n as f64)
}

/// Envelope at a specific quantile level, covariate vector and location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEnvelope {
    pub tau: f64,
    pub t: f64,
    pub x: Vec<f64>,
    pub q: Vec<f64>,
    pub vertices: Vec<[f64; 2]>,
    pub empty: bool,
}

impl ProbeEnvelope {
    pub fn new(tau: f64, t: f64, x: &[f64], envelope: Envelope) -> Self {
        ProbeEnvelope { tau, t, x: x.to_vec(), q: envelope.q, vertices: envelope.vertices, empty: envelope.empty }
    }
}

/// Flat vertex table `tau,t,vertex,v1,v2` for plotting.
pub fn write_vertices_csv<W: Write>(envelopes: &[ProbeEnvelope], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "t", "vertex", "v1", "v2"])?;
    for e in envelopes {
        for (i, v) in e.vertices.iter().enumerate() {
            w.write_record(&[e.tau.to_string(), e.t.to_string(), i.to_string(), v[0].to_string(), v[1].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
