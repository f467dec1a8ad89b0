//! Frenet-frame smoothing of discrete cell-to-cell paths into continuous
//! trajectories, with curvature and lateral-acceleration checks.
//!
//! Longitudinal progress `s(t)` is a piecewise cubic through the cell
//! transition knots (position and velocity matched at both ends of every
//! piece, velocities limited so `s` never overshoots a knot). The lateral
//! offset is shaped along arc length: lane changes become cubic ramps
//! `d(s)` with zero slope at both ends, long enough to respect the curvature
//! and lateral-acceleration limits. Where the limits still fail, the
//! offending pieces are slowed down.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::map_model::{arc_length_param, project_onto_polyline, ArcLengthTable};

/// Below this speed curvature is reported as zero.
pub const CURVATURE_SPEED_GUARD: f64 = 0.1;
const SPEED_SCALE_STEP: f64 = 0.9;
const SPEED_SCALE_ITERATIONS: usize = 10;
const SPEED_FLOOR: f64 = 1.0;
/// Lateral knot jumps above this are treated as lane transitions.
const LATERAL_EVENT_THRESHOLD: f64 = KNOT_TOLERANCE_D;
const MAX_RAMP_LENGTH: f64 = 80.0;
const RAMP_GROWTH: f64 = 2.0;
/// Shortest distance over which an endpoint correction is faded out (m).
const PIN_BLEND_MIN: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeasibilityLimits {
    /// Minimum turning radius (m).
    pub r_min: f64,
    /// Maximum lateral acceleration (m/s^2).
    pub a_y_max: f64,
}

impl Default for FeasibilityLimits {
    fn default() -> Self {
        FeasibilityLimits {
            r_min: 5.0,
            a_y_max: 3.0,
        }
    }
}

impl FeasibilityLimits {
    pub fn kappa_max(&self) -> f64 {
        1.0 / self.r_min
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.a_y_max > 0.0) {
            return Err(Error::Config("r_min and a_y_max must be positive".into()));
        }
        Ok(())
    }
}

/// Arc-length parameterized reference line with a continuous normal field.
///
/// The normal varies linearly along each segment between vertex normals
/// (the bisector of adjacent segment normals), so every nearby point has a
/// unique `(s, d)` and the transform inverts exactly. Beyond both ends the
/// line continues straight along the end tangent.
#[derive(Debug, Clone)]
pub struct FrenetFrame {
    points: Vec<Vec2>,
    arc: ArcLengthTable,
    normals: Vec<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrenetState {
    pub s: f64,
    pub d: f64,
}

impl FrenetFrame {
    pub fn new(points: Vec<Vec2>) -> Result<Self> {
        let arc = arc_length_param(&points)?;
        let seg_normals: Vec<Vec2> = points.windows(2).map(|w| (w[1] - w[0]).normalized().perp()).collect();
        let n = points.len();
        let normals = (0..n)
            .map(|i| {
                if i == 0 {
                    seg_normals[0]
                } else if i == n - 1 {
                    seg_normals[n - 2]
                } else {
                    (seg_normals[i - 1] + seg_normals[i]).normalized()
                }
            })
            .collect();
        Ok(FrenetFrame { points, arc, normals })
    }

    /// Concatenates polylines whose joints coincide within 0.1 m, dropping
    /// the duplicated joint points.
    pub fn from_chain(parts: &[&[Vec2]]) -> Result<Self> {
        let mut pts: Vec<Vec2> = Vec::new();
        for part in parts {
            let Some(first) = part.first() else { continue };
            if let Some(last) = pts.last() {
                if last.dist(*first) > 0.1 {
                    return Err(Error::domain(format!(
                        "reference line gap of {:.3} m at s = {:.3}",
                        last.dist(*first),
                        polyline_length(&pts)
                    )));
                }
                for p in part.iter().skip(1) {
                    if pts.last().is_none_or(|q| q.dist(*p) > 1e-6) {
                        pts.push(*p);
                    }
                }
            } else {
                pts.extend_from_slice(part);
            }
        }
        FrenetFrame::new(pts)
    }

    pub fn length(&self) -> f64 {
        self.arc.total_length
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    /// Appends a straight extension of `extra` meters along the end tangent.
    pub fn extend_end(&mut self, extra: f64) -> Result<()> {
        if extra <= 0.0 {
            return Ok(());
        }
        let n = self.points.len();
        let t = (self.points[n - 1] - self.points[n - 2]).normalized();
        let mut pts = std::mem::take(&mut self.points);
        pts.push(pts[n - 1] + t * extra);
        *self = FrenetFrame::new(pts)?;
        Ok(())
    }

    fn segment(&self, s: f64) -> (usize, f64) {
        let cum = &self.arc.cumulative_s;
        let nseg = cum.len() - 1;
        let i = match cum.binary_search_by(|v| v.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less)) {
            Ok(i) => i.min(nseg - 1),
            Err(i) => i.saturating_sub(1).min(nseg - 1),
        };
        let u = (s - cum[i]) / (cum[i + 1] - cum[i]);
        (i, u)
    }

    /// Point and unit normal at `s` (linear continuation outside the line).
    pub fn eval(&self, s: f64) -> (Vec2, Vec2) {
        let n = self.points.len();
        if s <= 0.0 {
            let t = (self.points[1] - self.points[0]).normalized();
            return (self.points[0] + t * s, self.normals[0]);
        }
        if s >= self.length() {
            let t = (self.points[n - 1] - self.points[n - 2]).normalized();
            return (self.points[n - 1] + t * (s - self.length()), self.normals[n - 1]);
        }
        let (i, u) = self.segment(s);
        let r = self.points[i].lerp(self.points[i + 1], u);
        let nv = self.normals[i].lerp(self.normals[i + 1], u).normalized();
        (r, nv)
    }

    /// Like [`eval`](Self::eval) but the base point follows cubic Hermite
    /// arcs through the vertices (tangents normal to the vertex normals),
    /// so the line has no corners. Within `h^2 * kappa / 8` of the polyline.
    pub fn eval_smooth(&self, s: f64) -> (Vec2, Vec2) {
        if s <= 0.0 || s >= self.length() {
            return self.eval(s);
        }
        let (i, u) = self.segment(s);
        let (p0, p1) = (self.points[i], self.points[i + 1]);
        let h = p0.dist(p1);
        let tangent = |n: Vec2| Vec2::new(n.y, -n.x);
        let (t0, t1) = (tangent(self.normals[i]) * h, tangent(self.normals[i + 1]) * h);
        let (u2, u3) = (u * u, u * u * u);
        let r = p0 * (2.0 * u3 - 3.0 * u2 + 1.0)
            + t0 * (u3 - 2.0 * u2 + u)
            + p1 * (-2.0 * u3 + 3.0 * u2)
            + t1 * (u3 - u2);
        let nv = self.normals[i].lerp(self.normals[i + 1], u).normalized();
        (r, nv)
    }

    /// Output-side inverse used for sampling trajectories; see
    /// [`eval_smooth`](Self::eval_smooth).
    pub fn from_frenet_smooth(&self, st: FrenetState) -> Vec2 {
        let (r, n) = self.eval_smooth(st.s);
        r + n * st.d
    }

    pub fn from_frenet(&self, st: FrenetState) -> Vec2 {
        let (r, n) = self.eval(st.s);
        r + n * st.d
    }

    pub fn to_frenet(&self, p: Vec2) -> Result<FrenetState> {
        let mut cands: Vec<(f64, f64)> = Vec::new();
        let cum = &self.arc.cumulative_s;
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let e = self.points[i + 1] - a;
            let n0 = self.normals[i];
            let m = self.normals[i + 1] - n0;
            let q0 = p - a;
            // cross(n0 + u m, q0 - u e) = 0
            let qa = -m.cross(e);
            let qb = m.cross(q0) - n0.cross(e);
            let qc = n0.cross(q0);
            for u in quadratic_roots(qa, qb, qc) {
                if !(-1e-9..=1.0 + 1e-9).contains(&u) {
                    continue;
                }
                let u = u.clamp(0.0, 1.0);
                let r = a + e * u;
                let nv = (n0 + m * u).normalized();
                let d = (p - r).dot(nv);
                if (p - r - nv * d).norm() > 1e-6 * (1.0 + d.abs()) {
                    continue;
                }
                cands.push((cum[i] + u * (cum[i + 1] - cum[i]), d));
            }
        }
        // straight continuations before the start and past the end
        let n = self.points.len();
        let t0 = (self.points[1] - self.points[0]).normalized();
        let u0 = (p - self.points[0]).dot(t0);
        if u0 < 0.0 {
            cands.push((u0, (p - self.points[0]).dot(self.normals[0])));
        }
        let t1 = (self.points[n - 1] - self.points[n - 2]).normalized();
        let u1 = (p - self.points[n - 1]).dot(t1);
        if u1 > 0.0 {
            cands.push((self.length() + u1, (p - self.points[n - 1]).dot(self.normals[n - 1])));
        }
        cands.sort_by(|x, y| x.1.abs().total_cmp(&y.1.abs()).then(x.0.total_cmp(&y.0)));
        let Some(&(s, d)) = cands.first() else {
            // degenerate geometry: fall back to plain polyline projection
            let (s, d, _) = project_onto_polyline(&self.arc, &self.points, p);
            return Ok(FrenetState { s, d });
        };
        if let Some(&(s2, d2)) = cands.get(1) {
            if (d2.abs() - d.abs()).abs() < 1e-12 && (s2 - s).abs() > 1e-6 {
                return Err(Error::domain(format!(
                    "ambiguous projection between s = {:.6} and s = {:.6}",
                    s.min(s2),
                    s.max(s2)
                )));
            }
        }
        Ok(FrenetState { s, d })
    }
}

fn polyline_length(pts: &[Vec2]) -> f64 {
    pts.windows(2).map(|w| w[0].dist(w[1])).sum()
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return vec![0.0];
    }
    if a.abs() <= 1e-12 * scale {
        if b.abs() <= 1e-300 {
            return vec![];
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let sq = disc.sqrt();
    // numerically stable form
    let q = -0.5 * (b + b.signum() * sq);
    let mut roots = vec![q / a];
    if q != 0.0 {
        roots.push(c / q);
    }
    roots
}

/// Position, velocity and acceleration at one end of a segment.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundaryState {
    pub p: f64,
    pub v: f64,
    pub a: f64,
}

/// `c0 + c1 t + c2 t^2 + c3 t^3`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Cubic {
    pub c: [f64; 4],
}

impl Cubic {
    pub fn eval(&self, t: f64) -> f64 {
        let c = &self.c;
        ((c[3] * t + c[2]) * t + c[1]) * t + c[0]
    }

    pub fn deriv(&self, t: f64) -> f64 {
        let c = &self.c;
        (3.0 * c[3] * t + 2.0 * c[2]) * t + c[1]
    }

    pub fn second(&self, t: f64) -> f64 {
        6.0 * self.c[3] * t + 2.0 * self.c[2]
    }
}

/// Cubic matching position and velocity at both ends of `[0, t_span]`.
/// Boundary accelerations are not constraints (four coefficients, four
/// conditions); see [`boundary_accel_mismatch`].
pub fn fit_cubic(start: BoundaryState, end: BoundaryState, t_span: f64) -> Result<Cubic> {
    if !(t_span > 0.0) {
        return Err(Error::domain(format!("segment duration must be positive, got {t_span}")));
    }
    let (p0, v0, p1, v1) = (start.p, start.v, end.p, end.v);
    let t = t_span;
    let c2 = (3.0 * (p1 - p0) / t - 2.0 * v0 - v1) / t;
    let c3 = (2.0 * (p0 - p1) / t + v0 + v1) / (t * t);
    Ok(Cubic { c: [p0, v0, c2, c3] })
}

/// Difference between the fitted and requested boundary accelerations.
pub fn boundary_accel_mismatch(cubic: &Cubic, start: BoundaryState, end: BoundaryState, t_span: f64) -> (f64, f64) {
    (cubic.second(0.0) - start.a, cubic.second(t_span) - end.a)
}

/// Curvature of a uniformly sampled path from central differences; the two
/// end samples copy their neighbors. Zero where the speed is below the guard.
pub fn curvature(positions: &[Vec2], dt: f64) -> Result<Vec<f64>> {
    let n = positions.len();
    if n < 3 {
        return Err(Error::domain("curvature needs at least 3 samples"));
    }
    let mut k = vec![0.0; n];
    for i in 1..n - 1 {
        let v = (positions[i + 1] - positions[i - 1]) * (0.5 / dt);
        let a = (positions[i + 1] - positions[i] * 2.0 + positions[i - 1]) * (1.0 / (dt * dt));
        let speed = v.norm();
        k[i] = if speed < CURVATURE_SPEED_GUARD {
            0.0
        } else {
            v.cross(a).abs() / speed.powi(3)
        };
    }
    k[0] = k[1];
    k[n - 1] = k[n - 2];
    Ok(k)
}

/// One sample of a continuous trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajPoint {
    pub t: f64,
    pub position: Vec2,
    pub speed: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeasibilityReport {
    pub kappa_violations: Vec<usize>,
    pub ay_violations: Vec<usize>,
    pub max_kappa: f64,
    pub max_kappa_index: usize,
    pub max_ay: f64,
    pub max_ay_index: usize,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.kappa_violations.is_empty() && self.ay_violations.is_empty()
    }
}

/// Flags samples with curvature above `1/r_min` or `kappa * v^2` above
/// `a_y_max`. Fewer than 3 samples are trivially feasible.
pub fn check_feasibility(traj: &[TrajPoint], limits: &FeasibilityLimits, dt: f64) -> FeasibilityReport {
    let mut rep = FeasibilityReport::default();
    let pos: Vec<Vec2> = traj.iter().map(|p| p.position).collect();
    let Ok(kappa) = curvature(&pos, dt) else {
        return rep;
    };
    let kmax = limits.kappa_max();
    for (i, (k, p)) in kappa.iter().zip(traj).enumerate() {
        let ay = k * p.speed * p.speed;
        if *k > rep.max_kappa {
            rep.max_kappa = *k;
            rep.max_kappa_index = i;
        }
        if ay > rep.max_ay {
            rep.max_ay = ay;
            rep.max_ay_index = i;
        }
        if *k > kmax {
            rep.kappa_violations.push(i);
        }
        if ay > limits.a_y_max {
            rep.ay_violations.push(i);
        }
    }
    rep
}

/// Monotone piecewise-cubic interpolant through `(x, y)` knots.
#[derive(Debug, Clone)]
struct MonotoneSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl MonotoneSpline {
    /// Slopes are central secants limited so no piece overshoots; entries of
    /// `fixed` override the slope at that knot.
    fn new(x: Vec<f64>, y: Vec<f64>, fixed: &[(usize, f64)]) -> Self {
        let n = x.len();
        let mut m = vec![0.0; n];
        if n >= 2 {
            let sec: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
            m[0] = sec[0];
            m[n - 1] = sec[n - 2];
            for i in 1..n - 1 {
                m[i] = if sec[i - 1] * sec[i] <= 0.0 {
                    0.0
                } else {
                    (y[i + 1] - y[i - 1]) / (x[i + 1] - x[i - 1])
                };
            }
            for &(i, v) in fixed {
                m[i] = v;
            }
            for i in 0..n - 1 {
                if sec[i] == 0.0 {
                    m[i] = 0.0;
                    m[i + 1] = 0.0;
                    continue;
                }
                let a = m[i] / sec[i];
                let b = m[i + 1] / sec[i];
                if a < 0.0 {
                    m[i] = 0.0;
                }
                if b < 0.0 {
                    m[i + 1] = 0.0;
                }
                let r = a * a + b * b;
                if r > 9.0 {
                    let tau = 3.0 / r.sqrt();
                    m[i] = tau * a * sec[i];
                    m[i + 1] = tau * b * sec[i];
                }
            }
        }
        MonotoneSpline { x, y, m }
    }

    fn piece(&self, x: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.partial_cmp(&x).unwrap_or(std::cmp::Ordering::Less)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    fn cubic(&self, i: usize) -> Cubic {
        let h = self.x[i + 1] - self.x[i];
        fit_cubic(
            BoundaryState {
                p: self.y[i],
                v: self.m[i],
                a: 0.0,
            },
            BoundaryState {
                p: self.y[i + 1],
                v: self.m[i + 1],
                a: 0.0,
            },
            h,
        )
        .expect("knots are strictly increasing")
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.x.len();
        if n == 1 {
            return self.y[0];
        }
        if x <= self.x[0] {
            return self.y[0] + self.m[0] * (x - self.x[0]);
        }
        if x >= self.x[n - 1] {
            return self.y[n - 1] + self.m[n - 1] * (x - self.x[n - 1]);
        }
        let i = self.piece(x);
        self.cubic(i).eval(x - self.x[i])
    }
}

/// A lane-transition ramp of the lateral offset along arc length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LateralRamp {
    pub s_start: f64,
    pub s_end: f64,
    pub d_from: f64,
    pub d_to: f64,
}

/// Per-agent smoothing outcome.
#[derive(Debug, Clone, Default)]
pub struct SmoothedTrajectory {
    pub points: Vec<TrajPoint>,
    /// Longitudinal pieces `s(t)` between knots, with start times.
    pub segments: Vec<(f64, f64, Cubic)>,
    pub ramps: Vec<LateralRamp>,
    pub report: SmoothingReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SmoothingReport {
    /// Pieces still infeasible at the speed floor; raw samples kept there.
    pub unsmoothable_segments: usize,
    /// Pieces slowed down to meet the limits.
    pub dilated_segments: usize,
    /// Total added duration from slowing down (s).
    pub time_dilation: f64,
    pub max_kappa: f64,
    pub max_ay: f64,
}

/// Indices of log samples where the piecewise-linear velocity changes.
pub fn knot_indices(points: &[Vec2]) -> Vec<usize> {
    let n = points.len();
    let mut knots = vec![0];
    for i in 1..n.saturating_sub(1) {
        let a = points[i] - points[i - 1];
        let b = points[i + 1] - points[i];
        let scale = a.norm().max(b.norm()).max(1e-3);
        if (a - b).norm() > 1e-9 * scale.max(1.0) {
            knots.push(i);
        }
    }
    if n > 1 {
        knots.push(n - 1);
    }
    knots
}

/// Longitudinal and lateral tolerances (m) for dropping knots.
pub const KNOT_TOLERANCE_S: f64 = 0.5;
/// Also the largest offset treated as chord sag of the discrete path.
pub const KNOT_TOLERANCE_D: f64 = 0.15;

/// Douglas-Peucker over `(t, s, d)`: keeps the knots needed for linear
/// interpolation in time to stay within `eps_s` along and `eps_d` across.
/// Removes the speed ripple that integer dwell counts put into a log.
pub fn simplify_knots(t: &[f64], f: &[FrenetState], eps_s: f64, eps_d: f64) -> Vec<usize> {
    let n = t.len();
    if n <= 2 {
        return (0..n).collect();
    }
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[n - 1] = true;
    let mut stack = vec![(0, n - 1)];
    while let Some((a, b)) = stack.pop() {
        let mut worst: Option<(usize, f64)> = None;
        for i in a + 1..b {
            let u = (t[i] - t[a]) / (t[b] - t[a]);
            let es = (f[i].s - (f[a].s + (f[b].s - f[a].s) * u)).abs() / eps_s;
            let ed = (f[i].d - (f[a].d + (f[b].d - f[a].d) * u)).abs() / eps_d;
            let e = es.max(ed);
            if e > 1.0 && worst.is_none_or(|w| e > w.1) {
                worst = Some((i, e));
            }
        }
        if let Some((i, _)) = worst {
            keep[i] = true;
            stack.push((a, i));
            stack.push((i, b));
        }
    }
    (0..n).filter(|&i| keep[i]).collect()
}

/// Smooths a uniformly sampled discrete path (sample spacing `dt`) in the
/// given frame.
pub fn smooth_path(log: &[TrajPoint], frame: &FrenetFrame, limits: &FeasibilityLimits, dt: f64) -> Result<SmoothedTrajectory> {
    if log.len() < 2 {
        return Err(Error::domain("smoothing needs at least 2 samples"));
    }
    let raw: Vec<Vec2> = log.iter().map(|p| p.position).collect();
    let all = knot_indices(&raw);
    let t0 = log[0].t;
    let all_f: Vec<FrenetState> = all.iter().map(|&i| frame.to_frenet(raw[i])).collect::<Result<_>>()?;
    let all_t: Vec<f64> = all.iter().map(|&i| log[i].t).collect();
    let keep = simplify_knots(&all_t, &all_f, KNOT_TOLERANCE_S, KNOT_TOLERANCE_D);
    let knots: Vec<usize> = keep.iter().map(|&k| all[k]).collect();
    let kt: Vec<f64> = keep.iter().map(|&k| all_t[k]).collect();
    let kf: Vec<FrenetState> = keep
        .iter()
        .map(|&k| {
            let f = all_f[k];
            let d = if f.d.abs() < KNOT_TOLERANCE_D { 0.0 } else { f.d };
            FrenetState { s: f.s, d }
        })
        .collect();
    let ks: Vec<f64> = kf.iter().map(|f| f.s).collect();
    let kd: Vec<f64> = kf.iter().map(|f| f.d).collect();

    // s(t): durations per knot interval may be stretched below
    let mut durations: Vec<f64> = kt.windows(2).map(|w| w[1] - w[0]).collect();
    let mut unsmoothable = vec![false; durations.len()];
    let mut dilated = vec![false; durations.len()];
    let mut iterations = vec![0usize; durations.len()];

    loop {
        let times = cumulative_times(t0, &durations);
        let s_spline = MonotoneSpline::new(times.clone(), ks.clone(), &[]);
        let speed_of = |t: f64| {
            let h = 1e-4;
            ((s_spline.eval(t + h) - s_spline.eval(t - h)) / (2.0 * h)).abs()
        };
        let ramps = build_ramps(&ks, &kd, &times, limits, &speed_of);
        let lateral = LateralProfile::new(&ks, &kd, &ramps);
        let end_t = *times.last().unwrap();
        let samples = sample(frame, &s_spline, &lateral, t0, end_t, dt, log[0].heading);
        let rep = check_feasibility(&samples, limits, dt);

        let mut bad: Vec<usize> = rep
            .kappa_violations
            .iter()
            .chain(&rep.ay_violations)
            .flat_map(|&i| {
                let p = piece_of(&times, samples[i].t);
                // a violation on a knot may come from either side
                let at_knot = (times[p] - samples[i].t).abs() < 1e-9 && p > 0;
                std::iter::once(p).chain(at_knot.then(|| p - 1))
            })
            .collect();
        bad.sort_unstable();
        bad.dedup();

        let mut progressed = false;
        for &p in &bad {
            if unsmoothable[p] {
                continue;
            }
            let mean_speed = (ks[p + 1] - ks[p]).abs() / durations[p];
            let next_speed = mean_speed * SPEED_SCALE_STEP;
            if iterations[p] >= SPEED_SCALE_ITERATIONS || next_speed < SPEED_FLOOR {
                unsmoothable[p] = true;
                continue;
            }
            durations[p] /= SPEED_SCALE_STEP;
            iterations[p] += 1;
            dilated[p] = true;
            progressed = true;
        }
        if progressed {
            continue;
        }

        let mut points = samples;
        if unsmoothable.iter().any(|u| *u) && durations.len() == unsmoothable.len() {
            splice_raw(&mut points, log, &knots, &times, &unsmoothable);
        }
        let mut final_rep = check_feasibility(&points, limits, dt);
        let mut pinned = points.clone();
        pin_endpoints(&mut pinned, log[0].position, log[log.len() - 1].position, limits);
        let pinned_rep = check_feasibility(&pinned, limits, dt);
        if pinned_rep.kappa_violations.len() + pinned_rep.ay_violations.len()
            <= final_rep.kappa_violations.len() + final_rep.ay_violations.len()
        {
            points = pinned;
            final_rep = pinned_rep;
        }
        let segments = (0..durations.len())
            .map(|i| (times[i], durations[i], s_spline.cubic(i)))
            .collect();
        let original_span = log.last().unwrap().t - t0;
        return Ok(SmoothedTrajectory {
            points,
            segments,
            ramps,
            report: SmoothingReport {
                unsmoothable_segments: unsmoothable.iter().filter(|u| **u).count(),
                dilated_segments: dilated.iter().filter(|u| **u).count(),
                time_dilation: (end_t - t0 - original_span).max(0.0),
                max_kappa: final_rep.max_kappa,
                max_ay: final_rep.max_ay,
            },
        });
    }
}

fn cumulative_times(t0: f64, durations: &[f64]) -> Vec<f64> {
    let mut times = Vec::with_capacity(durations.len() + 1);
    times.push(t0);
    let mut acc = t0;
    for d in durations {
        acc += d;
        times.push(acc);
    }
    times
}

fn piece_of(times: &[f64], t: f64) -> usize {
    let n = times.len();
    match times.binary_search_by(|v| v.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less)) {
        Ok(i) => i.min(n - 2),
        Err(i) => i.saturating_sub(1).min(n - 2),
    }
}

/// Chooses one ramp per lateral jump between consecutive knots. The ramp is
/// centered on the jump, kept inside the path and clear of its neighbors, and
/// lengthened until its peak curvature (`6 |D| / L^2`) and lateral
/// acceleration at the fastest nearby speed fit the limits.
fn build_ramps(
    ks: &[f64],
    kd: &[f64],
    times: &[f64],
    limits: &FeasibilityLimits,
    speed_of: &dyn Fn(f64) -> f64,
) -> Vec<LateralRamp> {
    let n = ks.len();
    let events: Vec<usize> = (0..n.saturating_sub(1))
        .filter(|&k| (kd[k + 1] - kd[k]).abs() > LATERAL_EVENT_THRESHOLD)
        .collect();
    let s_lo = ks[0].min(ks[n - 1]);
    let s_hi = ks[0].max(ks[n - 1]);
    let centers: Vec<f64> = events.iter().map(|&k| 0.5 * (ks[k] + ks[k + 1])).collect();
    let mut ramps = Vec::with_capacity(events.len());
    for (e, &k) in events.iter().enumerate() {
        let amp = (kd[k + 1] - kd[k]).abs();
        let c = centers[e];
        let lo = if e == 0 { s_lo } else { 0.5 * (centers[e - 1] + c) };
        // the last ramp may run past the end: the log is cut off there, the motion is not
        let hi = if e + 1 == events.len() { s_hi + MAX_RAMP_LENGTH } else { 0.5 * (c + centers[e + 1]) };
        let room = hi - lo;
        let needed_by_kappa = (6.0 * amp / (0.95 * limits.kappa_max())).sqrt();
        let mut len = needed_by_kappa.max((ks[k + 1] - ks[k]).abs());
        loop {
            // fastest longitudinal speed while inside the candidate ramp
            let a = c - 0.5 * len;
            let b = c + 0.5 * len;
            let mut vmax = 0.0f64;
            for i in 0..n - 1 {
                let (s0, s1) = (ks[i].min(ks[i + 1]), ks[i].max(ks[i + 1]));
                if s1 < a - 4.0 || s0 > b + 4.0 {
                    continue;
                }
                for j in 0..=8 {
                    let t = times[i] + (times[i + 1] - times[i]) * j as f64 / 8.0;
                    vmax = vmax.max(speed_of(t));
                }
            }
            let needed = vmax * (6.0 * amp / (0.9 * limits.a_y_max)).sqrt();
            if len >= needed || len >= MAX_RAMP_LENGTH || len >= room {
                break;
            }
            len = (len + RAMP_GROWTH).min(needed.max(len + RAMP_GROWTH));
        }
        let len = len.min(room).min(MAX_RAMP_LENGTH);
        let mut a = c - 0.5 * len;
        let mut b = c + 0.5 * len;
        if a < lo {
            b += lo - a;
            a = lo;
        }
        if b > hi {
            a -= b - hi;
            b = hi;
        }
        a = a.max(lo);
        ramps.push(LateralRamp {
            s_start: a,
            s_end: b,
            d_from: kd[k],
            d_to: kd[k + 1],
        });
    }
    ramps
}

/// Lateral offset as a function of arc length.
#[derive(Debug, Clone)]
struct LateralProfile {
    spline: Option<MonotoneSpline>,
    constant: f64,
}

impl LateralProfile {
    fn new(ks: &[f64], kd: &[f64], ramps: &[LateralRamp]) -> Self {
        let mut pts: Vec<(f64, f64, Option<f64>)> = Vec::new();
        for (s, d) in ks.iter().zip(kd) {
            if ramps.iter().any(|r| *s >= r.s_start - 1e-9 && *s <= r.s_end + 1e-9) {
                continue;
            }
            pts.push((*s, *d, None));
        }
        for r in ramps {
            pts.push((r.s_start, r.d_from, Some(0.0)));
            pts.push((r.s_end, r.d_to, Some(0.0)));
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        // drop knots sharing an arc length (holds), keeping ramp endpoints
        let mut dedup: Vec<(f64, f64, Option<f64>)> = Vec::with_capacity(pts.len());
        for p in pts {
            match dedup.last_mut() {
                Some(last) if (p.0 - last.0).abs() < 1e-6 => {
                    if p.2.is_some() {
                        *last = p;
                    }
                }
                _ => dedup.push(p),
            }
        }
        if dedup.len() < 2 {
            return LateralProfile {
                spline: None,
                constant: dedup.first().map_or(kd[0], |p| p.1),
            };
        }
        let fixed: Vec<(usize, f64)> = dedup.iter().enumerate().filter_map(|(i, p)| p.2.map(|m| (i, m))).collect();
        let x = dedup.iter().map(|p| p.0).collect();
        let y = dedup.iter().map(|p| p.1).collect();
        let mut spline = MonotoneSpline::new(x, y, &fixed);
        // flat continuation outside the knots
        let last = spline.m.len() - 1;
        spline.m[0] = if fixed.iter().any(|f| f.0 == 0) { 0.0 } else { spline.m[0] };
        spline.m[last] = if fixed.iter().any(|f| f.0 == last) { 0.0 } else { spline.m[last] };
        LateralProfile {
            spline: Some(spline),
            constant: 0.0,
        }
    }

    fn eval(&self, s: f64) -> f64 {
        match &self.spline {
            None => self.constant,
            Some(sp) => {
                let n = sp.x.len();
                if s <= sp.x[0] {
                    sp.y[0]
                } else if s >= sp.x[n - 1] {
                    sp.y[n - 1]
                } else {
                    sp.eval(s)
                }
            }
        }
    }
}

fn sample(
    frame: &FrenetFrame,
    s_spline: &MonotoneSpline,
    lateral: &LateralProfile,
    t0: f64,
    t_end: f64,
    dt: f64,
    initial_heading: f64,
) -> Vec<TrajPoint> {
    let pos = |t: f64| {
        let s = s_spline.eval(t.clamp(t0, t_end));
        frame.from_frenet_smooth(FrenetState { s, d: lateral.eval(s) })
    };
    let count = ((t_end - t0) / dt + 1e-6).floor() as usize + 1;
    let mut heading = initial_heading;
    let mut out = Vec::with_capacity(count + 1);
    for k in 0..count {
        let t = t0 + k as f64 * dt;
        out.push(point_at(&pos, t, t0, t_end, &mut heading));
    }
    // keep the exact end knot when the span is not a whole number of steps
    if t0 + (count - 1) as f64 * dt < t_end - 1e-9 {
        out.push(point_at(&pos, t_end, t0, t_end, &mut heading));
    }
    out
}

fn point_at(pos: &dyn Fn(f64) -> Vec2, t: f64, t0: f64, t_end: f64, heading: &mut f64) -> TrajPoint {
    let h = 1e-3;
    let a = (t - h).max(t0);
    let b = (t + h).min(t_end);
    let v = if b > a { (pos(b) - pos(a)) * (1.0 / (b - a)) } else { Vec2::ZERO };
    let speed = v.norm();
    if speed >= CURVATURE_SPEED_GUARD {
        *heading = v.angle();
    }
    TrajPoint {
        t,
        position: pos(t),
        speed,
        heading: *heading,
    }
}

/// Replaces samples inside unsmoothable pieces by the raw log samples of the
/// same piece.
/// Moves the first and last samples onto the given positions, fading the
/// offset out over a blend length sized so the added curvature stays small.
fn pin_endpoints(points: &mut [TrajPoint], first: Vec2, last: Vec2, limits: &FeasibilityLimits) {
    let n = points.len();
    if n < 2 {
        return;
    }
    let mut arc = vec![0.0; n];
    for i in 1..n {
        arc[i] = arc[i - 1] + points[i].position.dist(points[i - 1].position);
    }
    let total = arc[n - 1];
    let vmax = points.iter().map(|p| p.speed.abs()).fold(0.0, f64::max);
    // peak second derivative of the quintic smoothstep is 10/sqrt(3)
    let blend = |e: f64| {
        let k = 10.0 / 3f64.sqrt() * e;
        let by_kappa = (k / (0.05 * limits.kappa_max())).sqrt();
        let by_ay = vmax * (k / (0.05 * limits.a_y_max)).sqrt();
        PIN_BLEND_MIN.max(by_kappa).max(by_ay).min(0.5 * total)
    };
    let smoothstep = |u: f64| {
        let u = u.clamp(0.0, 1.0);
        u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
    };
    let e0 = first - points[0].position;
    let e1 = last - points[n - 1].position;
    let (l0, l1) = (blend(e0.norm()), blend(e1.norm()));
    for i in 0..n {
        let mut shift = Vec2::ZERO;
        if l0 > 0.0 && arc[i] < l0 {
            shift = shift + e0 * (1.0 - smoothstep(arc[i] / l0));
        }
        let back = total - arc[i];
        if l1 > 0.0 && back < l1 {
            shift = shift + e1 * (1.0 - smoothstep(back / l1));
        }
        points[i].position = points[i].position + shift;
    }
    points[0].position = first;
    points[n - 1].position = last;
}

fn splice_raw(points: &mut [TrajPoint], log: &[TrajPoint], knots: &[usize], times: &[f64], bad: &[bool]) {
    for (p, is_bad) in bad.iter().enumerate() {
        if !is_bad {
            continue;
        }
        let (ra, rb) = (knots[p], knots[p + 1]);
        let (ta, tb) = (times[p], times[p + 1]);
        for pt in points.iter_mut().filter(|pt| pt.t >= ta && pt.t <= tb) {
            let frac = if tb > ta { (pt.t - ta) / (tb - ta) } else { 0.0 };
            let idx = ra + ((rb - ra) as f64 * frac).round() as usize;
            let src = log[idx.min(rb)];
            pt.position = src.position;
            pt.speed = src.speed;
            pt.heading = src.heading;
        }
    }
}
