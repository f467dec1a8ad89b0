//! Motion realism (LO, LA, JE) and scene safety (SCR, ORR) metrics.

use serde::{Deserialize, Serialize};

use crate::geom::{clip_convex, point_in_polygon, signed_area, Vec2};

/// Speed below which heading is carried over from the previous sample.
pub const HEADING_SPEED_GUARD: f64 = 0.1;

/// Vehicle footprint in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
}

impl Default for Footprint {
    fn default() -> Self {
        Footprint {
            length: 4.5,
            width: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub iou_threshold: f64,
    pub vehicle: Footprint,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            iou_threshold: 0.02,
            vehicle: Footprint::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vec2,
    pub length: f64,
    pub width: f64,
    pub heading: f64,
}

impl OrientedBox {
    pub fn new(center: Vec2, footprint: Footprint, heading: f64) -> Self {
        OrientedBox {
            center,
            length: footprint.length,
            width: footprint.width,
            heading,
        }
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [Vec2; 4] {
        let f = Vec2::from_angle(self.heading) * (0.5 * self.length);
        let l = Vec2::from_angle(self.heading).perp() * (0.5 * self.width);
        let c = self.center;
        [c - f - l, c + f - l, c + f + l, c - f + l]
    }

    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    pub fn bounding_radius(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }

    pub fn intersection_area(&self, other: &OrientedBox) -> f64 {
        if self.center.dist(other.center) > self.bounding_radius() + other.bounding_radius() {
            return 0.0;
        }
        let inter = clip_convex(&self.corners(), &other.corners());
        signed_area(&inter).abs()
    }
}

/// Intersection over union of two oriented boxes.
pub fn obb_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// One acceleration sample with the heading it is projected on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelSample {
    pub ax: f64,
    pub ay: f64,
    pub heading: f64,
}

/// Central-difference accelerations and velocity headings at the interior
/// samples of a uniformly sampled path. `None` for fewer than 3 samples.
pub fn accel_from_trajectory(positions: &[Vec2], dt: f64, initial_heading: f64) -> Option<Vec<AccelSample>> {
    if positions.len() < 3 {
        return None;
    }
    let mut heading = initial_heading;
    let inv2 = 1.0 / (dt * dt);
    let out = positions
        .windows(3)
        .map(|w| {
            let v = (w[2] - w[0]) * (0.5 / dt);
            if v.norm() >= HEADING_SPEED_GUARD {
                heading = v.angle();
            }
            let a = (w[2] - w[1] * 2.0 + w[0]) * inv2;
            AccelSample {
                ax: a.x,
                ay: a.y,
                heading,
            }
        })
        .collect();
    Some(out)
}

pub fn longitudinal_accel(ax: f64, ay: f64, theta: f64) -> f64 {
    (ax * theta.cos() + ay * theta.sin()).abs()
}

pub fn lateral_accel(ax: f64, ay: f64, theta: f64) -> f64 {
    (-ax * theta.sin() + ay * theta.cos()).abs()
}

/// Jerk magnitude from an acceleration sequence: central differences at
/// interior samples, a single forward difference for exactly two samples.
pub fn jerk(ax: &[f64], ay: &[f64], dt: f64) -> Vec<f64> {
    let n = ax.len().min(ay.len());
    match n {
        0 | 1 => Vec::new(),
        2 => vec![((ax[1] - ax[0]) / dt).hypot((ay[1] - ay[0]) / dt)],
        _ => (1..n - 1)
            .map(|i| {
                let jx = (ax[i + 1] - ax[i - 1]) / (2.0 * dt);
                let jy = (ay[i + 1] - ay[i - 1]) / (2.0 * dt);
                jx.hypot(jy)
            })
            .collect(),
    }
}

/// Mean LO, LA and JE of one agent's path, `None` when it is too short.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionMetrics {
    pub lo_mean: f64,
    pub la_mean: f64,
    pub je_mean: f64,
}

pub fn agent_motion(positions: &[Vec2], dt: f64, initial_heading: f64) -> Option<MotionMetrics> {
    let acc = accel_from_trajectory(positions, dt, initial_heading)?;
    let n = acc.len() as f64;
    let lo = acc.iter().map(|a| longitudinal_accel(a.ax, a.ay, a.heading)).sum::<f64>() / n;
    let la = acc.iter().map(|a| lateral_accel(a.ax, a.ay, a.heading)).sum::<f64>() / n;
    let ax: Vec<f64> = acc.iter().map(|a| a.ax).collect();
    let ay: Vec<f64> = acc.iter().map(|a| a.ay).collect();
    let je = jerk(&ax, &ay, dt);
    let je_mean = if je.is_empty() {
        0.0
    } else {
        je.iter().sum::<f64>() / je.len() as f64
    };
    Some(MotionMetrics {
        lo_mean: lo,
        la_mean: la,
        je_mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SafetyMetrics {
    pub scr: f64,
    pub orr: f64,
}

/// Per-tick boxes of one scenario: `ticks[t]` lists `(vehicle index, box)`.
#[derive(Debug, Clone, Default)]
pub struct ScenarioBoxes {
    pub vehicle_count: usize,
    pub ticks: Vec<Vec<(usize, OrientedBox)>>,
}

/// Flags every vehicle whose box exceeds `iou_threshold` against any other
/// vehicle at any tick.
pub fn colliding_vehicles(scenario: &ScenarioBoxes, iou_threshold: f64) -> Vec<bool> {
    let mut hit = vec![false; scenario.vehicle_count];
    for boxes in &scenario.ticks {
        for (i, (va, a)) in boxes.iter().enumerate() {
            for (vb, b) in &boxes[i + 1..] {
                if hit[*va] && hit[*vb] {
                    continue;
                }
                if obb_iou(a, b) > iou_threshold {
                    hit[*va] = true;
                    hit[*vb] = true;
                }
            }
        }
    }
    hit
}

/// Fraction of colliding vehicles per scenario, averaged over scenarios.
/// Scenarios without vehicles are excluded; `None` if nothing remains.
pub fn scenario_collision_rate(scenarios: &[ScenarioBoxes], iou_threshold: f64) -> Option<f64> {
    let rates: Vec<f64> = scenarios
        .iter()
        .filter(|s| {
            if s.vehicle_count == 0 {
                log::warn!("scenario without vehicles excluded from collision rate");
            }
            s.vehicle_count > 0
        })
        .map(|s| {
            let hit = colliding_vehicles(s, iou_threshold);
            hit.iter().filter(|h| **h).count() as f64 / s.vehicle_count as f64
        })
        .collect();
    if rates.is_empty() {
        None
    } else {
        Some(rates.iter().sum::<f64>() / rates.len() as f64)
    }
}

/// Number of points outside every drivable polygon.
pub fn offroad_count(points: &[Vec2], drivable_area: &[Vec<Vec2>]) -> usize {
    points
        .iter()
        .filter(|p| !drivable_area.iter().any(|poly| point_in_polygon(**p, poly)))
        .count()
}

/// Fraction of points outside every drivable polygon (0 for no points).
pub fn offroad_rate(points: &[Vec2], drivable_area: &[Vec<Vec2>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    offroad_count(points, drivable_area) as f64 / points.len() as f64
}

/// One agent's samples for evaluation (uniform spacing assumed).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentTrack {
    pub times: Vec<f64>,
    pub positions: Vec<Vec2>,
    pub headings: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioTracks {
    pub agents: Vec<AgentTrack>,
    pub drivable_area: Vec<Vec<Vec2>>,
}

/// Dataset-level means. Motion metrics average samples, then agents, then
/// scenarios; ORR is the off-road point fraction per scenario, averaged.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub lo: f64,
    pub la: f64,
    pub je: f64,
    pub scr: f64,
    pub orr: f64,
    pub n_scenarios: usize,
    pub n_agents: usize,
}

/// Boxes grouped by sample time (to the millisecond).
pub fn scenario_boxes(s: &ScenarioTracks, footprint: Footprint) -> ScenarioBoxes {
    let mut by_time: std::collections::BTreeMap<i64, Vec<(usize, OrientedBox)>> = Default::default();
    for (i, a) in s.agents.iter().enumerate() {
        for ((t, p), h) in a.times.iter().zip(&a.positions).zip(&a.headings) {
            let key = (t * 1000.0).round() as i64;
            by_time.entry(key).or_default().push((i, OrientedBox::new(*p, footprint, *h)));
        }
    }
    ScenarioBoxes {
        vehicle_count: s.agents.len(),
        ticks: by_time.into_values().collect(),
    }
}

/// Per-scenario motion means over agents with at least 3 samples.
pub fn scenario_motion(s: &ScenarioTracks) -> Option<MotionMetrics> {
    let per_agent: Vec<MotionMetrics> = s
        .agents
        .iter()
        .filter(|a| a.positions.len() >= 3)
        .filter_map(|a| {
            let dt = a.times[1] - a.times[0];
            agent_motion(&a.positions, dt, a.headings[0])
        })
        .collect();
    if per_agent.is_empty() {
        return None;
    }
    let n = per_agent.len() as f64;
    Some(MotionMetrics {
        lo_mean: per_agent.iter().map(|m| m.lo_mean).sum::<f64>() / n,
        la_mean: per_agent.iter().map(|m| m.la_mean).sum::<f64>() / n,
        je_mean: per_agent.iter().map(|m| m.je_mean).sum::<f64>() / n,
    })
}

pub fn scenario_offroad_rate(s: &ScenarioTracks) -> f64 {
    let pts: Vec<Vec2> = s.agents.iter().flat_map(|a| a.positions.iter().copied()).collect();
    offroad_rate(&pts, &s.drivable_area)
}

pub fn evaluate_dataset(scenarios: &[ScenarioTracks], settings: &MetricSettings) -> DatasetMetrics {
    let motion: Vec<MotionMetrics> = scenarios.iter().filter_map(scenario_motion).collect();
    let mean = |f: fn(&MotionMetrics) -> f64| {
        if motion.is_empty() {
            0.0
        } else {
            motion.iter().map(f).sum::<f64>() / motion.len() as f64
        }
    };
    let boxes: Vec<ScenarioBoxes> = scenarios.iter().map(|s| scenario_boxes(s, settings.vehicle)).collect();
    let orr = if scenarios.is_empty() {
        0.0
    } else {
        scenarios.iter().map(scenario_offroad_rate).sum::<f64>() / scenarios.len() as f64
    };
    DatasetMetrics {
        lo: mean(|m| m.lo_mean),
        la: mean(|m| m.la_mean),
        je: mean(|m| m.je_mean),
        scr: scenario_collision_rate(&boxes, settings.iou_threshold).unwrap_or(0.0),
        orr,
        n_scenarios: scenarios.len(),
        n_agents: scenarios.iter().map(|s| s.agents.len()).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn unit(cx: f64, cy: f64) -> OrientedBox {
        OrientedBox {
            center: Vec2::new(cx, cy),
            length: 1.0,
            width: 1.0,
            heading: 0.0,
        }
    }

    #[test]
    fn iou_cases() {
        assert!((obb_iou(&unit(0.0, 0.0), &unit(0.0, 0.0)) - 1.0).abs() < 1e-12);
        assert_eq!(obb_iou(&unit(0.0, 0.0), &unit(5.0, 0.0)), 0.0);
        assert!((obb_iou(&unit(0.0, 0.0), &unit(0.5, 0.0)) - 1.0 / 3.0).abs() < 1e-9);
        let a = OrientedBox {
            heading: 0.3,
            ..unit(0.1, 0.2)
        };
        let b = OrientedBox {
            heading: -1.1,
            length: 2.0,
            ..unit(0.4, -0.1)
        };
        assert!((obb_iou(&a, &b) - obb_iou(&b, &a)).abs() < 1e-12);
    }

    #[test]
    fn lo_la_examples() {
        assert!((longitudinal_accel(2.0, 0.5, 0.0) - 2.0).abs() < 1e-12);
        assert!((longitudinal_accel(2.0, 0.5, FRAC_PI_2) - 0.5).abs() < 1e-12);
        assert!((longitudinal_accel(1.0, 1.0, FRAC_PI_4) - 2f64.sqrt()).abs() < 1e-12);
        assert!((lateral_accel(2.0, 0.5, 0.0) - 0.5).abs() < 1e-12);
        assert!((lateral_accel(2.0, 0.5, FRAC_PI_2) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn accel_of_parabola() {
        let pts: Vec<Vec2> = (0..20).map(|k| Vec2::new((k as f64 * 0.1).powi(2), 0.0)).collect();
        let acc = accel_from_trajectory(&pts, 0.1, 0.0).unwrap();
        assert!(acc.iter().all(|a| (a.ax - 2.0).abs() < 1e-9 && a.ay == 0.0));
        let line: Vec<Vec2> = (0..20).map(|k| Vec2::new(k as f64, 2.0 * k as f64)).collect();
        let acc = accel_from_trajectory(&line, 0.1, 0.0).unwrap();
        assert!(acc.iter().all(|a| a.ax.abs() < 1e-9 && a.ay.abs() < 1e-9));
        assert!(accel_from_trajectory(&line[..2], 0.1, 0.0).is_none());
    }

    #[test]
    fn accel_of_sinusoid() {
        // analytic second derivative of (t, sin t)
        let dt = 0.1;
        let pts: Vec<Vec2> = (0..100).map(|k| {
            let t = k as f64 * dt;
            Vec2::new(5.0 * t, t.sin())
        }).collect();
        let acc = accel_from_trajectory(&pts, dt, 0.0).unwrap();
        for (i, a) in acc.iter().enumerate() {
            let t = (i + 1) as f64 * dt;
            assert!(a.ax.abs() < 1e-9);
            assert!((a.ay + t.sin()).abs() < 1e-3);
        }
    }

    #[test]
    fn heading_guard_reuses_previous() {
        let pts = vec![Vec2::new(0.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(0.0, 2.0), Vec2::new(0.0, 2.0), Vec2::new(0.0, 2.0)];
        let acc = accel_from_trajectory(&pts, 1.0, 0.0).unwrap();
        assert!((acc[0].heading - FRAC_PI_2).abs() < 1e-12);
        assert!((acc[2].heading - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn jerk_cases() {
        assert!(jerk(&[1.0; 10], &[2.0; 10], 0.1).iter().all(|j| *j == 0.0));
        let ax: Vec<f64> = (0..10).map(|k| 3.0 * k as f64 * 0.1).collect();
        assert!(jerk(&ax, &[0.0; 10], 0.1).iter().all(|j| (j - 3.0).abs() < 1e-9));
        assert_eq!(jerk(&[0.0, 0.3], &[0.0, 0.0], 0.1).len(), 1);
    }

    #[test]
    fn straight_constant_speed_has_zero_metrics() {
        let pts: Vec<Vec2> = (0..50).map(|k| Vec2::new(k as f64, 0.0)).collect();
        let m = agent_motion(&pts, 0.1, 0.0).unwrap();
        assert_eq!(m, MotionMetrics::default());
    }

    #[test]
    fn scr_formula() {
        let fp = Footprint::default();
        let b = |x: f64, y: f64| OrientedBox::new(Vec2::new(x, y), fp, 0.0);
        let s = ScenarioBoxes {
            vehicle_count: 4,
            ticks: vec![vec![(0, b(0.0, 0.0)), (1, b(1.0, 0.0)), (2, b(20.0, 0.0)), (3, b(40.0, 0.0))]],
        };
        assert_eq!(scenario_collision_rate(&[s], 0.02), Some(0.5));
        let s = ScenarioBoxes {
            vehicle_count: 2,
            ticks: vec![vec![(0, b(0.0, 0.0)), (1, b(10.0, 0.0))]],
        };
        assert_eq!(scenario_collision_rate(&[s], 0.02), Some(0.0));
        assert_eq!(scenario_collision_rate(&[ScenarioBoxes::default()], 0.02), None);
    }

    #[test]
    fn orr_counts() {
        let sq = vec![vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0), Vec2::new(0.0, 10.0)]];
        let inside: Vec<Vec2> = (0..10).map(|k| Vec2::new(k as f64, 5.0)).collect();
        assert_eq!(offroad_rate(&inside, &sq), 0.0);
        let mut pts = inside.clone();
        pts[3] = Vec2::new(-1.0, 5.0);
        pts[7] = Vec2::new(5.0, 11.0);
        assert!((offroad_rate(&pts, &sq) - 0.2).abs() < 1e-12);
    }
}
