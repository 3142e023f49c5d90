//! Planar scene geometry: the rectangular sensing target, scatterer
//! placement, azimuth angles, line-of-sight blockage and single-bounce
//! specular reflection points.
//!
//! Only the four target surfaces interact with propagation; room walls
//! neither block nor reflect.

use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::scalar::{wrap_angle, Real};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2D<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Point2D<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn origin() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn from_f64(x: f64, y: f64) -> Self {
        Self::new(T::of(x), T::of(y))
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 2D cross product.
    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Self) -> T {
        (self - o).norm()
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn cast<U: Real>(self) -> Point2D<U> {
        Point2D::new(U::of(self.x.to_f64_lossy()), U::of(self.y.to_f64_lossy()))
    }
}

impl<T: Real> Add for Point2D<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Real> Sub for Point2D<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Real> Mul<T> for Point2D<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

impl<T: Real> Neg for Point2D<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// One straight face of the sensing target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surface<T> {
    pub start: Point2D<T>,
    pub end: Point2D<T>,
    /// Surface index in `1..=4`.
    pub id: u8,
}

impl<T: Real> Surface<T> {
    pub fn direction(&self) -> Point2D<T> {
        self.end - self.start
    }

    pub fn length(&self) -> T {
        self.direction().norm()
    }
}

/// Pose and extent of the moving rectangular target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetState<T> {
    pub centroid: Point2D<T>,
    /// Unit vector along the long axis, pointing in the direction of motion.
    pub heading: Point2D<T>,
    pub speed: T,
    pub length: T,
    pub width: T,
}

impl<T: Real> TargetState<T> {
    /// Validated constructor. `heading` is normalized; zero extent is allowed
    /// only through [`TargetState::point`].
    pub fn new(centroid: Point2D<T>, heading: Point2D<T>, speed: T, length: T, width: T) -> Result<Self> {
        if !(length > T::zero() && width > T::zero()) {
            return Err(SimError::domain("target length and width must be positive"));
        }
        if !(speed >= T::zero()) {
            return Err(SimError::domain("target speed must be non-negative"));
        }
        if !centroid.is_finite() {
            return Err(SimError::domain("target centroid must be finite"));
        }
        let n = heading.norm();
        if !(n > T::zero()) || !n.is_finite() {
            return Err(SimError::domain("target heading must be a non-zero vector"));
        }
        Ok(Self {
            centroid,
            heading: heading * (T::one() / n),
            speed,
            length,
            width,
        })
    }

    /// Degenerate zero-extent target; every scatterer collapses onto the centroid.
    pub fn point(centroid: Point2D<T>, heading: Point2D<T>, speed: T) -> Self {
        let n = heading.norm();
        Self {
            centroid,
            heading: heading * (T::one() / n),
            speed,
            length: T::zero(),
            width: T::zero(),
        }
    }

    pub fn heading_angle(&self) -> T {
        wrap_angle(self.heading.y.atan2(self.heading.x))
    }

    pub fn with_centroid(&self, centroid: Point2D<T>) -> Self {
        Self { centroid, ..*self }
    }

    /// Rectangle corners, counter-clockwise starting front-left.
    pub fn corners(&self) -> [Point2D<T>; 4] {
        let half = T::of(0.5);
        let along = self.heading * (self.length * half);
        let across = self.heading.perp() * (self.width * half);
        let c = self.centroid;
        [c + along + across, c - along + across, c - along - across, c + along - across]
    }

    /// Point-in-rectangle test with a small tolerance for boundary points.
    pub fn contains(&self, p: Point2D<T>) -> bool {
        let d = p - self.centroid;
        let tol = T::of(1e-9) * (T::one() + self.length + self.width);
        let half = T::of(0.5);
        d.dot(self.heading).abs() <= self.length * half + tol
            && d.dot(self.heading.perp()).abs() <= self.width * half + tol
    }
}

/// The four target faces, in boundary order; consecutive surfaces share endpoints.
pub fn target_surfaces<T: Real>(t: &TargetState<T>) -> [Surface<T>; 4] {
    let c = t.corners();
    [
        Surface { start: c[0], end: c[1], id: 1 },
        Surface { start: c[1], end: c[2], id: 2 },
        Surface { start: c[2], end: c[3], id: 3 },
        Surface { start: c[3], end: c[0], id: 4 },
    ]
}

/// How scatterers are spread over the target body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScattererLayout {
    /// Independent uniform draws inside the rectangle.
    #[default]
    Uniform,
    /// Deterministic cell-centred grid; its mean is exactly the centroid.
    Grid,
}

/// Places `k` scatterers on the target body.
pub fn scatterer_positions<T: Real, R: Rng + ?Sized>(
    t: &TargetState<T>,
    k: usize,
    layout: ScattererLayout,
    rng: &mut R,
) -> Vec<Point2D<T>> {
    let half = T::of(0.5);
    let across = t.heading.perp();
    let place = |u: T, v: T| t.centroid + t.heading * (t.length * (u - half)) + across * (t.width * (v - half));
    match layout {
        ScattererLayout::Uniform => (0..k)
            .map(|_| {
                let u = T::of(rng.random::<f64>());
                let v = T::of(rng.random::<f64>());
                place(u, v)
            })
            .collect(),
        ScattererLayout::Grid => {
            let (cols, rows) = grid_shape(k, t.length.to_f64_lossy(), t.width.to_f64_lossy());
            let mut pts = Vec::with_capacity(k);
            for r in 0..rows {
                for c in 0..cols {
                    let u = (T::of_usize(c) + half) / T::of_usize(cols);
                    let v = (T::of_usize(r) + half) / T::of_usize(rows);
                    pts.push(place(u, v));
                }
            }
            pts
        }
    }
}

/// Factorization `cols × rows = k` whose aspect ratio best matches `length / width`.
fn grid_shape(k: usize, length: f64, width: f64) -> (usize, usize) {
    let aspect = if width > 0.0 && length > 0.0 { length / width } else { 1.0 };
    (1..=k)
        .filter(|r| k % r == 0)
        .map(|rows| (k / rows, rows))
        .min_by(|a, b| {
            let ea = ((a.0 as f64 / a.1 as f64) / aspect).ln().abs();
            let eb = ((b.0 as f64 / b.1 as f64) / aspect).ln().abs();
            ea.total_cmp(&eb)
        })
        .unwrap_or((1, 1))
}

/// Azimuth of `target` seen from `observer`, in `[0, 2π)`.
pub fn angle_of<T: Real>(observer: Point2D<T>, target: Point2D<T>) -> Result<T> {
    let d = target - observer;
    if d.x == T::zero() && d.y == T::zero() {
        return Err(SimError::domain("angle between coincident points"));
    }
    Ok(wrap_angle(d.y.atan2(d.x)))
}

/// Half-open azimuth interval, possibly wrapping through 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularRange<T> {
    pub low: T,
    pub high: T,
    /// True when the range is `[low, 2π) ∪ [0, high)`.
    pub wraps: bool,
}

impl<T: Real> AngularRange<T> {
    pub fn contains(&self, angle: T) -> bool {
        let a = wrap_angle(angle);
        if self.wraps {
            a >= self.low || a < self.high
        } else {
            a >= self.low && a < self.high
        }
    }
}

/// Azimuth interval subtended by `s` as seen from `observer` (always the minor arc).
pub fn angular_range<T: Real>(s: &Surface<T>, observer: Point2D<T>) -> Result<AngularRange<T>> {
    let a1 = angle_of(observer, s.start)?;
    let a2 = angle_of(observer, s.end)?;
    let (low, high) = if wrap_angle(a2 - a1) < T::PI() { (a1, a2) } else { (a2, a1) };
    if on_segment(observer, s.start, s.end) {
        return Err(SimError::domain("observer lies on the surface"));
    }
    Ok(AngularRange { low, high, wraps: low > high })
}

fn on_segment<T: Real>(p: Point2D<T>, a: Point2D<T>, b: Point2D<T>) -> bool {
    let d = b - a;
    let tol = T::of(1e-12) * (T::one() + d.norm() * d.norm());
    let rel = p - a;
    rel.cross(d).abs() <= tol && rel.dot(d) >= T::zero() && rel.dot(d) <= d.dot(d)
}

/// The purely angular blockage test: the UE azimuth falls inside some
/// surface's angular range. Misfires when the UE sits between AP and target.
pub fn los_blocked_angular<T: Real>(ap: Point2D<T>, ue: Point2D<T>, t: &TargetState<T>) -> Result<bool> {
    let theta = angle_of(ap, ue)?;
    for s in target_surfaces(t) {
        if angular_range(&s, ap)?.contains(theta) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// True when no target surface blocks the direct AP → UE path.
///
/// Angular-range membership plus a distance guard: a surface only blocks if
/// the UE lies beyond the point where the AP → UE ray meets it.
pub fn los_exists<T: Real>(ap: Point2D<T>, ue: Point2D<T>, t: &TargetState<T>) -> bool {
    let Ok(theta) = angle_of(ap, ue) else {
        return true;
    };
    let ue_dist = ap.distance(ue);
    let dir = (ue - ap) * (T::one() / ue_dist);
    for s in target_surfaces(t) {
        let Ok(range) = angular_range(&s, ap) else {
            // AP on the target outline: any direction grazes it; treat as clear.
            continue;
        };
        if !range.contains(theta) {
            continue;
        }
        if let Some(hit) = ray_line_distance(ap, dir, s.start, s.end) {
            if ue_dist > hit {
                return false;
            }
        }
    }
    true
}

/// Distance along the unit ray `origin + s·dir` to the infinite line through `a`–`b`.
fn ray_line_distance<T: Real>(origin: Point2D<T>, dir: Point2D<T>, a: Point2D<T>, b: Point2D<T>) -> Option<T> {
    let d = b - a;
    let denom = dir.cross(d);
    if denom == T::zero() {
        return None;
    }
    let s = (a - origin).cross(d) / denom;
    (s >= T::zero()).then_some(s)
}

/// Strict (proper) intersection of segments `p1p2` and `q1q2`; shared or
/// touching endpoints do not count.
pub fn segments_cross<T: Real>(p1: Point2D<T>, p2: Point2D<T>, q1: Point2D<T>, q2: Point2D<T>) -> bool {
    let d1 = (p2 - p1).cross(q1 - p1);
    let d2 = (p2 - p1).cross(q2 - p1);
    let d3 = (q2 - q1).cross(p1 - q1);
    let d4 = (q2 - q1).cross(p2 - q1);
    let z = T::zero();
    ((d1 > z && d2 < z) || (d1 < z && d2 > z)) && ((d3 > z && d4 < z) || (d3 < z && d4 > z))
}

/// Reflection of `p` across the infinite line through `s`.
pub fn mirror_point<T: Real>(p: Point2D<T>, s: &Surface<T>) -> Point2D<T> {
    let d = s.direction();
    let t = (p - s.start).dot(d) / d.dot(d);
    let foot = s.start + d * t;
    foot * T::of(2.0) - p
}

/// Outward unit normal of `s`, pointing away from the target centroid.
pub fn outward_normal<T: Real>(s: &Surface<T>, t: &TargetState<T>) -> Point2D<T> {
    let d = s.direction();
    let mut n = d.perp() * (T::one() / d.norm());
    if (t.centroid - s.start).dot(n) > T::zero() {
        n = -n;
    }
    n
}

/// Specular reflection point of the AP → surface → UE path, if that path exists.
///
/// Both endpoints must lie strictly on the outer side of the surface, the
/// mirror-image intersection must fall on the surface segment, and neither
/// leg may cross another target surface.
pub fn reflection_point<T: Real>(
    ap: Point2D<T>,
    ue: Point2D<T>,
    s: &Surface<T>,
    t: &TargetState<T>,
) -> Option<Point2D<T>> {
    let n = outward_normal(s, t);
    let h_ap = (ap - s.start).dot(n);
    let h_ue = (ue - s.start).dot(n);
    if !(h_ap > T::zero() && h_ue > T::zero()) {
        return None;
    }
    // Intersect AP → mirror(UE) with the surface line; heights are h_ap and -h_ue.
    let image = mirror_point(ue, s);
    let frac = h_ap / (h_ap + h_ue);
    let p = ap + (image - ap) * frac;
    let d = s.direction();
    let u = (p - s.start).dot(d) / d.dot(d);
    if !(u >= T::zero() && u <= T::one()) {
        return None;
    }
    for other in target_surfaces(t).iter().filter(|o| o.id != s.id) {
        if segments_cross(ap, p, other.start, other.end) || segments_cross(p, ue, other.start, other.end) {
            return None;
        }
    }
    Some(p)
}

/// Access point with co-located transmit and receive ULAs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccessPoint<T> {
    pub position: Point2D<T>,
    pub n_tx: usize,
    pub n_rx: usize,
    /// Transmit power in watts.
    pub tx_power: T,
    /// Global azimuth of the array axis; element phases follow the cosine of
    /// the angle measured from this axis.
    pub array_axis: T,
}

impl<T: Real> AccessPoint<T> {
    pub fn new(position: Point2D<T>, n_tx: usize, n_rx: usize, tx_power: T, array_axis: T) -> Result<Self> {
        if n_tx == 0 || n_rx == 0 {
            return Err(SimError::domain("AP antenna counts must be at least 1"));
        }
        if !(tx_power > T::zero()) {
            return Err(SimError::domain("AP transmit power must be positive"));
        }
        Ok(Self { position, n_tx, n_rx, tx_power, array_axis })
    }

    /// Array-local angle of a global azimuth.
    pub fn local_angle(&self, global: T) -> T {
        wrap_angle(global - self.array_axis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserEquipment<T> {
    pub position: Point2D<T>,
    pub n_ant: usize,
    pub array_axis: T,
}

impl<T: Real> UserEquipment<T> {
    pub fn new(position: Point2D<T>, n_ant: usize, array_axis: T) -> Result<Self> {
        if n_ant == 0 {
            return Err(SimError::domain("UE antenna count must be at least 1"));
        }
        Ok(Self { position, n_ant, array_axis })
    }

    pub fn local_angle(&self, global: T) -> T {
        wrap_angle(global - self.array_axis)
    }
}

/// Array axis that puts broadside towards `center`.
pub fn broadside_axis<T: Real>(position: Point2D<T>, center: Point2D<T>) -> T {
    match angle_of(position, center) {
        Ok(a) => wrap_angle(a + T::FRAC_PI_2()),
        Err(_) => T::zero(),
    }
}

/// Static world description: room, AP roster and UE roster.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene<T> {
    /// Side length of the square room with its lower-left corner at the origin.
    pub room_size: T,
    pub aps: Vec<AccessPoint<T>>,
    pub ues: Vec<UserEquipment<T>>,
    /// Carrier frequency in Hz.
    pub carrier_freq: T,
}

impl<T: Real> Scene<T> {
    pub fn wavelength(&self) -> T {
        T::of(crate::scalar::SPEED_OF_LIGHT) / self.carrier_freq
    }

    pub fn room_contains(&self, p: Point2D<T>) -> bool {
        p.x >= T::zero() && p.y >= T::zero() && p.x <= self.room_size && p.y <= self.room_size
    }
}
