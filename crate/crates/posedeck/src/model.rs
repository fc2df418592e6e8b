//! Shared domain types: timestamps, rotations, poses, skeleton layouts and frames.
//!
//! Everything here is an immutable value type; frames and poses can be freely
//! cloned and shared across the simulation without coordination.

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use crate::error::{Error, Result};

/// Tolerance for the unit-norm invariant of [`UnitQuaternion`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Microseconds since the simulation epoch (epoch is 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub const fn from_micros(us: u64) -> Self {
        Timestamp(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        Timestamp(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        Timestamp(s * 1_000_000)
    }

    pub const fn micros(self) -> u64 {
        self.0
    }

    pub fn millis_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn secs_f64(self) -> f64 {
        self.0 as f64 / 1_000_000.0
    }

    /// Elapsed time since `earlier`, saturating at zero.
    pub fn since(self, earlier: Timestamp) -> Duration {
        Duration::from_micros(self.0.saturating_sub(earlier.0))
    }
}

impl std::ops::Add<Duration> for Timestamp {
    type Output = Timestamp;

    /// Durations are truncated to whole microseconds; the simulation is
    /// microsecond-grained throughout.
    fn add(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0 + rhs.as_micros() as u64)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// A rotation as a unit quaternion. `q` and `-q` denote the same rotation;
/// all comparisons in this crate are double-cover aware.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Builds a unit quaternion, rejecting inputs whose norm deviates from 1
    /// by more than [`UNIT_NORM_TOLERANCE`].
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = UnitQuaternion { w, x, y, z };
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::invalid(format!(
                "quaternion norm {norm} is not unit within {UNIT_NORM_TOLERANCE}"
            )));
        }
        Ok(q)
    }

    /// Normalizes an arbitrary non-zero quaternion.
    pub fn normalize(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::invalid("cannot normalize a near-zero quaternion"));
        }
        Ok(UnitQuaternion {
            w: w / norm,
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    /// Internal constructor for values already unit-norm by construction.
    pub(crate) fn from_normalized(w: f64, x: f64, y: f64, z: f64) -> Self {
        debug_assert!((w * w + x * x + y * y + z * z - 1.0).abs() < 1e-9);
        UnitQuaternion { w, x, y, z }
    }

    /// Rotation of `angle_deg` degrees about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: [f64; 3], angle_deg: f64) -> Result<Self> {
        let len = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if len < 1e-12 || !len.is_finite() {
            return Err(Error::invalid("rotation axis must be non-zero"));
        }
        let half = angle_deg.to_radians() / 2.0;
        let (s, c) = (half.sin(), half.cos());
        Ok(UnitQuaternion {
            w: c,
            x: s * axis[0] / len,
            y: s * axis[1] / len,
            z: s * axis[2] / len,
        })
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOLERANCE
    }

    pub fn conjugate(&self) -> UnitQuaternion {
        UnitQuaternion {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn negated(&self) -> UnitQuaternion {
        UnitQuaternion {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn dot(&self, other: &UnitQuaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Hamilton product `self * other` (apply `other` first, then `self`).
    pub fn mul(&self, other: &UnitQuaternion) -> UnitQuaternion {
        let (aw, ax, ay, az) = (self.w, self.x, self.y, self.z);
        let (bw, bx, by, bz) = (other.w, other.x, other.y, other.z);
        UnitQuaternion {
            w: aw * bw - ax * bx - ay * by - az * bz,
            x: aw * bx + ax * bw + ay * bz - az * by,
            y: aw * by - ax * bz + ay * bw + az * bx,
            z: aw * bz + ax * by - ay * bx + az * bw,
        }
    }

    /// Rotates a vector by this quaternion.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let p = UnitQuaternion {
            w: 0.0,
            x: v[0],
            y: v[1],
            z: v[2],
        };
        let r = self.mul(&p).mul(&self.conjugate());
        [r.x, r.y, r.z]
    }

    /// Spherical interpolation from `self` towards `other`, double-cover aware.
    pub fn slerp(&self, other: &UnitQuaternion, t: f64) -> UnitQuaternion {
        let mut b = *other;
        let mut dot = self.dot(&b);
        if dot < 0.0 {
            b = b.negated();
            dot = -dot;
        }
        if dot > 1.0 - 1e-10 {
            // Nearly identical: linear blend then renormalize.
            let w = self.w + t * (b.w - self.w);
            let x = self.x + t * (b.x - self.x);
            let y = self.y + t * (b.y - self.y);
            let z = self.z + t * (b.z - self.z);
            return UnitQuaternion::normalize(w, x, y, z).unwrap_or(*self);
        }
        let theta = dot.clamp(-1.0, 1.0).acos();
        let sin_theta = theta.sin();
        let wa = ((1.0 - t) * theta).sin() / sin_theta;
        let wb = (t * theta).sin() / sin_theta;
        UnitQuaternion::from_normalized(
            wa * self.w + wb * b.w,
            wa * self.x + wb * b.x,
            wa * self.y + wb * b.y,
            wa * self.z + wb * b.z,
        )
    }
}

/// Minimal rotation angle between two unit quaternions, in degrees, in [0, 180].
///
/// Double-cover aware: `angular_distance(q, -q)` is 0.
pub fn angular_distance(a: &UnitQuaternion, b: &UnitQuaternion) -> Result<f64> {
    if !a.is_unit() || !b.is_unit() {
        return Err(Error::invalid("angular_distance requires unit quaternions"));
    }
    Ok(angular_distance_unchecked(a, b))
}

/// As [`angular_distance`] but without the unit-norm check; used on values
/// that are unit by construction.
///
/// Computed via the chord length `|a - sign(dot) * b|`, which is free of the
/// cancellation the naive acos form suffers near zero.
pub(crate) fn angular_distance_unchecked(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    let s = if a.dot(b) < 0.0 { -1.0 } else { 1.0 };
    let dw = a.w - s * b.w;
    let dx = a.x - s * b.x;
    let dy = a.y - s * b.y;
    let dz = a.z - s * b.z;
    let half_chord = ((dw * dw + dx * dx + dy * dy + dz * dz).sqrt() / 2.0).clamp(0.0, 1.0);
    (4.0 * half_chord.asin()).to_degrees()
}

/// A point in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const ORIGIN: Position = Position {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::invalid("position components must be finite"));
        }
        Ok(Position { x, y, z })
    }

    pub fn distance(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn offset(&self, d: [f64; 3]) -> Position {
        Position {
            x: self.x + d[0],
            y: self.y + d[1],
            z: self.z + d[2],
        }
    }
}

/// Position plus orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Position,
    pub rotation: UnitQuaternion,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        position: Position::ORIGIN,
        rotation: UnitQuaternion::IDENTITY,
    };

    pub fn new(position: Position, rotation: UnitQuaternion) -> Self {
        Pose { position, rotation }
    }

    /// Rigid composition: applies `delta` in this pose's body frame.
    pub fn compose(&self, delta: &Pose) -> Pose {
        let moved = self.rotation.rotate([
            delta.position.x,
            delta.position.y,
            delta.position.z,
        ]);
        Pose {
            position: self.position.offset(moved),
            rotation: self.rotation.mul(&delta.rotation),
        }
    }

    /// The body-frame delta that takes this pose to `next`: `self.compose(delta) == next`.
    pub fn delta_to(&self, next: &Pose) -> Pose {
        let inv = self.rotation.conjugate();
        let dp = inv.rotate([
            next.position.x - self.position.x,
            next.position.y - self.position.y,
            next.position.z - self.position.z,
        ]);
        Pose {
            position: Position {
                x: dp[0],
                y: dp[1],
                z: dp[2],
            },
            rotation: inv.mul(&next.rotation),
        }
    }
}

/// Index into the joint list of the active [`SkeletonLayout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JointId(pub u8);

impl JointId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Player identity, unique per session. Matches the wire representation (u16).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(pub u16);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "user{}", self.0)
    }
}

/// Player role within a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlayerType {
    /// Plays back and receives skeleton data, may vote.
    Standard,
    /// Receives skeleton data but never sends any.
    Spectator,
    /// May advance, reset and run ballots on the experience.
    Administrator,
}

impl PlayerType {
    pub fn sends_skeleton(self) -> bool {
        !matches!(self, PlayerType::Spectator)
    }

    pub(crate) fn wire_tag(self) -> u8 {
        match self {
            PlayerType::Standard => 0,
            PlayerType::Spectator => 1,
            PlayerType::Administrator => 2,
        }
    }

    pub(crate) fn from_wire_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(PlayerType::Standard),
            1 => Some(PlayerType::Spectator),
            2 => Some(PlayerType::Administrator),
            _ => None,
        }
    }
}

/// Fixed ordering and naming of the joints in a skeleton.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonLayout {
    names: Vec<String>,
}

impl SkeletonLayout {
    /// At most 255 joints (the wire encodes joint counts and ids as u8).
    pub const MAX_JOINTS: usize = 255;

    pub fn new(names: Vec<String>) -> Result<Arc<Self>> {
        if names.is_empty() || names.len() > Self::MAX_JOINTS {
            return Err(Error::invalid(format!(
                "layout must have 1..={} joints, got {}",
                Self::MAX_JOINTS,
                names.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::invalid(format!("duplicate joint name '{n}'")));
            }
        }
        Ok(Arc::new(SkeletonLayout { names }))
    }

    /// The default 21-joint upper-body layout: head, neck, torso, and per hand
    /// a wrist plus an abbreviated finger chain of 8 joints.
    pub fn default_21() -> Arc<Self> {
        let mut names = vec!["head".into(), "neck".into(), "torso".into()];
        for hand in ["left", "right"] {
            names.push(format!("{hand}_wrist"));
            for i in 0..8 {
                names.push(format!("{hand}_finger{i}"));
            }
        }
        Self::new(names).expect("default layout is valid")
    }

    pub fn joint_count(&self) -> usize {
        self.names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, id: JointId) -> bool {
        id.index() < self.names.len()
    }

    /// Joint indices whose name starts with one of the given prefixes.
    pub fn joints_with_prefix(&self, prefixes: &[&str]) -> Vec<JointId> {
        self.names
            .iter()
            .enumerate()
            .filter(|(_, n)| prefixes.iter().any(|p| n.starts_with(p)))
            .map(|(i, _)| JointId(i as u8))
            .collect()
    }
}

/// One timestamped snapshot of all joint poses for one user; the unit of
/// synchronization.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFrame {
    pub user: UserId,
    pub seq: u32,
    pub t: Timestamp,
    pub joints: Vec<Pose>,
}

impl SkeletonFrame {
    pub fn new(user: UserId, seq: u32, t: Timestamp, joints: Vec<Pose>) -> Self {
        SkeletonFrame {
            user,
            seq,
            t,
            joints,
        }
    }

    /// A frame with every joint at the identity pose.
    pub fn identity(user: UserId, seq: u32, t: Timestamp, layout: &SkeletonLayout) -> Self {
        SkeletonFrame {
            user,
            seq,
            t,
            joints: vec![Pose::IDENTITY; layout.joint_count()],
        }
    }
}

/// Thresholds for the noticeable-change rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaThresholds {
    /// Rotation changes below this many degrees are not transferred.
    pub rotation_deg: f64,
    /// Position changes below this many meters are not transferred.
    pub position_m: f64,
}

impl Default for DeltaThresholds {
    fn default() -> Self {
        DeltaThresholds {
            rotation_deg: 0.1,
            position_m: 0.001,
        }
    }
}

impl DeltaThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.rotation_deg <= 0.0 || self.position_m <= 0.0 {
            return Err(Error::invalid("delta thresholds must be strictly positive"));
        }
        Ok(())
    }
}

/// Joints of `current` that differ noticeably from `baseline`: rotation by at
/// least `thresholds.rotation_deg` degrees or position by at least
/// `thresholds.position_m` meters.
pub fn frame_delta_joints(
    current: &SkeletonFrame,
    baseline: &SkeletonFrame,
    thresholds: &DeltaThresholds,
) -> Result<Vec<JointId>> {
    thresholds.validate()?;
    if current.joints.len() != baseline.joints.len() {
        return Err(Error::invalid(format!(
            "layout mismatch: {} vs {} joints",
            current.joints.len(),
            baseline.joints.len()
        )));
    }
    if current.user != baseline.user {
        return Err(Error::invalid("frames belong to different users"));
    }
    let mut changed = Vec::new();
    for (i, (cur, base)) in current.joints.iter().zip(&baseline.joints).enumerate() {
        let rot = angular_distance_unchecked(&cur.rotation, &base.rotation);
        let pos = cur.position.distance(&base.position);
        if rot >= thresholds.rotation_deg || pos >= thresholds.position_m {
            changed.push(JointId(i as u8));
        }
    }
    Ok(changed)
}
