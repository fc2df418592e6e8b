//! Skeleton movement traces: synthesis, storage, and playback.
//!
//! Traces drive the network load of benchmark runs the way recorded human
//! movements drive the real platform. Synthesis is fully seeded, so the same
//! parameters always produce bit-identical traces.
//!
//! # File format (`.trace`)
//!
//! Little-endian, versioned:
//!
//! ```text
//! magic  4 bytes "PDTR"
//! version u8 (currently 1)
//! kind    u8 length + utf8 bytes
//! user    u16
//! rate_hz u32
//! joints  u8 count, then per joint: u8 name length + utf8 bytes
//! frames  u32 count, then per frame and joint:
//!         position x,y,z as f64, rotation w,x,y,z as f64
//! ```
//!
//! Frame sequence numbers and timestamps are implicit: frame `k` has
//! `seq = k` and `t = k * (1s / rate_hz)`.

use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{
    Pose, Position, SkeletonFrame, SkeletonLayout, Timestamp, UnitQuaternion, UserId,
};

const MAGIC: &[u8; 4] = b"PDTR";
const FORMAT_VERSION: u8 = 1;

/// Kinds of synthetic movement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    /// Hands and head move quickly; nearly every joint changes every frame.
    Dance,
    /// Sub-threshold micro-motion around a rest pose.
    Idle,
    /// No motion at all.
    Static,
}

impl TraceKind {
    pub fn parse(s: &str) -> Result<TraceKind> {
        match s {
            "dance" => Ok(TraceKind::Dance),
            "idle" => Ok(TraceKind::Idle),
            "static" => Ok(TraceKind::Static),
            other => Err(Error::invalid(format!(
                "unknown trace kind '{other}' (expected dance, idle or static)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TraceKind::Dance => "dance",
            TraceKind::Idle => "idle",
            TraceKind::Static => "static",
        }
    }
}

/// A fixed-rate sequence of skeleton frames sharing one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    layout: Arc<SkeletonLayout>,
    frames: Vec<SkeletonFrame>,
    rate_hz: u32,
    kind: String,
    user: UserId,
}

impl Trace {
    pub fn from_frames(
        layout: Arc<SkeletonLayout>,
        frames: Vec<SkeletonFrame>,
        rate_hz: u32,
        kind: impl Into<String>,
        user: UserId,
    ) -> Result<Trace> {
        let step = timestep_micros(rate_hz)?;
        for (k, f) in frames.iter().enumerate() {
            if f.joints.len() != layout.joint_count() {
                return Err(Error::invalid("frame does not match trace layout"));
            }
            if f.seq != k as u32 || f.t != Timestamp::from_micros(k as u64 * step) {
                return Err(Error::invalid(
                    "trace frames must advance seq by 1 and t by the fixed timestep",
                ));
            }
        }
        Ok(Trace {
            layout,
            frames,
            rate_hz,
            kind: kind.into(),
            user,
        })
    }

    pub fn layout(&self) -> &Arc<SkeletonLayout> {
        &self.layout
    }

    pub fn frames(&self) -> &[SkeletonFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn rate_hz(&self) -> u32 {
        self.rate_hz
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn duration(&self) -> Timestamp {
        Timestamp::from_micros(self.frames.len() as u64 * self.timestep_micros())
    }

    pub fn timestep_micros(&self) -> u64 {
        1_000_000 / self.rate_hz as u64
    }
}

fn timestep_micros(rate_hz: u32) -> Result<u64> {
    if rate_hz == 0 || 1_000_000 % rate_hz as u64 != 0 {
        return Err(Error::invalid(format!(
            "rate {rate_hz} Hz does not divide 1s into whole microseconds"
        )));
    }
    Ok(1_000_000 / rate_hz as u64)
}

/// Per-DOF oscillator: two seeded sinusoids plus low-pass filtered noise.
struct Oscillator {
    amp1: f64,
    freq1: f64,
    phase1: f64,
    amp2: f64,
    freq2: f64,
    phase2: f64,
    noise_amp: f64,
    noise: f64,
    rng: ChaCha8Rng,
}

impl Oscillator {
    fn new(rng: &mut ChaCha8Rng, amp1: f64, freq1: f64, amp2: f64, freq2: f64, noise_amp: f64) -> Self {
        Oscillator {
            amp1,
            freq1: freq1 * rng.gen_range(0.8..1.2),
            phase1: rng.gen_range(0.0..TAU),
            amp2,
            freq2: freq2 * rng.gen_range(0.8..1.2),
            phase2: rng.gen_range(0.0..TAU),
            noise_amp,
            noise: 0.0,
            rng: ChaCha8Rng::seed_from_u64(rng.gen()),
        }
    }

    fn sample(&mut self, t: f64) -> f64 {
        let w: f64 = self.rng.sample(StandardNormal);
        self.noise = 0.95 * self.noise + 0.05 * w;
        self.amp1 * (TAU * self.freq1 * t + self.phase1).sin()
            + self.amp2 * (TAU * self.freq2 * t + self.phase2).sin()
            + self.noise_amp * self.noise
    }
}

struct JointMotion {
    base_position: Position,
    axis_primary: [f64; 3],
    axis_secondary: [f64; 3],
    rot_primary: Oscillator,
    rot_secondary: Oscillator,
    pos: [Oscillator; 3],
}

fn unit_axis(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Rest positions of the default upper-body layout, in meters.
fn rest_position(name: &str) -> Position {
    let side = if name.starts_with("left") { -1.0 } else { 1.0 };
    if name == "head" {
        Position { x: 0.0, y: 1.70, z: 0.0 }
    } else if name == "neck" {
        Position { x: 0.0, y: 1.55, z: 0.0 }
    } else if name == "torso" {
        Position { x: 0.0, y: 1.30, z: 0.0 }
    } else if name.ends_with("wrist") {
        Position { x: side * 0.45, y: 1.15, z: 0.25 }
    } else {
        // Finger joints fan out in front of the wrist.
        let idx: f64 = name
            .chars()
            .last()
            .and_then(|c| c.to_digit(10))
            .unwrap_or(0) as f64;
        Position {
            x: side * (0.45 + 0.01 * idx),
            y: 1.15 + 0.005 * idx,
            z: 0.32 + 0.01 * idx,
        }
    }
}

/// Deterministically synthesizes a movement trace.
///
/// * `dance` moves hands and head quickly: rotations sweep tens of degrees
///   per second so nearly every joint exceeds the noticeable-change
///   thresholds at every 10 ms step.
/// * `idle` applies micro-motion that stays below the default thresholds.
/// * `static` holds a fixed pose.
pub fn generate_synthetic(
    kind: TraceKind,
    duration_s: f64,
    rate_hz: u32,
    seed: u64,
) -> Result<Trace> {
    if !(duration_s > 0.0) {
        return Err(Error::invalid("duration must be positive"));
    }
    let step = timestep_micros(rate_hz)?;
    let layout = SkeletonLayout::default_21();
    let frame_count = (duration_s * rate_hz as f64).round() as usize;
    if frame_count == 0 {
        return Err(Error::invalid("duration too short for one frame"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x706f_7365_6465_636b);
    let mut motions: Vec<JointMotion> = Vec::with_capacity(layout.joint_count());
    for name in layout.joint_names() {
        let is_torso = name == "torso" || name == "neck";
        // Amplitudes in degrees / meters; dance keeps every joint above the
        // 0.1 deg / 1 mm thresholds at nearly every 10 ms step, idle stays
        // well below them even against a frozen baseline.
        let (rot_amp1, rot_amp2, rot_noise, pos_amp) = match kind {
            TraceKind::Dance if is_torso => (10.0, 4.0, 1.0, 0.04),
            TraceKind::Dance => (25.0, 10.0, 2.0, 0.15),
            TraceKind::Idle => (0.02, 0.008, 0.004, 0.00015),
            TraceKind::Static => (0.0, 0.0, 0.0, 0.0),
        };
        let (freq1, freq2) = match kind {
            TraceKind::Dance if is_torso => (0.5, 1.1),
            TraceKind::Dance => (1.2, 2.6),
            _ => (0.3, 0.9),
        };
        motions.push(JointMotion {
            base_position: rest_position(name),
            axis_primary: unit_axis(&mut rng),
            axis_secondary: unit_axis(&mut rng),
            rot_primary: Oscillator::new(&mut rng, rot_amp1, freq1, rot_amp2, freq2, rot_noise),
            rot_secondary: Oscillator::new(&mut rng, rot_amp1 * 0.6, freq2, rot_amp2 * 0.6, freq1, rot_noise),
            pos: [
                Oscillator::new(&mut rng, pos_amp, freq1, pos_amp * 0.4, freq2, pos_amp * 0.1),
                Oscillator::new(&mut rng, pos_amp * 0.7, freq2, pos_amp * 0.3, freq1, pos_amp * 0.1),
                Oscillator::new(&mut rng, pos_amp, freq1 * 0.9, pos_amp * 0.4, freq2 * 1.1, pos_amp * 0.1),
            ],
        });
    }

    let mut frames = Vec::with_capacity(frame_count);
    for k in 0..frame_count {
        let t_us = k as u64 * step;
        let t_s = t_us as f64 / 1e6;
        let joints = motions
            .iter_mut()
            .map(|m| {
                let a1 = m.rot_primary.sample(t_s);
                let a2 = m.rot_secondary.sample(t_s);
                let q1 = UnitQuaternion::from_axis_angle(m.axis_primary, a1)
                    .expect("axis is unit length");
                let q2 = UnitQuaternion::from_axis_angle(m.axis_secondary, a2)
                    .expect("axis is unit length");
                let offset = [
                    m.pos[0].sample(t_s),
                    m.pos[1].sample(t_s),
                    m.pos[2].sample(t_s),
                ];
                Pose {
                    position: m.base_position.offset(offset),
                    rotation: q1.mul(&q2),
                }
            })
            .collect();
        frames.push(SkeletonFrame {
            user: UserId(0),
            seq: k as u32,
            t: Timestamp::from_micros(t_us),
            joints,
        });
    }
    Trace::from_frames(layout, frames, rate_hz, kind.name(), UserId(0))
}

pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    let kind = trace.kind.as_bytes();
    out.push(kind.len() as u8);
    out.extend_from_slice(kind);
    out.extend_from_slice(&trace.user.0.to_le_bytes());
    out.extend_from_slice(&trace.rate_hz.to_le_bytes());
    out.push(trace.layout.joint_count() as u8);
    for name in trace.layout.joint_names() {
        let b = name.as_bytes();
        out.push(b.len() as u8);
        out.extend_from_slice(b);
    }
    out.extend_from_slice(&(trace.frames.len() as u32).to_le_bytes());
    for f in &trace.frames {
        for j in &f.joints {
            for v in [
                j.position.x,
                j.position.y,
                j.position.z,
                j.rotation.w,
                j.rotation.x,
                j.rotation.y,
                j.rotation.z,
            ] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let mut r = FileReader { data: &data, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format("not a trace file (bad magic)".into()));
    }
    let version = r.u8()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let kind_len = r.u8()? as usize;
    let kind = String::from_utf8(r.take(kind_len)?.to_vec())
        .map_err(|_| Error::Format("kind is not utf8".into()))?;
    let user = UserId(r.u16()?);
    let rate_hz = r.u32()?;
    let step = timestep_micros(rate_hz).map_err(|_| Error::Format("bad rate".into()))?;
    let joint_count = r.u8()? as usize;
    let mut names = Vec::with_capacity(joint_count);
    for _ in 0..joint_count {
        let len = r.u8()? as usize;
        names.push(
            String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("joint name is not utf8".into()))?,
        );
    }
    let layout =
        SkeletonLayout::new(names).map_err(|e| Error::Format(format!("bad layout: {e}")))?;
    let frame_count = r.u32()? as usize;
    let mut frames = Vec::with_capacity(frame_count);
    for k in 0..frame_count {
        let mut joints = Vec::with_capacity(joint_count);
        for _ in 0..joint_count {
            let px = r.f64()?;
            let py = r.f64()?;
            let pz = r.f64()?;
            let qw = r.f64()?;
            let qx = r.f64()?;
            let qy = r.f64()?;
            let qz = r.f64()?;
            joints.push(Pose {
                position: Position { x: px, y: py, z: pz },
                rotation: UnitQuaternion {
                    w: qw,
                    x: qx,
                    y: qy,
                    z: qz,
                },
            });
        }
        frames.push(SkeletonFrame {
            user,
            seq: k as u32,
            t: Timestamp::from_micros(k as u64 * step),
            joints,
        });
    }
    if r.pos != data.len() {
        return Err(Error::Format("trailing bytes in trace file".into()));
    }
    Trace::from_frames(layout, frames, rate_hz, kind, user)
}

struct FileReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> FileReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format("trace file truncated".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Replays a trace on a virtual clock, optionally looping. Emitted frames
/// keep advancing `seq` and `t` monotonically across loop boundaries.
#[derive(Debug, Clone)]
pub struct TracePlayer {
    trace: Arc<Trace>,
    user: UserId,
    looping: bool,
    next_index: u64,
}

impl TracePlayer {
    pub fn new(trace: Arc<Trace>, user: UserId, looping: bool) -> Result<TracePlayer> {
        if trace.is_empty() {
            return Err(Error::invalid("cannot play an empty trace"));
        }
        Ok(TracePlayer {
            trace,
            user,
            looping,
            next_index: 0,
        })
    }

    /// Emission time of the next frame, if any.
    pub fn next_emission(&self) -> Option<Timestamp> {
        if !self.looping && self.next_index >= self.trace.len() as u64 {
            return None;
        }
        Some(Timestamp::from_micros(
            self.next_index * self.trace.timestep_micros(),
        ))
    }

    /// Emits every frame due at or before `now`.
    pub fn poll(&mut self, now: Timestamp) -> Vec<SkeletonFrame> {
        let mut out = Vec::new();
        while let Some(at) = self.next_emission() {
            if at > now {
                break;
            }
            out.push(self.frame_at(self.next_index));
            self.next_index += 1;
        }
        out
    }

    fn frame_at(&self, index: u64) -> SkeletonFrame {
        let base = &self.trace.frames()[(index % self.trace.len() as u64) as usize];
        SkeletonFrame {
            user: self.user,
            seq: index as u32,
            t: Timestamp::from_micros(index * self.trace.timestep_micros()),
            joints: base.joints.clone(),
        }
    }

    /// Number of frames emitted by playing until `t_end` inclusive.
    pub fn emissions_until(&self, t_end: Timestamp) -> u64 {
        let step = self.trace.timestep_micros();
        let by_time = t_end.micros() / step + 1;
        if self.looping {
            by_time
        } else {
            by_time.min(self.trace.len() as u64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{uncompressed_size, CodecConfig, Encoder};

    #[test]
    fn synthesis_is_deterministic() {
        let a = generate_synthetic(TraceKind::Dance, 2.0, 100, 1).unwrap();
        let b = generate_synthetic(TraceKind::Dance, 2.0, 100, 1).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(TraceKind::Dance, 2.0, 100, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!(TraceKind::parse("sprint").is_err());
    }

    #[test]
    fn idle_trace_compresses_to_header_only() {
        let trace = generate_synthetic(TraceKind::Idle, 10.0, 100, 1).unwrap();
        let mut enc = Encoder::new(CodecConfig::default(), trace.layout().clone()).unwrap();
        let mut header_only = 0usize;
        for f in trace.frames() {
            if enc.encode(f).unwrap().is_header_only() {
                header_only += 1;
            }
        }
        let share = header_only as f64 / trace.len() as f64;
        assert!(share > 0.95, "only {share:.3} of idle frames were header-only");
    }

    #[test]
    fn dance_trace_compression_factor_in_paper_range() {
        let trace = generate_synthetic(TraceKind::Dance, 10.0, 100, 1).unwrap();
        let mut enc = Encoder::new(CodecConfig::default(), trace.layout().clone()).unwrap();
        let mut compressed = 0usize;
        for f in trace.frames() {
            let e = enc.encode(f).unwrap();
            compressed += e.serialized_size(enc.profile());
        }
        let uncompressed = uncompressed_size(trace.layout()) * trace.len();
        let factor = uncompressed as f64 / compressed as f64;
        assert!(
            (2.0..=2.6).contains(&factor),
            "compression factor {factor:.3} outside [2.0, 2.6]"
        );
    }

    #[test]
    fn save_load_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.trace");
        let trace = generate_synthetic(TraceKind::Dance, 10.0, 100, 3).unwrap();
        assert_eq!(trace.len(), 1000);
        save_trace(&trace, &path).unwrap();
        let loaded = load_trace(&path).unwrap();
        assert_eq!(trace, loaded);
    }

    #[test]
    fn truncated_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.trace");
        let trace = generate_synthetic(TraceKind::Idle, 1.0, 100, 3).unwrap();
        save_trace(&trace, &path).unwrap();
        let data = std::fs::read(&path).unwrap();
        std::fs::write(&path, &data[..data.len() / 2]).unwrap();
        assert!(matches!(load_trace(&path), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_version_is_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.trace");
        let trace = generate_synthetic(TraceKind::Idle, 1.0, 100, 3).unwrap();
        save_trace(&trace, &path).unwrap();
        let mut data = std::fs::read(&path).unwrap();
        data[4] = 99;
        std::fs::write(&path, &data).unwrap();
        assert!(matches!(
            load_trace(&path),
            Err(Error::Version { found: 99, .. })
        ));
    }

    #[test]
    fn playback_emits_exact_frame_count() {
        let trace = Arc::new(generate_synthetic(TraceKind::Static, 10.0, 100, 1).unwrap());
        let mut player = TracePlayer::new(trace, UserId(3), false).unwrap();
        let frames = player.poll(Timestamp::from_secs(30));
        assert_eq!(frames.len(), 1000);
        assert!(player.poll(Timestamp::from_secs(60)).is_empty());
    }

    #[test]
    fn looped_playback_wraps_with_monotone_seq() {
        let trace = Arc::new(generate_synthetic(TraceKind::Static, 10.0, 100, 1).unwrap());
        let mut player = TracePlayer::new(trace, UserId(3), true).unwrap();
        // 25 s on a 10 s trace: emissions at t = 0, 10ms, ... 24.99s.
        let frames = player.poll(Timestamp::from_micros(24_999_999));
        assert_eq!(frames.len(), 2500);
        for w in frames.windows(2) {
            assert!(w[1].seq > w[0].seq);
            assert!(w[1].t > w[0].t);
        }
        assert_eq!(frames[2499].joints, frames[499].joints);
    }

    #[test]
    fn empty_trace_cannot_be_played() {
        let layout = SkeletonLayout::default_21();
        let empty = Trace::from_frames(layout, Vec::new(), 100, "static", UserId(0)).unwrap();
        assert!(TracePlayer::new(Arc::new(empty), UserId(0), false).is_err());
    }
}
