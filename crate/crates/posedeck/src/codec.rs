//! Skeleton frame compression: noticeable-change filtering plus
//! reduced-resolution rotation encoding.
//!
//! Only joints whose rotation moved at least the rotation threshold (default
//! one tenth of a degree) or whose position moved at least the position
//! threshold since the last transmitted value are emitted, and transmitted
//! rotations are quantized to approximately the threshold resolution.
//!
//! # Wire layout
//!
//! All integers little-endian. Frame header (15 bytes):
//!
//! ```text
//! user: u16 | seq: u32 | t: u64 (microseconds) | count: u8
//! ```
//!
//! With compression enabled, `count` delta records follow, each:
//!
//! ```text
//! joint id: u8
//! rotation: `rot_bytes` bytes (default 5), LSB-first bit fields:
//!     [0,n)      index of stored component a
//!     [n,2n)     index of stored component b
//!     [2n,3n)    index of stored component c
//!     [3n,3n+2)  which component (w=0,x=1,y=2,z=3) was omitted
//!     [3n+2]     position escape flag
//!   where n is the per-component bit width (default 11). Stored components
//!   are the three smallest, mapped from [-1/sqrt(2), 1/sqrt(2)] onto
//!   2^n - 1 levels so that zero is exactly representable.
//! position: escape flag 0 -> 3 x i16, per-axis offset from the baseline in
//!   `position_resolution_m` steps; escape flag 1 -> 3 x f32 absolute meters.
//! ```
//!
//! With compression disabled the header is followed by `count` full-resolution
//! records in layout order (no joint ids): rotation as 4 x f32 (w,x,y,z) then
//! position as 3 x f32, 28 bytes per joint.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{
    angular_distance_unchecked, frame_delta_joints, DeltaThresholds, JointId, Pose, Position,
    SkeletonFrame, SkeletonLayout, Timestamp, UnitQuaternion, UserId,
};

/// Frame header size in bytes: user u16 + seq u32 + t u64 + count u8.
pub const HEADER_BYTES: usize = 15;
/// Size of a full-resolution joint record (4 + 3 floats).
pub const FULL_JOINT_BYTES: usize = 28;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
/// First-order worst-case angular error of smallest-three quantization with
/// `n` bits per component is sqrt(6)/(2^n - 2) radians.
const WORST_CASE_NUMERATOR: f64 = 2.449489742783178; // sqrt(6)

/// Codec parameters. Resolutions must not exceed their thresholds so a change
/// that is worth sending is always representable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecConfig {
    pub rotation_threshold_deg: f64,
    pub position_threshold_m: f64,
    pub rotation_resolution_deg: f64,
    pub position_resolution_m: f64,
    pub compression_enabled: bool,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            rotation_threshold_deg: 0.1,
            position_threshold_m: 0.001,
            rotation_resolution_deg: 0.1,
            position_resolution_m: 0.0005,
            compression_enabled: true,
        }
    }
}

impl CodecConfig {
    pub fn uncompressed() -> Self {
        CodecConfig {
            compression_enabled: false,
            ..CodecConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotation_threshold_deg <= 0.0
            || self.position_threshold_m <= 0.0
            || self.rotation_resolution_deg <= 0.0
            || self.position_resolution_m <= 0.0
        {
            return Err(Error::invalid(
                "codec thresholds and resolutions must be strictly positive",
            ));
        }
        if self.rotation_resolution_deg > self.rotation_threshold_deg
            || self.position_resolution_m > self.position_threshold_m
        {
            return Err(Error::invalid("resolution must not exceed threshold"));
        }
        rotation_bits_for_resolution(self.rotation_resolution_deg)?;
        Ok(())
    }

    pub fn thresholds(&self) -> DeltaThresholds {
        DeltaThresholds {
            rotation_deg: self.rotation_threshold_deg,
            position_m: self.position_threshold_m,
        }
    }
}

/// Minimal per-component bit width whose worst-case angular error stays at or
/// below `resolution_deg`. 0.1 degrees maps to 11 bits.
pub fn rotation_bits_for_resolution(resolution_deg: f64) -> Result<u32> {
    if !(resolution_deg > 0.0) {
        return Err(Error::invalid("rotation resolution must be positive"));
    }
    for n in 2..=16u32 {
        if worst_case_error_deg(n) <= resolution_deg {
            return Ok(n);
        }
    }
    Err(Error::invalid(format!(
        "rotation resolution {resolution_deg} deg is below the encoder floor of {:.6} deg",
        worst_case_error_deg(16)
    )))
}

/// First-order worst-case round-trip error for `n` bits per component.
pub fn worst_case_error_deg(n: u32) -> f64 {
    (WORST_CASE_NUMERATOR / ((1u64 << n) - 2) as f64).to_degrees()
}

/// Wire parameters derived from a [`CodecConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireProfile {
    rot_bits: u32,
    levels: u32,
    center: u32,
    rot_step: f64,
    rot_bytes: usize,
    pos_step: f64,
}

impl WireProfile {
    pub fn from_config(cfg: &CodecConfig) -> Result<Self> {
        cfg.validate()?;
        let rot_bits = rotation_bits_for_resolution(cfg.rotation_resolution_deg)?;
        Ok(Self::with_bits(rot_bits, cfg.position_resolution_m))
    }

    fn with_bits(rot_bits: u32, pos_step: f64) -> Self {
        let levels = (1u32 << rot_bits) - 1;
        WireProfile {
            rot_bits,
            levels,
            center: (levels - 1) / 2,
            rot_step: SQRT_2 / (levels - 1) as f64,
            // 3 component fields + 2 bits omitted index + 1 escape flag.
            rot_bytes: ((3 * rot_bits + 3) as usize).div_ceil(8),
            pos_step,
        }
    }

    pub fn rot_bits(&self) -> u32 {
        self.rot_bits
    }

    pub fn rotation_bytes(&self) -> usize {
        self.rot_bytes
    }

    /// Bytes of a delta record for one joint: id + rotation + position.
    pub fn delta_joint_bytes(&self, escaped: bool) -> usize {
        1 + self.rot_bytes + if escaped { 12 } else { 6 }
    }

    fn dequantize_component(&self, idx: u32) -> f64 {
        (idx as i64 - self.center as i64) as f64 * self.rot_step
    }

    fn quantize_component(&self, v: f64) -> u32 {
        let idx = (v / self.rot_step).round() as i64 + self.center as i64;
        idx.clamp(0, (self.levels - 1) as i64) as u32
    }

    /// Reconstructs the quaternion encoded by `indices` with omitted
    /// component `k`. Identical arithmetic on encoder and decoder. The final
    /// normalization is a no-op for well-formed encodings but keeps malformed
    /// index combinations (stored components summing past 1) unit-norm.
    fn reconstruct(&self, k: usize, indices: [u32; 3]) -> UnitQuaternion {
        let a = self.dequantize_component(indices[0]);
        let b = self.dequantize_component(indices[1]);
        let c = self.dequantize_component(indices[2]);
        let omitted = (1.0 - (a * a + b * b + c * c)).max(0.0).sqrt();
        let norm = (a * a + b * b + c * c + omitted * omitted).sqrt();
        let mut comps = [0.0f64; 4];
        let mut stored = [a, b, c].into_iter();
        for (i, slot) in comps.iter_mut().enumerate() {
            if i == k {
                *slot = omitted / norm;
            } else {
                *slot = stored.next().unwrap() / norm;
            }
        }
        UnitQuaternion::from_normalized(comps[0], comps[1], comps[2], comps[3])
    }

    /// Smallest-three quantization. Candidates for the omitted component are
    /// tried in component order; the reconstruction with the least angular
    /// error wins (ties keep the earliest candidate), which makes the result
    /// a fixed point: quantizing an already-quantized value returns it
    /// unchanged.
    fn quantize_rotation(&self, q: &UnitQuaternion) -> QuantizedRotation {
        let comps = [q.w, q.x, q.y, q.z];
        let mut best: Option<QuantizedRotation> = None;
        let mut best_err = f64::INFINITY;
        for k in 0..4usize {
            // A candidate is only viable if the stored components fit the range.
            let fits = comps
                .iter()
                .enumerate()
                .all(|(i, c)| i == k || c.abs() <= 1.0 / SQRT_2 + self.rot_step);
            if !fits {
                continue;
            }
            let flip = comps[k] < 0.0;
            let canon: Vec<f64> = comps.iter().map(|c| if flip { -c } else { *c }).collect();
            let mut indices = [0u32; 3];
            let mut slot = 0;
            for (i, c) in canon.iter().enumerate() {
                if i != k {
                    indices[slot] = self.quantize_component(*c);
                    slot += 1;
                }
            }
            let recon = self.reconstruct(k, indices);
            // Bitwise fixed point: grid values re-encode to themselves.
            if recon.w == canon[0]
                && recon.x == canon[1]
                && recon.y == canon[2]
                && recon.z == canon[3]
            {
                return QuantizedRotation {
                    omitted: k as u8,
                    indices,
                    value: recon,
                };
            }
            let err = angular_distance_unchecked(q, &recon);
            if err < best_err {
                best_err = err;
                best = Some(QuantizedRotation {
                    omitted: k as u8,
                    indices,
                    value: recon,
                });
            }
        }
        best.expect("the largest component always yields a viable candidate")
    }
}

#[derive(Debug, Clone, Copy)]
struct QuantizedRotation {
    omitted: u8,
    indices: [u32; 3],
    value: UnitQuaternion,
}

/// Quantizes a rotation so it is representable in the wire encoding for the
/// given resolution; the round-trip angular error never exceeds
/// `resolution_deg`. Idempotent: quantizing the result returns it unchanged.
pub fn quantize_rotation(q: &UnitQuaternion, resolution_deg: f64) -> Result<UnitQuaternion> {
    if !q.is_unit() {
        return Err(Error::invalid("quantize_rotation requires a unit quaternion"));
    }
    let bits = rotation_bits_for_resolution(resolution_deg)?;
    let profile = WireProfile::with_bits(bits, 1.0);
    Ok(profile.quantize_rotation(q).value)
}

/// Per-stream codec state: the most recently transmitted (quantized) pose of
/// every joint and the last sequence number, mirrored bit-exactly between the
/// encoder and its decoder as long as payloads apply in order.
#[derive(Debug, Clone, Default)]
pub struct CodecState {
    baseline: Option<Vec<Pose>>,
    last_seq: Option<u32>,
}

impl CodecState {
    pub fn new() -> Self {
        CodecState::default()
    }

    /// Drops the baseline and stream position, forcing the next frame to be
    /// encoded in full. Used on player reconnect.
    pub fn reset(&mut self) {
        self.baseline = None;
        self.last_seq = None;
    }

    pub fn baseline(&self) -> Option<&[Pose]> {
        self.baseline.as_deref()
    }

    pub fn last_seq(&self) -> Option<u32> {
        self.last_seq
    }

    fn check_seq(&self, seq: u32) -> Result<()> {
        if let Some(last) = self.last_seq {
            if seq <= last {
                return Err(Error::Ordering(format!(
                    "frame seq {seq} is not newer than {last}"
                )));
            }
        }
        Ok(())
    }
}

/// One joint's worth of a delta payload.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRecord {
    pub joint: JointId,
    omitted: u8,
    indices: [u32; 3],
    position: PositionField,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PositionField {
    /// Per-axis offsets from the baseline, in position-resolution steps.
    Offset([i16; 3]),
    /// Absolute position, used when an offset overflows the i16 range.
    Absolute([f32; 3]),
}

/// A full-resolution joint record (compression disabled).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullRecord {
    pub rotation: [f32; 4],
    pub position: [f32; 3],
}

/// Compressed wire representation of one skeleton frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFrame {
    pub user: UserId,
    pub seq: u32,
    pub t: Timestamp,
    payload: FramePayload,
}

#[derive(Debug, Clone, PartialEq)]
enum FramePayload {
    Delta(Vec<DeltaRecord>),
    Full(Vec<FullRecord>),
}

impl EncodedFrame {
    /// Number of joint records carried by this frame.
    pub fn joint_count(&self) -> usize {
        match &self.payload {
            FramePayload::Delta(r) => r.len(),
            FramePayload::Full(r) => r.len(),
        }
    }

    pub fn is_header_only(&self) -> bool {
        self.joint_count() == 0
    }

    /// Exact wire size in bytes under the given profile.
    pub fn serialized_size(&self, profile: &WireProfile) -> usize {
        HEADER_BYTES
            + match &self.payload {
                FramePayload::Delta(records) => records
                    .iter()
                    .map(|r| {
                        profile
                            .delta_joint_bytes(matches!(r.position, PositionField::Absolute(_)))
                    })
                    .sum(),
                FramePayload::Full(records) => records.len() * FULL_JOINT_BYTES,
            }
    }

    pub fn to_bytes(&self, profile: &WireProfile) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_size(profile));
        out.extend_from_slice(&self.user.0.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.t.micros().to_le_bytes());
        out.push(self.joint_count() as u8);
        match &self.payload {
            FramePayload::Delta(records) => {
                for r in records {
                    out.push(r.joint.0);
                    let escape = matches!(r.position, PositionField::Absolute(_));
                    let mut bits: u64 = 0;
                    let n = profile.rot_bits;
                    bits |= r.indices[0] as u64;
                    bits |= (r.indices[1] as u64) << n;
                    bits |= (r.indices[2] as u64) << (2 * n);
                    bits |= (r.omitted as u64) << (3 * n);
                    if escape {
                        bits |= 1u64 << (3 * n + 2);
                    }
                    out.extend_from_slice(&bits.to_le_bytes()[..profile.rot_bytes]);
                    match r.position {
                        PositionField::Offset(axes) => {
                            for a in axes {
                                out.extend_from_slice(&a.to_le_bytes());
                            }
                        }
                        PositionField::Absolute(axes) => {
                            for a in axes {
                                out.extend_from_slice(&a.to_le_bytes());
                            }
                        }
                    }
                }
            }
            FramePayload::Full(records) => {
                for r in records {
                    for c in r.rotation {
                        out.extend_from_slice(&c.to_le_bytes());
                    }
                    for c in r.position {
                        out.extend_from_slice(&c.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    /// Parses a frame. The payload form (delta vs full) follows the codec
    /// configuration; the wire carries no mode flag because both ends of a
    /// stream share the configuration.
    pub fn from_bytes(bytes: &[u8], cfg: &CodecConfig) -> Result<EncodedFrame> {
        let profile = WireProfile::from_config(cfg)?;
        let mut r = ByteReader::new(bytes);
        let user = UserId(r.u16()?);
        let seq = r.u32()?;
        let t = Timestamp::from_micros(r.u64()?);
        let count = r.u8()? as usize;
        let payload = if cfg.compression_enabled {
            let mut records = Vec::with_capacity(count);
            for _ in 0..count {
                let joint = JointId(r.u8()?);
                let raw = r.bytes(profile.rot_bytes)?;
                let mut buf = [0u8; 8];
                buf[..profile.rot_bytes].copy_from_slice(raw);
                let bits = u64::from_le_bytes(buf);
                let n = profile.rot_bits;
                let mask = (1u64 << n) - 1;
                let indices = [
                    (bits & mask) as u32,
                    ((bits >> n) & mask) as u32,
                    ((bits >> (2 * n)) & mask) as u32,
                ];
                if indices.iter().any(|&i| i >= profile.levels) {
                    return Err(Error::Decode("rotation index out of range".into()));
                }
                let omitted = ((bits >> (3 * n)) & 0b11) as u8;
                let escape = (bits >> (3 * n + 2)) & 1 == 1;
                let position = if escape {
                    PositionField::Absolute([r.f32()?, r.f32()?, r.f32()?])
                } else {
                    PositionField::Offset([r.i16()?, r.i16()?, r.i16()?])
                };
                records.push(DeltaRecord {
                    joint,
                    omitted,
                    indices,
                    position,
                });
            }
            FramePayload::Delta(records)
        } else {
            let mut records = Vec::with_capacity(count);
            for _ in 0..count {
                let rotation = [r.f32()?, r.f32()?, r.f32()?, r.f32()?];
                let position = [r.f32()?, r.f32()?, r.f32()?];
                records.push(FullRecord { rotation, position });
            }
            FramePayload::Full(records)
        };
        r.finish()?;
        Ok(EncodedFrame {
            user,
            seq,
            t,
            payload,
        })
    }
}

struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        ByteReader { data, pos: 0 }
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Decode("payload truncated".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn i16(&mut self) -> Result<i16> {
        Ok(i16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Decode("trailing bytes after payload".into()));
        }
        Ok(())
    }
}

/// Fixed per-joint, per-frame wire size with compression disabled; constant
/// for a layout.
pub fn uncompressed_size(layout: &SkeletonLayout) -> usize {
    HEADER_BYTES + layout.joint_count() * FULL_JOINT_BYTES
}

/// Encodes skeleton frames for one user in one direction.
#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: CodecConfig,
    profile: WireProfile,
    layout: Arc<SkeletonLayout>,
    state: CodecState,
}

impl Encoder {
    pub fn new(cfg: CodecConfig, layout: Arc<SkeletonLayout>) -> Result<Self> {
        let profile = WireProfile::from_config(&cfg)?;
        Ok(Encoder {
            cfg,
            profile,
            layout,
            state: CodecState::new(),
        })
    }

    pub fn profile(&self) -> &WireProfile {
        &self.profile
    }

    pub fn state(&self) -> &CodecState {
        &self.state
    }

    /// Forces the next frame to carry all joints.
    pub fn reset_baseline(&mut self) {
        self.state.reset();
    }

    /// Encodes `frame` against the current baseline and advances the baseline
    /// to the quantized transmitted values, so encoder and decoder baselines
    /// stay bit-identical.
    pub fn encode(&mut self, frame: &SkeletonFrame) -> Result<EncodedFrame> {
        if frame.joints.len() != self.layout.joint_count() {
            return Err(Error::invalid(format!(
                "frame has {} joints, layout {}",
                frame.joints.len(),
                self.layout.joint_count()
            )));
        }
        self.state.check_seq(frame.seq)?;

        let payload = if self.cfg.compression_enabled {
            let changed: Vec<JointId> = match &self.state.baseline {
                None => (0..frame.joints.len()).map(|i| JointId(i as u8)).collect(),
                Some(base) => {
                    let base_frame = SkeletonFrame {
                        user: frame.user,
                        seq: frame.seq,
                        t: frame.t,
                        joints: base.clone(),
                    };
                    frame_delta_joints(frame, &base_frame, &self.cfg.thresholds())?
                }
            };
            let mut baseline = self
                .state
                .baseline
                .take()
                .unwrap_or_else(|| vec![Pose::IDENTITY; frame.joints.len()]);
            let mut records = Vec::with_capacity(changed.len());
            for id in changed {
                let joint = &frame.joints[id.index()];
                let quant = self.profile.quantize_rotation(&joint.rotation);
                let base_pos = baseline[id.index()].position;
                let (field, new_pos) = quantize_position(&base_pos, &joint.position, self.profile.pos_step);
                baseline[id.index()] = Pose {
                    position: new_pos,
                    rotation: quant.value,
                };
                records.push(DeltaRecord {
                    joint: id,
                    omitted: quant.omitted,
                    indices: quant.indices,
                    position: field,
                });
            }
            self.state.baseline = Some(baseline);
            FramePayload::Delta(records)
        } else {
            let mut baseline = Vec::with_capacity(frame.joints.len());
            let records = frame
                .joints
                .iter()
                .map(|j| {
                    let r = FullRecord {
                        rotation: [
                            j.rotation.w as f32,
                            j.rotation.x as f32,
                            j.rotation.y as f32,
                            j.rotation.z as f32,
                        ],
                        position: [
                            j.position.x as f32,
                            j.position.y as f32,
                            j.position.z as f32,
                        ],
                    };
                    baseline.push(full_record_pose(&r));
                    r
                })
                .collect();
            self.state.baseline = Some(baseline);
            FramePayload::Full(records)
        };
        self.state.last_seq = Some(frame.seq);
        Ok(EncodedFrame {
            user: frame.user,
            seq: frame.seq,
            t: frame.t,
            payload,
        })
    }
}

fn quantize_position(base: &Position, target: &Position, step: f64) -> (PositionField, Position) {
    let steps = [
        ((target.x - base.x) / step).round(),
        ((target.y - base.y) / step).round(),
        ((target.z - base.z) / step).round(),
    ];
    let in_range = steps
        .iter()
        .all(|s| *s >= i16::MIN as f64 && *s <= i16::MAX as f64);
    if in_range {
        let offsets = [steps[0] as i16, steps[1] as i16, steps[2] as i16];
        let pos = apply_offset(base, &offsets, step);
        (PositionField::Offset(offsets), pos)
    } else {
        let abs = [target.x as f32, target.y as f32, target.z as f32];
        (
            PositionField::Absolute(abs),
            Position {
                x: abs[0] as f64,
                y: abs[1] as f64,
                z: abs[2] as f64,
            },
        )
    }
}

fn apply_offset(base: &Position, offsets: &[i16; 3], step: f64) -> Position {
    Position {
        x: base.x + offsets[0] as f64 * step,
        y: base.y + offsets[1] as f64 * step,
        z: base.z + offsets[2] as f64 * step,
    }
}

fn full_record_pose(r: &FullRecord) -> Pose {
    Pose {
        position: Position {
            x: r.position[0] as f64,
            y: r.position[1] as f64,
            z: r.position[2] as f64,
        },
        rotation: UnitQuaternion {
            w: r.rotation[0] as f64,
            x: r.rotation[1] as f64,
            y: r.rotation[2] as f64,
            z: r.rotation[3] as f64,
        },
    }
}

/// Decodes skeleton frames for one user in one direction. Must see payloads
/// in sequence order; joints never transmitted hold the identity pose.
#[derive(Debug, Clone)]
pub struct Decoder {
    profile: WireProfile,
    cfg: CodecConfig,
    layout: Arc<SkeletonLayout>,
    state: CodecState,
}

impl Decoder {
    pub fn new(cfg: CodecConfig, layout: Arc<SkeletonLayout>) -> Result<Self> {
        let profile = WireProfile::from_config(&cfg)?;
        Ok(Decoder {
            profile,
            cfg,
            layout,
            state: CodecState::new(),
        })
    }

    pub fn state(&self) -> &CodecState {
        &self.state
    }

    pub fn reset_baseline(&mut self) {
        self.state.reset();
    }

    pub fn decode_bytes(&mut self, bytes: &[u8]) -> Result<SkeletonFrame> {
        let frame = EncodedFrame::from_bytes(bytes, &self.cfg)?;
        self.decode(&frame)
    }

    pub fn decode(&mut self, enc: &EncodedFrame) -> Result<SkeletonFrame> {
        self.state.check_seq(enc.seq)?;
        let mut joints = self
            .state
            .baseline
            .take()
            .unwrap_or_else(|| vec![Pose::IDENTITY; self.layout.joint_count()]);
        match &enc.payload {
            FramePayload::Delta(records) => {
                for r in records {
                    if !self.layout.contains(r.joint) {
                        self.state.baseline = Some(joints);
                        return Err(Error::Decode(format!(
                            "joint id {} outside layout of {} joints",
                            r.joint.0,
                            self.layout.joint_count()
                        )));
                    }
                    if r.omitted > 3 || r.indices.iter().any(|&i| i >= self.profile.levels) {
                        self.state.baseline = Some(joints);
                        return Err(Error::Decode("malformed rotation field".into()));
                    }
                    let rotation = self
                        .profile
                        .reconstruct(r.omitted as usize, r.indices);
                    let position = match r.position {
                        PositionField::Offset(axes) => {
                            apply_offset(&joints[r.joint.index()].position, &axes, self.profile.pos_step)
                        }
                        PositionField::Absolute(axes) => Position {
                            x: axes[0] as f64,
                            y: axes[1] as f64,
                            z: axes[2] as f64,
                        },
                    };
                    joints[r.joint.index()] = Pose { position, rotation };
                }
            }
            FramePayload::Full(records) => {
                if records.len() != self.layout.joint_count() {
                    self.state.baseline = Some(joints);
                    return Err(Error::Decode(format!(
                        "full frame carries {} joints, layout has {}",
                        records.len(),
                        self.layout.joint_count()
                    )));
                }
                for (slot, r) in joints.iter_mut().zip(records) {
                    *slot = full_record_pose(r);
                }
            }
        }
        self.state.baseline = Some(joints.clone());
        self.state.last_seq = Some(enc.seq);
        Ok(SkeletonFrame {
            user: enc.user,
            seq: enc.seq,
            t: enc.t,
            joints,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_frame, random_unit_quat};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_profile_is_11_bits_5_bytes() {
        let profile = WireProfile::from_config(&CodecConfig::default()).unwrap();
        assert_eq!(profile.rot_bits(), 11);
        assert_eq!(profile.rotation_bytes(), 5);
        assert_eq!(profile.delta_joint_bytes(false), 12);
        assert_eq!(profile.delta_joint_bytes(true), 18);
    }

    #[test]
    fn bit_width_is_minimal_for_default_resolution() {
        // Brute-force check that 11 bits meet the 0.1 degree bound and 10 do not.
        let mut rng = ChaCha8Rng::seed_from_u64(5150);
        let mut max_err = [0.0f64; 2];
        for (i, bits) in [11u32, 10].into_iter().enumerate() {
            let profile = WireProfile::with_bits(bits, 1.0);
            for _ in 0..5000 {
                let q = random_unit_quat(&mut rng);
                let quant = profile.quantize_rotation(&q);
                let err = angular_distance_unchecked(&q, &quant.value);
                max_err[i] = max_err[i].max(err);
            }
            // Adversarial inputs: two near-equal dominant components.
            for j in 0..2000 {
                let eps = (j as f64) * 1e-6;
                let a = (0.5 + eps).sqrt();
                let b = (0.5 - eps - 1e-8).sqrt();
                if let Ok(q) = UnitQuaternion::normalize(a, b, 1e-4, -1e-4) {
                    let quant = profile.quantize_rotation(&q);
                    max_err[i] = max_err[i].max(angular_distance_unchecked(&q, &quant.value));
                }
            }
        }
        assert!(max_err[0] <= 0.1, "11 bits exceeded 0.1 deg: {}", max_err[0]);
        assert!(max_err[1] > 0.1, "10 bits unexpectedly met 0.1 deg: {}", max_err[1]);
        assert_eq!(rotation_bits_for_resolution(0.1).unwrap(), 11);
    }

    #[test]
    fn quantize_identity_is_identity() {
        let q = quantize_rotation(&UnitQuaternion::IDENTITY, 0.1).unwrap();
        assert_eq!(q, UnitQuaternion::IDENTITY);
    }

    #[test]
    fn quantize_round_trip_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let q = random_unit_quat(&mut rng);
            let quantized = quantize_rotation(&q, 0.1).unwrap();
            let err = angular_distance_unchecked(&q, &quantized);
            assert!(err <= 0.1, "round-trip error {err} exceeds 0.1 deg");
        }
    }

    #[test]
    fn quantize_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..2000 {
            let q = random_unit_quat(&mut rng);
            let once = quantize_rotation(&q, 0.1).unwrap();
            let twice = quantize_rotation(&once, 0.1).unwrap();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn quantize_rejects_bad_inputs() {
        let bad = UnitQuaternion {
            w: 2.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        };
        assert!(quantize_rotation(&bad, 0.1).is_err());
        assert!(quantize_rotation(&UnitQuaternion::IDENTITY, 0.0).is_err());
        assert!(quantize_rotation(&UnitQuaternion::IDENTITY, -1.0).is_err());
    }

    fn codec_pair() -> (Encoder, Decoder) {
        let layout = SkeletonLayout::default_21();
        (
            Encoder::new(CodecConfig::default(), layout.clone()).unwrap(),
            Decoder::new(CodecConfig::default(), layout).unwrap(),
        )
    }

    #[test]
    fn identical_frame_encodes_header_only() {
        let (mut enc, _) = codec_pair();
        let layout = SkeletonLayout::default_21();
        let f0 = SkeletonFrame::identity(UserId(1), 0, Timestamp::ZERO, &layout);
        let first = enc.encode(&f0).unwrap();
        assert_eq!(first.joint_count(), 21, "first frame carries everything");
        let f1 = SkeletonFrame::identity(UserId(1), 1, Timestamp::from_millis(10), &layout);
        let second = enc.encode(&f1).unwrap();
        assert!(second.is_header_only());
        assert_eq!(second.serialized_size(enc.profile()), HEADER_BYTES);
    }

    #[test]
    fn sub_threshold_rotation_encodes_header_only() {
        let (mut enc, _) = codec_pair();
        let layout = SkeletonLayout::default_21();
        let f0 = SkeletonFrame::identity(UserId(1), 0, Timestamp::ZERO, &layout);
        enc.encode(&f0).unwrap();
        let mut f1 = SkeletonFrame::identity(UserId(1), 1, Timestamp::from_millis(10), &layout);
        f1.joints[4].rotation = UnitQuaternion::from_axis_angle([0.0, 1.0, 0.0], 0.05).unwrap();
        let second = enc.encode(&f1).unwrap();
        assert!(second.is_header_only(), "0.05 deg stays below threshold");
    }

    #[test]
    fn stale_seq_is_ordering_error() {
        let (mut enc, _) = codec_pair();
        let layout = SkeletonLayout::default_21();
        let f = SkeletonFrame::identity(UserId(1), 5, Timestamp::ZERO, &layout);
        enc.encode(&f).unwrap();
        let err = enc.encode(&f).unwrap_err();
        assert!(matches!(err, Error::Ordering(_)));
    }

    #[test]
    fn header_only_decodes_to_previous_frame() {
        let (mut enc, mut dec) = codec_pair();
        let layout = SkeletonLayout::default_21();
        let f0 = SkeletonFrame::identity(UserId(1), 0, Timestamp::ZERO, &layout);
        let d0 = dec.decode(&enc.encode(&f0).unwrap()).unwrap();
        let f1 = SkeletonFrame::identity(UserId(1), 1, Timestamp::from_millis(10), &layout);
        let d1 = dec.decode(&enc.encode(&f1).unwrap()).unwrap();
        assert_eq!(d1.joints, d0.joints);
        assert_eq!(d1.seq, 1);
        assert_eq!(d1.t, Timestamp::from_millis(10));
    }

    #[test]
    fn random_trace_round_trip_stays_within_bounds() {
        let (mut enc, mut dec) = codec_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seq in 0..500u32 {
            let frame = random_frame(UserId(1), seq, Timestamp::from_millis(seq as u64 * 10), 21, &mut rng);
            let decoded = dec.decode(&enc.encode(&frame).unwrap()).unwrap();
            for (orig, got) in frame.joints.iter().zip(&decoded.joints) {
                let rot_err = angular_distance_unchecked(&orig.rotation, &got.rotation);
                let pos_err = orig.position.distance(&got.position);
                assert!(rot_err <= 0.2, "rotation error {rot_err} at seq {seq}");
                assert!(pos_err <= 0.0015, "position error {pos_err} at seq {seq}");
            }
        }
    }

    #[test]
    fn out_of_range_joint_id_is_decode_error() {
        let (mut enc, mut dec) = codec_pair();
        let layout = SkeletonLayout::default_21();
        let f0 = SkeletonFrame::identity(UserId(1), 0, Timestamp::ZERO, &layout);
        let encoded = enc.encode(&f0).unwrap();
        let mut bytes = encoded.to_bytes(enc.profile());
        // First record's joint id sits right after the header.
        bytes[HEADER_BYTES] = 99;
        let err = dec.decode_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Decode(_)), "got {err:?}");
    }

    #[test]
    fn truncated_payload_is_decode_error() {
        let (mut enc, mut dec) = codec_pair();
        let layout = SkeletonLayout::default_21();
        let f0 = SkeletonFrame::identity(UserId(1), 0, Timestamp::ZERO, &layout);
        let bytes = enc.encode(&f0).unwrap().to_bytes(enc.profile());
        let err = dec.decode_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Decode(_)));
    }

    #[test]
    fn out_of_order_decode_is_ordering_error() {
        let (mut enc, mut dec) = codec_pair();
        let layout = SkeletonLayout::default_21();
        let f0 = SkeletonFrame::identity(UserId(1), 3, Timestamp::ZERO, &layout);
        let e0 = enc.encode(&f0).unwrap();
        dec.decode(&e0).unwrap();
        let err = dec.decode(&e0).unwrap_err();
        assert!(matches!(err, Error::Ordering(_)));
    }

    #[test]
    fn wire_round_trip_matches_struct() {
        let (mut enc, _) = codec_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let frame = random_frame(UserId(7), 0, Timestamp::from_millis(1), 21, &mut rng);
        let encoded = enc.encode(&frame).unwrap();
        let bytes = encoded.to_bytes(enc.profile());
        assert_eq!(bytes.len(), encoded.serialized_size(enc.profile()));
        let parsed = EncodedFrame::from_bytes(&bytes, &CodecConfig::default()).unwrap();
        assert_eq!(parsed, encoded);
    }

    #[test]
    fn sizes_match_documented_layout() {
        let layout = SkeletonLayout::default_21();
        assert_eq!(uncompressed_size(&layout), 15 + 21 * 28);
        let (mut enc, _) = codec_pair();
        let f0 = SkeletonFrame::identity(UserId(1), 0, Timestamp::ZERO, &layout);
        let full = enc.encode(&f0).unwrap();
        assert_eq!(full.serialized_size(enc.profile()), 15 + 21 * 12);
    }

    #[test]
    fn uncompressed_mode_emits_all_joints_full_resolution() {
        let layout = SkeletonLayout::default_21();
        let mut enc = Encoder::new(CodecConfig::uncompressed(), layout.clone()).unwrap();
        let mut dec = Decoder::new(CodecConfig::uncompressed(), layout.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for seq in 0..10u32 {
            let frame = random_frame(UserId(2), seq, Timestamp::from_millis(seq as u64), 21, &mut rng);
            let encoded = enc.encode(&frame).unwrap();
            assert_eq!(encoded.joint_count(), 21);
            assert_eq!(
                encoded.serialized_size(enc.profile()),
                uncompressed_size(&layout)
            );
            let decoded = dec.decode(&encoded).unwrap();
            for (orig, got) in frame.joints.iter().zip(&decoded.joints) {
                assert!(orig.position.distance(&got.position) < 1e-5);
                assert!(angular_distance_unchecked(&orig.rotation, &got.rotation) < 1e-4);
            }
        }
    }

    #[test]
    fn position_escape_round_trips_large_jumps() {
        let (mut enc, mut dec) = codec_pair();
        let layout = SkeletonLayout::default_21();
        let f0 = SkeletonFrame::identity(UserId(1), 0, Timestamp::ZERO, &layout);
        dec.decode(&enc.encode(&f0).unwrap()).unwrap();
        let mut f1 = SkeletonFrame::identity(UserId(1), 1, Timestamp::from_millis(10), &layout);
        // 40 m exceeds the i16 offset range at 0.5 mm resolution.
        f1.joints[0].position = Position {
            x: 40.0,
            y: -25.0,
            z: 3.0,
        };
        let e1 = enc.encode(&f1).unwrap();
        assert_eq!(
            e1.serialized_size(enc.profile()),
            HEADER_BYTES + enc.profile().delta_joint_bytes(true)
        );
        let d1 = dec.decode(&e1).unwrap();
        assert!(d1.joints[0].position.distance(&f1.joints[0].position) < 1e-4);
    }

    #[test]
    fn encoder_and_decoder_baselines_stay_bit_identical() {
        let (mut enc, mut dec) = codec_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut seq = 0u32;
        for round in 0..200 {
            // Skip some sequence numbers to exercise gaps.
            seq += 1 + (round % 3) as u32;
            let frame = random_frame(UserId(1), seq, Timestamp::from_millis(seq as u64), 21, &mut rng);
            let encoded = enc.encode(&frame).unwrap();
            dec.decode(&encoded).unwrap();
            let eb = enc.state().baseline().unwrap();
            let db = dec.state().baseline().unwrap();
            for (a, b) in eb.iter().zip(db) {
                assert_eq!(a.position, b.position);
                assert_eq!(
                    (a.rotation.w, a.rotation.x, a.rotation.y, a.rotation.z),
                    (b.rotation.w, b.rotation.x, b.rotation.y, b.rotation.z)
                );
            }
        }
    }

    #[test]
    fn compressed_never_larger_than_uncompressed() {
        let (mut enc, _) = codec_pair();
        let layout = SkeletonLayout::default_21();
        let mut rng = ChaCha8Rng::seed_from_u64(555);
        for seq in 0..100u32 {
            let frame = random_frame(UserId(1), seq, Timestamp::from_millis(seq as u64), 21, &mut rng);
            let encoded = enc.encode(&frame).unwrap();
            assert!(encoded.serialized_size(enc.profile()) <= uncompressed_size(&layout));
        }
    }
}
