//! Shared helpers for unit tests.

use rand::prelude::*;

use crate::model::{Pose, Position, SkeletonFrame, Timestamp, UnitQuaternion, UserId};

pub(crate) fn random_unit_quat(rng: &mut impl Rng) -> UnitQuaternion {
    use rand_distr::StandardNormal;
    loop {
        let w: f64 = rng.sample(StandardNormal);
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        if let Ok(q) = UnitQuaternion::normalize(w, x, y, z) {
            return q;
        }
    }
}

pub(crate) fn random_pose(rng: &mut impl Rng) -> Pose {
    Pose {
        position: Position {
            x: rng.gen_range(-3.0..3.0),
            y: rng.gen_range(0.0..2.5),
            z: rng.gen_range(-3.0..3.0),
        },
        rotation: random_unit_quat(rng),
    }
}

pub(crate) fn random_frame(
    user: UserId,
    seq: u32,
    t: Timestamp,
    joints: usize,
    rng: &mut impl Rng,
) -> SkeletonFrame {
    SkeletonFrame {
        user,
        seq,
        t,
        joints: (0..joints).map(|_| random_pose(rng)).collect(),
    }
}
