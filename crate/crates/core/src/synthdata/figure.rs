//! Articulated 17-joint stick figure and its per-class joint trajectories.
//!
//! Poses live in figure space: the mid-hip root at the origin, y growing
//! downward, lengths in units of the figure scale. Classes differ only in
//! joint trajectories; the renderer draws the same body for every class.

use std::f64::consts::PI;

/// Motions implemented by the generator; `num_classes` may not exceed this.
pub const NUM_MOTIONS: usize = 6;

pub const MOTION_NAMES: [&str; NUM_MOTIONS] = [
    "raise_arm",
    "wave",
    "squat",
    "walk_in_place",
    "jumping_jack",
    "lean",
];

#[derive(Debug, Clone)]
pub struct MotionParams {
    /// Frames per motion cycle.
    pub period: f64,
    /// Phase offset in frames.
    pub phase: f64,
    /// Amplitude multiplier around 1.
    pub amp: f64,
}

const UPPER_ARM: f64 = 0.20;
const FOREARM: f64 = 0.18;
const THIGH: f64 = 0.26;
const SHIN: f64 = 0.29;
const SHOULDER_Y: f64 = -0.45;
const SHOULDER_X: f64 = 0.17;
const HIP_X: f64 = 0.10;

fn rotate(p: (f64, f64), angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (p.0 * c - p.1 * s, p.0 * s + p.1 * c)
}

/// Arm chain from a shoulder. `theta` is measured from hanging straight
/// down, opening laterally on side `dir` (-1 left, +1 right); `phi` bends
/// the forearm relative to the upper arm.
fn arm(shoulder: (f64, f64), dir: f64, theta: f64, phi: f64) -> ((f64, f64), (f64, f64)) {
    let elbow = (
        shoulder.0 + UPPER_ARM * dir * theta.sin(),
        shoulder.1 + UPPER_ARM * theta.cos(),
    );
    let t2 = theta + phi;
    let wrist = (
        elbow.0 + FOREARM * dir * t2.sin(),
        elbow.1 + FOREARM * t2.cos(),
    );
    (elbow, wrist)
}

/// Leg chain from a hip. `alpha` is the signed thigh angle from vertical
/// (+x swing); `beta` bends the shin relative to the thigh.
fn leg(hip: (f64, f64), alpha: f64, beta: f64) -> ((f64, f64), (f64, f64)) {
    let knee = (hip.0 + THIGH * alpha.sin(), hip.1 + THIGH * alpha.cos());
    let a2 = alpha + beta;
    let ankle = (knee.0 + SHIN * a2.sin(), knee.1 + SHIN * a2.cos());
    (knee, ankle)
}

/// Joint positions of one frame in figure space, COCO order.
pub fn pose_at(class: usize, params: &MotionParams, frame: usize) -> [(f64, f64); 17] {
    assert!(class < NUM_MOTIONS, "unknown motion class {class}");
    let u = 2.0 * PI * (frame as f64 + params.phase) / params.period;
    let a = params.amp;
    let q = (1.0 - u.cos()) / 2.0; // 0 -> 1 -> 0 over one period

    let mut root_y = 0.0;
    let mut torso_tilt = 0.0;
    // Hanging arms and straight legs unless the motion says otherwise.
    let (mut theta_l, phi_l) = (0.06, 0.08);
    let (mut theta_r, mut phi_r) = (0.06, 0.08);
    let (mut alpha_l, mut beta_l) = (0.0, 0.0);
    let (mut alpha_r, mut beta_r) = (0.0, 0.0);

    match class {
        0 => {
            // One arm sweeps from hanging to overhead and back.
            theta_r = 2.6 * a * q;
            phi_r = 0.12;
        }
        1 => {
            // Arm stays up, forearm waves.
            theta_r = 2.4 * a.min(1.08);
            phi_r = 0.75 * a * u.sin();
        }
        2 => {
            // Squat: hips drop, knees bow out, shins compensate.
            root_y = 0.16 * a * q;
            alpha_l = -0.55 * a * q;
            alpha_r = 0.55 * a * q;
            beta_l = 1.0 * a * q;
            beta_r = -1.0 * a * q;
            theta_l = 0.5 * q;
            theta_r = 0.5 * q;
        }
        3 => {
            // March in place: legs anti-phase, arms counter-swing.
            alpha_l = 0.45 * a * u.sin();
            alpha_r = -0.45 * a * u.sin();
            beta_l = 0.35 * a * (-u.sin()).max(0.0);
            beta_r = 0.35 * a * u.sin().max(0.0);
            theta_l = 0.25 + 0.22 * a * u.sin();
            theta_r = 0.25 - 0.22 * a * u.sin();
        }
        4 => {
            // Jumping jack: both arms rise, legs spread.
            theta_l = 2.5 * a * q;
            theta_r = 2.5 * a * q;
            alpha_l = -0.38 * a * q;
            alpha_r = 0.38 * a * q;
            root_y = -0.04 * a * q;
        }
        5 => {
            // Upper body sways side to side about the hips.
            torso_tilt = 0.38 * a * u.sin();
        }
        _ => unreachable!(),
    }

    let hip_l = (-HIP_X, root_y);
    let hip_r = (HIP_X, root_y);

    // Upper-body joints rotate about the root by the tilt.
    let up = |p: (f64, f64)| -> (f64, f64) {
        let r = rotate((p.0, p.1), torso_tilt);
        (r.0, r.1 + root_y)
    };
    let shoulder_l = up((-SHOULDER_X, SHOULDER_Y));
    let shoulder_r = up((SHOULDER_X, SHOULDER_Y));
    let nose = up((0.0, -0.58));
    let eye_l = up((-0.035, -0.62));
    let eye_r = up((0.035, -0.62));
    let ear_l = up((-0.075, -0.595));
    let ear_r = up((0.075, -0.595));

    let (elbow_l, wrist_l) = arm(shoulder_l, -1.0, theta_l, phi_l);
    let (elbow_r, wrist_r) = arm(shoulder_r, 1.0, theta_r, phi_r);
    let (knee_l, ankle_l) = leg(hip_l, alpha_l, beta_l);
    let (knee_r, ankle_r) = leg(hip_r, alpha_r, beta_r);

    [
        nose, eye_l, eye_r, ear_l, ear_r, shoulder_l, shoulder_r, elbow_l, elbow_r, wrist_l,
        wrist_r, hip_l, hip_r, knee_l, knee_r, ankle_l, ankle_r,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poses_are_periodic() {
        let p = MotionParams {
            period: 16.0,
            phase: 3.0,
            amp: 1.0,
        };
        for class in 0..NUM_MOTIONS {
            let a = pose_at(class, &p, 2);
            let b = pose_at(class, &p, 18);
            for (pa, pb) in a.iter().zip(b.iter()) {
                assert!((pa.0 - pb.0).abs() < 1e-9 && (pa.1 - pb.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn classes_differ_in_trajectories() {
        let p = MotionParams {
            period: 16.0,
            phase: 0.0,
            amp: 1.0,
        };
        for c1 in 0..NUM_MOTIONS {
            for c2 in (c1 + 1)..NUM_MOTIONS {
                let mut max_gap = 0.0f64;
                for f in 0..16 {
                    let a = pose_at(c1, &p, f);
                    let b = pose_at(c2, &p, f);
                    for (pa, pb) in a.iter().zip(b.iter()) {
                        max_gap = max_gap.max((pa.0 - pb.0).hypot(pa.1 - pb.1));
                    }
                }
                assert!(max_gap > 0.05, "classes {c1} and {c2} overlap");
            }
        }
    }

    #[test]
    fn motion_is_smooth_between_frames() {
        let p = MotionParams {
            period: 16.0,
            phase: 5.0,
            amp: 1.15,
        };
        for class in 0..NUM_MOTIONS {
            for f in 0..32 {
                let a = pose_at(class, &p, f);
                let b = pose_at(class, &p, f + 1);
                for (pa, pb) in a.iter().zip(b.iter()) {
                    let step = (pa.0 - pb.0).hypot(pa.1 - pb.1);
                    // In figure units; the renderer scales by <= 0.4 frame
                    // height, so 0.25 here stays far below 10% of the
                    // frame diagonal.
                    assert!(step < 0.25, "class {class} frame {f}: step {step}");
                }
            }
        }
    }
}
