//! COCO 17-keypoint joint set shared by the synthetic generator, the pose
//! head and the overlay renderers.

pub const NUM_KEYPOINTS: usize = 17;

pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Left/right joint index pairs swapped under horizontal mirroring.
pub const FLIP_PAIRS: [(usize, usize); 8] = [
    (1, 2),
    (3, 4),
    (5, 6),
    (7, 8),
    (9, 10),
    (11, 12),
    (13, 14),
    (15, 16),
];

/// Limb segments used when rendering figures and pose overlays.
pub const LIMBS: [(usize, usize); 14] = [
    (5, 6),   // shoulders
    (5, 7),   // left upper arm
    (7, 9),   // left forearm
    (6, 8),   // right upper arm
    (8, 10),  // right forearm
    (11, 12), // hips
    (5, 11),  // left torso side
    (6, 12),  // right torso side
    (11, 13), // left thigh
    (13, 15), // left shin
    (12, 14), // right thigh
    (14, 16), // right shin
    (0, 5),   // neck-ish link to left shoulder
    (0, 6),   // neck-ish link to right shoulder
];
