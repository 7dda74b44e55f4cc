//! Core data types for skeletal motion.

use crate::autodiff::DenseArray;
use crate::autodiff::to_hex;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;

/// Perceptual-sensitivity class of a joint, used to assign per-joint
/// perturbation budgets (end-effectors tolerate more displacement than the
/// torso before motions look wrong).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetClass {
    Hip,
    Knee,
    Ankle,
    Foot,
    Other,
}

/// A skeleton: joint count, bone list as `(parent, child)` index pairs forming
/// a tree rooted at joint 0, and a budget class per joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonTopology {
    joint_count: usize,
    bones: Vec<(usize, usize)>,
    budget_classes: Vec<BudgetClass>,
}

impl SkeletonTopology {
    /// Validates and builds a topology. The bone list must connect all joints
    /// into a tree rooted at joint 0 (so exactly `joint_count - 1` bones, no
    /// self-loops, every joint reachable from 0).
    pub fn new(
        joint_count: usize,
        bones: Vec<(usize, usize)>,
        budget_classes: Vec<BudgetClass>,
    ) -> Result<Self> {
        if joint_count < 2 {
            return Err(Error::InvalidArgument(format!(
                "topology needs at least 2 joints, got {joint_count}"
            )));
        }
        if budget_classes.len() != joint_count {
            return Err(Error::InvalidArgument(format!(
                "{} budget classes for {} joints",
                budget_classes.len(),
                joint_count
            )));
        }
        if bones.len() != joint_count - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} bones cannot form a spanning tree over {} joints",
                bones.len(),
                joint_count
            )));
        }
        let mut adjacency = vec![Vec::new(); joint_count];
        for &(a, b) in &bones {
            if a >= joint_count || b >= joint_count {
                return Err(Error::InvalidArgument(format!(
                    "bone ({a}, {b}) references a joint outside 0..{joint_count}"
                )));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("bone ({a}, {b}) is a self-loop")));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        // Breadth-first reachability from the root; with J-1 edges, full
        // reachability implies a tree.
        let mut seen = vec![false; joint_count];
        let mut queue = vec![0_usize];
        seen[0] = true;
        while let Some(j) = queue.pop() {
            for &n in &adjacency[j] {
                if !seen[n] {
                    seen[n] = true;
                    queue.push(n);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument(
                "bone list does not connect every joint to the root".into(),
            ));
        }
        Ok(SkeletonTopology { joint_count, bones, budget_classes })
    }

    /// The 8-joint toy skeleton used by the synthetic generator: two
    /// three-segment legs and a torso joint hanging off a root hip.
    pub fn default_toy() -> Self {
        SkeletonTopology::new(
            8,
            vec![(0, 1), (1, 2), (2, 3), (0, 4), (4, 5), (5, 6), (0, 7)],
            vec![
                BudgetClass::Hip,
                BudgetClass::Knee,
                BudgetClass::Ankle,
                BudgetClass::Foot,
                BudgetClass::Knee,
                BudgetClass::Ankle,
                BudgetClass::Foot,
                BudgetClass::Other,
            ],
        )
        .expect("the built-in toy topology is valid")
    }

    /// A simple chain skeleton for arbitrary joint counts: joint `j` hangs off
    /// `j - 1`. Budget classes cycle knee/ankle/foot/other after the root hip.
    pub fn chain(joint_count: usize) -> Result<Self> {
        let bones = (1..joint_count).map(|j| (j - 1, j)).collect();
        let cycle =
            [BudgetClass::Knee, BudgetClass::Ankle, BudgetClass::Foot, BudgetClass::Other];
        let classes = (0..joint_count)
            .map(|j| if j == 0 { BudgetClass::Hip } else { cycle[(j - 1) % cycle.len()] })
            .collect();
        SkeletonTopology::new(joint_count, bones, classes)
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn bones(&self) -> &[(usize, usize)] {
        &self.bones
    }

    pub fn bone_count(&self) -> usize {
        self.bones.len()
    }

    pub fn budget_classes(&self) -> &[BudgetClass] {
        &self.budget_classes
    }

    pub fn budget_class(&self, joint: usize) -> BudgetClass {
        self.budget_classes[joint]
    }

    /// Hex SHA-256 over the structural content, stable across platforms.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.joint_count as u64).to_le_bytes());
        for &(a, b) in &self.bones {
            hasher.update((a as u64).to_le_bytes());
            hasher.update((b as u64).to_le_bytes());
        }
        for c in &self.budget_classes {
            hasher.update([*c as u8]);
        }
        to_hex(&hasher.finalize())
    }
}

/// A motion: `frames x joints x 3` joint positions over a shared topology.
///
/// Positions are stored flat in `(frame, joint, coordinate)` row-major order.
/// Invariants enforced at construction: at least 3 frames, every coordinate
/// finite, buffer length exactly `frames * joints * 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct Motion {
    frames: usize,
    positions: Vec<f64>,
    topology: Arc<SkeletonTopology>,
}

impl Motion {
    pub fn new(frames: usize, positions: Vec<f64>, topology: Arc<SkeletonTopology>) -> Result<Self> {
        if frames < 3 {
            return Err(Error::InvalidArgument(format!(
                "motion needs at least 3 frames, got {frames}"
            )));
        }
        let want = frames * topology.joint_count() * 3;
        if positions.len() != want {
            return Err(Error::ShapeMismatch {
                op: "Motion::new",
                details: format!(
                    "{} frames x {} joints wants {} coordinates, got {}",
                    frames,
                    topology.joint_count(),
                    want,
                    positions.len()
                ),
            });
        }
        if !positions.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("motion positions"));
        }
        Ok(Motion { frames, positions, topology })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joint_count(&self) -> usize {
        self.topology.joint_count()
    }

    pub fn topology(&self) -> &Arc<SkeletonTopology> {
        &self.topology
    }

    /// Flat dimension `frames * joints * 3`.
    pub fn flat_dim(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Mutable access to the raw coordinates. Callers doing iterative
    /// perturbation are responsible for keeping values finite; boundary
    /// constructors re-validate.
    pub fn positions_mut(&mut self) -> &mut [f64] {
        &mut self.positions
    }

    /// One coordinate (`d` in 0..3) of one joint in one frame.
    pub fn coord(&self, frame: usize, joint: usize, d: usize) -> f64 {
        self.positions[(frame * self.joint_count() + joint) * 3 + d]
    }

    /// A copy of this motion with replaced coordinates (same topology/frames).
    pub fn with_positions(&self, positions: Vec<f64>) -> Result<Motion> {
        Motion::new(self.frames, positions, Arc::clone(&self.topology))
    }

    /// Euclidean distance to another motion over the flattened coordinates.
    pub fn l2_to(&self, other: &Motion) -> f64 {
        self.positions
            .iter()
            .zip(&other.positions)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Per-frame bone lengths, shape `(frames, bone_count)`.
pub fn bone_lengths(motion: &Motion) -> DenseArray {
    let topo = motion.topology();
    let (m, bcount) = (motion.frames(), topo.bone_count());
    let mut out = DenseArray::zeros(&[m, bcount]);
    let data = out.data_mut();
    for f in 0..m {
        for (bi, &(a, b)) in topo.bones().iter().enumerate() {
            let mut acc = 0.0;
            for d in 0..3 {
                let diff = motion.coord(f, a, d) - motion.coord(f, b, d);
                acc += diff * diff;
            }
            data[f * bcount + bi] = acc.sqrt();
        }
    }
    out
}

/// Forward-difference derivative of order `k` (0, 1, or 2) along frames,
/// shape `(frames - k, joints, 3)`. Order 0 is the positions themselves.
pub fn frame_derivative(motion: &Motion, order: usize) -> Result<DenseArray> {
    if order > 2 {
        return Err(Error::InvalidArgument(format!(
            "derivative order {order} not supported (0, 1, or 2)"
        )));
    }
    if motion.frames() <= order {
        return Err(Error::InvalidArgument(format!(
            "order-{order} derivative needs more than {order} frames"
        )));
    }
    let (j3, m) = (motion.joint_count() * 3, motion.frames());
    let mut cur = motion.positions().to_vec();
    for _ in 0..order {
        let rows = cur.len() / j3 - 1;
        let mut next = vec![0.0; rows * j3];
        for r in 0..rows {
            for c in 0..j3 {
                next[r * j3 + c] = cur[(r + 1) * j3 + c] - cur[r * j3 + c];
            }
        }
        cur = next;
    }
    DenseArray::from_vec(&[m - order, motion.joint_count(), 3], cur)
}

/// Five-tap Gaussian smoothing along the frame axis with mirror (reflect)
/// padding that does not repeat the edge frame. Requires at least 5 frames.
pub fn temporal_gaussian_filter(motion: &Motion) -> Result<Motion> {
    let m = motion.frames();
    if m < 5 {
        return Err(Error::InvalidArgument(format!(
            "temporal filter needs at least 5 frames, got {m}"
        )));
    }
    // Unit-variance Gaussian sampled at offsets -2..=2, normalized to sum 1.
    let raw: Vec<f64> = (-2..=2).map(|i| (-((i * i) as f64) / 2.0).exp()).collect();
    let total: f64 = raw.iter().sum();
    let kernel: Vec<f64> = raw.iter().map(|w| w / total).collect();

    let j3 = motion.joint_count() * 3;
    let src = motion.positions();
    let mut out = vec![0.0; src.len()];
    for f in 0..m {
        for (tap, w) in kernel.iter().enumerate() {
            let offset = f as i64 + (tap as i64 - 2);
            let idx = mirror_index(offset, m);
            for c in 0..j3 {
                out[f * j3 + c] += w * src[idx * j3 + c];
            }
        }
    }
    motion.with_positions(out)
}

/// Mirror boundary handling: -1 maps to 1, m maps to m-2 (the edge sample is
/// not duplicated).
fn mirror_index(i: i64, m: usize) -> usize {
    let last = (m - 1) as i64;
    let mut x = i;
    loop {
        if x < 0 {
            x = -x;
        } else if x > last {
            x = 2 * last - x;
        } else {
            return x as usize;
        }
    }
}

/// A motion with its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub motion: Motion,
    pub label: usize,
}

/// Which split a dataset belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// A labeled motion dataset over one topology.
#[derive(Clone, Debug)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    class_count: usize,
    topology: Arc<SkeletonTopology>,
    split: Split,
}

impl Dataset {
    /// Validates labels and topology agreement across samples.
    pub fn new(
        samples: Vec<LabeledSample>,
        class_count: usize,
        topology: Arc<SkeletonTopology>,
        split: Split,
    ) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::InvalidArgument(format!(
                "dataset needs at least 2 classes, got {class_count}"
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.label >= class_count {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} has label {} but the dataset has {class_count} classes",
                    s.label
                )));
            }
            if s.motion.topology().as_ref() != topology.as_ref() {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} uses a different topology than the dataset"
                )));
            }
        }
        Ok(Dataset { samples, class_count, topology, split })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn topology(&self) -> &Arc<SkeletonTopology> {
        &self.topology
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Flat input dimension of the samples; errors on an empty dataset.
    pub fn flat_dim(&self) -> Result<usize> {
        self.samples
            .first()
            .map(|s| s.motion.flat_dim())
            .ok_or_else(|| Error::InvalidArgument("empty dataset has no input dimension".into()))
    }
}
