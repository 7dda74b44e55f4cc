//! Evaluation metrics: accuracy, attack success rate, perceptual deviation
//! of adversarial motions, and the expected-gradient analysis that shows
//! why gradient attacks lose their footing against the ensemble.
//!
//! Everything here is deterministic given its seed, and the CSV emitters
//! format floats with the shortest round-trip representation so repeated
//! runs produce byte-identical files.

use crate::attack::{run_attack, AttackConfig, AttackResult};
use crate::error::{Error, Result};
use crate::model::ModelEval;
use crate::rng::derived_rng;
use crate::skeleton::{bone_lengths, frame_derivative, Dataset, Motion};
use serde::{Deserialize, Serialize};

/// Gradient components smaller than this count as vanished.
pub const GRADIENT_VANISH_THRESHOLD: f64 = 1e-10;

/// Format version stamped into every CSV emitted here.
pub const METRICS_CSV_VERSION: u32 = 1;

/// Fraction of dataset samples the model classifies correctly.
pub fn accuracy(model: &mut ModelEval, dataset: &Dataset) -> Result<f64> {
    let samples = dataset.samples();
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot score an empty dataset".into()));
    }
    let mut hits = 0usize;
    for s in samples {
        if model.predict(s.motion.positions())? == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Attack outcome over a dataset. The rate is computed over the samples the
/// model classified correctly before the attack; the others are skipped.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AsrOutcome {
    /// Samples attacked (correctly classified beforehand).
    pub attacked: usize,
    /// Attacks that flipped the prediction.
    pub successes: usize,
    /// `successes / attacked`.
    pub rate: f64,
    /// Mean iterations spent per attacked sample.
    pub mean_iterations: f64,
}

/// Run the configured attack against every correctly classified sample.
/// Each sample gets its own randomness stream derived from the attack seed
/// and the sample's dataset position, so the outcome does not depend on
/// which other samples were attacked. Returns the outcome together with the
/// per-sample results, in dataset order of the attacked samples.
pub fn attack_success_rate(
    model: &mut ModelEval,
    dataset: &Dataset,
    pool: Option<&Dataset>,
    cfg: &AttackConfig,
) -> Result<(AsrOutcome, Vec<AttackResult>)> {
    cfg.validate()?;
    let mut results = Vec::new();
    let mut successes = 0usize;
    let mut iterations = 0usize;
    for (index, s) in dataset.samples().iter().enumerate() {
        if model.predict(s.motion.positions())? != s.label {
            continue;
        }
        let mut rng = derived_rng(cfg.seed, "attack-sample", index as u64);
        let res = run_attack(model, &s.motion, s.label, pool, cfg, &mut rng)?;
        successes += res.success as usize;
        iterations += res.iterations_used;
        results.push(res);
    }
    if results.is_empty() {
        return Err(Error::InvalidArgument(
            "no correctly classified samples to attack".into(),
        ));
    }
    let attacked = results.len();
    Ok((
        AsrOutcome {
            attacked,
            successes,
            rate: successes as f64 / attacked as f64,
            mean_iterations: iterations as f64 / attacked as f64,
        },
        results,
    ))
}

/// Perceptual deviation of one adversarial motion from its clean original.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct PerceptualMetrics {
    /// Mean joint position deviation (per frame and joint).
    pub joint_deviation: f64,
    /// Mean deviation of per-joint acceleration (second frame difference).
    pub acceleration_deviation: f64,
    /// Mean deviation of bone-swing angular acceleration.
    pub angular_acceleration_deviation: f64,
    /// Mean relative bone-length deviation, in percent.
    pub bone_length_deviation_pct: f64,
}

fn joint_norm(buf: &[f64], row: usize, joint: usize, j3: usize) -> [f64; 3] {
    let i = row * j3 + joint * 3;
    [buf[i], buf[i + 1], buf[i + 2]]
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Angle sequence of one bone's direction change between consecutive
/// frames; zero-length directions contribute a zero angle.
fn swing_angles(motion: &Motion, bone: (usize, usize)) -> Vec<f64> {
    let j3 = motion.joint_count() * 3;
    let buf = motion.positions();
    let dir = |m: usize| -> Option<[f64; 3]> {
        let a = joint_norm(buf, m, bone.0, j3);
        let b = joint_norm(buf, m, bone.1, j3);
        let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        (n > 0.0).then(|| [d[0] / n, d[1] / n, d[2] / n])
    };
    (0..motion.frames() - 1)
        .map(|m| match (dir(m), dir(m + 1)) {
            (Some(u), Some(v)) => {
                let dot = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]).clamp(-1.0, 1.0);
                dot.acos()
            }
            _ => 0.0,
        })
        .collect()
}

/// Compare an adversarial motion against its clean original. Fails if the
/// motions are incomparable or if the clean motion contains a degenerate
/// (zero-length) bone, which would make the relative bone metric undefined.
pub fn perceptual_metrics(clean: &Motion, adv: &Motion) -> Result<PerceptualMetrics> {
    if clean.topology().as_ref() != adv.topology().as_ref() || clean.frames() != adv.frames() {
        return Err(Error::ShapeMismatch {
            op: "perceptual_metrics",
            details: "motions must share topology and frame count".into(),
        });
    }
    let (m, j) = (clean.frames(), clean.joint_count());
    let j3 = j * 3;

    let mut joint_dev = 0.0;
    for row in 0..m {
        for joint in 0..j {
            joint_dev += dist3(
                joint_norm(clean.positions(), row, joint, j3),
                joint_norm(adv.positions(), row, joint, j3),
            );
        }
    }
    joint_dev /= (m * j) as f64;

    let acc_clean = frame_derivative(clean, 2)?;
    let acc_adv = frame_derivative(adv, 2)?;
    let rows = m - 2;
    let mut acc_dev = 0.0;
    for row in 0..rows {
        for joint in 0..j {
            acc_dev += dist3(
                joint_norm(acc_clean.data(), row, joint, j3),
                joint_norm(acc_adv.data(), row, joint, j3),
            );
        }
    }
    acc_dev /= (rows * j) as f64;

    let bones = clean.topology().bones();
    let mut ang_dev = 0.0;
    let mut bone_dev_pct = 0.0;
    if !bones.is_empty() {
        for &bone in bones {
            let a_clean = swing_angles(clean, bone);
            let a_adv = swing_angles(adv, bone);
            // Second difference of the swing-angle sequence.
            for i in 0..a_clean.len().saturating_sub(1) {
                let alpha_clean = a_clean[i + 1] - a_clean[i];
                let alpha_adv = a_adv[i + 1] - a_adv[i];
                ang_dev += (alpha_adv - alpha_clean).abs();
            }
        }
        ang_dev /= (bones.len() * (m - 2)) as f64;

        let bl_clean = bone_lengths(clean);
        let bl_adv = bone_lengths(adv);
        for (c, a) in bl_clean.data().iter().zip(bl_adv.data()) {
            if *c == 0.0 {
                return Err(Error::InvalidArgument(
                    "clean motion has a zero-length bone; relative deviation undefined".into(),
                ));
            }
            bone_dev_pct += (a - c).abs() / c;
        }
        bone_dev_pct *= 100.0 / bl_clean.data().len() as f64;
    }

    Ok(PerceptualMetrics {
        joint_deviation: joint_dev,
        acceleration_deviation: acc_dev,
        angular_acceleration_deviation: ang_dev,
        bone_length_deviation_pct: bone_dev_pct,
    })
}

/// Aggregate perceptual report over many (clean, adversarial) pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerceptualSummary {
    pub mean: PerceptualMetrics,
    pub max: PerceptualMetrics,
    /// Fraction of pairs whose joint deviation reaches `joint_threshold`.
    pub pct_joint_deviation_above: f64,
    /// Fraction of pairs whose bone deviation reaches `bone_threshold_pct`.
    pub pct_bone_deviation_above: f64,
    pub joint_threshold: f64,
    pub bone_threshold_pct: f64,
}

/// Mean/max/threshold aggregation of [`perceptual_metrics`] over pairs.
/// `joint_threshold` is in coordinate units, `bone_threshold_pct` a percent.
pub fn perceptual_summary(
    pairs: &[(&Motion, &Motion)],
    joint_threshold: f64,
    bone_threshold_pct: f64,
) -> Result<PerceptualSummary> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no motion pairs to summarize".into()));
    }
    let mut mean = PerceptualMetrics::default();
    let mut max = PerceptualMetrics::default();
    let mut joint_above = 0usize;
    let mut bone_above = 0usize;
    let n = pairs.len() as f64;
    for (clean, adv) in pairs {
        let p = perceptual_metrics(clean, adv)?;
        mean.joint_deviation += p.joint_deviation / n;
        mean.acceleration_deviation += p.acceleration_deviation / n;
        mean.angular_acceleration_deviation += p.angular_acceleration_deviation / n;
        mean.bone_length_deviation_pct += p.bone_length_deviation_pct / n;
        max.joint_deviation = max.joint_deviation.max(p.joint_deviation);
        max.acceleration_deviation = max.acceleration_deviation.max(p.acceleration_deviation);
        max.angular_acceleration_deviation =
            max.angular_acceleration_deviation.max(p.angular_acceleration_deviation);
        max.bone_length_deviation_pct =
            max.bone_length_deviation_pct.max(p.bone_length_deviation_pct);
        joint_above += (p.joint_deviation >= joint_threshold) as usize;
        bone_above += (p.bone_length_deviation_pct >= bone_threshold_pct) as usize;
    }
    Ok(PerceptualSummary {
        mean,
        max,
        pct_joint_deviation_above: joint_above as f64 / n,
        pct_bone_deviation_above: bone_above as f64 / n,
        joint_threshold,
        bone_threshold_pct,
    })
}

/// Pooled view of loss-gradient components at clean test motions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradientAnalysis {
    /// Raw gradient components from the sampled frames, in sampling order.
    pub components: Vec<f64>,
    /// Median absolute component.
    pub median_abs: f64,
    /// Fraction of components with absolute value below the threshold.
    pub fraction_below_threshold: f64,
    pub threshold: f64,
}

/// Sample `sample_count` dataset motions (without replacement) and collect
/// the loss-gradient components of `frames_per_sample` random frames from
/// each. For an ensemble this is the expected loss gradient — the mean of
/// the member gradients; shrinking components and a growing vanished
/// fraction are the mechanism by which the ensemble blunts gradient
/// attacks.
pub fn gradient_analysis(
    model: &mut ModelEval,
    dataset: &Dataset,
    sample_count: usize,
    frames_per_sample: usize,
    seed: u64,
) -> Result<GradientAnalysis> {
    let samples = dataset.samples();
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot analyze an empty dataset".into()));
    }
    if sample_count == 0 || frames_per_sample == 0 {
        return Err(Error::InvalidArgument(
            "sample_count and frames_per_sample must be >= 1".into(),
        ));
    }
    let mut rng = derived_rng(seed, "grad-analysis", 0);
    let picked = rand::seq::index::sample(&mut rng, samples.len(), sample_count.min(samples.len()));
    let mut components = Vec::new();
    for i in picked.iter() {
        let s = &samples[i];
        let grad = model.loss_input_grad(s.motion.positions(), s.label)?;
        let frames = s.motion.frames();
        let j3 = s.motion.joint_count() * 3;
        let rows =
            rand::seq::index::sample(&mut rng, frames, frames_per_sample.min(frames));
        for row in rows.iter() {
            components.extend_from_slice(&grad[row * j3..(row + 1) * j3]);
        }
    }
    let mut magnitudes: Vec<f64> = components.iter().map(|c| c.abs()).collect();
    magnitudes.sort_by(|a, b| a.partial_cmp(b).expect("gradient magnitudes are comparable"));
    let median_abs = if magnitudes.len() % 2 == 1 {
        magnitudes[magnitudes.len() / 2]
    } else {
        0.5 * (magnitudes[magnitudes.len() / 2 - 1] + magnitudes[magnitudes.len() / 2])
    };
    let below = magnitudes.iter().filter(|m| **m < GRADIENT_VANISH_THRESHOLD).count();
    Ok(GradientAnalysis {
        fraction_below_threshold: below as f64 / magnitudes.len() as f64,
        median_abs,
        components,
        threshold: GRADIENT_VANISH_THRESHOLD,
    })
}

/// Shortest round-trip decimal representation; deterministic across runs.
pub fn format_f64(v: f64) -> String {
    format!("{v}")
}

/// Versioned two-column CSV of named metric values.
pub fn metrics_csv(rows: &[(String, f64)]) -> String {
    let mut out = format!("version,{METRICS_CSV_VERSION}\nmetric,value\n");
    for (name, v) in rows {
        out.push_str(name);
        out.push(',');
        out.push_str(&format_f64(*v));
        out.push('\n');
    }
    out
}

/// Versioned CSV of raw gradient components plus their summary statistics.
pub fn gradient_csv(analysis: &GradientAnalysis) -> String {
    let mut out = format!(
        "version,{METRICS_CSV_VERSION}\nmedian_abs,{}\nfraction_below_threshold,{}\nthreshold,{}\nindex,component\n",
        format_f64(analysis.median_abs),
        format_f64(analysis.fraction_below_threshold),
        format_f64(analysis.threshold),
    );
    for (i, c) in analysis.components.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", format_f64(*c)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelRef;
    use crate::rng::rng_from_seed;
    use crate::skeleton::{synth_generate, GeneratorConfig, SkeletonTopology};
    use crate::train::{train_standard, TrainConfig};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn fixture() -> (crate::model::BaseClassifier, Dataset, Dataset) {
        let gen = GeneratorConfig {
            classes: 3,
            train_per_class: 16,
            test_per_class: 6,
            joints: 4,
            frames: 8,
            noise_std: 0.02,
            rigid: false,
        };
        let (train, test) = synth_generate(&gen, 55).unwrap();
        let cfg = TrainConfig { epochs: 300, seed: 55, ..TrainConfig::default() };
        let (model, _) = train_standard(&train, &[32], &cfg).unwrap();
        (model, train, test)
    }

    #[test]
    fn accuracy_counts_correct_predictions() {
        let (model, train, test) = fixture();
        let mut eval = ModelEval::from_ref(ModelRef::Base(&model)).unwrap();
        let train_acc = accuracy(&mut eval, &train).unwrap();
        assert!(train_acc > 0.9, "fixture should fit its training set, got {train_acc}");
        let test_acc = accuracy(&mut eval, &test).unwrap();
        assert!((0.0..=1.0).contains(&test_acc));
    }

    #[test]
    fn attack_rate_is_deterministic_and_over_correct_samples_only() {
        let (model, _, test) = fixture();
        let mut eval = ModelEval::from_ref(ModelRef::Base(&model)).unwrap();
        let cfg = AttackConfig { step_size: 0.05, iterations: 60, ..AttackConfig::default() };
        let (a, results_a) = attack_success_rate(&mut eval, &test, None, &cfg).unwrap();
        let (b, _) = attack_success_rate(&mut eval, &test, None, &cfg).unwrap();
        assert_eq!(a.successes, b.successes);
        assert_eq!(a.attacked, results_a.len());
        assert!(a.rate > 0.5, "undefended model should mostly fall, rate {}", a.rate);
        let correct = {
            let mut n = 0;
            for s in test.samples() {
                n += (eval.predict(s.motion.positions()).unwrap() == s.label) as usize;
            }
            n
        };
        assert_eq!(a.attacked, correct);
    }

    fn toy_motion(seed: u64, frames: usize) -> Motion {
        let topo = Arc::new(SkeletonTopology::default_toy());
        let mut rng = rng_from_seed(seed);
        let positions =
            (0..frames * topo.joint_count() * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        Motion::new(frames, positions, topo).unwrap()
    }

    #[test]
    fn identical_motions_have_zero_deviation() {
        let m = toy_motion(1, 8);
        let p = perceptual_metrics(&m, &m).unwrap();
        assert_eq!(p.joint_deviation, 0.0);
        assert_eq!(p.acceleration_deviation, 0.0);
        assert_eq!(p.angular_acceleration_deviation, 0.0);
        assert_eq!(p.bone_length_deviation_pct, 0.0);
    }

    #[test]
    fn constant_offset_on_one_joint_matches_hand_computation() {
        let m = toy_motion(2, 8);
        let j = m.joint_count();
        let mut shifted = m.positions().to_vec();
        // Shift joint 3's x coordinate by 0.1 in every frame. Joint 3 is a
        // leaf (foot), so exactly one bone is affected.
        for f in 0..m.frames() {
            shifted[(f * j + 3) * 3] += 0.1;
        }
        let adv = m.with_positions(shifted).unwrap();
        let p = perceptual_metrics(&m, &adv).unwrap();
        // One of J joints moves by exactly 0.1 in every frame.
        assert!((p.joint_deviation - 0.1 / j as f64).abs() < 1e-12);
        // A constant shift leaves all second differences untouched.
        assert_eq!(p.acceleration_deviation, 0.0);
        assert!(p.bone_length_deviation_pct > 0.0);
    }

    #[test]
    fn uniform_bone_stretch_reports_the_right_percentage() {
        // Two frames... need at least 3; scale a motion about joint 0 so
        // every bone grows by exactly 10%.
        let m = toy_motion(3, 6);
        let j3 = m.joint_count() * 3;
        let mut scaled = m.positions().to_vec();
        for f in 0..m.frames() {
            let origin = [scaled[f * j3], scaled[f * j3 + 1], scaled[f * j3 + 2]];
            for joint in 0..m.joint_count() {
                for d in 0..3 {
                    let i = f * j3 + joint * 3 + d;
                    scaled[i] = origin[d] + 1.1 * (scaled[i] - origin[d]);
                }
            }
        }
        let adv = m.with_positions(scaled).unwrap();
        let p = perceptual_metrics(&m, &adv).unwrap();
        assert!(
            (p.bone_length_deviation_pct - 10.0).abs() < 1e-9,
            "expected 10% got {}",
            p.bone_length_deviation_pct
        );
    }

    #[test]
    fn zero_length_clean_bone_is_an_error() {
        let topo = Arc::new(SkeletonTopology::default_toy());
        let n = 6 * topo.joint_count() * 3;
        let clean = Motion::new(6, vec![0.0; n], Arc::clone(&topo)).unwrap();
        let adv = Motion::new(6, vec![0.1; n], topo).unwrap();
        assert!(perceptual_metrics(&clean, &adv).is_err());
    }

    #[test]
    fn summary_aggregates_and_flags_thresholds() {
        let clean = toy_motion(4, 8);
        let mut big = clean.positions().to_vec();
        for v in big.iter_mut() {
            *v += 0.2;
        }
        let adv_big = clean.with_positions(big).unwrap();
        let pairs = vec![(&clean, &clean), (&clean, &adv_big)];
        let s = perceptual_summary(&pairs, 0.1, 10.0).unwrap();
        // Exactly one of the two pairs crosses the joint threshold.
        assert_eq!(s.pct_joint_deviation_above, 0.5);
        assert!(s.max.joint_deviation >= s.mean.joint_deviation);
        assert!(perceptual_summary(&[], 0.1, 10.0).is_err());
    }

    #[test]
    fn gradient_analysis_is_deterministic_and_bounded() {
        let (model, _, test) = fixture();
        let mut eval = ModelEval::from_ref(ModelRef::Base(&model)).unwrap();
        let a = gradient_analysis(&mut eval, &test, 4, 3, 9).unwrap();
        let b = gradient_analysis(&mut eval, &test, 4, 3, 9).unwrap();
        assert_eq!(a.components, b.components);
        assert_eq!(a.components.len(), 4 * 3 * 4 * 3);
        assert!((0.0..=1.0).contains(&a.fraction_below_threshold));
        assert!(a.median_abs >= 0.0);
        let c = gradient_analysis(&mut eval, &test, 4, 3, 10).unwrap();
        assert_ne!(a.components, c.components);
    }

    #[test]
    fn csv_output_is_byte_stable() {
        let rows = vec![("clean_accuracy".to_string(), 0.9625), ("asr".to_string(), 1.0 / 3.0)];
        let a = metrics_csv(&rows);
        let b = metrics_csv(&rows);
        assert_eq!(a, b);
        assert_eq!(
            a,
            "version,1\nmetric,value\nclean_accuracy,0.9625\nasr,0.3333333333333333\n"
        );
        let analysis = GradientAnalysis {
            components: vec![0.5, -0.25],
            median_abs: 0.375,
            fraction_below_threshold: 0.0,
            threshold: GRADIENT_VANISH_THRESHOLD,
        };
        assert_eq!(
            gradient_csv(&analysis),
            "version,1\nmedian_abs,0.375\nfraction_below_threshold,0\nthreshold,0.0000000001\nindex,component\n0,0.5\n1,-0.25\n"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn random_pairs_produce_finite_nonnegative_metrics(seed_a in 0u64..500, seed_b in 0u64..500) {
            let clean = toy_motion(seed_a, 6);
            let adv = toy_motion(seed_b, 6);
            let p = perceptual_metrics(&clean, &adv).unwrap();
            prop_assert!(p.joint_deviation.is_finite() && p.joint_deviation >= 0.0);
            prop_assert!(p.acceleration_deviation.is_finite() && p.acceleration_deviation >= 0.0);
            prop_assert!(
                p.angular_acceleration_deviation.is_finite()
                    && p.angular_acceleration_deviation >= 0.0
            );
            prop_assert!(
                p.bone_length_deviation_pct.is_finite() && p.bone_length_deviation_pct >= 0.0
            );
            if seed_a == seed_b {
                prop_assert_eq!(p.joint_deviation, 0.0);
            }
        }
    }
}
