//! Temporary calibration probe; deleted before release.

use beat_core::attack::AttackConfig;
use beat_core::metrics::{accuracy, attack_success_rate, gradient_analysis};
use beat_core::model::{ModelEval, ModelRef};
use beat_core::skeleton::{synth_generate, GeneratorConfig};
use beat_core::train::beat::{train_beat, BeatTrainerConfig};
use beat_core::train::{train_standard, TrainConfig};
use std::time::Instant;

#[test]
#[ignore]
fn sgd_head_micro() {
    // Can a lone head learn margin amplification at all, with plain SGD on
    // the member cross-entropy? Establishes what the posterior sampler should
    // roughly be able to find.
    use beat_core::model::{AppendedHead, Evaluator};
    let seed = 0u64;
    let gen = GeneratorConfig::default();
    let (train, test) = synth_generate(&gen, seed).unwrap();
    let cfg = TrainConfig { epochs: 30, seed, ..TrainConfig::default() };
    let (base, _) = train_standard(&train, &[64], &cfg).unwrap();
    let mut head = AppendedHead::init(4, 1).unwrap();
    let mut eval = Evaluator::for_member(&base, &head).unwrap();
    let lr = 0.05;
    for step in 0..2000 {
        let mut grad = head.params().filled_like(0.0);
        for s in train.samples() {
            eval.add_head_grad_ce(s.motion.positions(), s.label, &mut grad, 1.0 / train.samples().len() as f64)
                .unwrap();
        }
        let mut p = head.params().clone();
        p.add_scaled(&grad, -lr).unwrap();
        head = AppendedHead::from_params(4, p).unwrap();
        eval.set_head_params(&head).unwrap();
        if step % 400 == 0 || step == 1999 {
            let mut conf = 0.0;
            let mut acc = 0;
            for s in test.samples() {
                let p = eval.probs(s.motion.positions()).unwrap();
                conf += p[s.label];
                if p.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0 == s.label {
                    acc += 1;
                }
            }
            eprintln!(
                "step {step}: mean p_y {:.4} acc {:.3} head norm {:.3}",
                conf / test.samples().len() as f64,
                acc as f64 / test.samples().len() as f64,
                head.params().norm()
            );
        }
    }
}

#[test]
#[ignore]
fn noise_aug_micro() {
    // Capacity question: trained on noise-augmented cross-entropy with plain
    // SGD, can a lone head move the input-space decision boundary outward at
    // all, or is the logit bottleneck rigid?
    use beat_core::model::{AppendedHead, Evaluator};
    use beat_core::rng::derived_rng;
    use rand::Rng as _;
    let seed = 0u64;
    let envf = |k: &str, d: f64| std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d);
    let b = envf("NOISE_B", 0.03);
    let lr = envf("LR", 0.05);
    let steps = envf("STEPS", 2000.0) as usize;
    let gen = GeneratorConfig::default();
    let (train, test) = synth_generate(&gen, seed).unwrap();
    let cfg = TrainConfig { epochs: 30, seed, ..TrainConfig::default() };
    let (base, _) = train_standard(&train, &[64], &cfg).unwrap();

    let mut base_eval = ModelEval::from_ref(ModelRef::Base(&base)).unwrap();
    let long = AttackConfig { iterations: 400, step_size: 0.002, seed, ..AttackConfig::default() };
    let (a, _) = attack_success_rate(&mut base_eval, &test, None, &long).unwrap();
    eprintln!("margin probe base: asr {} mean first-flip iter {:.1}", a.rate, a.mean_iterations);

    let mut head = AppendedHead::init(4, 1).unwrap();
    let mut eval = Evaluator::for_member(&base, &head).unwrap();
    let mut rng = derived_rng(seed, "noise-aug", 0);
    let mut x = Vec::new();
    for step in 0..steps {
        let mut grad = head.params().filled_like(0.0);
        let scale = 1.0 / train.samples().len() as f64;
        for s in train.samples() {
            x.clear();
            x.extend_from_slice(s.motion.positions());
            for v in x.iter_mut() {
                *v += rng.random_range(-b..b);
            }
            eval.add_head_grad_ce(&x, s.label, &mut grad, scale).unwrap();
        }
        let mut p = head.params().clone();
        p.add_scaled(&grad, -lr).unwrap();
        head = AppendedHead::from_params(4, p).unwrap();
        eval.set_head_params(&head).unwrap();
        if step % 500 == 0 || step + 1 == steps {
            let mut conf = 0.0;
            let mut acc = 0;
            for s in test.samples() {
                let p = eval.probs(s.motion.positions()).unwrap();
                conf += p[s.label];
                if p.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0 == s.label {
                    acc += 1;
                }
            }
            eprintln!(
                "step {step}: mean p_y {:.4} acc {:.3} head norm {:.3}",
                conf / test.samples().len() as f64,
                acc as f64 / test.samples().len() as f64,
                head.params().norm()
            );
        }
    }
    let mut meval = ModelEval::Single(eval);
    let (m, _) = attack_success_rate(&mut meval, &test, None, &long).unwrap();
    eprintln!("margin probe member: asr {} mean first-flip iter {:.1}", m.rate, m.mean_iterations);
    for s in [0.002, 0.003, 0.005] {
        let atk = AttackConfig { iterations: 100, step_size: s, seed, ..AttackConfig::default() };
        let (r, _) = attack_success_rate(&mut meval, &test, None, &atk).unwrap();
        eprintln!("member ASR(step {s}): rate {} ({} / {})", r.rate, r.successes, r.attacked);
    }
}

#[test]
#[ignore]
fn sgahmc_head_micro() {
    // Same objective as sgd_head_micro, optimized by the actual SG-AHMC
    // sampler: which of its ingredients blocks learning?
    use beat_core::model::{AppendedHead, Evaluator};
    use beat_core::sampler::{SgahmcConfig, SgahmcState};
    let seed = 0u64;
    let envf = |k: &str, d: f64| std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d);
    let gen = GeneratorConfig::default();
    let (train, test) = synth_generate(&gen, seed).unwrap();
    let cfg = TrainConfig { epochs: 30, seed, ..TrainConfig::default() };
    let (base, _) = train_standard(&train, &[64], &cfg).unwrap();
    let mut head = AppendedHead::init(4, 1).unwrap();
    let mut eval = Evaluator::for_member(&base, &head).unwrap();
    let sg = SgahmcConfig {
        step: envf("SGAHMC_STEP", 0.03),
        friction: envf("SGAHMC_FRICTION", 1e-5),
        ..SgahmcConfig::default()
    };
    let mut state = SgahmcState::new(head.params(), sg).unwrap();
    let mut rng = beat_core::rng::rng_from_seed(7);
    for step in 0..6000 {
        let mut grad = head.params().filled_like(0.0);
        for s in train.samples() {
            eval.add_head_grad_ce(s.motion.positions(), s.label, &mut grad, 1.0 / train.samples().len() as f64)
                .unwrap();
        }
        let mut p = head.params().clone();
        state.step(&mut p, &grad, &mut rng).unwrap();
        head = AppendedHead::from_params(4, p).unwrap();
        eval.set_head_params(&head).unwrap();
        if step % 1000 == 0 || step == 5999 {
            let mut conf = 0.0;
            for s in test.samples() {
                let p = eval.probs(s.motion.positions()).unwrap();
                conf += p[s.label];
            }
            eprintln!(
                "step {step}: mean p_y {:.4} head norm {:.3}",
                conf / test.samples().len() as f64,
                head.params().norm()
            );
        }
    }
}

#[test]
#[ignore]
fn trajectory() {
    // Watch one head's confidence and norm evolve under the full h
    // composition, to see where and why learning stalls.
    use beat_core::model::Evaluator;
    use beat_core::train::beat::BeatTrainer;
    let seed = 0u64;
    let envf = |k: &str, d: f64| std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d);
    let gen = GeneratorConfig::default();
    let (train, test) = synth_generate(&gen, seed).unwrap();
    let cfg = TrainConfig { epochs: 30, seed, ..TrainConfig::default() };
    let (base, _) = train_standard(&train, &[64], &cfg).unwrap();
    let mut beat_cfg = BeatTrainerConfig {
        iterations: envf("BEAT_ITERS", 300.0) as usize,
        heads: 1,
        seed,
        ..BeatTrainerConfig::default()
    };
    beat_cfg.sgahmc.step = envf("SGAHMC_STEP", 0.03);
    beat_cfg.w2 = envf("W2", beat_cfg.w2);
    beat_cfg.w3 = envf("W3", beat_cfg.w3);
    beat_cfg.budget = envf("BUDGET", beat_cfg.budget);
    beat_cfg.sgld.step = envf("SGLD_STEP", beat_cfg.sgld.step);
    let total = beat_cfg.iterations;
    let mut trainer = BeatTrainer::new(base, train.clone(), beat_cfg.clone()).unwrap();
    for it in 0..total {
        trainer.step().unwrap();
        if it % 30 == 0 || it + 1 == total {
            let ens = trainer.ensemble().unwrap();
            let head = &ens.heads()[0];
            let mut me = Evaluator::for_member(ens.base(), head).unwrap();
            let mut conf = 0.0;
            for s in test.samples() {
                let p = me.probs(s.motion.positions()).unwrap();
                conf += p[s.label];
            }
            let w0n = head.params().get("w0").unwrap().data().iter().map(|v| v * v).sum::<f64>().sqrt();
            let w1n = head.params().get("w1").unwrap().data().iter().map(|v| v * v).sum::<f64>().sqrt();
            let b1n = head.params().get("b1").unwrap().data().iter().map(|v| v * v).sum::<f64>().sqrt();
            eprintln!(
                "iter {it}: p_y {:.4} | w0 {:.2} w1 {:.2} b1 {:.2}",
                conf / test.samples().len() as f64,
                w0n,
                w1n,
                b1n
            );
        }
    }
}

#[test]
#[ignore]
fn probe() {
    let seed: u64 = std::env::var("SEED").ok().and_then(|v| v.parse().ok()).unwrap_or(0);
    let beat_iters: usize = std::env::var("BEAT_ITERS").ok().and_then(|v| v.parse().ok()).unwrap_or(200);
    let t0 = Instant::now();
    let gen = GeneratorConfig::default();
    let (train, test) = synth_generate(&gen, seed).unwrap();
    eprintln!("gen: {:?} ({} train / {} test)", t0.elapsed(), train.samples().len(), test.samples().len());

    let t1 = Instant::now();
    let base_epochs =
        std::env::var("BASE_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(30usize);
    let cfg = TrainConfig { epochs: base_epochs, seed, ..TrainConfig::default() };
    let (base, report) = train_standard(&train, &[64], &cfg).unwrap();
    let mut base_eval = ModelEval::from_ref(ModelRef::Base(&base)).unwrap();
    let base_train_acc = accuracy(&mut base_eval, &train).unwrap();
    let base_test_acc = accuracy(&mut base_eval, &test).unwrap();
    eprintln!(
        "base train: {:?}, loss {:?} -> {:?}, train acc {base_train_acc}, test acc {base_test_acc}",
        t1.elapsed(),
        report.epoch_losses.first(),
        report.final_loss()
    );

    let steps = [0.002f64, 0.003, 0.005];
    for &s in &steps {
        let t2 = Instant::now();
        let atk = AttackConfig { iterations: 100, step_size: s, seed, ..AttackConfig::default() };
        let (st_asr, _) = attack_success_rate(&mut base_eval, &test, None, &atk).unwrap();
        eprintln!("ST ASR(step {s}): {:?} rate {} ({} / {})", t2.elapsed(), st_asr.rate, st_asr.successes, st_asr.attacked);
    }

    let t3 = Instant::now();
    let envf = |k: &str, d: f64| std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d);
    let sg_step = envf("SGAHMC_STEP", 0.01);
    let mut beat_cfg = BeatTrainerConfig { iterations: beat_iters, seed, ..BeatTrainerConfig::default() };
    beat_cfg.sgahmc.step = sg_step;
    beat_cfg.sgahmc.friction = envf("SGAHMC_FRICTION", beat_cfg.sgahmc.friction);
    beat_cfg.w2 = envf("W2", beat_cfg.w2);
    beat_cfg.w3 = envf("W3", beat_cfg.w3);
    beat_cfg.budget = envf("BUDGET", beat_cfg.budget);
    beat_cfg.sgld.step = envf("SGLD_STEP", beat_cfg.sgld.step);
    beat_cfg.sgld.noise_std = envf("SGLD_NOISE", beat_cfg.sgld.noise_std);
    beat_cfg.positive_batch = envf("L1", beat_cfg.positive_batch as f64) as usize;
    beat_cfg.negative_batch = envf("L2", beat_cfg.negative_batch as f64) as usize;
    beat_cfg.negative_steps = envf("M1", beat_cfg.negative_steps as f64) as usize;
    beat_cfg.adversary_steps = envf("M2", beat_cfg.adversary_steps as f64) as usize;
    let ensemble = train_beat(&base, &train, &beat_cfg).unwrap();
    eprintln!(
        "beat train ({beat_iters} iters, 5 heads, sigma {sg_step}, F {}, w2 {}, w3 {}, b {}, sgld ({}, {})): {:?}",
        beat_cfg.sgahmc.friction, beat_cfg.w2, beat_cfg.w3, beat_cfg.budget,
        beat_cfg.sgld.step, beat_cfg.sgld.noise_std, t3.elapsed()
    );
    for (i, h) in ensemble.heads().iter().enumerate() {
        eprintln!("  head {i} param norm {:.3}", h.params().norm());
    }
    {
        let mut eval = ModelEval::from_ref(ModelRef::Ensemble(&ensemble)).unwrap();
        let mut conf = 0.0;
        for s in test.samples() {
            let p = eval.probs(s.motion.positions()).unwrap();
            conf += p[s.label];
        }
        eprintln!("  mean BMA true-class prob on test: {:.6}", conf / test.samples().len() as f64);
        for m in 0..ensemble.member_count() {
            let single = ensemble.truncated(1).unwrap();
            let _ = single;
            let mut me = beat_core::model::Evaluator::for_member(ensemble.base(), &ensemble.heads()[m]).unwrap();
            let mut c = 0.0;
            let mut acc = 0usize;
            for s in test.samples() {
                let p = me.probs(s.motion.positions()).unwrap();
                c += p[s.label];
                if p.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0 == s.label {
                    acc += 1;
                }
            }
            eprintln!(
                "  member {m}: mean p_y {:.4} acc {:.3}",
                c / test.samples().len() as f64,
                acc as f64 / test.samples().len() as f64
            );
        }
        // Margin proxy: fine-step long attack; first-flip iteration times step
        // estimates the distance to the decision boundary along attack paths.
        let long = AttackConfig { iterations: 400, step_size: 0.002, seed, ..AttackConfig::default() };
        let (a, _) = attack_success_rate(&mut base_eval, &test, None, &long).unwrap();
        eprintln!("  margin probe ST: asr {} mean first-flip iter {:.1}", a.rate, a.mean_iterations);
        let (b, _) = attack_success_rate(&mut eval, &test, None, &long).unwrap();
        eprintln!("  margin probe BEAT-5: asr {} mean first-flip iter {:.1}", b.rate, b.mean_iterations);
    }

    for n in [1usize, 3, 5] {
        let t = Instant::now();
        let trunc = ensemble.truncated(n).unwrap();
        let mut eval = ModelEval::from_ref(ModelRef::Ensemble(&trunc)).unwrap();
        let clean = accuracy(&mut eval, &test).unwrap();
        for &s in &steps {
            let atk = AttackConfig { iterations: 100, step_size: s, seed, ..AttackConfig::default() };
            let (asr, _) = attack_success_rate(&mut eval, &test, None, &atk).unwrap();
            eprintln!("BEAT N={n} step {s}: asr {} ({}/{})", asr.rate, asr.successes, asr.attacked);
        }
        let ga = gradient_analysis(&mut eval, &test, 50, 4, seed).unwrap();
        eprintln!(
            "BEAT N={n}: {:?} clean {clean} median|g| {:.3e} frac<1e-10 {}",
            t.elapsed(),
            ga.median_abs,
            ga.fraction_below_threshold
        );
    }
    let mut ga_eval = ModelEval::from_ref(ModelRef::Base(&base)).unwrap();
    let ga = gradient_analysis(&mut ga_eval, &test, 50, 4, seed).unwrap();
    eprintln!("base median|g| {:.3e} frac<1e-10 {}", ga.median_abs, ga.fraction_below_threshold);
    eprintln!("total {:?}", t0.elapsed());
}
