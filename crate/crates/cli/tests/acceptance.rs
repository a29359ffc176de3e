//! Acceptance suite. Each test prints one `PASS`/`FAIL` line to stdout
//! (bypassing output capture) and the tests run one at a time so the timing
//! criteria are not disturbed by the training runs.

mod support;

use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use dal_cli::{cmd_generate, cmd_train, Precision, RunConfig};
use dal_core::anchors::{cyclic_rank_between, direction_gap, ema_update, init_anchor_bank, AnchorRef};
use dal_core::data::{generate_synthetic, SyntheticConfig};
use dal_core::eval::{cmc_curve, evaluate, mean_average_precision};
use dal_core::linalg::distance_row;
use dal_core::objective::FrozenBatch;
use dal_core::{Ablation, HeadKind, ObjectiveConfig, Rows, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(name: &str, passed: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[{}] {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    let _ = out.flush();
    assert!(passed, "{name}: {detail}");
}

#[test]
fn benchmark_numbers_not_reproduced() {
    let _g = serial();
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "[NOTE] benchmark re-id accuracy on real video: not reproduced; it needs pretrained CNN backbones and licensed \
         video datasets, so the synthetic property suite in this file stands in for it"
    );
}

#[test]
fn gradient_correctness() {
    let _g = serial();
    let start = Instant::now();
    let cfg = ObjectiveConfig { margin: 0.2, lambda: 1.0, ablation: Ablation::Joint };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut checked, mut excluded, mut attempts) = ([0usize; 3], 0, 0);
    let (mut other, mut source) = (0, 0);
    let mut worst = 0.0f64;
    while checked.iter().any(|&c| c < 40) && attempts < 10_000 {
        let kind = attempts % 3;
        attempts += 1;
        if checked[kind] >= 40 {
            continue;
        }
        let case = random_grad_case(&mut rng, kind);
        match check_grad_case(&case, &cfg, 1e-6) {
            Some(o) if o.active => {
                worst = worst.max(o.report.max_rel_error);
                checked[kind] += 1;
                other += usize::from(o.other_branch);
                source += usize::from(o.source_branch);
            }
            Some(_) => {}
            None => excluded += 1,
        }
    }
    let elapsed = start.elapsed();
    let total: usize = checked.iter().sum();
    let passed = total >= 100 && worst < 1e-4 && elapsed < Duration::from_secs(30) && other > 0 && source > 0;
    report(
        "gradient correctness",
        passed,
        &format!(
            "{total} configs (identity {}, linear {}, one_hidden {}), {excluded} excluded at kinks, \
             batches with t≠p {other}, with t=p {source}; max rel error {worst:.2e} (< 1e-4) in {:.2}s (< 30s)",
            checked[0],
            checked[1],
            checked[2],
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn ema_fixed_point() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pairs = 200;
    let mut worst = 0.0f64;
    for i in 0..pairs {
        let dim = rng.random_range(2..=32);
        let mut x = unit(&gaussian(&mut rng, dim));
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let f: Vec<f64> = if i % 4 == 0 {
            // nearly antipodal
            x.iter().zip(gaussian(&mut rng, dim)).map(|(a, z)| scale * (-a + 1e-3 * z)).collect()
        } else {
            gaussian(&mut rng, dim).into_iter().map(|v| scale * v).collect()
        };
        for _ in 0..50 {
            x = ema_update(&x, &f, 0.5).unwrap();
        }
        worst = worst.max(direction_gap(&x, &f).unwrap());
    }
    report(
        "EMA fixed point",
        worst < 1e-6,
        &format!(
            "{pairs} pairs from unit-norm anchors, 50 updates at η=0.5: max ‖ℓ2(x) − ℓ2(f)‖ = {worst:.2e} (< 1e-6)"
        ),
    );
}

#[test]
fn ranking_oracle_equivalence() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let instances = 200;
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for inst in 0..instances {
        let dim = rng.random_range(1..=32);
        let n = rng.random_range(1..=50);
        let gallery = rows_with_ties(&mut rng, n, dim);
        let q = gaussian(&mut rng, dim);

        let got = distance_row(&q, &gallery).unwrap();
        let want = brute_distances(&q, &gallery);
        for (a, b) in got.distances.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
        if got.order != brute_order(&want) || got.rank1_index != brute_order(&want)[0] {
            failures.push(format!("distance_row #{inst}"));
        }

        let n_peers = rng.random_range(1..=50);
        let peers = rows_with_ties(&mut rng, n_peers, dim);
        let tracklets: Vec<Vec<Rows<f64>>> = [&gallery, &peers]
            .iter()
            .map(|cam| cam.iter().map(|r| Rows::from_rows(&[r.to_vec()]).unwrap()).collect())
            .collect();
        let view = init_anchor_bank(&tracklets, 0.5).unwrap().normalized_view().unwrap();
        let query = rng.random_range(0..n);
        let m = cyclic_rank_between(&view, &view, AnchorRef::new(0, query), 1).unwrap();
        let (p, b, consistent) = brute_cyclic(&gallery, &peers, query);
        if (m.peer.index, m.backward.index, m.consistent) != (p, b, consistent) {
            failures.push(format!("cyclic_rank #{inst}"));
        }
        let fwd = brute_distances(gallery.row(query), &peers)[p];
        worst = worst.max((m.forward_distance - fwd).abs());

        let ids: Vec<u64> = (0..n).map(|_| rng.random_range(0..6)).collect();
        let nq = rng.random_range(1..=10);
        let queries = gaussian_rows(&mut rng, nq, dim);
        let qids: Vec<u64> = (0..nq).map(|_| ids[rng.random_range(0..n)]).collect();
        let cmc = cmc_curve(&queries, &qids, &gallery, &ids).unwrap();
        let cmc_want = brute_cmc(&queries, &qids, &gallery, &ids);
        if cmc.len() != cmc_want.len() {
            failures.push(format!("cmc_curve length #{inst}"));
        }
        for (a, b) in cmc.iter().zip(&cmc_want) {
            worst = worst.max((a - b).abs());
        }
        let map = mean_average_precision(&queries, &qids, &gallery, &ids).unwrap();
        worst = worst.max((map - brute_map(&queries, &qids, &gallery, &ids)).abs());
    }
    let passed = failures.is_empty() && worst <= 1e-12;
    report(
        "ranking oracle equivalence",
        passed,
        &format!(
            "{instances} instances each of distance_row, cyclic_rank, cmc_curve, mean_average_precision \
             (dim ≤ 32, ≤ 50 anchors): {} index mismatches {:?}, max value error {worst:.1e} (≤ 1e-12)",
            failures.len(),
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn counterpart_reduction() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let cfg = ObjectiveConfig::<f64>::default();
    let batches = 60;
    let mut worst = 0.0f64;
    for _ in 0..batches {
        let dim = rng.random_range(2..=16);
        let counts: Vec<usize> = (0..rng.random_range(2..=4)).map(|_| rng.random_range(1..=12)).collect();
        let mut bank = random_bank(&mut rng, &counts, dim, 0.0);
        for _ in 0..rng.random_range(0..20) {
            let k = rng.random_range(0..counts.len());
            let r = AnchorRef::new(k, rng.random_range(0..counts[k]));
            bank.apply_ema(r, &gaussian(&mut rng, dim)).unwrap();
        }
        let b = rng.random_range(1..=64);
        let emb = gaussian_rows(&mut rng, b, dim);
        let sources: Vec<AnchorRef> = (0..b)
            .map(|_| {
                let k = rng.random_range(0..counts.len());
                AnchorRef::new(k, rng.random_range(0..counts[k]))
            })
            .collect();
        let loss = FrozenBatch::prepare(&bank, &emb, &sources).unwrap().evaluate(&emb, &cfg).unwrap();
        worst = worst.max((loss.loss_cross - loss.loss_intra).abs());
        worst = worst.max((loss.loss_total - 2.0 * loss.loss_intra).abs());
    }
    report(
        "counterpart reduction",
        worst <= 1e-9,
        &format!(
            "{batches} batches with every counterpart unmerged: max |L_C − L_I|, |L − 2·L_I| = {worst:.1e} (≤ 1e-9)"
        ),
    );
}

#[test]
fn noiseless_recovery() {
    let _g = serial();
    let start = Instant::now();
    let syn = SyntheticConfig { noise: 0.0, distortion: 0.0, identities: 50, cameras: 2, ..Default::default() };
    let data = generate_synthetic(&syn).unwrap().dataset;
    let frames = &data.frames;
    let labels = data.labels.as_ref().unwrap();
    let cfg = TrainConfig { head: HeadKind::Identity, ..Default::default() };
    let mut trainer = Trainer::<f64>::new(frames, &cfg).unwrap();
    let mut order: Vec<usize> = (0..frames.len()).collect();
    rand::seq::SliceRandom::shuffle(&mut order[..], &mut ChaCha8Rng::seed_from_u64(0));
    for batch in order.chunks(cfg.batch_size) {
        trainer.step_with_batch(frames, batch).unwrap();
    }
    let bank = trainer.bank();
    let assoc = dal_core::eval::association_rate(bank);
    let tmr = dal_core::eval::true_match_rate(bank, labels).unwrap();
    let elapsed = start.elapsed();
    report(
        "noiseless recovery",
        assoc == 1.0 && tmr == 1.0 && elapsed < Duration::from_secs(5),
        &format!(
            "1 epoch ({} iterations), identity head: association_rate {assoc}, true_match_rate {tmr} (both = 1.0) in {:.2}s (< 5s)",
            trainer.iteration(),
            elapsed.as_secs_f64()
        ),
    );
}

/// Trains the default desk-scale run and returns `(cmc[0], true_match_rate)`.
fn train_default(seed: u64, ablation: Ablation, iterations: u64) -> (f64, Option<f64>) {
    let data = generate_synthetic(&SyntheticConfig { seed, ..Default::default() }).unwrap().dataset;
    let run = RunConfig { seed, ablation, max_iter: iterations, ..Default::default() };
    let mut trainer = Trainer::<f32>::new(&data.frames, &run.train()).unwrap();
    for _ in 0..iterations {
        trainer.step(&data.frames).unwrap();
    }
    let ckpt = trainer.checkpoint();
    let r = evaluate(&ckpt.head, &ckpt.bank, &data.frames, data.labels.as_ref().unwrap(), ckpt.iteration).unwrap();
    (r.cmc[0], r.true_match_rate)
}

#[test]
fn noisy_end_to_end_recovery() {
    let _g = serial();
    let ceiling = prototype_ceiling(&generate_synthetic(&SyntheticConfig::default()).unwrap());
    let start = Instant::now();
    let (cmc0, tmr) = train_default(0, Ablation::Joint, 2000);
    let elapsed = start.elapsed();
    let tmr = tmr.unwrap_or(0.0);
    report(
        "noisy end-to-end recovery",
        tmr >= 0.90 && cmc0 >= 0.90 && elapsed < Duration::from_secs(120),
        &format!(
            "default synthetic data, linear head, joint, 2000 iterations, batch 64: true_match_rate {tmr:.4}, \
             cmc[0] {cmc0:.4} (both ≥ 0.90; prototype ceiling {ceiling:.3}, 90% of it {:.3}) in {:.1}s (< 120s)",
            0.9 * ceiling,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn ablation_ordering() {
    let _g = serial();
    let seeds = 0..5u64;
    let mut medians = Vec::new();
    let mut per_seed = Vec::new();
    for ablation in [Ablation::Joint, Ablation::CrossOnly, Ablation::IntraOnly] {
        let mut v: Vec<f64> = seeds.clone().map(|s| train_default(s, ablation, 2000).0).collect();
        per_seed.push(format!("{} {:?}", ablation.as_str(), v));
        medians.push(median(&mut v));
    }
    let (joint, cross, intra) = (medians[0], medians[1], medians[2]);
    report(
        "ablation ordering",
        joint >= cross && cross >= intra,
        &format!(
            "median cmc[0] over 5 seeds: joint {joint:.3} ≥ C_only {cross:.3} ≥ I_only {intra:.3}; per seed: {}",
            per_seed.join(", ")
        ),
    );
}

fn time_ranking(n: usize, queries: &Rows<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let anchors = gaussian_rows(rng, n, queries.dim());
    let mut best = f64::INFINITY;
    for _ in 0..15 {
        let t = Instant::now();
        let mut sink = 0usize;
        for q in queries.iter() {
            sink += distance_row(q, &anchors).unwrap().rank1_index;
        }
        std::hint::black_box(sink);
        best = best.min(t.elapsed().as_secs_f64());
    }
    best / queries.len() as f64
}

#[test]
fn complexity_contract() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let queries = gaussian_rows(&mut rng, 256, 32);
    time_ranking(512, &queries, &mut rng);
    let t512 = time_ranking(512, &queries, &mut rng);
    let t1024 = time_ranking(1024, &queries, &mut rng);
    let ratio = t1024 / t512;
    report(
        "complexity contract",
        ratio <= 2.4,
        &format!(
            "per-frame ranking {:.2}µs at N=512, {:.2}µs at N=1024: ratio {ratio:.3} (≤ 2.4)",
            t512 * 1e6,
            t1024 * 1e6
        ),
    );
}

#[test]
fn determinism_and_persistence() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let base = RunConfig {
        features: dir.path().join("data/features.dalf"),
        manifest: dir.path().join("data/manifest.csv"),
        precision: Precision::F64,
        max_iter: 300,
        eval_every: 20,
        lr_interval: 150,
        seed: 5,
        ..Default::default()
    };
    cmd_generate(&base).unwrap();
    let run = |name: &str, checkpoint_every: u64| {
        let cfg = RunConfig { output_dir: dir.path().join(name), checkpoint_every, ..base.clone() };
        cmd_train(&cfg, None).unwrap();
        cfg
    };
    let a = run("a", 0);
    let b = run("b", 150);
    let read = |cfg: &RunConfig, f: &str| std::fs::read(cfg.output_dir.join(f)).unwrap();
    let same_metrics = read(&a, "metrics.csv") == read(&b, "metrics.csv");
    let same_ckpt = read(&a, "checkpoint.dalc") == read(&b, "checkpoint.dalc");

    let mid = dal_cli::commands::checkpoint_path(&b.output_dir, 150);
    cmd_train(&b, Some(&mid)).unwrap();
    let resumed_metrics = read(&a, "metrics.csv") == read(&b, "metrics.csv");
    let resumed_ckpt = read(&a, "checkpoint.dalc") == read(&b, "checkpoint.dalc");
    report(
        "determinism and persistence",
        same_metrics && same_ckpt && resumed_metrics && resumed_ckpt,
        &format!(
            "64-bit, 300 iterations: repeated run metrics identical {same_metrics}, checkpoint identical {same_ckpt}; \
             resumed at 150: metrics identical {resumed_metrics}, final state identical {resumed_ckpt}"
        ),
    );
}
