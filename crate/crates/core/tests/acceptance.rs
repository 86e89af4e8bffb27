//! One PASS/FAIL line per acceptance criterion. Run with `--nocapture` to
//! see the lines; each test also fails on its own criterion.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use adaco::cli::RunConfig;
use adaco::corrector::{winner_candidates, FrequencyVector};
use adaco::curvefit::{
    detect_correction, eval_curve, eval_derivative, fit_curve, CorrectionSchedule, CurveFitParams, LearningCurve,
};
use adaco::eval::{label_accuracy, miou, ConfusionMatrix};
use adaco::geometry::dbscan;
use adaco::history::PredictionHistory;
use adaco::labelgen::{voxel_vote, Frame, FrameSequence};
use adaco::loss::{
    compose_arl, feature_mse, lovasz_softmax, mae, nce, softmax_ce, LogitsBatch, LossBreakdown, LossConfig,
    LossError, LossValue, Phase,
};
use adaco::scene::{write_label_map, Camera, Intrinsics, LabelMap2D, RigidTransform, UNLABELED};
use adaco::synth::{generate_dataset, SynthConfig};
use adaco::trainer::{predict_scene, train, Method, TrainConfig, TrainSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use common::{brute_vote, oracle_candidates, partition, random_frames, random_instance, reference_dbscan};

// Tolerances and budgets, as stated by the criteria.
const RECOVERY_TOL: f64 = 1e-3;
const NOISY_AMPLITUDE_TOL: f64 = 0.05;
const CURVE_BUDGET: Duration = Duration::from_secs(5);
const TRIGGER_EPOCH_SLACK: usize = 1;
const CONFIDENCE_EXACT_TOL: f64 = 1e-12;
const CONFIDENCE_EXAMPLE_TOL: f64 = 1e-5;
const DBSCAN_BUDGET: Duration = Duration::from_secs(10);
const LOSS_EXAMPLE_TOL: f64 = 1e-6;
const GRAD_REL_TOL: f64 = 1e-4;
const LABEL_GAIN_PTS: f64 = 5.0;
const GOLDEN_TOL_PTS: f64 = 0.5;
const BENCHMARK_BUDGET: Duration = Duration::from_secs(300);
const BENCHMARK_SEED: u64 = 0;
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];

fn report(criterion: u32, pass: bool, detail: &str) {
    println!("{} criterion {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion}: {detail}");
}

fn random_params(rng: &mut ChaCha8Rng) -> CurveFitParams {
    CurveFitParams::new(rng.random_range(0.3..1.0), rng.random_range(0.6..1.4), rng.random_range(2.0..12.0))
}

fn series(p: &CurveFitParams, n: usize) -> Vec<f64> {
    (1..=n).map(|t| eval_curve(p, t as f64)).collect()
}

#[test]
fn criterion_1_curve_fit_recovery() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_param = 0.0f64;
    let mut worst_amp = 0.0f64;
    let mut worst_reach = 1.0;
    for _ in 0..50 {
        let p = random_params(&mut rng);
        let clean = fit_curve(&series(&p, 40)).unwrap();
        worst_param = worst_param.max((clean.a - p.a).abs()).max((clean.b - p.b).abs()).max((clean.c - p.c).abs());
        let noisy: Vec<f64> = series(&p, 40)
            .into_iter()
            .map(|v| (v + rng.random_range(-0.01..=0.01)).clamp(0.0, 1.0))
            .collect();
        let da = (fit_curve(&noisy).unwrap().a - p.a).abs();
        if da > worst_amp {
            worst_amp = da;
            worst_reach = eval_curve(&p, 40.0) / p.a;
        }
    }
    let elapsed = start.elapsed();
    report(
        1,
        worst_param <= RECOVERY_TOL && worst_amp <= NOISY_AMPLITUDE_TOL && elapsed < CURVE_BUDGET,
        &format!(
            "max param error {worst_param:.2e}; max noisy |da| {worst_amp:.4} on a curve at {:.0}% of a by epoch 40; \
             {elapsed:.2?}",
            100.0 * worst_reach
        ),
    );
}

/// Refit after every epoch and stop at the first trigger.
fn online_trigger(values: &[f64], r: f64) -> Option<usize> {
    let mut curve = LearningCurve::new("p");
    for &v in values {
        curve.push(v);
        curve.refit().unwrap();
        if let Ok(Some(t)) = detect_correction(&curve, r, CorrectionSchedule::Once) {
            return Some(t);
        }
    }
    None
}

#[test]
fn criterion_2_trigger_oracle() {
    let anchor = online_trigger(&series(&CurveFitParams::new(0.8, 1.0, 5.0), 40), 0.9);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0usize;
    let mut mismatched = 0;
    for _ in 0..20 {
        let p = random_params(&mut rng);
        let d1 = eval_derivative(&p, 1.0);
        let scan = (1..=60usize).find(|&t| (d1 - eval_derivative(&p, t as f64)).abs() / d1 > 0.9);
        match (scan, online_trigger(&series(&p, 60), 0.9)) {
            (Some(a), Some(b)) => worst = worst.max(a.abs_diff(b)),
            (None, None) => {}
            _ => mismatched += 1,
        }
    }
    report(
        2,
        anchor == Some(13) && worst <= TRIGGER_EPOCH_SLACK && mismatched == 0,
        &format!("(0.8, 1, 5) fires at {anchor:?}; 20 random sets: max offset {worst}, {mismatched} one-sided"),
    );
}

fn confidence_after(rounds: &[u16], k: usize) -> f64 {
    let mut h = PredictionHistory::new(1, k, rounds.len()).unwrap();
    for &r in rounds {
        h.record(&[r]).unwrap();
    }
    h.confidence(0).unwrap()
}

#[test]
fn criterion_3_confidence_and_reliable_set() {
    let unanimous = confidence_after(&[2, 2, 2, 2, 2], 4);
    let uniform = confidence_after(&[0, 1, 2, 3], 4);
    let example = confidence_after(&[1, 1, 1, 2, 2], 4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut monotone = true;
    for _ in 0..100 {
        let (n, k, q) = (rng.random_range(1..30), rng.random_range(2..6), rng.random_range(1..6));
        let mut h = PredictionHistory::new(n, k, 5).unwrap();
        for _ in 0..q {
            let round: Vec<u16> = (0..n).map(|_| rng.random_range(0..k as u16)).collect();
            h.record(&round).unwrap();
        }
        let mut gammas: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        gammas.sort_by(f64::total_cmp);
        for w in gammas.windows(2) {
            let lo = h.reliable_set(w[0]).unwrap();
            let hi = h.reliable_set(w[1]).unwrap();
            monotone &= hi.indices.iter().all(|i| lo.indices.contains(i));
        }
    }
    let pass = (unanimous - 1.0).abs() <= CONFIDENCE_EXACT_TOL
        && uniform.abs() <= CONFIDENCE_EXACT_TOL
        && (example - 0.51454).abs() <= CONFIDENCE_EXAMPLE_TOL
        && monotone;
    report(
        3,
        pass,
        &format!(
            "unanimous {unanimous:.12}, uniform {uniform:.1e}, [1,1,1,2,2]/K=4 {example:.7} (stated 0.51454 ± 1e-5), \
             shrinkage on 100 histories {monotone}"
        ),
    );
}

#[test]
fn criterion_4_dbscan_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let instances: Vec<_> = (0..100).map(|_| random_instance(&mut rng)).collect();
    let start = Instant::now();
    let mut equal = 0;
    for pts in &instances {
        let got = dbscan(pts, 0.6, 5).unwrap();
        equal += usize::from(partition(&got.assignment) == partition(&reference_dbscan(pts, 0.6, 5)));
    }
    let elapsed = start.elapsed();
    report(
        4,
        equal == instances.len() && elapsed < DBSCAN_BUDGET,
        &format!("{equal}/100 partitions identical, {elapsed:.2?} including the reference"),
    );
}

type LossFn = fn(&LogitsBatch) -> Result<LossValue, LossError>;

fn worst_grad_error(rng: &mut ChaCha8Rng) -> f64 {
    let losses: [LossFn; 4] = [softmax_ce, nce, mae, lovasz_softmax];
    let rel = |a: f64, f: f64| (a - f).abs() / a.abs().max(1.0);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(2..6);
        let n = rng.random_range(1..10);
        let logits: Vec<f64> = (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let targets: Vec<u16> = (0..n).map(|_| rng.random_range(0..k as u16)).collect();
        for f in losses {
            let an = f(&LogitsBatch::new(&logits, &targets, k).unwrap()).unwrap().grad;
            for i in 0..logits.len() {
                let at = |d: f64| {
                    let mut z = logits.clone();
                    z[i] += d;
                    f(&LogitsBatch::new(&z, &targets, k).unwrap()).unwrap().value
                };
                worst = worst.max(rel(an[i], (at(h) - at(-h)) / (2.0 * h)));
            }
        }
        let r: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let an = feature_mse(&r, &c).unwrap().grad;
        for i in 0..c.len() {
            let at = |d: f64| {
                let mut z = c.clone();
                z[i] += d;
                feature_mse(&r, &z).unwrap().value
            };
            worst = worst.max(rel(an[i], (at(h) - at(-h)) / (2.0 * h)));
        }
    }
    worst
}

#[test]
fn criterion_5_losses() {
    let two = [0.7f64.ln(), 0.3f64.ln()];
    let y0 = [0u16];
    let b = LogitsBatch::new(&two, &y0, 2).unwrap();
    let nce_v = nce(&b).unwrap().value;
    // the printed 0.22854 is the closed form rounded to five places
    let nce_exact = 0.7f64.ln() / (0.7f64.ln() + 0.3f64.ln());
    let nce_ok = (nce_v - nce_exact).abs() <= LOSS_EXAMPLE_TOL && format!("{nce_v:.5}") == "0.22854";
    let mae_v = mae(&b).unwrap().value;
    let single = [0.6f64.ln(), 0.4f64.ln()];
    let lov1 = lovasz_softmax(&LogitsBatch::new(&single, &y0, 2).unwrap()).unwrap().value;
    let pair = [0.6f64.ln(), 0.4f64.ln(), 0.8f64.ln(), 0.2f64.ln()];
    let lov2 = lovasz_softmax(&LogitsBatch::new(&pair, &[0, 0], 2).unwrap()).unwrap().value;
    let parts = LossBreakdown { ce: 1.0, lovasz: 0.2, mse: 0.0, nce: 0.3, mae: 0.6 };
    let composite = compose_arl(&parts, &LossConfig::default(), Phase::Correction);
    let grad = worst_grad_error(&mut ChaCha8Rng::seed_from_u64(5));
    let pass = nce_ok
        && (mae_v - 0.6).abs() <= LOSS_EXAMPLE_TOL
        && (lov1 - 0.4).abs() <= LOSS_EXAMPLE_TOL
        && (lov2 - 0.4).abs() <= LOSS_EXAMPLE_TOL
        && (composite - 30.81).abs() <= LOSS_EXAMPLE_TOL
        && grad <= GRAD_REL_TOL;
    report(
        5,
        pass,
        &format!(
            "NCE {nce_v:.7}, MAE {mae_v:.7}, Lovasz single {lov1:.7}, Lovasz pair {lov2:.7} (stated 0.4), \
             ARL {composite:.7}, worst gradient rel. error {grad:.1e}"
        ),
    );
}

#[test]
fn criterion_6_voting_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cand_ok = 0;
    for _ in 0..1000 {
        let k = rng.random_range(1..8);
        let counts: Vec<u32> = (0..k).map(|_| rng.random_range(0..40)).collect();
        let omega = rng.random_range(1..6u32);
        let got = winner_candidates(&FrequencyVector { counts: counts.clone() }, omega as f64);
        cand_ok += usize::from(got == oracle_candidates(&counts, omega));
    }
    let mut vote_ok = 0;
    for _ in 0..100 {
        let frames = random_frames(&mut rng);
        let adjacency = rng.random_range(0..3);
        let size = [0.2, 0.5, 1.0][rng.random_range(0..3)];
        let seq = FrameSequence::new(
            frames.iter().cloned().map(|scene| Frame { scene, maps: Vec::new() }).collect(),
            adjacency,
        );
        vote_ok += usize::from(voxel_vote(&seq, size).unwrap() == brute_vote(&frames, adjacency, size));
    }
    report(
        6,
        cand_ok == 1000 && vote_ok == 100,
        &format!("candidate sets {cand_ok}/1000, voxel votes {vote_ok}/100 sequences"),
    );
}

/// Label and model quality of one training run on the desk benchmark.
#[derive(Debug, Clone, Copy)]
struct Outcome {
    noisy_acc: f64,
    refurbished_acc: f64,
    miou: f64,
}

fn benchmark(seed: u64, tweak: impl Fn(&mut TrainConfig)) -> Outcome {
    let synth = SynthConfig { rng_seed: seed, ..SynthConfig::default() };
    let scenes = generate_dataset(&synth, 0).unwrap();
    let samples: Vec<TrainSample> = scenes.iter().map(TrainSample::from_scene).collect();
    let mut cfg = TrainConfig { seed, ..TrainConfig::default() };
    tweak(&mut cfg);
    let out = train(&samples, &cfg).unwrap();
    let (mut noisy, mut refurbished, mut total) = (0, 0, 0);
    let mut cm = ConfusionMatrix::new(synth.num_classes);
    for (s, labels) in scenes.iter().zip(&out.labels) {
        let clean = s.clean_labels.as_ref().unwrap();
        let (a, t) = label_accuracy(clean, &s.noisy_labels).unwrap();
        let (b, _) = label_accuracy(clean, labels).unwrap();
        noisy += a;
        refurbished += b;
        total += t;
        cm.accumulate(clean, &predict_scene(&out.model, s, cfg.cluster_params()).unwrap()).unwrap();
    }
    Outcome {
        noisy_acc: noisy as f64 / total as f64,
        refurbished_acc: refurbished as f64 / total as f64,
        miou: miou(&cm).unwrap().0,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Golden {
    seed: u64,
    label_gain_pts: f64,
    miou_gain_pts: f64,
}

fn golden_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/acceptance_golden.json")
}

#[test]
fn criterion_7_end_to_end_noise_reduction() {
    let start = Instant::now();
    let adaco = benchmark(BENCHMARK_SEED, |_| {});
    let baseline = benchmark(BENCHMARK_SEED, |c| c.method = Method::CeBaseline);
    let elapsed = start.elapsed();
    let label_gain = 100.0 * (adaco.refurbished_acc - adaco.noisy_acc);
    let miou_gain = 100.0 * (adaco.miou - baseline.miou);
    let measured = Golden { seed: BENCHMARK_SEED, label_gain_pts: label_gain, miou_gain_pts: miou_gain };
    if std::env::var_os("ADACO_BLESS").is_some() {
        fs::write(golden_path(), serde_json::to_string_pretty(&measured).unwrap() + "\n").unwrap();
    }
    let golden: Golden = serde_json::from_str(&fs::read_to_string(golden_path()).unwrap()).unwrap();
    let pass = label_gain >= LABEL_GAIN_PTS
        && miou_gain > 0.0
        && (label_gain - golden.label_gain_pts).abs() <= GOLDEN_TOL_PTS
        && (miou_gain - golden.miou_gain_pts).abs() <= GOLDEN_TOL_PTS
        && elapsed < BENCHMARK_BUDGET;
    report(
        7,
        pass,
        &format!(
            "labels {:.4} -> {:.4} (+{label_gain:.2} pts, golden {:.2}); mIoU AdaCo {:.4} vs CE {:.4} \
             ({miou_gain:+.2} pts, golden {:+.2}); {elapsed:.1?}",
            adaco.noisy_acc,
            adaco.refurbished_acc,
            golden.label_gain_pts,
            adaco.miou,
            baseline.miou,
            golden.miou_gain_pts
        ),
    );
}

#[test]
fn criterion_8_ablation_direction() {
    let mean = |tweak: &dyn Fn(&mut TrainConfig)| {
        ABLATION_SEEDS.iter().map(|&s| benchmark(s, tweak).miou).sum::<f64>() / ABLATION_SEEDS.len() as f64
    };
    let once = mean(&|_| {});
    let each_down = mean(&|c| c.corrector.correct_once = false);
    let cap3 = mean(&|c| c.corrector.t_m = 3);
    report(
        8,
        once >= each_down && once >= cap3,
        &format!(
            "mean mIoU over seeds {ABLATION_SEEDS:?}: once {once:.5} vs each-down {each_down:.5}; \
             cap 5 {once:.5} vs cap 3 {cap3:.5}"
        ),
    );
}

fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// synth -> label maps -> labelgen -> train -> evaluate, single-threaded.
fn pipeline(root: &Path, config: &Path) {
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_adaco"))
            .args(["--config", config.to_str().unwrap(), "--seed", "9", "--threads", "1"])
            .args(args)
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    let p = |name: &str| root.join(name).to_str().unwrap().to_owned();
    run(&["synth", "--out", &p("data")]);
    let intr = Intrinsics { fx: 12.0, fy: 12.0, cx: 32.0, cy: 32.0 };
    let down = RigidTransform::from_matrix([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, -1.0, 0.0, 0.0],
        [0.0, 0.0, -1.0, 40.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
    .unwrap();
    for e in fs::read_dir(root.join("data/scenes")).unwrap() {
        let id = e.unwrap().file_name();
        let dir = root.join("maps").join(&id);
        fs::create_dir_all(&dir).unwrap();
        let mut map = LabelMap2D::filled(64, 64, 0, Camera::new(intr, down).unwrap());
        for row in 0..64 {
            for col in 0..64 {
                map.set(col, row, if (row / 8 + col / 8) % 3 == 0 { UNLABELED } else { ((row * 7 + col) % 5) as u16 });
            }
        }
        write_label_map(&dir.join("top.pgm"), &map).unwrap();
    }
    run(&["labelgen", "--scenes", &p("data"), "--maps", &p("maps"), "--dict", "semantickitti", "--out", &p("pseudo")]);
    run(&["train", "--data", &p("data"), "--out", &p("run")]);
    run(&["evaluate", "--data", &p("data"), "--run", &p("run")]);
}

#[test]
fn criterion_9_determinism() {
    let dir = tempfile::tempdir().unwrap();
    // reduced scale; byte identity does not depend on dataset size
    let mut cfg = RunConfig::default();
    cfg.synth.n_scenes = 6;
    cfg.train.epochs = 12;
    let config = dir.path().join("run.toml");
    fs::write(&config, cfg.to_toml()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline(&a, &config);
    pipeline(&b, &config);
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    let differing: Vec<_> = sa
        .iter()
        .zip(&sb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    report(
        9,
        sa.len() == sb.len() && differing.is_empty(),
        &format!("{} files compared across two seeded single-thread runs, {} differ {differing:?}", sa.len(), differing.len()),
    );
}
