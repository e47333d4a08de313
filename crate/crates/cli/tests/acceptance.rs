//! End-to-end acceptance checks, one line per criterion.
//!
//! Run with `cargo test -p exprmap-cli --test acceptance`.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use exprmap_core::io::ModelFile;
use exprmap_core::rig::{ANIME_EXPR_DIM, HUMAN_EXPR_DIM, JAW_DIM, KEYPOINT_COUNT};
use exprmap_core::translator::{
    check, gradient_check, loss_between, loss_closure, mean_absolute_error, translation_kdr, Objective, OutputInit,
    TrainOutcome,
};
use exprmap_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{run_pipeline, PipelineSpec, PIPELINE_FILES};

const BLENDSHAPE_TOL: f64 = 1e-12;
const LOSS_IDENTITY_TOL: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-4;
const ADAPTER_TOL: f64 = 1e-8;
/// Held-out MAE bound. A pilot of the exact run below reached 0.0122.
const MAE_THRESHOLD: f64 = 0.02;
const LOSS_DROP: f64 = 0.1;
const KDR_EXACT_TOL: f64 = 1e-10;

const TRAIN_SAMPLES: usize = 8192;
const TEST_SAMPLES: usize = 1024;
const ABLATION_SEEDS: [u64; 3] = [7, 8, 9];

type Outcome = Result<String, String>;

fn check_that(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_rig(rng: &mut ChaCha8Rng, vertices: usize) -> RigSpec<f64> {
    let mut uniform = |n: usize, s: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-s..s)).collect() };
    let template = Mesh::from_flat(&uniform(3 * vertices, 1.0)).unwrap();
    let expr = BlendshapeBasis::new(HUMAN_EXPR_DIM, vertices, uniform(HUMAN_EXPR_DIM * 3 * vertices, 0.1)).unwrap();
    let jaw = BlendshapeBasis::new(JAW_DIM, vertices, uniform(JAW_DIM * 3 * vertices, 0.1)).unwrap();
    let mut idx: Vec<usize> = (0..vertices).collect();
    for i in 0..KEYPOINT_COUNT {
        let j = rng.gen_range(i..vertices);
        idx.swap(i, j);
    }
    idx.truncate(KEYPOINT_COUNT);
    RigSpec::new(
        template,
        expr,
        Some(jaw),
        idx,
        vec![(37, 41), (38, 40), (43, 47), (44, 46)],
        vec![(51, 57), (62, 66)],
    )
    .unwrap()
}

fn c1_blendshape_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rig = random_rig(&mut rng, 200);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let psi: Vec<f64> = (0..HUMAN_EXPR_DIM).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let jaw: Vec<f64> = (0..JAW_DIM).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mesh = synthesize_mesh(&rig, &psi, Some(&jaw)).unwrap();
        let jb = rig.jaw_basis().unwrap();
        for v in 0..rig.vertex_count() {
            for c in 0..3 {
                let mut x = rig.template().vertices()[v][c];
                for (i, &w) in psi.iter().enumerate() {
                    x += w * rig.expr_basis().field(i)[3 * v + c];
                }
                for (k, &w) in jaw.iter().enumerate() {
                    x += w * jb.field(k)[3 * v + c];
                }
                worst = worst.max((mesh.vertices()[v][c] - x).abs());
            }
        }
    }
    check_that(worst <= BLENDSHAPE_TOL, format!("max abs error {worst:.2e} over 1000 trials"))
}

fn c2_loss_identities(rigs: &Rigs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (h, proxy, ad) = (&rigs.human, &rigs.proxy, &rigs.adapter);
    let mut worst_rel = 0.0f64;
    let mut worst_zero = 0.0f64;
    let mut worst_shift = 0.0f64;
    let ps = sample_expressions(1000, 22, 3.0).unwrap();
    for (n, p) in ps.iter().enumerate() {
        let lambda_ver = if n % 2 == 0 { 100.0 } else { rng.gen_range(0.0..1000.0) };
        let model = TranslatorModel::<f64>::init(&[53, 32, 17], n as u64).unwrap();
        let l = translator::loss_total(p, &model, ad, h, proxy, lambda_ver).unwrap();
        let sum = l.l_lm + l.l_closure + lambda_ver * l.l_ver;
        worst_rel = worst_rel.max((l.l_total - sum).abs() / sum.abs().max(f64::MIN_POSITIVE));

        let mesh = synthesize_params(h, p).unwrap();
        let same = loss_between(h, &mesh, &mesh, &LossWeights::default()).unwrap();
        worst_zero = worst_zero.max(same.l_lm.max(same.l_closure).max(same.l_ver).max(same.l_total));

        let other = synthesize_params(h, &ps[(n + 1) % ps.len()]).unwrap();
        let (kp, kt) = (extract_keypoints(h, &mesh).unwrap(), extract_keypoints(h, &other).unwrap());
        let mut shift = || -> [f64; 3] { [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)] };
        let (dp, dt) = (shift(), shift());
        let mv = |k: &[Point3<f64>], d: [f64; 3]| k.iter().map(|x| [x[0] + d[0], x[1] + d[1], x[2] + d[2]]).collect::<Vec<_>>();
        let base = loss_closure(&kp, &kt, h.eyelid_pairs(), h.mouth_pairs()).unwrap();
        let moved = loss_closure(&mv(&kp, dp), &mv(&kt, dt), h.eyelid_pairs(), h.mouth_pairs()).unwrap();
        worst_shift = worst_shift.max((base - moved).abs() / base.max(f64::MIN_POSITIVE));
    }
    check_that(
        worst_rel <= LOSS_IDENTITY_TOL && worst_zero == 0.0 && worst_shift <= LOSS_IDENTITY_TOL,
        format!("composition rel {worst_rel:.2e}, identical-input max {worst_zero:.1e}, translation rel {worst_shift:.2e}"),
    )
}

fn c3_gradient(rigs: &Rigs) -> Outcome {
    let obj = Objective::new(&rigs.human, &rigs.proxy, &rigs.adapter, LossWeights::default()).unwrap();
    let samples = obj.samples(&sample_expressions(8, 33, 3.0).unwrap()).unwrap();
    let model = TrainConfig {
        seed: 3,
        output_init: OutputInit::Uniform,
        ..TrainConfig::default()
    }
    .init_model::<f64>()
    .unwrap();
    let r = gradient_check(&obj, &model, &samples, 100, check::DEFAULT_STEP, 3).map_err(|e| e.to_string())?;
    check_that(
        r.passed(GRAD_TOL),
        format!(
            "max rel error {:.2e} over {} probes (h = {:e}, {} kink draws skipped)",
            r.max_relative_error,
            r.probes.len(),
            check::DEFAULT_STEP,
            r.skipped
        ),
    )
}

/// `(K^T K + lambda I) x = K^T y` by Gaussian elimination with partial pivoting.
fn normal_equations(k: &[Vec<f64>], y: &[f64], lambda: f64) -> Vec<f64> {
    let n = k.len();
    let mut a = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = k[i].iter().zip(&k[j]).map(|(p, q)| p * q).sum::<f64>();
        }
        a[i][i] += lambda;
        a[i][n] = k[i].iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    }
    for c in 0..n {
        let piv = (c..n).max_by(|&p, &q| a[p][c].abs().total_cmp(&a[q][c].abs())).unwrap();
        a.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    (0..n).map(|i| a[i][n] / a[i][i]).collect()
}

fn keypoint_field(rig: &RigSpec<f64>, field: &[f64]) -> Vec<f64> {
    rig.keypoint_indices()
        .iter()
        .flat_map(|&v| [field[3 * v], field[3 * v + 1], field[3 * v + 2]])
        .collect()
}

fn c4_adapter(rigs: &Rigs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base = random_rig(&mut rng, 200);
    let picks: Vec<usize> = (0..ANIME_EXPR_DIM).map(|j| (j * 3 + 2) % HUMAN_EXPR_DIM).collect();
    let fields: Vec<Vec<f64>> = picks.iter().map(|&i| base.expr_basis().field(i).to_vec()).collect();
    let anime = base
        .with_geometry(
            base.template().clone(),
            BlendshapeBasis::from_fields(base.vertex_count(), &fields).unwrap(),
            None,
        )
        .unwrap();
    let fit = fit_pose_adapter(&base, &anime, 0.0).map_err(|e| e.to_string())?;
    let mut sel_err = 0.0f64;
    for (j, &pick) in picks.iter().enumerate() {
        for i in 0..HUMAN_EXPR_DIM {
            let expect = if i == pick { 1.0 } else { 0.0 };
            sel_err = sel_err.max((fit.column(j)[i] - expect).abs());
        }
    }

    let mut ridge_err = 0.0f64;
    for (h, a, lambda) in [(&base, &anime, 1e-3), (&rigs.human, &rigs.anime, 1e-4)] {
        let k: Vec<Vec<f64>> = (0..HUMAN_EXPR_DIM).map(|i| keypoint_field(h, h.expr_basis().field(i))).collect();
        let fit = fit_pose_adapter(h, a, lambda).map_err(|e| e.to_string())?;
        for j in 0..ANIME_EXPR_DIM {
            let y = keypoint_field(a, a.expr_basis().field(j));
            let expect = normal_equations(&k, &y, lambda);
            for (x, e) in fit.column(j).iter().zip(&expect) {
                ridge_err = ridge_err.max((x - e).abs() / e.abs().max(1.0));
            }
        }
    }
    check_that(
        sel_err <= ADAPTER_TOL && ridge_err <= ADAPTER_TOL,
        format!("selection error {sel_err:.2e}, ridge vs normal equations {ridge_err:.2e}"),
    )
}

struct TrainedRun {
    outcome: TrainOutcome<f64>,
    kdr: f64,
    mae: f64,
}

fn train_run(seed: u64, vertex_only: bool) -> TrainedRun {
    let spec = SynthSpec::<f64>::new(seed);
    let (h, a) = make_rig_pair(&spec).unwrap();
    let ad = fit_pose_adapter(&h, &a, adapter::DEFAULT_LAMBDA_REG).unwrap();
    let mut cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    if vertex_only {
        cfg.landmark_weight = 0.0;
        cfg.closure_weight = 0.0;
    }
    let data = sample_expressions(TRAIN_SAMPLES, 100 + seed, cfg.param_range).unwrap();
    let outcome = train(cfg.init_model().unwrap(), &data, &ad, &h, &a, &cfg).expect("training converges");
    let test = sample_expressions(TEST_SAMPLES, 992 + seed, cfg.param_range).unwrap();
    let labels = oracle_labels(&spec, &test);
    let mae = mean_absolute_error(&outcome.model, &test, &labels).unwrap();
    let kdr = translation_kdr(&outcome.model, &h, &a, &test).unwrap().mean;
    TrainedRun { outcome, kdr, mae }
}

fn c5_training(run: &TrainedRun) -> Outcome {
    let h = &run.outcome.history;
    let (first, last) = (h[0].loss.l_total, h[h.len() - 1].loss.l_total);
    let ratio = last / first;
    check_that(
        run.mae < MAE_THRESHOLD && ratio < LOSS_DROP,
        format!(
            "held-out MAE {:.4} (< {MAE_THRESHOLD}), l_total {first:.3} -> {last:.3}, ratio {ratio:.4} (< {LOSS_DROP})",
            run.mae
        ),
    )
}

fn c6_kdr(rigs: &Rigs) -> Outcome {
    let (h, a) = (&rigs.human, &rigs.anime);
    let eyes = EyePairs::new(h.left_eye_pairs().to_vec(), h.right_eye_pairs().to_vec()).unwrap();
    let kp = |m: &Mesh<f64>, r: &RigSpec<f64>| extract_keypoints(r, m).unwrap();
    let nh = h.neutral_keypoints();
    let na = a.neutral_keypoints();
    let ps = sample_expressions(4000, 66, 3.0).unwrap();

    let frames: Vec<Vec<Point3<f64>>> = ps.iter().take(20).map(|p| kp(&synthesize_params(h, p).unwrap(), h)).collect();
    let identical = kdr_sequence(&frames, &frames, &nh, &nh, &eyes).unwrap().mean;

    let anime_at = |b: &[f64]| kp(&synthesize_mesh(a, b, None).unwrap(), a);
    let mut closed = [0.0; ANIME_EXPR_DIM];
    closed[0] = 1.0;
    closed[1] = 1.0;
    let closed_vs_open = kdr_frame(&anime_at(&closed), &na, &na, &na, &eyes).unwrap();

    // Human frames whose lid labels stay in [0.5, 1): the anime pose with lid
    // coefficients 2 (b*_k - 0.5) closes each eye by the same fraction of its
    // own, twice as wide, neutral opening.
    let labels = oracle_labels(&rigs.spec, &ps);
    let (mut driving, mut predicted) = (Vec::new(), Vec::new());
    for (p, b) in ps.iter().zip(&labels) {
        if !(b[0] >= 0.5 && b[0] < 1.0 && b[1] >= 0.5 && b[1] < 1.0) {
            continue;
        }
        let mut pose = *b;
        pose[0] = 2.0 * (b[0] - 0.5);
        pose[1] = 2.0 * (b[1] - 0.5);
        driving.push(kp(&synthesize_params(h, p).unwrap(), h));
        predicted.push(anime_at(&pose));
        if driving.len() == 200 {
            break;
        }
    }
    let scale_kdr = kdr_sequence(&driving, &predicted, &nh, &na, &eyes).unwrap().mean;
    let gap = a.neutral_eye_distance()[0] / h.neutral_eye_distance()[0];
    check_that(
        identical == 0.0 && (closed_vs_open - 1.0).abs() <= KDR_EXACT_TOL && scale_kdr < KDR_EXACT_TOL && !driving.is_empty(),
        format!(
            "identical {identical:.1e}, closed vs open {closed_vs_open:.12}, {gap:.3}x lid rig over {} frames {scale_kdr:.2e}",
            driving.len()
        ),
    )
}

fn c7_ablation(full: &[f64], vertex_only: &[f64]) -> Outcome {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (f, v) = (mean(full), mean(vertex_only));
    check_that(
        v >= f,
        format!("mean held-out KDR vertex-only {v:.4} >= full {f:.4} (per seed full {full:.4?}, vertex-only {vertex_only:.4?})"),
    )
}

fn c8_determinism(seed7: &TrainedRun) -> Outcome {
    let small = PipelineSpec {
        rig_seed: 7,
        vertices: 200,
        train_samples: 256,
        sample_seed: 5,
        test_samples: 64,
        test_seed: 6,
        train_flags: &["--epochs", "3", "--batch-size", "64", "--hidden", "32", "--seed", "1"],
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ka, kb) = (run_pipeline(a.path(), &small), run_pipeline(b.path(), &small));
    let mut differing: Vec<&str> = PIPELINE_FILES
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.path().join(f)).unwrap() != std::fs::read(b.path().join(f)).unwrap())
        .collect();
    if ka != kb {
        differing.push("stdout");
    }

    // Default configuration through the binary must reproduce the in-process seed-7 run.
    let full = PipelineSpec {
        rig_seed: 7,
        vertices: exprmap_core::synth::DEFAULT_VERTEX_COUNT,
        train_samples: TRAIN_SAMPLES,
        sample_seed: 107,
        test_samples: TEST_SAMPLES,
        test_seed: 999,
        train_flags: &["--seed", "7"],
    };
    let d = tempfile::tempdir().unwrap();
    let kdr_text = run_pipeline(d.path(), &full);
    let kdr: f64 = kdr_text.trim().parse().map_err(|e| format!("unparsable KDR `{kdr_text}`: {e}"))?;
    let text = std::fs::read_to_string(d.path().join("model.json")).unwrap();
    let file: ModelFile = serde_json::from_str(&text).unwrap();
    let same_model = file.to_model::<f64>().unwrap() == seed7.outcome.model;
    check_that(
        differing.is_empty() && same_model && kdr == seed7.kdr && kdr.is_finite() && kdr >= 0.0,
        format!(
            "{} pipeline files identical across reruns{}; default-config CLI model matches in-process run: {same_model}; CLI KDR {kdr:.6} vs {:.6}",
            PIPELINE_FILES.len(),
            if differing.is_empty() { String::new() } else { format!(" except {differing:?}") },
            seed7.kdr
        ),
    )
}

struct Rigs {
    spec: SynthSpec<f64>,
    human: RigSpec<f64>,
    anime: RigSpec<f64>,
    proxy: RigSpec<f64>,
    adapter: AdapterMatrix<f64>,
}

fn seed7_rigs() -> Rigs {
    let spec = SynthSpec::<f64>::new(7);
    let (human, anime) = make_rig_pair(&spec).unwrap();
    let proxy = anime_proxy_rig(&human, &anime).unwrap();
    let adapter = fit_pose_adapter(&human, &anime, adapter::DEFAULT_LAMBDA_REG).unwrap();
    Rigs {
        spec,
        human,
        anime,
        proxy,
        adapter,
    }
}

fn report(n: usize, name: &str, start: Instant, outcome: Outcome) -> bool {
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail, pass) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("criterion {n} [{tag}] {name}: {detail} ({secs:.1} s)");
    pass
}

fn main() -> ExitCode {
    let rigs = seed7_rigs();
    let mut pass = true;
    let t = Instant::now();
    pass &= report(1, "blendshape oracle", t, c1_blendshape_oracle());
    let t = Instant::now();
    pass &= report(2, "loss identities", t, c2_loss_identities(&rigs));
    let t = Instant::now();
    pass &= report(3, "gradient check", t, c3_gradient(&rigs));
    let t = Instant::now();
    pass &= report(4, "adapter fit oracle", t, c4_adapter(&rigs));

    let t = Instant::now();
    let runs: Vec<(TrainedRun, TrainedRun)> = ABLATION_SEEDS.iter().map(|&s| (train_run(s, false), train_run(s, true))).collect();
    let seed7 = &runs[0].0;
    pass &= report(5, "training oracle (seed 7)", t, c5_training(seed7));
    let t = Instant::now();
    pass &= report(6, "KDR sanity", t, c6_kdr(&rigs));
    let t = Instant::now();
    let full: Vec<f64> = runs.iter().map(|r| r.0.kdr).collect();
    let vert: Vec<f64> = runs.iter().map(|r| r.1.kdr).collect();
    pass &= report(7, "ablation direction", t, c7_ablation(&full, &vert));
    let t = Instant::now();
    pass &= report(8, "CLI determinism", t, c8_determinism(seed7));

    if pass {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
