use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use exprmap_core::io::{mesh_to_obj, AdapterFile, ModelFile, RigFile};
use exprmap_core::rig::{ANIME_EXPR_DIM, HUMAN_EXPR_DIM, JAW_DIM, KEYPOINT_COUNT, PARAM_DIM};
use exprmap_core::translator::{
    gradient_check, train_with_progress, Objective, OutputInit, TrainConfig, TrainError,
};
use exprmap_core::{
    apply_adapter, extract_keypoints, fit_pose_adapter_with, forward, make_rig_pair, oracle_labels,
    sample_expressions, synthesize_mesh, Error, ExpressionParams, EyePairs, FitTarget, Pair, Point3, RigSpec,
    SynthSpec, TranslatorModel,
};

use crate::table::{check_paths, names, read_json, read_table, write_atomic, write_json, write_table, Table};
use crate::{
    Command, EvalKdrArgs, ExportObjArgs, FitAdapterArgs, FitTargetArg, GenRigArgs, GenSamplesArgs, GradCheckArgs,
    KeypointsArgs, OutputInitArg, TrainArgs, TrainOverrides, TranslateArgs,
};

/// A failure of the numerics rather than of the inputs.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct NumericalFailure(pub String);

/// 2 for numerical failures, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<NumericalFailure>() {
            return 2;
        }
        if let Some(core) = cause.downcast_ref::<Error>() {
            if matches!(core, Error::IllPosed(_) | Error::NonFinite(_)) {
                return 2;
            }
        }
    }
    1
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenRig(a) => gen_rig(a),
        Command::FitAdapter(a) => fit_adapter(a),
        Command::GenSamples(a) => gen_samples(a),
        Command::Train(a) => train(a),
        Command::Translate(a) => translate(a),
        Command::Keypoints(a) => keypoints(a),
        Command::EvalKdr(a) => eval_kdr(a),
        Command::GradCheck(a) => grad_check(a),
        Command::ExportObj(a) => export_obj(a),
    }
}

fn param_columns() -> Vec<String> {
    let mut c = names("psi_", HUMAN_EXPR_DIM);
    c.extend(names("jaw_", JAW_DIM));
    c
}

fn keypoint_columns() -> Vec<String> {
    (0..KEYPOINT_COUNT)
        .flat_map(|k| ["x", "y", "z"].map(|c| format!("kp{k}_{c}")))
        .collect()
}

fn load_rig(path: &Path) -> Result<RigSpec<f64>> {
    let file: RigFile = read_json(path)?;
    file.to_rig().with_context(|| format!("{}: invalid rig", path.display()))
}

fn load_adapter(path: &Path) -> Result<exprmap_core::AdapterMatrix<f64>> {
    let file: AdapterFile = read_json(path)?;
    file.to_adapter().with_context(|| format!("{}: invalid adapter", path.display()))
}

fn load_model(path: &Path) -> Result<TranslatorModel<f64>> {
    let file: ModelFile = read_json(path)?;
    file.to_model().with_context(|| format!("{}: invalid model", path.display()))
}

fn load_params(path: &Path) -> Result<Vec<ExpressionParams<f64>>> {
    let rows = read_table(path)?.select(&param_columns(), path)?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            ExpressionParams::from_vector(r).with_context(|| format!("{}: data row {}", path.display(), i + 1))
        })
        .collect()
}

fn params_table(ps: &[ExpressionParams<f64>]) -> Table {
    let mut t = Table::new(param_columns());
    t.rows = ps.iter().map(|p| p.to_vector().to_vec()).collect();
    t
}

fn keypoints_table(frames: &[Vec<Point3<f64>>]) -> Table {
    let mut t = Table::new(keypoint_columns());
    t.rows = frames.iter().map(|f| f.iter().flatten().copied().collect()).collect();
    t
}

fn load_keypoints(path: &Path) -> Result<Vec<Vec<Point3<f64>>>> {
    let rows = read_table(path)?.select(&keypoint_columns(), path)?;
    Ok(rows
        .iter()
        .map(|r| r.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
        .collect())
}

fn load_single_keypoints(path: &Path) -> Result<Vec<Point3<f64>>> {
    let mut frames = load_keypoints(path)?;
    ensure!(frames.len() == 1, "{}: expected one neutral row, found {}", path.display(), frames.len());
    Ok(frames.remove(0))
}

/// Per-row rig coefficients: `[psi; jaw]` for a rig with a jaw, `b_*` otherwise.
fn rig_coefficients(rig: &RigSpec<f64>, path: &Path) -> Result<Vec<(Vec<f64>, Option<Vec<f64>>)>> {
    let table = read_table(path)?;
    if rig.jaw_basis().is_some() {
        let mut cols = names("psi_", rig.expr_dim());
        cols.extend(names("jaw_", rig.jaw_dim()));
        let rows = table.select(&cols, path)?;
        let e = rig.expr_dim();
        Ok(rows.into_iter().map(|r| (r[..e].to_vec(), Some(r[e..].to_vec()))).collect())
    } else {
        let rows = table.select(&names("b_", rig.expr_dim()), path)?;
        Ok(rows.into_iter().map(|r| (r, None)).collect())
    }
}

fn gen_rig(a: GenRigArgs) -> Result<()> {
    check_paths(&[], &[&a.out_human, &a.out_anime, &a.out_ground_truth])?;
    let spec = SynthSpec::<f64>::with_sizes(a.vertices, a.seed, a.delta_scale)?;
    let (human, anime) = make_rig_pair(&spec)?;
    let mut header = vec!["dim".to_string()];
    header.extend(param_columns());
    let mut gt = Table::new(header);
    gt.rows = spec
        .ground_truth()
        .iter()
        .enumerate()
        .map(|(j, row)| std::iter::once(j as f64).chain(row.iter().copied()).collect())
        .collect();
    write_json(&a.out_human, &RigFile::from_rig(&human))?;
    write_json(&a.out_anime, &RigFile::from_rig(&anime))?;
    write_table(&a.out_ground_truth, &gt)
}

fn fit_adapter(a: FitAdapterArgs) -> Result<()> {
    check_paths(&[&a.human_rig, &a.anime_rig], &[&a.out])?;
    let human = load_rig(&a.human_rig)?;
    let anime = load_rig(&a.anime_rig)?;
    let target = match a.target {
        FitTargetArg::Keypoints => FitTarget::Keypoints,
        FitTargetArg::Vertices => FitTarget::Vertices,
    };
    let adapter = fit_pose_adapter_with(&human, &anime, a.lambda_reg, target)?;
    write_json(&a.out, &AdapterFile::from_adapter(&adapter))
}

fn load_ground_truth(path: &Path) -> Result<SynthSpec<f64>> {
    let rows = read_table(path)?.select(&param_columns(), path)?;
    ensure!(
        rows.len() == ANIME_EXPR_DIM,
        "{}: expected {ANIME_EXPR_DIM} rows, found {}",
        path.display(),
        rows.len()
    );
    let g: Vec<[f64; PARAM_DIM]> = rows
        .iter()
        .map(|r| r.as_slice().try_into().expect("selected PARAM_DIM columns"))
        .collect();
    // only the ground-truth rows matter for labeling
    Ok(SynthSpec::with_sizes(KEYPOINT_COUNT, 0, 0.05)?.with_ground_truth(g)?)
}

fn gen_samples(a: GenSamplesArgs) -> Result<()> {
    let mut outputs = vec![a.out.as_path()];
    outputs.extend(a.out_labels.as_deref());
    let inputs: Vec<&Path> = a.ground_truth.as_deref().into_iter().collect();
    check_paths(&inputs, &outputs)?;
    ensure!(a.n > 0, "--n must be >= 1");
    let ps = if a.zeros {
        vec![ExpressionParams::zero(); a.n]
    } else {
        sample_expressions(a.n, a.seed, a.range)?
    };
    let labels = match (&a.ground_truth, &a.out_labels) {
        (Some(gt), Some(out)) => {
            let spec = load_ground_truth(gt)?;
            let mut t = Table::new(names("b_", ANIME_EXPR_DIM));
            t.rows = oracle_labels(&spec, &ps).iter().map(|b| b.to_vec()).collect();
            Some((out, t))
        }
        _ => None,
    };
    write_table(&a.out, &params_table(&ps))?;
    if let Some((out, t)) = labels {
        write_table(out, &t)?;
    }
    Ok(())
}

pub fn apply_overrides(mut c: TrainConfig, o: &TrainOverrides) -> TrainConfig {
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = o.$f.clone() { c.$f = v; })* };
    }
    set!(epochs, batch_size, learning_rate, lambda_ver, landmark_weight, closure_weight, seed, hidden, leak, param_range);
    if let Some(i) = o.output_init {
        c.output_init = match i {
            OutputInitArg::Zero => OutputInit::Zero,
            OutputInitArg::Uniform => OutputInit::Uniform,
        };
    }
    c
}

fn train(a: TrainArgs) -> Result<()> {
    let mut inputs = vec![a.human_rig.as_path(), a.anime_rig.as_path(), a.adapter.as_path()];
    inputs.extend(a.samples.as_deref());
    inputs.extend(a.config.as_deref());
    let mut outputs = vec![a.out_model.as_path()];
    outputs.extend(a.out_history.as_deref());
    check_paths(&inputs, &outputs)?;

    let base = match &a.config {
        Some(p) => read_json::<TrainConfig>(p)?,
        None => TrainConfig::default(),
    };
    let config = apply_overrides(base, &a.overrides);
    config.validate()?;
    let human = load_rig(&a.human_rig)?;
    let anime = load_rig(&a.anime_rig)?;
    let adapter = load_adapter(&a.adapter)?;
    let data = match (&a.samples, a.gen_samples) {
        (Some(p), _) => load_params(p)?,
        (None, n) => sample_expressions(n.unwrap_or(config.dataset_size), a.sample_seed, config.param_range)?,
    };
    let model = config.init_model()?;
    let quiet = a.quiet;
    let outcome = train_with_progress(model, &data, &adapter, &human, &anime, &config, |r| {
        if !quiet {
            eprintln!("epoch {:>4}  l_total {:.6e}", r.epoch, r.loss.l_total);
        }
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(TrainError::Invalid(e)) => return Err(e.into()),
        Err(e @ TrainError::Diverged { .. }) => return Err(NumericalFailure(e.to_string()).into()),
    };
    write_json(&a.out_model, &ModelFile::from_model(&outcome.model))?;
    if let Some(path) = &a.out_history {
        let mut t = Table::new(["epoch", "l_lm", "l_closure", "l_ver", "l_total"].map(String::from).to_vec());
        t.rows = outcome
            .history
            .iter()
            .map(|r| vec![r.epoch as f64, r.loss.l_lm, r.loss.l_closure, r.loss.l_ver, r.loss.l_total])
            .collect();
        write_atomic(path, history_csv(&t).as_bytes())?;
    }
    Ok(())
}

/// History with an integer epoch column.
fn history_csv(t: &Table) -> String {
    let mut s = t.header.join(",");
    s.push('\n');
    for r in &t.rows {
        s.push_str(&format!("{}", r[0] as usize));
        for &v in &r[1..] {
            s.push(',');
            s.push_str(&crate::table::fmt_float(v));
        }
        s.push('\n');
    }
    s
}

fn translate(a: TranslateArgs) -> Result<()> {
    check_paths(&[&a.model, &a.adapter, &a.input], &[&a.out])?;
    let model = load_model(&a.model)?;
    let adapter = load_adapter(&a.adapter)?;
    let ps = load_params(&a.input)?;
    let mut header = names("b_", ANIME_EXPR_DIM);
    header.extend(names("psi_hat_", HUMAN_EXPR_DIM));
    let mut t = Table::new(header);
    for p in &ps {
        let b = forward(&model, p)?;
        let mut row = b.to_vec();
        row.extend(apply_adapter(&adapter, &b)?);
        t.rows.push(row);
    }
    write_table(&a.out, &t)
}

fn keypoints(a: KeypointsArgs) -> Result<()> {
    check_paths(&[&a.rig, &a.params], &[&a.out])?;
    let rig = load_rig(&a.rig)?;
    let frames = rig_coefficients(&rig, &a.params)?
        .iter()
        .map(|(e, j)| extract_keypoints(&rig, &synthesize_mesh(&rig, e, j.as_deref())?))
        .collect::<exprmap_core::Result<Vec<_>>>()?;
    write_table(&a.out, &keypoints_table(&frames))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsFile {
    pub left_eye: Vec<[usize; 2]>,
    pub right_eye: Vec<[usize; 2]>,
}

fn eval_kdr(a: EvalKdrArgs) -> Result<()> {
    let mut inputs = vec![
        a.driving.as_path(),
        a.predicted.as_path(),
        a.neutral_driving.as_path(),
        a.neutral_predicted.as_path(),
    ];
    inputs.extend(a.pairs.as_deref());
    inputs.extend(a.rig.as_deref());
    let outputs: Vec<&Path> = a.out.as_deref().into_iter().collect();
    check_paths(&inputs, &outputs)?;
    let eyes = match (&a.pairs, &a.rig) {
        (Some(p), _) => {
            let f: PairsFile = read_json(p)?;
            let conv = |v: &[[usize; 2]]| v.iter().map(|&[i, j]| (i, j)).collect::<Vec<Pair>>();
            EyePairs::new(conv(&f.left_eye), conv(&f.right_eye))?
        }
        (None, Some(r)) => {
            let rig = load_rig(r)?;
            EyePairs::new(rig.left_eye_pairs().to_vec(), rig.right_eye_pairs().to_vec())?
        }
        (None, None) => bail!("either --pairs or --rig is required"),
    };
    let driving = load_keypoints(&a.driving)?;
    let predicted = load_keypoints(&a.predicted)?;
    let nd = load_single_keypoints(&a.neutral_driving)?;
    let np = load_single_keypoints(&a.neutral_predicted)?;
    let report = exprmap_core::kdr_sequence(&driving, &predicted, &nd, &np, &eyes)?;
    if let Some(out) = &a.out {
        let mut s = String::from("frame,kdr\n");
        for (i, v) in report.per_frame.iter().enumerate() {
            s.push_str(&format!("{i},{}\n", crate::table::fmt_float(*v)));
        }
        s.push_str(&format!("mean,{}\n", crate::table::fmt_float(report.mean)));
        write_atomic(out, s.as_bytes())?;
    }
    println!("{}", crate::table::fmt_float(report.mean));
    Ok(())
}

fn grad_check(a: GradCheckArgs) -> Result<()> {
    let mut inputs = vec![a.human_rig.as_path(), a.anime_rig.as_path(), a.adapter.as_path()];
    inputs.extend(a.model.as_deref());
    check_paths(&inputs, &[])?;
    let human = load_rig(&a.human_rig)?;
    let anime = load_rig(&a.anime_rig)?;
    let adapter = load_adapter(&a.adapter)?;
    let model = match &a.model {
        Some(p) => load_model(p)?,
        None => TrainConfig {
            seed: a.seed,
            output_init: OutputInit::Uniform,
            ..TrainConfig::default()
        }
        .init_model()?,
    };
    let proxy = exprmap_core::anime_proxy_rig(&human, &anime)?;
    let weights = exprmap_core::LossWeights::with_lambda_ver(a.lambda_ver);
    let objective = Objective::new(&human, &proxy, &adapter, weights)?;
    let samples = objective.samples(&sample_expressions(a.samples, a.seed, exprmap_core::rig::DEFAULT_PARAM_RANGE)?)?;
    let report = gradient_check(&objective, &model, &samples, a.probes, a.step, a.seed)?;
    let passed = report.passed(a.tolerance);
    println!("max_relative_error {:.6e}", report.max_relative_error);
    println!("probes {} skipped {}", report.probes.len(), report.skipped);
    println!("{}", if passed { "PASS" } else { "FAIL" });
    if !passed {
        return Err(NumericalFailure(format!(
            "max relative error {:.3e} exceeds {:.3e}",
            report.max_relative_error, a.tolerance
        ))
        .into());
    }
    Ok(())
}

fn export_obj(a: ExportObjArgs) -> Result<()> {
    check_paths(&[&a.rig, &a.params], &[&a.out])?;
    let rig = load_rig(&a.rig)?;
    let rows = rig_coefficients(&rig, &a.params)?;
    let Some((e, j)) = rows.get(a.row) else {
        bail!("{}: row {} requested, {} rows present", a.params.display(), a.row, rows.len());
    };
    let mesh = synthesize_mesh(&rig, e, j.as_deref())?;
    write_atomic(&a.out, mesh_to_obj(&mesh).as_bytes())
}
