//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain
//! binary so the lines are printed in order and never captured.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use silcomp::autodiff::{Stage, Tape, Tensor};
use silcomp::calibrator::{calibrate, classify_outliers};
use silcomp::dataset::formats::*;
use silcomp::dataset::*;
use silcomp::geometry::{knn, look_at_origin, sq_dist, CameraModel, CameraTransform, PointCloud};
use silcomp::losses::{chamfer_2d, loss_csr, LossVariant, ViewTarget};
use silcomp::metrics::{cd_min_avg, cd_std, chamfer_3d, mmd, reported_cd};
use silcomp::network::{csr_forward, is_csr_param, Ablation, Model, ModelConfig};
use silcomp::pipeline::*;
use silcomp::silhouette::{extract_boundary, Image, SilhouetteImage};

// Gradient check.
const GRAD_H: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error of near-zero gradients.
const GRAD_FLOOR: f64 = 1e-6;
const GRAD_BUDGET: Duration = Duration::from_secs(120);

const ROUND_TRIPS: usize = 1000;
const ROUND_TRIP_TOL: f64 = 1e-9;

const CALIBRATOR_CASES: usize = 200;
const DEPTH_TOL: f64 = 1e-12;
const CALIBRATOR_BUDGET: Duration = Duration::from_secs(30);

const ORACLE_CASES: usize = 200;
const ORACLE_TOL: f64 = 1e-12;

const RECTANGLES: usize = 100;
const BLOBS: usize = 100;

const OVERFIT_STEPS: usize = 500;
const OVERFIT_LR: f64 = 1e-3;
const OVERFIT_PROJ_RATIO: f64 = 0.1;
const OVERFIT_CD_RATIO: f64 = 0.5;
const OVERFIT_BUDGET: Duration = Duration::from_secs(600);

// Desk-scale training for the refinement and calibration trends.
const DESK_TRAIN: usize = 40;
const DESK_TEST: usize = 20;
const DESK_SEED: u64 = 11;
const DESK_M: usize = 1024;
const DESK_EPOCHS_CSR: usize = 30;
const DESK_EPOCHS_VSR: usize = 10;
const IMPROVED_FRACTION: f64 = 0.7;
const CSR_LOSS_RATIO: f64 = 0.1;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn unit_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| [0; 3].map(|_| rng.gen_range(-0.5..0.5))).collect()).unwrap()
}

/// A camera with a random rotation, scale and offset.
fn random_camera(rng: &mut ChaCha8Rng, model: CameraModel) -> CameraTransform {
    let r = Rotation3::from_euler_angles(rng.gen_range(-3.1..3.1), rng.gen_range(-1.5..1.5), rng.gen_range(-3.1..3.1));
    let m = r.matrix();
    let (w, h) = (rng.gen_range(8..200), rng.gen_range(8..200));
    let s = rng.gen_range(5.0..60.0);
    let (cx, cy) = (w as f64 / 2.0 + rng.gen_range(-3.0..3.0), h as f64 / 2.0 + rng.gen_range(-3.0..3.0));
    let d = rng.gen_range(2.0..6.0);
    let rows = match model {
        CameraModel::Orthographic => [
            s * m[(0, 0)], s * m[(0, 1)], s * m[(0, 2)], cx,
            -s * m[(1, 0)], -s * m[(1, 1)], -s * m[(1, 2)], cy,
            -m[(2, 0)], -m[(2, 1)], -m[(2, 2)], d,
            0.0, 0.0, 0.0, 1.0,
        ],
        CameraModel::Perspective => {
            let mut rows = [0.0; 16];
            for c in 0..3 {
                rows[c] = s * m[(0, c)] - cx * m[(2, c)];
                rows[4 + c] = -s * m[(1, c)] - cy * m[(2, c)];
                rows[8 + c] = -m[(2, c)];
            }
            rows[3] = cx * d;
            rows[7] = cy * d;
            rows[11] = d;
            rows[15] = 1.0;
            rows
        }
    };
    CameraTransform::new(rows, model, w, h).unwrap()
}

// ---------------------------------------------------------------- 1

fn toy_sample() -> (Model, PointCloud, Image, Vec<ViewTarget>) {
    let cfg = ModelConfig::toy();
    let data = DatasetConfig { objects: 1, views: 2, m: 64, points: 64, dense: 2048, image_size: 16, seed: 21, ..Default::default() };
    let record = generate_object(&data, 0).unwrap();
    let object = prepare_object("toy", &record, &cfg).unwrap();
    let view = &object.views[0];
    (Model::new(cfg, 21).unwrap(), view.p_in.clone(), view.image.clone(), object.targets.clone())
}

fn csr_loss_and_grads(model: &Model, p_in: &PointCloud, image: &Image, views: &[ViewTarget]) -> (f64, BTreeMap<String, Vec<f64>>, u64) {
    let mut tape = Tape::new();
    let input = tape.constant(p_in.to_tensor()).unwrap();
    // Every parameter trainable: the offset predictor must receive exactly zero.
    let bound = model.params.bind(&mut tape, |_| true).unwrap();
    let out = csr_forward(&mut tape, &bound, &model.config, p_in, image, true).unwrap();
    let loss = loss_csr(&mut tape, views, out.p0, out.p2, out.pc, input, LossVariant::Squared).unwrap();
    let g = tape.backward(loss.total).unwrap();
    (tape.value(loss.total).data()[0], bound.named_gradients(&tape, &g), tape.routing_signature())
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let (model, p_in, image, views) = toy_sample();
    check(p_in.len() == 32 && views.len() == 2 && views[0].points.len() == 64, || "toy sample has the wrong size".into())?;
    let (_, grads, sig) = csr_loss_and_grads(&model, &p_in, &image, &views);
    let (mut checked, mut skipped, mut worst) = (0usize, 0usize, 0.0f64);
    let mut perturbed = model.clone();
    for (name, tensor) in model.params.iter() {
        let g = grads.get(name).ok_or_else(|| format!("no gradient for {name}"))?;
        for i in 0..tensor.len() {
            let x = tensor.data()[i];
            perturbed.params.get_mut(name).unwrap().data_mut()[i] = x + GRAD_H;
            let (lp, _, sp) = csr_loss_and_grads(&perturbed, &p_in, &image, &views);
            perturbed.params.get_mut(name).unwrap().data_mut()[i] = x - GRAD_H;
            let (lm, _, sm) = csr_loss_and_grads(&perturbed, &p_in, &image, &views);
            perturbed.params.get_mut(name).unwrap().data_mut()[i] = x;
            if sp != sig || sm != sig {
                skipped += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * GRAD_H);
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(GRAD_FLOOR);
            check(rel < GRAD_REL_TOL, || format!("{name}[{i}]: analytic {} vs numeric {fd} (rel {rel:.2e})", g[i]))?;
            if !is_csr_param(name) {
                check(g[i] == 0.0 && fd == 0.0, || format!("{name}[{i}] reached by the coarse loss"))?;
            }
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let total = model.params.scalar_count();
    check(checked + skipped == total, || format!("visited {} of {total}", checked + skipped))?;
    check(skipped * 20 < total, || format!("{skipped} of {total} coordinates crossed a kink"))?;
    check(start.elapsed() < GRAD_BUDGET, || format!("took {:?}", start.elapsed()))?;
    Ok(format!("{checked} scalars checked, {skipped} skipped at kinks, worst rel {worst:.2e}, {:.1?}", start.elapsed()))
}

// ---------------------------------------------------------------- 2

fn projection_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for model in [CameraModel::Orthographic, CameraModel::Perspective] {
        for _ in 0..ROUND_TRIPS {
            let n = rng.gen_range(1..64);
            let cloud = unit_cloud(&mut rng, n);
            let cam = random_camera(&mut rng, model);
            let back = ok(cam.back_project(&ok(cam.project(&cloud))?))?;
            for (a, b) in cloud.points().iter().zip(back.points()) {
                let err = (0..3).map(|d| (a[d] - b[d]).abs()).fold(0.0, f64::max);
                worst = worst.max(err);
                check(err < ROUND_TRIP_TOL, || format!("{model:?}: {a:?} came back as {b:?}"))?;
            }
        }
    }
    Ok(format!("{ROUND_TRIPS} orthographic and {ROUND_TRIPS} perspective clouds, max error {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn calibrator_postconditions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut setups = Vec::with_capacity(CALIBRATOR_CASES);
    for case in 0..CALIBRATOR_CASES {
        let kind = ShapeKind::ALL[case % ShapeKind::ALL.len()];
        let dense = ok(gen_shape(&ShapeSpec::random(kind, &mut rng), 4096, case as u64))?;
        let model = if case % 2 == 0 { CameraModel::Orthographic } else { CameraModel::Perspective };
        let size = rng.gen_range(24..72);
        let cam = ok(look_at_origin(rng.gen_range(0.0..360.0), rng.gen_range(-60.0..60.0), 3.0, (size, size), model))?;
        let sil = ok(render_silhouette(&dense, &cam, ok(default_splat_radius(&dense, &cam))?))?;
        // A distorted prediction: random scale, shift and noise.
        let s = rng.gen_range(0.6..1.8);
        let shift = [0; 3].map(|_| rng.gen_range(-0.2..0.2));
        let noisy: Vec<[f64; 3]> =
            dense.points()[..512].iter().map(|p| [0, 1, 2].map(|d| s * p[d] + shift[d] + rng.gen_range(-0.05..0.05))).collect();
        setups.push((ok(PointCloud::new(noisy))?, cam, sil));
    }
    let start = Instant::now();
    let mut moved = 0;
    for (cloud, cam, sil) in &setups {
        let before = ok(cam.project(cloud))?;
        let outliers = classify_outliers(&before, sil).indices;
        let (out, report) = ok(calibrate(cloud, cam, sil))?;
        check(report.k_after == 0, || format!("K_after = {}", report.k_after))?;
        check(report.k_before == outliers.len(), || "K_before disagrees with the outlier set".into())?;
        let after = ok(cam.project(&out))?;
        for i in 0..cloud.len() {
            if outliers.binary_search(&i).is_ok() {
                let dz = (after.coords[i][2] - before.coords[i][2]).abs();
                check(dz <= DEPTH_TOL, || format!("point {i} depth moved by {dz:.2e}"))?;
            } else {
                check(out.points()[i] == cloud.points()[i], || format!("inner point {i} changed"))?;
            }
        }
        let (again, second) = ok(calibrate(&out, cam, sil))?;
        check(again == out && second.k_before == 0, || "calibration is not idempotent".into())?;
        moved += outliers.len();
    }
    let took = start.elapsed();
    check(took < CALIBRATOR_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("{CALIBRATOR_CASES} cases, {moved} points snapped, {took:.1?}"))
}

// ---------------------------------------------------------------- 4

fn brute_one_sided<const D: usize>(a: &[[f64; D]], b: &[[f64; D]], variant: LossVariant) -> f64 {
    let sum: f64 = a
        .iter()
        .map(|p| {
            let d = b.iter().map(|q| sq_dist(p, q)).fold(f64::INFINITY, f64::min);
            match variant {
                LossVariant::Squared => d,
                LossVariant::Unsquared => d.sqrt(),
            }
        })
        .sum();
    sum / a.len() as f64
}

fn brute_knn<const D: usize>(q: &[f64; D], refs: &[[f64; D]], k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = refs.iter().enumerate().map(|(i, r)| (sq_dist(q, r), i)).collect();
    order.sort_by(|a, b| a.partial_cmp(b).unwrap());
    order.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Random points, on a coarse lattice every third case so that ties occur.
fn random_points<const D: usize>(rng: &mut ChaCha8Rng, n: usize, lattice: bool, span: f64) -> Vec<[f64; D]> {
    (0..n)
        .map(|_| {
            [0.0f64; D].map(|_| if lattice { rng.gen_range(0..6) as f64 * span / 6.0 } else { rng.gen_range(0.0..span) })
        })
        .collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= ORACLE_TOL * a.abs().max(b.abs()).max(1.0)
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..ORACLE_CASES {
        let lattice = case % 3 == 0;
        let variant = if case % 2 == 0 { LossVariant::Squared } else { LossVariant::Unsquared };
        let (n, m) = (rng.gen_range(1..300), rng.gen_range(1..300));

        let g: Vec<[f64; 2]> = random_points(&mut rng, n, lattice, 64.0);
        let q: Vec<[f64; 2]> = random_points(&mut rng, m, lattice, 64.0);
        let mut tape = Tape::new();
        let gv = tape.constant(ok(Tensor::from_rows(&g))?).unwrap();
        let qv = tape.constant(ok(Tensor::from_rows(&q))?).unwrap();
        let cd = ok(chamfer_2d(&mut tape, gv, qv, variant))?;
        let fast = tape.value(cd).data()[0];
        let slow = brute_one_sided(&g, &q, variant) + brute_one_sided(&q, &g, variant);
        check(close(fast, slow), || format!("2D case {case}: {fast} vs {slow}"))?;
        let k = rng.gen_range(1..=m.min(8));
        let fast = ok(knn(&g, &q, k))?;
        for (p, idx) in g.iter().zip(&fast) {
            check(*idx == brute_knn(p, &q, k), || format!("2D kNN case {case} differs at {p:?}"))?;
        }

        let a: Vec<[f64; 3]> = random_points(&mut rng, n, lattice, 1.0);
        let b: Vec<[f64; 3]> = random_points(&mut rng, m, lattice, 1.0);
        let (ca, cb) = (ok(PointCloud::new(a.clone()))?, ok(PointCloud::new(b.clone()))?);
        let fast = ok(chamfer_3d(&ca, &cb, variant))?;
        let slow = brute_one_sided(&a, &b, variant) + brute_one_sided(&b, &a, variant);
        check(close(fast, slow), || format!("3D case {case}: {fast} vs {slow}"))?;
        let fast = ok(knn(&a, &b, k))?;
        for (p, idx) in a.iter().zip(&fast) {
            check(*idx == brute_knn(p, &b, k), || format!("3D kNN case {case} differs at {p:?}"))?;
        }
    }
    Ok(format!("{ORACLE_CASES} instances each of 2D/3D Chamfer and kNN, including lattice ties"))
}

// ---------------------------------------------------------------- 5

fn brute_boundary(s: &SilhouetteImage) -> Vec<[usize; 2]> {
    let (w, h) = (s.width() as isize, s.height() as isize);
    let fg = |x: isize, y: isize| x >= 0 && y >= 0 && x < w && y < h && s.mask()[(y * w + x) as usize] != 0;
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if fg(x, y) && !(fg(x - 1, y) && fg(x + 1, y) && fg(x, y - 1) && fg(x, y + 1)) {
                out.push([x as usize, y as usize]);
            }
        }
    }
    out
}

fn boundary_extraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..RECTANGLES {
        let (w, h) = (rng.gen_range(2..40), rng.gen_range(2..40));
        let (x0, y0) = (rng.gen_range(0..20), rng.gen_range(0..20));
        let s = SilhouetteImage::from_fn(64, 64, |x, y| (x0..x0 + w).contains(&x) && (y0..y0 + h).contains(&y));
        let b = ok(extract_boundary(&s))?;
        check(b.len() == 2 * w + 2 * h - 4, || format!("{w}x{h} rectangle: {} boundary pixels", b.len()))?;
    }
    for case in 0..BLOBS {
        let (w, h) = (rng.gen_range(4..48), rng.gen_range(4..48));
        let density = rng.gen_range(0.2..0.9);
        let mask: Vec<u8> = (0..w * h).map(|_| rng.gen_bool(density) as u8).collect();
        let s = ok(SilhouetteImage::new(w, h, mask))?;
        if s.foreground_count() == 0 {
            continue;
        }
        let b = ok(extract_boundary(&s))?;
        check(b.pixels == brute_boundary(&s), || format!("blob {case} differs from the brute-force boundary"))?;
    }
    Ok(format!("{RECTANGLES} rectangles with L = 2w + 2h - 4, {BLOBS} random blobs match brute force"))
}

// ---------------------------------------------------------------- 6

fn projection_term(terms: &[(&str, f64)]) -> f64 {
    terms.iter().filter(|(n, _)| n.starts_with("proj_")).map(|(_, v)| v).sum()
}

fn overfit_single_object() -> Outcome {
    let start = Instant::now();
    let run = RunConfig::desk();
    let data = DatasetConfig { objects: 1, m: DESK_M, seed: 6, ..Default::default() };
    let object = ok(prepare_object("overfit", &ok(generate_object(&data, 0))?, &run.model))?;
    let objects = [object];
    let model = ok(Model::new(run.model.clone(), run.seed))?;
    let view = &objects[0].views[0];
    let cd = |m: &Model| -> Result<f64, String> { ok(reported_cd(&ok(m.coarse(&view.p_in, &view.image, true))?, &objects[0].gt)) };
    let cd0 = cd(&model)?;
    let mut trainer = ok(Trainer::new(run, model, &objects))?;
    let l0 = projection_term(&ok(trainer.sample_losses(Stage::Csr, (0, 0)))?);
    for _ in 0..OVERFIT_STEPS {
        ok(trainer.step(Stage::Csr, 0, &[(0, 0)], OVERFIT_LR))?;
    }
    let l1 = projection_term(&ok(trainer.sample_losses(Stage::Csr, (0, 0)))?);
    let cd1 = cd(&trainer.model)?;
    let took = start.elapsed();
    let detail = format!("L_proj {l0:.4} -> {l1:.5}, CD(Pc) {cd0:.2} -> {cd1:.2} in {OVERFIT_STEPS} steps, {took:.1?}");
    check(l1 < OVERFIT_PROJ_RATIO * l0, || detail.clone())?;
    check(cd1 < OVERFIT_CD_RATIO * cd0, || detail.clone())?;
    check(took < OVERFIT_BUDGET, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7, 8, 9

struct DeskRun {
    objects: Vec<PreparedObject>,
    model: Model,
    first_csr: f64,
    last_csr: f64,
    took: Duration,
}

fn desk_run(dir: &Path) -> Result<DeskRun, String> {
    let start = Instant::now();
    let data = DatasetConfig { objects: DESK_TRAIN + DESK_TEST, m: DESK_M, test_objects: DESK_TEST, seed: DESK_SEED, ..Default::default() };
    let manifest = ok(build_dataset(&data, dir))?;
    let run = RunConfig { epochs_csr: DESK_EPOCHS_CSR, epochs_vsr: DESK_EPOCHS_VSR, ..RunConfig::desk() };
    let train = ok(load_split(&manifest, Split::Train, &run.model))?;
    let test = ok(load_split(&manifest, Split::Test, &run.model))?;
    let model = ok(Model::new(run.model.clone(), run.seed))?;
    let mut trainer = ok(Trainer::new(run, model, &train))?;
    let mut csr = Vec::new();
    for e in 0..DESK_EPOCHS_CSR {
        csr.push(ok(trainer.epoch(Stage::Csr, e))?.projection());
    }
    for e in 0..DESK_EPOCHS_VSR {
        ok(trainer.epoch(Stage::Vsr, e))?;
    }
    Ok(DeskRun { model: trainer.model, objects: test, first_csr: csr[0], last_csr: *csr.last().unwrap(), took: start.elapsed() })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn evaluate(desk: &DeskRun, calibration_views: usize) -> Result<Vec<ViewResult>, String> {
    ok(evaluate_objects(&desk.model, &desk.objects, &EvalOptions { calibration_views, ablation: Ablation::full() }, None))
}

fn refinement_trend(desk: &DeskRun) -> Outcome {
    let results = evaluate(desk, 1)?;
    let pc = object_means(&results, |r| r.cd_pc);
    let out = object_means(&results, |r| r.cd_out);
    let improved = pc.iter().zip(&out).filter(|(a, b)| b < a).count();
    let detail = format!(
        "held-out mean CD Pc {:.2} -> P_out {:.2}, {improved}/{} objects improved; coarse proj loss {:.4} -> {:.4}, {:.0?}",
        mean(&pc),
        mean(&out),
        pc.len(),
        desk.first_csr,
        desk.last_csr,
        desk.took
    );
    check(mean(&out) <= mean(&pc), || detail.clone())?;
    check(improved as f64 >= IMPROVED_FRACTION * pc.len() as f64, || detail.clone())?;
    check(desk.last_csr < CSR_LOSS_RATIO * desk.first_csr, || detail.clone())?;
    Ok(detail)
}

fn calibration_trend(desk: &DeskRun) -> Outcome {
    let cd = |views: usize| -> Result<f64, String> { Ok(mean(&object_means(&evaluate(desk, views)?, |r| r.cd_out))) };
    let (c0, c1, c4) = (cd(0)?, cd(1)?, cd(4)?);
    let detail = format!("mean CD(P_out) with 0/1/4 calibration views: {c0:.2} / {c1:.2} / {c4:.2}");
    check(c4 <= c1 && c1 <= c0, || detail.clone())?;
    Ok(detail)
}

fn metric_identities(desk: &DeskRun) -> Outcome {
    let results = evaluate(desk, 1)?;
    let summary = ok(summarize_results(&desk.objects, &results))?;
    for row in &summary.rows {
        check(row.cd_min <= row.cd_avg, || format!("{}: CD_min {} > CD_avg {}", row.category, row.cd_min, row.cd_avg))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let views: Vec<f64> = (0..rng.gen_range(1..10)).map(|_| rng.gen_range(0.0..500.0)).collect();
        let (mn, av) = ok(cd_min_avg(&views))?;
        check(mn <= av, || format!("{views:?}: min {mn} > avg {av}"))?;
        let (mn, av) = ok(cd_min_avg(&views[..1]))?;
        check(mn == av && mn == views[0], || "single view: min and avg differ".into())?;
        let c = views[0];
        check(ok(cd_std(&[vec![c; views.len()]]))? == 0.0, || format!("constant {c} has nonzero STD"))?;
    }
    let clouds: Vec<PointCloud> = (0..5).map(|_| unit_cloud(&mut rng, 200)).collect();
    check(ok(mmd(&clouds[..2], &clouds))? == 0.0, || "MMD against a superset of the predictions is nonzero".into())?;
    let ab = ok(reported_cd(&clouds[0], &clouds[1]))?;
    check(ab == ok(reported_cd(&clouds[1], &clouds[0]))? && ab > 0.0, || "reported CD is not symmetric".into())?;
    Ok(format!("{} summary rows plus 200 random per-object cases", summary.rows.len()))
}

// ---------------------------------------------------------------- 10

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().display().to_string(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism_and_formats() -> Outcome {
    let tmp = ok(tempfile::tempdir())?;
    let data = DatasetConfig { objects: 4, m: 64, points: 128, dense: 2048, image_size: 16, seed: 10, test_objects: 1, ..Default::default() };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(build_dataset(&data, &a))?;
    ok(build_dataset(&data, &b))?;
    let files = tree(&a);
    check(files == tree(&b), || "datasets differ".into())?;

    let run = RunConfig {
        dataset: a.join(MANIFEST_FILE),
        model: ModelConfig::toy(),
        batch_size: 2,
        epochs_csr: 2,
        epochs_vsr: 1,
        ..RunConfig::default()
    };
    let (ra, rb) = (tmp.path().join("run_a"), tmp.path().join("run_b"));
    ok(train(&run, &ra, None))?;
    ok(train(&run, &rb, None))?;
    for f in [LOG_FILE, checkpoint_file(Stage::Csr), checkpoint_file(Stage::Vsr)] {
        check(fs::read(ra.join(f)).ok() == fs::read(rb.join(f)).ok(), || format!("{f} differs between runs"))?;
    }

    let manifest = ok(Manifest::load(&a.join(MANIFEST_FILE)))?;
    let record = ok(manifest.load_object(0))?;
    check(ok(xyz_from_str(&xyz_to_string(&record.gt)))? == record.gt, || "xyz".into())?;
    for v in &record.views {
        check(ok(xyz_from_str(&xyz_to_string(&v.partial)))? == v.partial, || "partial xyz".into())?;
        check(ok(uv_from_str(&uv_to_string(&v.samples)))? == v.samples, || "uv".into())?;
        check(ok(pgm_from_bytes(&pgm_to_bytes(&v.silhouette)))? == v.silhouette, || "pgm".into())?;
        check(ok(camera_from_str(&camera_to_string(&v.camera)))? == v.camera, || "camera".into())?;
        check(ok(boundary_from_str(&boundary_to_string(&v.boundary)))? == v.boundary, || "boundary".into())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        // Awkward magnitudes, subnormals included.
        let pts: Vec<[f64; 3]> = (0..rng.gen_range(1..50))
            .map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0) * 10f64.powi(rng.gen_range(-310..300))))
            .collect();
        let cloud = ok(PointCloud::new(pts))?;
        check(ok(xyz_from_str(&xyz_to_string(&cloud)))? == cloud, || "random xyz".into())?;
        let uv: Vec<[f64; 2]> = cloud.points().iter().map(|p| [p[0], p[1]]).collect();
        check(ok(uv_from_str(&uv_to_string(&uv)))? == uv, || "random uv".into())?;
        let cam = random_camera(&mut rng, CameraModel::Perspective);
        check(ok(camera_from_str(&camera_to_string(&cam)))? == cam, || "random camera".into())?;
        let (w, h) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let sil = ok(SilhouetteImage::new(w, h, (0..w * h).map(|_| rng.gen_bool(0.5) as u8).collect()))?;
        check(ok(pgm_from_bytes(&pgm_to_bytes(&sil)))? == sil, || "random pgm".into())?;
    }
    let ck = ok(Checkpoint::load(&ra.join(checkpoint_file(Stage::Vsr))))?;
    check(ok(Checkpoint::from_bytes(&ck.to_bytes()))? == ck, || "checkpoint".into())?;
    check(ck.to_bytes() == ok(fs::read(ra.join(checkpoint_file(Stage::Vsr))))?, || "checkpoint bytes".into())?;
    let reloaded: Manifest = ok(serde_json::from_str(&ok(fs::read_to_string(a.join(MANIFEST_FILE)))?))?;
    check(reloaded.config == manifest.config && reloaded.objects == manifest.objects, || "manifest".into())?;
    Ok(format!("{} dataset files, training log and both checkpoints bit-identical; all formats round-trip", files.len()))
}

// ----------------------------------------------------------------

fn report(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    match outcome {
        Ok(detail) => {
            println!("PASS {id:>2} {name}: {detail}");
            true
        }
        Err(why) => {
            println!("FAIL {id:>2} {name}: {why}");
            false
        }
    }
}

fn main() {
    // `cargo test -- --list` and similar probes pass flags; run nothing then.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut passed = vec![
        report(1, "gradient check", gradient_check),
        report(2, "projection round trip", projection_round_trip),
        report(3, "calibrator postconditions", calibrator_postconditions),
        report(4, "accelerated vs brute force", oracle_equivalence),
        report(5, "boundary extraction", boundary_extraction),
        report(6, "single-object overfit", overfit_single_object),
    ];
    let tmp = tempfile::tempdir().unwrap();
    match desk_run(tmp.path()) {
        Ok(desk) => {
            passed.push(report(7, "refinement improves held-out CD", || refinement_trend(&desk)));
            passed.push(report(8, "more calibration views help", || calibration_trend(&desk)));
            passed.push(report(9, "metric identities", || metric_identities(&desk)));
        }
        Err(e) => {
            for (id, name) in [(7, "refinement improves held-out CD"), (8, "more calibration views help"), (9, "metric identities")] {
                passed.push(report(id, name, || Err(format!("training failed: {e}"))));
            }
        }
    }
    passed.push(report(10, "determinism and formats", determinism_and_formats));
    let failed = passed.iter().filter(|p| !**p).count();
    println!("{} passed, {failed} failed", passed.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
