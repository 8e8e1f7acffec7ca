use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::calibrator::count_outliers;
use crate::geometry::{make_view_rig, CameraModel};
use crate::losses::{loss_csr, loss_vsr, LossVariant, ViewTarget};
use crate::silhouette::sample_foreground;

fn sphere_cloud(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            let v: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-3);
            v.map(|c| c / len * radius)
        })
        .collect();
    PointCloud::new(pts).unwrap()
}

fn disk_image(size: usize, r: f64) -> Image {
    let c = size as f64 / 2.0;
    let s = SilhouetteImage::from_fn(size, size, |x, y| (x as f64 + 0.5 - c).hypot(y as f64 + 0.5 - c) < r);
    s.to_image()
}

fn square_image(size: usize, half: usize) -> Image {
    let c = size / 2;
    SilhouetteImage::from_fn(size, size, |x, y| x + half >= c && x < c + half && y + half >= c && y < c + half).to_image()
}

fn rows(t: &Tensor) -> Vec<[f64; 3]> {
    t.to_rows::<3>().unwrap()
}

#[test]
fn init_is_deterministic_with_zero_head() {
    let cfg = ModelConfig::toy();
    let a = init_params(&cfg, 3).unwrap();
    assert_eq!(a, init_params(&cfg, 3).unwrap());
    assert_ne!(a, init_params(&cfg, 4).unwrap());
    assert!(a.get("op.head.1.w").unwrap().data().iter().all(|&v| v == 0.0));
    assert!(a.get("op.head.1.b").unwrap().data().iter().all(|&v| v == 0.0));
    assert!(a.get("dec.p0.0.w").unwrap().data().iter().any(|&v| v != 0.0));
}

fn check_shapes(cfg: ModelConfig, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::new(cfg.clone(), seed).unwrap();
    let p_in = sphere_cloud(&mut rng, cfg.n, 0.4);
    let image = disk_image(cfg.image_size, cfg.image_size as f64 / 3.0);
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, |_| false).unwrap();
    let out = csr_forward(&mut tape, &bound, &cfg, &p_in, &image, true).unwrap();
    assert_eq!(tape.value(out.v).shape(), &[1, cfg.widths.global]);
    assert_eq!(tape.value(out.p0).shape(), &[cfg.n0, 3]);
    assert_eq!(tape.value(out.p1).shape(), &[cfg.n1, 3]);
    assert_eq!(tape.value(out.p2).shape(), &[cfg.n1, 3]);
    assert_eq!(tape.value(out.pc).shape(), &[cfg.n, 3]);

    let (local, code) = encode_3d(&mut tape, &bound, &cfg, &p_in).unwrap();
    assert_eq!(tape.value(local).shape(), &[cfg.sa_centres().1, cfg.widths.sa[1]]);
    assert_eq!(tape.value(code).shape(), &[1, cfg.widths.sa[2]]);
    let code_2d = encode_2d(&mut tape, &bound, &cfg, &image).unwrap();
    assert_eq!(tape.value(code_2d).len(), cfg.widths.conv);
}

#[test]
fn output_cardinalities() {
    check_shapes(ModelConfig::toy(), 1);
    check_shapes(ModelConfig::desk(), 2);
    let mut attn = ModelConfig::toy();
    attn.use_attention = true;
    check_shapes(attn, 3);
}

#[test]
fn paper_sizes() {
    let mut cfg = ModelConfig::paper();
    // Full widths and image size only matter for cost; cardinalities are
    // what is checked here.
    cfg.image_size = 32;
    cfg.widths = Widths { sa: [16, 16, 16], conv: 8, fuse: 16, global: 16, decoder: 8, edge: 8 };
    check_shapes(cfg.clone(), 4);
    let model = Model::new(cfg.clone(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p_in = sphere_cloud(&mut rng, cfg.n, 0.4);
    let image = disk_image(32, 10.0);
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, |_| false).unwrap();
    let out = csr_forward(&mut tape, &bound, &cfg, &p_in, &image, true).unwrap();
    let sizes: Vec<usize> = [out.p0, out.p1, out.p2, out.pc].iter().map(|&v| tape.value(v).shape()[0]).collect();
    assert_eq!(sizes, vec![256, 512, 512, 2048]);
}

#[test]
fn p1_is_drawn_from_input_and_p0() {
    let cfg = ModelConfig::toy();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = Model::new(cfg.clone(), 5).unwrap();
    let p_in = sphere_cloud(&mut rng, cfg.n, 0.4);
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, |_| false).unwrap();
    let out = csr_forward(&mut tape, &bound, &cfg, &p_in, &disk_image(16, 5.0), true).unwrap();
    let p0 = rows(tape.value(out.p0));
    for p in rows(tape.value(out.p1)) {
        assert!(p_in.points().contains(&p) || p0.contains(&p));
    }
}

#[test]
fn children_sit_on_parents_when_offsets_vanish() {
    let cfg = ModelConfig::toy();
    let mut model = Model::new(cfg.clone(), 6).unwrap();
    for name in ["dec.child.1.w", "dec.child.1.b"] {
        model.params.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p_in = sphere_cloud(&mut rng, cfg.n, 0.4);
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, |_| false).unwrap();
    let out = csr_forward(&mut tape, &bound, &cfg, &p_in, &disk_image(16, 5.0), true).unwrap();
    let p2 = rows(tape.value(out.p2));
    let pc = rows(tape.value(out.pc));
    for (j, p) in pc.iter().enumerate() {
        assert_eq!(*p, p2[j / cfg.r]);
    }
}

fn code_3d(model: &Model, p_in: &PointCloud) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, |_| false).unwrap();
    let (local, code) = encode_3d(&mut tape, &bound, &model.config, p_in).unwrap();
    (tape.value(local).data().to_vec(), tape.value(code).data().to_vec())
}

#[test]
fn encoder_is_permutation_and_translation_stable() {
    let cfg = ModelConfig::desk();
    let model = Model::new(cfg.clone(), 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p_in = sphere_cloud(&mut rng, cfg.n, 0.45);
    let (local, code) = code_3d(&model, &p_in);

    let mut perm: Vec<usize> = (0..cfg.n).collect();
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let (_, code_p) = code_3d(&model, &p_in.select(&perm).unwrap());
    assert!(code.iter().zip(&code_p).all(|(a, b)| (a - b).abs() < 1e-9));

    let moved = PointCloud::new(p_in.points().iter().map(|p| [p[0] + 0.3, p[1] - 0.2, p[2] + 0.1]).collect()).unwrap();
    let (local_t, _) = code_3d(&model, &moved);
    assert!(local.iter().zip(&local_t).all(|(a, b)| (a - b).abs() < 1e-9));
}

#[test]
fn image_codes() {
    let cfg = ModelConfig::toy();
    let model = Model::new(cfg.clone(), 8).unwrap();
    let code = |img: &Image| {
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, |_| false).unwrap();
        let c = encode_2d(&mut tape, &bound, &cfg, img).unwrap();
        tape.value(c).data().to_vec()
    };
    let zero = Image::new(16, 16, 1, vec![0.0; 256]).unwrap();
    // Zero input with zero biases stays zero through every layer.
    assert!(code(&zero).iter().all(|&v| v == 0.0));
    assert_eq!(code(&zero), code(&zero));
    let a = code(&disk_image(16, 6.0));
    let b = code(&square_image(16, 3));
    assert_eq!(a.len(), cfg.widths.conv);
    assert!(a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() > 0.0);
    let wrong = Image::new(8, 8, 1, vec![0.0; 64]).unwrap();
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, |_| false).unwrap();
    assert!(encode_2d(&mut tape, &bound, &cfg, &wrong).is_err());
}

#[test]
fn global_feature_depends_on_image_code() {
    let cfg = ModelConfig::toy();
    let model = Model::new(cfg.clone(), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p_in = sphere_cloud(&mut rng, cfg.n, 0.4);
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, |_| false).unwrap();
    let (local, c3) = encode_3d(&mut tape, &bound, &cfg, &p_in).unwrap();
    let code: Vec<f64> = (0..cfg.widths.conv).map(|_| rng.gen_range(0.0..1.0)).collect();
    let c2 = tape.leaf(Tensor::new(vec![1, cfg.widths.conv], code).unwrap(), true).unwrap();
    let v = fuse(&mut tape, &bound, &cfg, local, c3, c2).unwrap();
    assert_eq!(tape.value(v).shape(), &[1, cfg.widths.global]);
    let sq = tape.mul(v, v).unwrap();
    let loss = tape.sum(sq).unwrap();
    let g = tape.backward(loss).unwrap();
    assert!(g.get(c2).unwrap().iter().any(|&x| x != 0.0));
}

#[test]
fn zero_head_offsets_are_identity_and_equivariant() {
    let cfg = ModelConfig::toy();
    let mut model = Model::new(cfg.clone(), 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let p_cal = sphere_cloud(&mut rng, cfg.n, 0.4);
    assert_eq!(model.refine(&p_cal).unwrap(), p_cal);

    for v in model.params.get_mut("op.head.1.w").unwrap().data_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    let out = model.refine(&p_cal).unwrap();
    assert_ne!(out, p_cal);
    let perm: Vec<usize> = (0..cfg.n).rev().collect();
    let out_p = model.refine(&p_cal.select(&perm).unwrap()).unwrap();
    for (i, &j) in perm.iter().enumerate() {
        let (a, b) = (out_p.points()[i], out.points()[j]);
        assert!((0..3).all(|c| (a[c] - b[c]).abs() < 1e-12));
    }
}

fn toy_views(cfg: &ModelConfig, target: &PointCloud, n_views: usize, m: usize) -> Vec<ViewTarget> {
    make_view_rig(3.0, (cfg.image_size, cfg.image_size), CameraModel::Orthographic)
        .unwrap()
        .into_iter()
        .take(n_views)
        .enumerate()
        .map(|(i, camera)| {
            let proj = camera.project(target).unwrap();
            let s = SilhouetteImage::from_fn(cfg.image_size, cfg.image_size, |x, y| {
                proj.coords.iter().any(|q| (q[0] - x as f64 - 0.5).hypot(q[1] - y as f64 - 0.5) < 1.5)
            });
            ViewTarget { camera, points: sample_foreground(&s, m, i as u64).unwrap() }
        })
        .collect()
}

/// Loss value, parameter gradients and routing signature.
fn eval_grads(
    model: &Model,
    p_in: &PointCloud,
    image: &Image,
    views: &[ViewTarget],
    vsr: Option<&PointCloud>,
) -> (f64, std::collections::BTreeMap<String, Vec<f64>>, u64) {
    let mut tape = Tape::new();
    let input = tape.constant(p_in.to_tensor()).unwrap();
    let (bound, total) = match vsr {
        None => {
            let bound = model.params.bind(&mut tape, is_csr_param).unwrap();
            let out = csr_forward(&mut tape, &bound, &model.config, p_in, image, true).unwrap();
            let b = loss_csr(&mut tape, views, out.p0, out.p2, out.pc, input, LossVariant::Squared).unwrap();
            (bound, b.total)
        }
        Some(p_cal) => {
            let bound = model.params.bind(&mut tape, |n| !is_csr_param(n)).unwrap();
            let (_, p_op) = predict_offsets(&mut tape, &bound, &model.config, p_cal).unwrap();
            (bound, loss_vsr(&mut tape, views, p_op, input, LossVariant::Squared).unwrap().total)
        }
    };
    let g = tape.backward(total).unwrap();
    (tape.value(total).data()[0], bound.named_gradients(&tape, &g), tape.routing_signature())
}

/// Central differences on a strided subset of every parameter tensor.
fn spot_check(model: &Model, p_in: &PointCloud, image: &Image, views: &[ViewTarget], vsr: Option<&PointCloud>, stride: usize) {
    let (_, grads, sig) = eval_grads(model, p_in, image, views, vsr);
    let h = 1e-5;
    let mut checked = 0;
    for (name, g) in &grads {
        for i in (name.len() % stride..g.len()).step_by(stride) {
            let mut plus = model.clone();
            plus.params.get_mut(name).unwrap().data_mut()[i] += h;
            let mut minus = model.clone();
            minus.params.get_mut(name).unwrap().data_mut()[i] -= h;
            let (lp, _, sp) = eval_grads(&plus, p_in, image, views, vsr);
            let (lm, _, sm) = eval_grads(&minus, p_in, image, views, vsr);
            if sp != sig || sm != sig {
                continue;
            }
            let fd = (lp - lm) / (2.0 * h);
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-4, "{name}[{i}]: analytic {} vs numeric {fd}", g[i]);
            checked += 1;
        }
    }
    assert!(checked > 50, "only {checked} coordinates checked");
}

#[test]
fn csr_gradients_spot_check() {
    let cfg = ModelConfig::toy();
    let model = Model::new(cfg.clone(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let target = sphere_cloud(&mut rng, 64, 0.4);
    let p_in = target.select(&(0..cfg.n).collect::<Vec<_>>()).unwrap();
    let views = toy_views(&cfg, &target, 2, 32);
    spot_check(&model, &p_in, &disk_image(16, 5.0), &views, None, 97);
}

#[test]
fn offset_gradients_spot_check() {
    let cfg = ModelConfig::toy();
    let mut model = Model::new(cfg.clone(), 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // A nonzero head so that gradients reach the EdgeConv layers.
    for v in model.params.get_mut("op.head.1.w").unwrap().data_mut() {
        *v = rng.gen_range(-0.3..0.3);
    }
    let target = sphere_cloud(&mut rng, 64, 0.4);
    let p_cal = sphere_cloud(&mut rng, cfg.n, 0.35);
    let views = toy_views(&cfg, &target, 2, 32);
    spot_check(&model, &target.select(&(0..16).collect::<Vec<_>>()).unwrap(), &disk_image(16, 5.0), &views, Some(&p_cal), 7);
}

#[test]
fn csr_gradient_never_reaches_offset_parameters() {
    let cfg = ModelConfig::toy();
    let model = Model::new(cfg.clone(), 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let target = sphere_cloud(&mut rng, 64, 0.4);
    let p_in = target.select(&(0..cfg.n).collect::<Vec<_>>()).unwrap();
    let views = toy_views(&cfg, &target, 1, 16);
    let (_, grads, _) = eval_grads(&model, &p_in, &disk_image(16, 5.0), &views, None);
    assert!(grads.keys().all(|n| is_csr_param(n)));
    let (_, grads, _) = eval_grads(&model, &p_in, &disk_image(16, 5.0), &views, Some(&p_in));
    assert!(grads.keys().all(|n| !is_csr_param(n)));
}

#[test]
fn complete_respects_cardinality_outliers_and_toggles() {
    let cfg = ModelConfig::toy();
    let model = Model::new(cfg.clone(), 14).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let p_in = sphere_cloud(&mut rng, cfg.n, 0.4);
    let cam = make_view_rig(3.0, (16, 16), CameraModel::Orthographic).unwrap().remove(0);
    let s = SilhouetteImage::from_fn(16, 16, |x, y| (x as f64 - 8.0).hypot(y as f64 - 8.0) < 5.0);
    let image = s.to_image();
    let views = vec![(cam.clone(), s.clone())];

    let full = model.complete(&p_in, &image, &views, Ablation::full()).unwrap();
    assert_eq!(full.p_out.len(), cfg.n);
    assert_eq!(count_outliers(&full.p_out, &cam, &s).unwrap(), 0);
    // The zero-initialized head leaves the calibrated cloud in place.
    assert_eq!(full.p_op, full.p_cal);

    let csr = model.complete(&p_in, &image, &views, Ablation::csr_only()).unwrap();
    assert_eq!(csr.p_out, csr.pc);
    assert_eq!(csr.pc, full.pc);

    let no_ifb = model.complete(&p_in, &image, &views, Ablation { ifb: false, ..Ablation::full() }).unwrap();
    assert_ne!(no_ifb.pc, full.pc);
    let blank = Image::new(16, 16, 1, vec![0.0; 256]).unwrap();
    assert_eq!(model.complete(&p_in, &blank, &views, Ablation { ifb: false, ..Ablation::full() }).unwrap(), no_ifb);

    let no_first = model.complete(&p_in, &image, &views, Ablation { first_vc: false, ..Ablation::full() }).unwrap();
    assert_eq!(no_first.p_cal, no_first.pc);
    assert_eq!(count_outliers(&no_first.p_out, &cam, &s).unwrap(), 0);
}
