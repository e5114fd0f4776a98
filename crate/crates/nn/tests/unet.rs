mod common;

use common::*;
use deepwarp_core::dataset::gen_phantom;
use deepwarp_core::{Image, LossWeights, SsimParams};
use deepwarp_nn::loss::{registration_loss, LossMode};
use deepwarp_nn::unet::record_forward;
use deepwarp_nn::{Graph, Tensor, UNetConfig, UNetModel};
use rand::Rng;

fn conv(k: usize, ci: usize, co: usize) -> usize {
    k * k * ci * co + co
}

#[test]
fn paper_preset_parameter_count_matches_layer_listing() {
    // the full-size layer list, written out layer by layer
    let listing = [
        conv(3, 2, 64),
        conv(3, 64, 64),
        conv(3, 64, 128),
        conv(3, 128, 128),
        conv(3, 128, 256),
        conv(3, 256, 256),
        conv(3, 256, 512),
        conv(3, 512, 512),
        conv(3, 512, 1024),
        conv(3, 1024, 1024),
        conv(2, 1024, 512),
        conv(3, 1024, 512),
        conv(3, 512, 512),
        conv(2, 512, 256),
        conv(3, 512, 256),
        conv(3, 256, 256),
        conv(2, 256, 128),
        conv(3, 256, 128),
        conv(3, 128, 128),
        conv(2, 128, 64),
        conv(3, 128, 64),
        conv(3, 64, 64),
        conv(1, 64, 2),
    ];
    let expect: usize = listing.iter().sum();
    assert_eq!(expect, 31_031_234);
    assert_eq!(UNetConfig::PAPER.param_count(), expect);
    assert_eq!(UNetConfig::PAPER.bottleneck_width(), 1024);
    let shapes = UNetConfig::PAPER.layer_shapes();
    let head = shapes.iter().find(|(n, _)| n == "head.kernel").unwrap();
    assert_eq!(head.1, vec![1, 1, 64, 2]);
}

#[test]
fn config_validation() {
    assert!(UNetConfig { input_size: 60, depth: 3, base_width: 8 }.validate().is_err());
    assert!(UNetConfig { input_size: 64, depth: 0, base_width: 8 }.validate().is_err());
    assert!(UNetConfig { input_size: 64, depth: 2, base_width: 1 }.validate().is_err());
    assert!(UNetConfig::DESK.validate().is_ok());
    assert!(UNetModel::<f32>::build(UNetConfig { input_size: 12, depth: 3, base_width: 2 }, &mut rng(0)).is_err());
    assert_eq!(UNetConfig::preset("desk").unwrap(), UNetConfig::DESK);
    assert!(UNetConfig::preset("huge").is_err());
}

#[test]
fn desk_forward_shapes() {
    let m = UNetModel::<f32>::build(UNetConfig::DESK, &mut rng(1)).unwrap();
    let s: Image<f32> = gen_phantom(64, 1).unwrap();
    let t: Image<f32> = gen_phantom(64, 2).unwrap();
    let mut g = Graph::new(&m.params);
    let fv = m.forward(&mut g, &s, &t, None).unwrap();
    assert_eq!(g.shape(fv.flow), &[64, 64, 2]);
    assert_eq!(g.shape(fv.warped), &[64, 64, 1]);
    let widths: Vec<usize> = fv.convs.iter().map(|(_, v)| g.shape(*v)[2]).collect();
    assert_eq!(widths, UNetConfig::DESK.conv_widths());
    assert_eq!(widths.iter().sum::<usize>(), 352);
    assert_eq!(*widths.last().unwrap(), 8);
}

#[test]
fn minimal_instance_runs() {
    let cfg = UNetConfig { input_size: 8, depth: 1, base_width: 2 };
    let m = UNetModel::<f32>::build(cfg, &mut rng(2)).unwrap();
    let mut r = rng(3);
    let s = Image::from_fn(8, 8, |_, _| r.gen::<f32>());
    let t = Image::from_fn(8, 8, |_, _| r.gen::<f32>());
    let (f, w) = m.forward_register(&s, &t, None).unwrap();
    assert_eq!(f.shape(), (8, 8));
    assert_eq!(w.shape(), (8, 8));
}

#[test]
fn size_mismatch_is_rejected() {
    let m = UNetModel::<f32>::build(UNetConfig::DESK, &mut rng(4)).unwrap();
    let s = Image::<f32>::zeros(32, 32);
    assert!(m.forward_register(&s, &s, None).is_err());
}

#[test]
fn untrained_model_gives_valid_field_and_range() {
    let m = UNetModel::<f32>::build(UNetConfig::DESK, &mut rng(5)).unwrap();
    let s: Image<f32> = gen_phantom(64, 3).unwrap();
    let t: Image<f32> = gen_phantom(64, 4).unwrap();
    let (f, w) = m.forward_register(&s, &t, None).unwrap();
    assert!(f.is_finite());
    assert!(w.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(w, f.apply(&s).unwrap());
}

#[test]
fn zero_weight_model_is_identity() {
    let m = UNetModel::<f32>::zeros(UNetConfig::DESK).unwrap();
    let s: Image<f32> = gen_phantom(64, 5).unwrap();
    let t: Image<f32> = gen_phantom(64, 6).unwrap();
    let (f, w) = m.forward_register(&s, &t, None).unwrap();
    assert!(f.phi_i().iter().chain(f.phi_j()).all(|&v| v == 0.0));
    assert_eq!(w, s);
}

#[test]
fn inference_is_deterministic_and_training_pass_is_seeded() {
    let m = UNetModel::<f32>::build(UNetConfig::DESK, &mut rng(6)).unwrap();
    let s: Image<f32> = gen_phantom(64, 7).unwrap();
    let t: Image<f32> = gen_phantom(64, 8).unwrap();
    let a = m.forward_register(&s, &t, None).unwrap();
    let b = m.forward_register(&s, &t, None).unwrap();
    assert_eq!(a, b);
    let c = m.forward_register(&s, &t, Some(&mut rng(9))).unwrap();
    let d = m.forward_register(&s, &t, Some(&mut rng(9))).unwrap();
    assert_eq!(c, d);
    assert_ne!(a.0, c.0);
    // same seed, same init
    let m2 = UNetModel::<f32>::build(UNetConfig::DESK, &mut rng(6)).unwrap();
    assert_eq!(m, m2);
}

#[test]
fn msessim_is_weighted_sum_of_the_other_modes() {
    let m = UNetModel::<f64>::build(UNetConfig::DESK, &mut rng(10)).unwrap();
    let s: Image<f64> = gen_phantom(64, 9).unwrap();
    let t: Image<f64> = gen_phantom(64, 10).unwrap();
    let p = SsimParams::default();
    let w = LossWeights::default();
    let mut g = Graph::new(&m.params);
    let fv = m.forward(&mut g, &s, &t, None).unwrap();
    let tv = g.input(Tensor::new(&[64, 64, 1], t.data().to_vec()).unwrap());
    let both = registration_loss(&mut g, fv.warped, tv, LossMode::MseSsim, &w, &p).unwrap();
    let ssim_only = registration_loss(&mut g, fv.warped, tv, LossMode::SsimOnly, &w, &p).unwrap();
    let mse_only = registration_loss(&mut g, fv.warped, tv, LossMode::MseOnly, &w, &p).unwrap();
    let lhs = g.scalar(both.loss);
    let rhs = 10.0 * g.scalar(mse_only.loss) + g.scalar(ssim_only.loss);
    assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
}

#[test]
fn end_to_end_gradient_of_tiny_unet() {
    let cfg = UNetConfig { input_size: 16, depth: 1, base_width: 2 };
    let mut model = UNetModel::<f64>::build(cfg, &mut rng(11)).unwrap();
    // larger head weights so the field moves several pixels and every layer matters
    let head = model.index_of("head.kernel").unwrap();
    for v in &mut model.params[head].data {
        *v *= 3.0;
    }
    let t: Image<f64> = gen_phantom(16, 12).unwrap();
    let mut r = rng(13);
    let s = Image::from_fn(16, 16, |i, j| (0.8 * t.get(i, j) + 0.1 * r.gen::<f64>()).clamp(0.0, 1.0));
    let p = SsimParams::default();
    let w = LossWeights::default();
    let config = model.config;
    let build = |g: &mut Graph<'_, f64>| {
        let fv = record_forward(&config, g, &s, &t, None).unwrap();
        let tv = g.input(Tensor::new(&[16, 16, 1], t.data().to_vec()).unwrap());
        registration_loss(g, fv.warped, tv, LossMode::MseSsim, &w, &p).unwrap().loss
    };
    let err = grad_check(&mut model.params, 1e-6, build);
    assert!(err < 1e-3, "end-to-end rel err {err}");
}
