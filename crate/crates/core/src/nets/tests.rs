use rand::Rng;

use super::layers::Builder;
use super::*;
use crate::autodiff::{Graph, Mode, ParamStore, Tensor};
use crate::rng::rng_from;

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = rng_from(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(0.0..1.0))
}

fn tiny() -> ScaleConfig {
    ScaleConfig {
        input_h: 16,
        input_w: 24,
        base_channels: 4,
        feature_len: 16,
        corr_len: 16,
        corr_channels: 4,
        volume_res: 8,
        n_points: 20,
        max_disp: 8,
        shift: 1,
    }
}

#[test]
fn dispnet_shape_and_sign() {
    for (h, w) in [(16, 24), (13, 19)] {
        let cfg = ScaleConfig {
            input_h: h,
            input_w: w,
            ..tiny()
        };
        let mut store = ParamStore::new();
        let net = build_dispnet(&mut store, &cfg, 3).unwrap();
        let mut g = Graph::new(Mode::Train);
        let l = g.constant(random(&[2, 3, h, w], 1)).unwrap();
        let r = g.constant(random(&[2, 3, h, w], 2)).unwrap();
        let (dl, dr) = net.forward(&mut g, &store, l, r).unwrap();
        assert_eq!(g.shape(dl), [2, 1, h, w]);
        assert_eq!(g.shape(dr), [2, 1, h, w]);
        assert!(g.value(dl).data().iter().chain(g.value(dr).data()).all(|&v| v >= 0.0));
    }
}

#[test]
fn encoder_weights_are_shared_between_views() {
    let mut store = ParamStore::<f32>::new();
    let net = StereoNet::new(&mut store, tiny(), Task::Volume, Ablation::default(), 0).unwrap();
    let names: Vec<String> = store.ids().map(|id| store.name(id).to_string()).collect();
    let enc: Vec<&String> = names.iter().filter(|n| n.starts_with("encoder.")).collect();
    assert!(enc.iter().all(|n| !n.contains("left") && !n.contains("right")));
    assert_eq!(enc.iter().filter(|n| n.ends_with("block0.a.conv.w")).count(), 1);

    let mut g = Graph::new(Mode::Train);
    let l = g.constant(random(&[2, 3, 16, 24], 1)).unwrap();
    let r = g.constant(random(&[2, 3, 16, 24], 2)).unwrap();
    net.forward(&mut g, &store, l, r, None).unwrap();
    // each registry entry is bound to exactly one graph node
    let bound: Vec<_> = g.bound_params().collect();
    let trainable_enc = store
        .trainable()
        .filter(|&id| store.name(id).starts_with("encoder."))
        .count();
    assert_eq!(
        bound.iter().filter(|(id, _)| store.name(*id).starts_with("encoder.")).count(),
        trainable_enc
    );
}

#[test]
fn encoder_output_length_and_tap() {
    let cfg = tiny();
    let mut store = ParamStore::<f32>::new();
    let enc = RecEncoder::new(&mut Builder::new(&mut store, 1), "enc", &cfg, true).unwrap();
    let mut g = Graph::new(Mode::Eval);
    let x = g.constant(random(&[3, 3, 16, 24], 4)).unwrap();
    let d = g.constant(random(&[3, 1, 16, 24], 5)).unwrap();
    let (f, tap) = enc.forward(&mut g, &store, x, Some(d)).unwrap();
    assert_eq!(g.shape(f), [3, cfg.feature_len]);
    assert_eq!(g.shape(tap), [3, 4 * cfg.base_channels, 4, 6]);
    let bad = g.constant(random(&[3, 1, 16, 23], 5)).unwrap();
    assert!(enc.forward(&mut g, &store, x, Some(bad)).is_err());
    assert!(enc.forward(&mut g, &store, x, None).is_err());
}

#[test]
fn encoder_respects_batch_permutation() {
    let cfg = tiny();
    let mut store = ParamStore::<f32>::new();
    let enc = RecEncoder::new(&mut Builder::new(&mut store, 9), "enc", &cfg, true).unwrap();
    let imgs: Vec<Tensor<f32>> = (0..3).map(|i| random(&[1, 3, 16, 24], 10 + i)).collect();
    let disps: Vec<Tensor<f32>> = (0..3).map(|i| random(&[1, 1, 16, 24], 20 + i)).collect();
    let run = |order: &[usize]| {
        let x = Tensor::stack_batch(&order.iter().map(|&i| imgs[i].clone()).collect::<Vec<_>>()).unwrap();
        let d = Tensor::stack_batch(&order.iter().map(|&i| disps[i].clone()).collect::<Vec<_>>()).unwrap();
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(x).unwrap();
        let d = g.constant(d).unwrap();
        let (f, _) = enc.forward(&mut g, &store, x, Some(d)).unwrap();
        g.value(f).clone()
    };
    let a = run(&[0, 1, 2]);
    let b = run(&[2, 0, 1]);
    for (pos, src) in [(0, 2), (1, 0), (2, 1)] {
        assert_eq!(b.batch_item(pos), a.batch_item(src));
    }
}

/// Triple-loop reference for the cost volume.
fn cost_volume_oracle(l: &Tensor<f32>, r: &Tensor<f32>, levels: usize, s: usize) -> Vec<f32> {
    let sh = l.shape();
    let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    let at = |t: &Tensor<f32>, b: usize, ch: usize, y: usize, x: usize| t.data()[((b * c + ch) * h + y) * w + x];
    let mut out = Vec::new();
    for b in 0..n {
        for ch in 0..2 * c {
            for d in 0..levels {
                for y in 0..h {
                    for x in 0..w {
                        out.push(if ch < c {
                            at(l, b, ch, y, x)
                        } else if x >= d * s {
                            at(r, b, ch - c, y, x - d * s)
                        } else {
                            0.0
                        });
                    }
                }
            }
        }
    }
    out
}

#[test]
fn cost_volume_matches_oracle() {
    for (k, (max_disp, shift)) in [(8, 1), (12, 1), (16, 2), (20, 3)].into_iter().enumerate() {
        let l = random(&[2, 4, 5, 6], 100 + k as u64);
        let r = random(&[2, 4, 5, 6], 200 + k as u64);
        let mut g = Graph::new(Mode::Eval);
        let lv = g.constant(l.clone()).unwrap();
        let rv = g.constant(r.clone()).unwrap();
        let cv = build_cost_volume(&mut g, lv, rv, max_disp, shift).unwrap();
        let levels = (max_disp as f64 / 4.0).round() as usize / shift + 1;
        assert_eq!(g.shape(cv), [2, 8, levels, 5, 6]);
        assert_eq!(g.value(cv).data(), cost_volume_oracle(&l, &r, levels, shift).as_slice());
    }
}

#[test]
fn cost_volume_zero_shift_and_symmetry() {
    let l = random(&[1, 3, 4, 5], 7);
    let mut g = Graph::new(Mode::Eval);
    let lv = g.constant(l.clone()).unwrap();
    let cv = build_cost_volume(&mut g, lv, lv, 8, 1).unwrap();
    let v = g.value(cv).data();
    let (levels, plane) = (3, 20);
    for ch in 0..3 {
        let left = &v[(ch * levels) * plane..][..plane];
        let right = &v[((ch + 3) * levels) * plane..][..plane];
        assert_eq!(left, &l.data()[ch * plane..][..plane]);
        assert_eq!(left, right);
    }
    assert!(build_cost_volume(&mut g, lv, lv, 1, 1).is_err());
}

fn corrnet_fixture() -> (ParamStore<f32>, CorrNet) {
    let cfg = tiny();
    let mut store = ParamStore::new();
    let net = CorrNet::new(&mut Builder::new(&mut store, 5), "corr", &cfg, 4, (4, 6)).unwrap();
    (store, net)
}

#[test]
fn corrnet_length_and_gradient_reach() {
    let (store, net) = corrnet_fixture();
    let mut g = Graph::new(Mode::Train);
    let l = g.input(random(&[2, 4, 4, 6], 1)).unwrap();
    let r = g.input(random(&[2, 4, 4, 6], 2)).unwrap();
    let out = net.forward_taps(&mut g, &store, l, r).unwrap();
    assert_eq!(g.shape(out), [2, 16]);
    let w = g.constant(random(&[2, 16], 3)).unwrap();
    let p = g.mul(out, w).unwrap();
    let loss = g.sum(p).unwrap();
    g.backward(loss).unwrap();
    for v in [l, r] {
        assert!(g.grad(v).unwrap().iter().any(|&x| x != 0.0));
    }
}

#[test]
fn corrnet_zero_volume_is_batch_constant() {
    let (store, net) = corrnet_fixture();
    for mode in [Mode::Train, Mode::Eval] {
        let mut g = Graph::new(mode);
        let cv = g.constant(Tensor::zeros(&[3, 8, 3, 4, 6])).unwrap();
        let out = net.forward(&mut g, &store, cv).unwrap();
        let out = g.value(out).clone();
        assert_eq!(out.batch_item(0), out.batch_item(1));
        assert_eq!(out.batch_item(0), out.batch_item(2));
    }
}

#[test]
fn volume_decoder_range_and_duplication() {
    let cfg = tiny();
    let mut store = ParamStore::<f32>::new();
    let dec = VolumeDecoder::new(&mut Builder::new(&mut store, 2), "vd", &cfg, 48).unwrap();
    let z = random(&[2, 48], 3);
    let doubled = Tensor::stack_batch(&[z.batch_item(0), z.batch_item(1), z.batch_item(0), z.batch_item(1)]).unwrap();
    let mut g = Graph::new(Mode::Eval);
    let zv = g.constant(z).unwrap();
    let dv = g.constant(doubled).unwrap();
    let a = dec.forward(&mut g, &store, zv).unwrap();
    let b = dec.forward(&mut g, &store, dv).unwrap();
    let (a, b) = (g.value(a).clone(), g.value(b).clone());
    assert_eq!(a.shape(), [2, 8, 8, 8]);
    assert!(a.data().iter().all(|&p| p > 0.0 && p < 1.0));
    for i in 0..4 {
        assert_eq!(b.batch_item(i), a.batch_item(i % 2));
    }
}

#[test]
fn volume_decoder_rejects_bad_seed() {
    let mut store = ParamStore::<f32>::new();
    assert!(VolumeDecoder::new(&mut Builder::new(&mut store, 2), "vd", &tiny(), 50).is_err());
}

#[test]
fn point_decoder_shape() {
    let cfg = tiny();
    let mut store = ParamStore::<f32>::new();
    let dec = PointDecoder::new(&mut Builder::new(&mut store, 2), "pd", &cfg, 48).unwrap();
    let mut g = Graph::new(Mode::Train);
    let z = g.constant(random(&[2, 48], 3)).unwrap();
    let p = dec.forward(&mut g, &store, z).unwrap();
    assert_eq!(g.shape(p), [2, cfg.n_points, 3]);
    assert!(g.value(p).all_finite());
    assert!(store.ids().filter(|&id| store.name(id).contains(".fire")).count() >= 8 * 6);
}

fn count_params(task: Task, ablation: Ablation) -> usize {
    let mut store = ParamStore::<f32>::new();
    StereoNet::new(&mut store, tiny(), task, ablation, 0).unwrap();
    store.num_trainable_scalars()
}

#[test]
fn ablations_shrink_the_model() {
    for task in [Task::Volume, Task::Point] {
        let full = count_params(task, Ablation::default());
        for ab in &Ablation::ALL[1..] {
            assert!(count_params(task, *ab) < full, "{} {task}", ab.label());
        }
    }
}

#[test]
fn every_parameter_receives_gradient() {
    for task in [Task::Volume, Task::Point] {
        for ab in Ablation::ALL {
            let mut store = ParamStore::<f32>::new();
            let net = StereoNet::new(&mut store, tiny(), task, ab, 11).unwrap();
            let mut g = Graph::new(Mode::Train);
            let l = g.constant(random(&[2, 3, 16, 24], 1)).unwrap();
            let r = g.constant(random(&[2, 3, 16, 24], 2)).unwrap();
            let pred = net.forward(&mut g, &store, l, r, None).unwrap();
            let shape = g.shape(pred.output).to_vec();
            let w = g.constant(random(&shape, 3)).unwrap();
            let p = g.mul(pred.output, w).unwrap();
            let mut loss = g.sum(p).unwrap();
            if let Some((dl, dr)) = pred.disp {
                let s = g.add(dl, dr).unwrap();
                let s = g.sum(s).unwrap();
                loss = g.add(loss, s).unwrap();
            }
            g.backward(loss).unwrap();
            g.accumulate_param_grads(&mut store);
            for id in store.trainable() {
                assert!(
                    store.grad(id).iter().any(|&v| v != 0.0),
                    "{task} {}: no gradient for {}",
                    ab.label(),
                    store.name(id)
                );
            }
        }
    }
}

#[test]
fn injected_disparity_bypasses_dispnet() {
    let mut store = ParamStore::<f32>::new();
    let net = StereoNet::new(&mut store, tiny(), Task::Point, Ablation::default(), 1).unwrap();
    let mut g = Graph::new(Mode::Eval);
    let l = g.constant(random(&[1, 3, 16, 24], 1)).unwrap();
    let r = g.constant(random(&[1, 3, 16, 24], 2)).unwrap();
    let dl = g.constant(random(&[1, 1, 16, 24], 3)).unwrap();
    let dr = g.constant(random(&[1, 1, 16, 24], 4)).unwrap();
    let pred = net.forward(&mut g, &store, l, r, Some((dl, dr))).unwrap();
    assert_eq!(pred.disp, Some((dl, dr)));
    assert!(g.bound_params().all(|(id, _)| !store.name(id).starts_with("dispnet.")));
}

#[test]
fn paper_scale_dimensions() {
    let cfg = ScaleConfig::paper();
    let mut store = ParamStore::<f32>::new();
    let net = StereoNet::new(&mut store, cfg, Task::Volume, Ablation::default(), 0).unwrap();
    assert_eq!(net.encoder.tap_size, (35, 35));
    let mut g = Graph::new(Mode::Eval);
    let l = g.constant(random(&[1, 3, 137, 137], 1)).unwrap();
    let r = g.constant(random(&[1, 3, 137, 137], 2)).unwrap();
    let (dl, _) = net.dispnet.as_ref().unwrap().forward(&mut g, &store, l, r).unwrap();
    assert_eq!(g.shape(dl), [1, 1, 137, 137]);
    let (f, tap) = net.encoder.forward(&mut g, &store, l, Some(dl)).unwrap();
    assert_eq!(g.shape(f), [1, 8192]);
    let (_, tap_r) = net.encoder.forward(&mut g, &store, r, Some(dl)).unwrap();
    let corr = net.corrnet.as_ref().unwrap().forward_taps(&mut g, &store, tap, tap_r).unwrap();
    assert_eq!(g.shape(corr), [1, 4096]);
    let z = g.concat(&[f, f, corr], 1).unwrap();
    assert_eq!(g.shape(z), [1, 20480]);
    let Decoder::Volume(vd) = &net.decoder else { unreachable!() };
    let v = vd.forward(&mut g, &store, z).unwrap();
    assert_eq!(g.shape(v), [1, 32, 32, 32]);
    drop(g);

    let mut store = ParamStore::<f32>::new();
    let pd = PointDecoder::new(&mut Builder::new(&mut store, 0), "pd", &cfg, 20480).unwrap();
    let mut g = Graph::new(Mode::Eval);
    let z = g.constant(random(&[1, 20480], 3)).unwrap();
    let p = pd.forward(&mut g, &store, z).unwrap();
    assert_eq!(g.shape(p), [1, 1024, 3]);
}
