use super::*;
use crate::Result;

fn ones(shape: &[usize]) -> Tensor<f64> {
    Tensor::full(shape, 1.0)
}

#[test]
fn conv2d_all_ones_sums_window() {
    let mut g = Graph::new(Mode::Eval);
    let x = g.constant(ones(&[1, 1, 3, 3])).unwrap();
    let w = g.constant(ones(&[1, 1, 3, 3])).unwrap();
    let y = g.conv2d(x, w, None, 1, 0).unwrap();
    assert_eq!(g.shape(y), [1, 1, 1, 1]);
    assert_eq!(g.value(y).data(), [9.0]);
}

#[test]
fn conv2d_unit_kernel_is_identity() {
    let xs = Tensor::from_fn(&[2, 1, 4, 5], |i| i as f64 * 0.25 - 3.0);
    let mut g = Graph::new(Mode::Eval);
    let x = g.constant(xs.clone()).unwrap();
    let w = g.constant(ones(&[1, 1, 1, 1])).unwrap();
    let b = g.constant(Tensor::zeros(&[1])).unwrap();
    let y = g.conv2d(x, w, Some(b), 1, 0).unwrap();
    assert_eq!(g.value(y), &xs);
}

#[test]
fn conv2d_shape_error_names_both_shapes() {
    let mut g = Graph::new(Mode::Eval);
    let x = g.constant(ones(&[1, 2, 4, 4])).unwrap();
    let w = g.constant(ones(&[1, 3, 3, 3])).unwrap();
    let err = g.conv2d(x, w, None, 1, 1).unwrap_err().to_string();
    assert!(err.contains("[1, 2, 4, 4]") && err.contains("[1, 3, 3, 3]"), "{err}");
}

#[test]
fn conv_transpose2d_delta_reproduces_kernel() {
    let k = Tensor::from_fn(&[1, 1, 3, 3], |i| (i + 1) as f64);
    let mut g = Graph::new(Mode::Eval);
    let x = g.constant(ones(&[1, 1, 1, 1])).unwrap();
    let w = g.constant(k.clone()).unwrap();
    let y = g.conv_transpose2d(x, w, None, 1, 0).unwrap();
    assert_eq!(g.shape(y), [1, 1, 3, 3]);
    assert_eq!(g.value(y).data(), k.data());
}

#[test]
fn conv3d_all_ones_sums_cube() {
    let mut g = Graph::new(Mode::Eval);
    let x = g.constant(ones(&[1, 1, 2, 2, 2])).unwrap();
    let w = g.constant(ones(&[1, 1, 2, 2, 2])).unwrap();
    let y = g.conv3d(x, w, None, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), [8.0]);
}

#[test]
fn conv_transpose_doubles_resolution() {
    let mut g = Graph::new(Mode::Eval);
    let x = g.constant(ones(&[1, 2, 3, 3, 3])).unwrap();
    let w = g.constant(ones(&[2, 4, 4, 4, 4])).unwrap();
    let y = g.conv_transpose3d(x, w, None, 2, 1).unwrap();
    assert_eq!(g.shape(y), [1, 4, 6, 6, 6]);
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let err = check_gradients(
        |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
            Ok(y)
        },
        &[
            InputSpec::uniform(&[2, 3, 8, 8]),
            InputSpec::uniform(&[4, 3, 3, 3]),
            InputSpec::uniform(&[4]),
        ],
        0,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn strided_and_transposed_gradients() {
    let cases: Vec<(&str, Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>, Vec<InputSpec>)> = vec![
        (
            "conv2d s2",
            Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1)),
            vec![
                InputSpec::uniform(&[2, 2, 7, 6]),
                InputSpec::uniform(&[3, 2, 3, 3]),
                InputSpec::uniform(&[3]),
            ],
        ),
        (
            "conv_transpose2d",
            Box::new(|g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)),
            vec![
                InputSpec::uniform(&[2, 3, 3, 4]),
                InputSpec::uniform(&[3, 2, 4, 4]),
                InputSpec::uniform(&[2]),
            ],
        ),
        (
            "conv3d",
            Box::new(|g, v| g.conv3d(v[0], v[1], Some(v[2]), 1, 1)),
            vec![
                InputSpec::uniform(&[1, 2, 3, 4, 3]),
                InputSpec::uniform(&[2, 2, 3, 3, 3]),
                InputSpec::uniform(&[2]),
            ],
        ),
        (
            "conv_transpose3d",
            Box::new(|g, v| g.conv_transpose3d(v[0], v[1], Some(v[2]), 2, 1)),
            vec![
                InputSpec::uniform(&[1, 2, 2, 2, 3]),
                InputSpec::uniform(&[2, 2, 4, 4, 4]),
                InputSpec::uniform(&[2]),
            ],
        ),
    ];
    for (name, f, specs) in cases {
        let err = check_gradients(f, &specs, 3).unwrap();
        assert!(err < 1e-4, "{name}: {err}");
    }
}

fn bn(g: &mut Graph<f64>, v: &[Var], c: usize) -> Result<Var> {
    let rm = Tensor::zeros(&[c]);
    let rv = Tensor::full(&[c], 1.0);
    Ok(g.batch_norm(v[0], v[1], v[2], &rm, &rv, 0.1, 1e-5)?.0)
}

#[test]
fn batch_norm_constant_channel_gives_beta() {
    let mut g = Graph::new(Mode::Train);
    let x = g.constant(Tensor::full(&[1, 2, 3, 3], 0.5)).unwrap();
    let gamma = g.constant(Tensor::new(&[2], vec![2.0, 3.0]).unwrap()).unwrap();
    let beta = g.constant(Tensor::new(&[2], vec![-1.0, 0.25]).unwrap()).unwrap();
    let y = bn(&mut g, &[x, gamma, beta], 2).unwrap();
    let d = g.value(y).data();
    assert!(d[..9].iter().all(|&v| v == -1.0));
    assert!(d[9..].iter().all(|&v| v == 0.25));
}

#[test]
fn batch_norm_train_output_is_standardised() {
    let xs = Tensor::from_fn(&[3, 2, 4, 4], |i| ((i * 7919) % 101) as f64 / 17.0 - 2.0);
    let mut g = Graph::new(Mode::Train);
    let x = g.constant(xs).unwrap();
    let gamma = g.constant(ones(&[2])).unwrap();
    let beta = g.constant(Tensor::zeros(&[2])).unwrap();
    let y = bn(&mut g, &[x, gamma, beta], 2).unwrap();
    let d = g.value(y).data();
    for ch in 0..2 {
        let vals: Vec<f64> = (0..3)
            .flat_map(|n| d[(n * 2 + ch) * 16..][..16].to_vec())
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
        assert!(m.abs() < 1e-6, "mean {m}");
        // epsilon in the denominator shrinks the variance by var / (var + eps)
        assert!((v - 1.0).abs() < 1e-4, "var {v}");
    }
}

#[test]
fn batch_norm_updates_running_stats_and_eval_is_per_item() {
    let xs = Tensor::from_fn(&[4, 3, 2, 2], |i| (i as f64).sin());
    let mut g = Graph::new(Mode::Train);
    let x = g.constant(xs.clone()).unwrap();
    let gamma = g.constant(ones(&[3])).unwrap();
    let beta = g.constant(Tensor::zeros(&[3])).unwrap();
    let rm = Tensor::zeros(&[3]);
    let rv = Tensor::full(&[3], 1.0);
    let (_, stats) = g.batch_norm(x, gamma, beta, &rm, &rv, 0.1, 1e-5).unwrap();
    let (nm, nv) = stats.unwrap();
    assert!(nm.data().iter().any(|&v| v != 0.0));
    assert!(nv.data().iter().all(|&v| v > 0.0));

    // eval: each item normalised independently of its batch-mates
    let run = |t: Tensor<f64>| {
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(t).unwrap();
        let gm = g.constant(ones(&[3])).unwrap();
        let bt = g.constant(Tensor::zeros(&[3])).unwrap();
        let (y, s) = g.batch_norm(x, gm, bt, &nm, &nv, 0.1, 1e-5).unwrap();
        assert!(s.is_none());
        g.value(y).clone()
    };
    let full = run(xs.clone());
    for n in 0..4 {
        assert_eq!(run(xs.batch_item(n)), full.batch_item(n));
    }
}

#[test]
fn batch_norm_gradients() {
    for mode in [Mode::Train, Mode::Eval] {
        let err = check_gradients_in(
            |g, v| bn(g, v, 3),
            &[
                InputSpec::uniform(&[2, 3, 3, 2]),
                InputSpec::uniform(&[3]),
                InputSpec::uniform(&[3]),
            ],
            1,
            mode,
        )
        .unwrap();
        assert!(err < 1e-4, "{mode:?}: {err}");
    }
}

#[test]
fn sigmoid_of_zero_is_half() {
    let mut g = Graph::new(Mode::Eval);
    let x = g.constant(Tensor::scalar(0.0)).unwrap();
    let y = g.sigmoid(x).unwrap();
    assert_eq!(g.value(y).item(), 0.5);
}

#[test]
fn concat_shapes_and_gradient_split() {
    let mut g = Graph::new(Mode::Train);
    let a = g.input(Tensor::from_fn(&[2, 3], |i| i as f64)).unwrap();
    let b = g.input(Tensor::from_fn(&[2, 5], |i| -(i as f64))).unwrap();
    let c = g.concat(&[a, b], 1).unwrap();
    assert_eq!(g.shape(c), [2, 8]);
    let w = g.constant(Tensor::from_fn(&[2, 8], |i| (i as f64) * 0.5 + 1.0)).unwrap();
    let p = g.mul(c, w).unwrap();
    let s = g.sum(p).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(a).unwrap(), [1.0, 1.5, 2.0, 5.0, 5.5, 6.0]);
    assert_eq!(
        g.grad(b).unwrap(),
        [2.5, 3.0, 3.5, 4.0, 4.5, 6.5, 7.0, 7.5, 8.0, 8.5]
    );
}

#[test]
fn concat_rejects_mismatched_dims() {
    let mut g = Graph::<f64>::new(Mode::Eval);
    let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.constant(Tensor::zeros(&[3, 3])).unwrap();
    assert!(g.concat(&[a, b], 1).is_err());
}

#[test]
fn concat_then_slice_recovers_branch_gradients() {
    let av = Tensor::from_fn(&[2, 2, 3], |i| (i as f64 * 0.37).cos());
    let bv = Tensor::from_fn(&[2, 4, 3], |i| (i as f64 * 0.11).sin());
    let weights = Tensor::from_fn(&[2, 6, 3], |i| (i as f64 * 1.3).sin());

    // branch gradients through concat
    let mut g = Graph::new(Mode::Train);
    let a = g.input(av.clone()).unwrap();
    let b = g.input(bv.clone()).unwrap();
    let c = g.concat(&[a, b], 1).unwrap();
    let w = g.constant(weights.clone()).unwrap();
    let p = g.mul(c, w).unwrap();
    let s = g.sum(p).unwrap();
    g.backward(s).unwrap();
    let ga = g.grad(a).unwrap().to_vec();
    let gb = g.grad(b).unwrap().to_vec();

    // same upstream gradient, sliced forward
    let mut h = Graph::new(Mode::Train);
    let whole = h.input(weights).unwrap();
    let sa = h.slice(whole, 1, 0, 2).unwrap();
    let sb = h.slice(whole, 1, 2, 4).unwrap();
    assert_eq!(h.value(sa).data(), ga.as_slice());
    assert_eq!(h.value(sb).data(), gb.as_slice());
}

#[test]
fn min_reduce_takes_lowest_index_on_ties() {
    let mut g = Graph::new(Mode::Train);
    let x = g.input(Tensor::new(&[4], vec![3.0, 1.0, 1.0, 2.0]).unwrap()).unwrap();
    let m = g.min_reduce(x, 0).unwrap();
    assert_eq!(g.value(m).item(), 1.0);
    g.backward(m).unwrap();
    assert_eq!(g.grad(x).unwrap(), [0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn min_reduce_gradient_check() {
    let err = check_gradients(
        |g, v| g.min_reduce(v[0], 1),
        &[InputSpec::uniform(&[3, 7, 2])],
        4,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn check_gradients_examples() {
    let linear = check_gradients(
        |g, v| g.linear(v[0], v[1], Some(v[2])),
        &[
            InputSpec::uniform(&[3, 5]),
            InputSpec::uniform(&[4, 5]),
            InputSpec::uniform(&[4]),
        ],
        0,
    )
    .unwrap();
    assert!(linear < 1e-6, "linear {linear}");

    let relu = check_gradients(
        |g, v| g.relu(v[0]),
        &[InputSpec::with(&[4, 6], InputDist::AwayFromZero(0.1))],
        0,
    )
    .unwrap();
    assert!(relu < 1e-6, "relu {relu}");

    let chain = check_gradients(
        |g, v| {
            let a = g.sigmoid(v[0])?;
            let b = g.sigmoid(a)?;
            g.sigmoid(b)
        },
        &[InputSpec::uniform(&[10])],
        0,
    )
    .unwrap();
    assert!(chain < 1e-4, "sigmoid chain {chain}");
}

#[test]
fn log_clips_at_epsilon() {
    let mut g = Graph::new(Mode::Train);
    let x = g.input(Tensor::new(&[2], vec![0.0, 2.0]).unwrap()).unwrap();
    let y = g.log(x, LOG_EPS).unwrap();
    assert_eq!(g.value(y).data()[0], LOG_EPS.ln());
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), [0.0, 0.5]);
}

#[test]
fn non_finite_forward_is_an_error() {
    let mut g = Graph::new(Mode::Eval);
    let x = g.constant(Tensor::scalar(1e300)).unwrap();
    let err = g.square(x).unwrap_err();
    assert!(matches!(err, crate::Error::NonFinite(_)));
}

#[test]
fn pad_crop_pairwise_gradients() {
    let err = check_gradients(
        |g, v| {
            let p = g.reflect_pad2d(v[0], 2, 3)?;
            g.crop2d(p, 4, 5)
        },
        &[InputSpec::uniform(&[1, 2, 3, 4])],
        2,
    )
    .unwrap();
    assert!(err < 1e-6, "pad/crop {err}");
    let err = check_gradients(
        |g, v| g.pairwise_sq_dist(v[0], v[1]),
        &[InputSpec::uniform(&[5, 3]), InputSpec::uniform(&[4, 3])],
        2,
    )
    .unwrap();
    assert!(err < 1e-6, "pairwise {err}");
}

#[test]
fn shift_stack_gradients() {
    for shift in [1, 2] {
        let err = check_gradients(
            |g, v| g.shift_stack(v[0], v[1], 3, shift),
            &[InputSpec::uniform(&[2, 2, 3, 5]), InputSpec::uniform(&[2, 2, 3, 5])],
            shift as u64,
        )
        .unwrap();
        assert!(err < 1e-6, "shift {shift}: {err}");
    }
}

#[test]
fn shift_stack_rejects_bad_arguments() {
    let mut g = Graph::<f64>::new(Mode::Eval);
    let a = g.constant(ones(&[1, 2, 3, 4])).unwrap();
    let b = g.constant(ones(&[1, 2, 3, 5])).unwrap();
    assert!(g.shift_stack(a, b, 2, 1).is_err());
    assert!(g.shift_stack(a, a, 0, 1).is_err());
}

#[test]
fn forward_is_bitwise_repeatable() {
    let x = Tensor::from_fn(&[2, 3, 9, 7], |i| ((i * 31) % 17) as f32 / 7.0 - 1.0);
    let w = Tensor::from_fn(&[5, 3, 3, 3], |i| ((i * 13) % 11) as f32 / 5.0 - 1.0);
    let run = || {
        let mut g = Graph::new(Mode::Eval);
        let xv = g.constant(x.clone()).unwrap();
        let wv = g.constant(w.clone()).unwrap();
        let y = g.conv2d(xv, wv, None, 2, 1).unwrap();
        let r = g.relu(y).unwrap();
        g.value(r).clone()
    };
    let a = run();
    let b = run();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}
