use super::*;
use crate::optim::bce_loss;
use rand::SeedableRng;

fn random<T: Element>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| T::of(rng.random_range(-1.0..1.0))).unwrap()
}

fn labels<T: Element>(n: usize) -> Tensor<T> {
    Tensor::from_fn([n, 1], |i| T::of((i % 2) as f64)).unwrap()
}

fn tiny_net<T: Element>(seed: u64) -> LayerGraph<T> {
    let (mut b, x) = GraphBuilder::new(&[4, 4, 2], seed).unwrap();
    let c = b.conv("conv", x, 3, 3).unwrap();
    let r = b.relu("relu", c).unwrap();
    let n = b.batch_norm("bn", r, 1e-3, 0.99).unwrap();
    let p = b.maxpool("pool", n).unwrap();
    let f = b.flatten("flat", p).unwrap();
    let d = b.dense("fc", f, 1).unwrap();
    let s = b.sigmoid("out", d).unwrap();
    b.finish(s).unwrap()
}

#[test]
fn logistic_regression_closed_form() {
    // Input -> Dense(1) -> Sigmoid is logistic regression:
    // dL/dw = X^T (p - y) / n, dL/db = sum(p - y) / n.
    let (mut b, x) = GraphBuilder::<f64>::new(&[3], 5).unwrap();
    let d = b.dense("fc", x, 1).unwrap();
    let s = b.sigmoid("out", d).unwrap();
    let mut g = b.finish(s).unwrap();
    let xs = random::<f64>(&[6, 3], 1);
    let ys = labels::<f64>(6);
    let (p, tape) = g.forward(&xs, Mode::Train, 0).unwrap();
    let (_, dl) = bce_loss(&p, &ys).unwrap();
    let grads = g.backward(&tape, &dl).unwrap();

    let mut dw = [0.0; 3];
    let mut db = 0.0;
    for i in 0..6 {
        let r = p.data()[i] - ys.data()[i];
        db += r / 6.0;
        for (j, w) in dw.iter_mut().enumerate() {
            *w += xs.data()[i * 3 + j] * r / 6.0;
        }
    }
    let gw = grads.get("fc.weight").unwrap();
    for j in 0..3 {
        assert!((gw.data()[j] - dw[j]).abs() < 1e-12);
    }
    assert!((grads.get("fc.bias").unwrap().data()[0] - db).abs() < 1e-12);
}

#[test]
fn zero_weights_give_one_half() {
    let mut g = tiny_net::<f32>(3);
    for p in g.trainable_mut() {
        p.data_mut().fill(0.0);
    }
    let out = g.infer(&random(&[3, 4, 4, 2], 2)).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.5));
}

#[test]
fn infer_is_deterministic() {
    let g = tiny_net::<f32>(3);
    let x = random(&[5, 4, 4, 2], 9);
    let a = g.infer(&x).unwrap();
    let b = g.infer(&x).unwrap();
    assert_eq!(a, b);
    assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn every_parameter_gets_a_gradient() {
    let mut g = tiny_net::<f32>(4);
    let x = random(&[4, 4, 4, 2], 3);
    let (p, tape) = g.forward(&x, Mode::Train, 1).unwrap();
    let (_, dl) = bce_loss(&p, &labels(4)).unwrap();
    let grads = g.backward(&tape, &dl).unwrap();
    assert_eq!(grads.len(), g.trainable().len());
    for ((name, t), (gname, gt)) in g.trainable().iter().zip(grads.iter()) {
        assert_eq!(name, gname);
        assert_eq!(t.shape(), gt.shape());
    }
    assert!(grads.all_finite());
}

#[test]
fn stale_tape_rejected() {
    let mut g = tiny_net::<f32>(4);
    let x = random(&[2, 4, 4, 2], 3);
    let (p, tape) = g.forward(&x, Mode::Train, 1).unwrap();
    g.trainable_mut()[0].data_mut()[0] += 1.0;
    let (_, dl) = bce_loss(&p, &labels(2)).unwrap();
    assert!(matches!(g.backward(&tape, &dl), Err(Error::StaleTape { .. })));
}

#[test]
fn infer_tape_cannot_backprop() {
    let mut g = tiny_net::<f32>(4);
    let x = random(&[2, 4, 4, 2], 3);
    let (p, tape) = g.forward(&x, Mode::Infer, 1).unwrap();
    let (_, dl) = bce_loss(&p, &labels(2)).unwrap();
    assert!(g.backward(&tape, &dl).is_err());
}

#[test]
fn batch_shape_error_names_input() {
    let g = tiny_net::<f32>(1);
    let err = g.infer(&random(&[2, 4, 5, 2], 0)).unwrap_err();
    assert!(matches!(&err, Error::Graph { node, .. } if node == "input"), "{err}");
}

#[test]
fn builder_rejects_bad_topologies() {
    let (mut b, x) = GraphBuilder::<f32>::new(&[4, 4, 1], 0).unwrap();
    let c1 = b.conv("c1", x, 2, 3).unwrap();
    let p = b.maxpool("p", c1).unwrap();
    let err = b.add("bad", c1, p).unwrap_err();
    assert!(matches!(err, Error::Graph { ref node, .. } if node == "bad"));
    assert!(b.conv("c1", x, 2, 3).is_err(), "duplicate id");

    let (mut b, x) = GraphBuilder::<f32>::new(&[4], 0).unwrap();
    let d = b.dense("d", x, 2).unwrap();
    assert!(b.finish(d).is_err(), "two outputs per sample");

    let (mut b, x) = GraphBuilder::<f32>::new(&[4], 0).unwrap();
    let _unused = b.dense("unused", x, 3).unwrap();
    let d = b.dense("d", x, 1).unwrap();
    assert!(b.finish(d).is_err(), "dangling node");
}

#[test]
fn add_merge_routes_gradient_unchanged() {
    let (mut b, x) = GraphBuilder::<f64>::new(&[4, 4, 1], 7).unwrap();
    let a = b.conv("a", x, 2, 3).unwrap();
    let c = b.conv("c", x, 2, 1).unwrap();
    let m = b.add("merge", a, c).unwrap();
    let f = b.flatten("flat", m).unwrap();
    let d = b.dense("fc", f, 1).unwrap();
    let s = b.sigmoid("out", d).unwrap();
    let mut g = b.finish(s).unwrap();
    let xs = random::<f64>(&[3, 4, 4, 1], 2);
    let (p, tape) = g.forward(&xs, Mode::Train, 0).unwrap();
    let (_, dl) = bce_loss(&p, &labels(3)).unwrap();
    let (_, node_grads) = g.backward_retain(&tape, &dl).unwrap();
    let idx = |id: &str| g.node_index(id).unwrap();
    let merged = node_grads[idx("merge")].as_ref().unwrap();
    assert_eq!(node_grads[idx("a")].as_ref().unwrap(), merged);
    assert_eq!(node_grads[idx("c")].as_ref().unwrap(), merged);

    // perturbing the input through each branch separately sums to the
    // retained input gradient
    let dx = node_grads[0].as_ref().unwrap();
    let loss = |g: &mut LayerGraph<f64>, xs: &Tensor<f64>| {
        let (p, _) = g.forward(xs, Mode::Train, 0).unwrap();
        bce_loss(&p, &labels(3)).unwrap().0
    };
    let h = 1e-6;
    for i in [0, 5, 17, 40] {
        let mut up = xs.clone();
        up.data_mut()[i] += h;
        let mut dn = xs.clone();
        dn.data_mut()[i] -= h;
        let num = (loss(&mut g, &up) - loss(&mut g, &dn)) / (2.0 * h);
        assert!((dx.data()[i] - num).abs() < 1e-8, "{} vs {num}", dx.data()[i]);
    }
}

#[test]
fn train_mode_updates_moving_stats_only_there() {
    let mut g = tiny_net::<f32>(2);
    let x = random(&[4, 4, 4, 2], 5);
    let before = g.state();
    let before: Vec<Tensor<f32>> = before.into_iter().map(|(_, t)| t.clone()).collect();
    g.forward(&x, Mode::Infer, 0).unwrap();
    let same: Vec<Tensor<f32>> = g.state().into_iter().map(|(_, t)| t.clone()).collect();
    assert_eq!(before, same);
    g.forward(&x, Mode::Train, 0).unwrap();
    let bn = g.node("bn").unwrap();
    let Layer::BatchNorm(s) = &bn.layer else { panic!() };
    assert!(s.moving_mean.data().iter().any(|&v| v != 0.0));
}

#[test]
fn state_round_trip() {
    let a = tiny_net::<f32>(1);
    let mut b = tiny_net::<f32>(2);
    assert_ne!(a.trainable()[0].1, b.trainable()[0].1);
    let saved: Vec<(String, Tensor<f32>)> = a.state().into_iter().map(|(n, t)| (n, t.clone())).collect();
    b.load_state(&saved).unwrap();
    let x = random(&[3, 4, 4, 2], 8);
    assert_eq!(a.infer(&x).unwrap(), b.infer(&x).unwrap());

    let mut wrong = saved.clone();
    wrong[0].0 = "nope.kernel".into();
    assert!(b.load_state(&wrong).is_err());
}
