use zsel_nn::graph::sigmoid;
use zsel_nn::layers::GruCell;
use zsel_nn::{Graph, NnError, ParameterSet, Tensor};

#[test]
fn sum_backward_is_all_ones() {
    let mut g = Graph::<f32>::new();
    let x = g.leaf(Tensor::from_fn(&[2, 3], |i| i as f32));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0; 6]);
}

#[test]
fn cosine_of_vector_with_itself_is_one_and_gradient_is_orthogonal() {
    let v = vec![0.3, -1.2, 2.0, 0.7];
    let mut g = Graph::<f64>::new();
    let a = g.leaf(Tensor::new(&[1, 4], v.clone()).unwrap());
    let b = g.constant(Tensor::new(&[1, 4], v.clone()).unwrap());
    let c = g.cosine_similarity(a, b).unwrap();
    assert!((g.value(c).item() - 1.0).abs() < 1e-12);
    let s = g.sum(c);
    let grads = g.backward(s).unwrap();
    let dot: f64 = grads.get(a).unwrap().iter().zip(&v).map(|(x, y)| x * y).sum();
    assert!(dot.abs() < 1e-12);
}

#[test]
fn cosine_guard_is_counted_for_zero_vectors() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::full(&[2, 3], 1.0));
    let c = g.cosine_similarity(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[0.0, 0.0]);
    assert_eq!(g.eps_guard_count(), 2);
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[4, 2]));
    match g.matmul(a, b) {
        Err(NnError::ShapeMismatch { op, left, right }) => {
            assert_eq!(op, "matmul");
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![4, 2]);
        }
        other => panic!("unexpected {:?}", other.map(|_| ())),
    }
    assert!(g.add(a, b).is_err());
}

#[test]
fn conv_matches_direct_summation() {
    // 1 sample, 1 channel 3x3 input, 1 filter 2x2, stride 1, no padding.
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap());
    let w = g.constant(Tensor::new(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, -1.0]).unwrap());
    let b = g.constant(Tensor::new(&[1], vec![0.5]).unwrap());
    let y = g.conv2d(x, w, Some(b), zsel_nn::Conv2dSpec { stride: 1, pad: 0 }).unwrap();
    // x[i][j] - x[i+1][j+1] = -4 everywhere, plus bias.
    assert_eq!(g.shape(y), &[1, 1, 2, 2]);
    assert_eq!(g.value(y).data(), &[-3.5; 4]);
}

#[test]
fn gru_with_zero_parameters_halves_the_state() {
    let cell = GruCell::new("gru", 3, 2);
    let mut ps = ParameterSet::<f64>::new();
    for n in cell.names() {
        let shape = match n.rsplit('.').next().unwrap() {
            "w_ih" => vec![3, 6],
            "w_hh" => vec![2, 6],
            _ => vec![6],
        };
        ps.insert(&n, Tensor::zeros(&shape)).unwrap();
    }
    let mut g = Graph::new();
    let b = cell.bind(&mut g, &ps).unwrap();
    let x = g.constant(Tensor::new(&[1, 3], vec![0.4, -2.0, 1.0]).unwrap());
    let h = g.constant(Tensor::new(&[1, 2], vec![0.8, -0.6]).unwrap());
    let h2 = b.step(&mut g, x, h).unwrap();
    // r = z = sigmoid(0) = 0.5, n = tanh(0) = 0, h' = (1 - z) n + z h.
    let z = sigmoid(0.0f64);
    assert_eq!(z, 0.5);
    assert_eq!(g.value(h2).data(), &[0.8 * z, -0.6 * z]);
}

#[test]
fn masked_hidden_state_restarts_from_zero() {
    let cell = GruCell::new("gru", 2, 2);
    let mut ps = ParameterSet::<f64>::new();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
    cell.init(&mut ps, &mut rng).unwrap();
    let run = |h0: Vec<f64>, mask: f64| {
        let mut g = Graph::inference();
        let b = cell.bind(&mut g, &ps).unwrap();
        let x = g.constant(Tensor::new(&[1, 2], vec![0.1, 0.2]).unwrap());
        let h = g.constant(Tensor::new(&[1, 2], h0).unwrap());
        let m = g.constant(Tensor::new(&[1], vec![mask]).unwrap());
        let hm = g.scale_rows(h, m).unwrap();
        let out = b.step(&mut g, x, hm).unwrap();
        g.value(out).data().to_vec()
    };
    assert_eq!(run(vec![0.9, -0.9], 0.0), run(vec![0.0, 0.0], 1.0));
    assert_ne!(run(vec![0.9, -0.9], 1.0), run(vec![0.0, 0.0], 1.0));
}

#[test]
fn frozen_parameters_receive_no_gradient_node() {
    let mut ps = ParameterSet::<f32>::new();
    ps.insert("a.w", Tensor::full(&[2], 1.0)).unwrap();
    ps.insert("b.w", Tensor::full(&[2], 1.0)).unwrap();
    ps.freeze_prefix("a.");
    let mut g = Graph::new();
    let a = g.param(&ps, "a.w").unwrap();
    let b = g.param(&ps, "b.w").unwrap();
    let m = g.mul(a, b).unwrap();
    let s = g.sum(m);
    let grads = g.backward(s).unwrap();
    ps.accumulate_grads(&g, &grads);
    assert_eq!(ps.param("a.w").unwrap().grad(), &[0.0, 0.0]);
    assert_eq!(ps.param("b.w").unwrap().grad(), &[1.0, 1.0]);
}
