use bayes_concepts_core::nn::{backward, Activation, CrossEntropy, DenseLayer, Loss, MlpModel, SquaredError};
use bayes_concepts_core::{rng, Tensor};

fn dense(rows: usize, cols: usize, w: &[f64], b: &[f64], act: Activation) -> DenseLayer {
    DenseLayer::new(
        Tensor::matrix(rows, cols, w.to_vec()).unwrap(),
        Tensor::vector(b.to_vec()).unwrap(),
        act,
    )
    .unwrap()
}

fn flat(model: &MlpModel) -> Vec<f64> {
    let mut out = Vec::new();
    for l in model.layers() {
        out.extend_from_slice(l.weight().data());
        out.extend_from_slice(l.bias().data());
    }
    out
}

fn with_params(model: &MlpModel, params: &[f64]) -> MlpModel {
    let mut at = 0;
    let layers = model
        .layers()
        .iter()
        .map(|l| {
            let (nw, nb) = (l.weight().len(), l.bias().len());
            let w = &params[at..at + nw];
            let b = &params[at + nw..at + nw + nb];
            at += nw + nb;
            dense(l.output_dim(), l.input_dim(), w, b, l.activation())
        })
        .collect();
    MlpModel::new(layers).unwrap()
}

fn gating(model: &MlpModel, x: &[f64]) -> Vec<bool> {
    model
        .forward(x)
        .unwrap()
        .pre_activations
        .iter()
        .flatten()
        .map(|&v| v > 0.0)
        .collect()
}

fn loss_at(model: &MlpModel, x: &[f64], loss: &impl Loss) -> f64 {
    loss.value_and_gradient(&model.logits(x).unwrap()).unwrap().0
}

#[test]
fn identity_layer_passes_input_through() {
    let m = MlpModel::new(vec![dense(2, 2, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], Activation::Identity)]).unwrap();
    assert_eq!(m.logits(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
}

#[test]
fn relu_layer_zeroes_negative_pre_activations() {
    let m = MlpModel::new(vec![
        dense(2, 2, &[1.0, 0.0, 0.0, 1.0], &[-2.0, 1.0], Activation::Relu),
        dense(1, 2, &[1.0, 1.0], &[0.0], Activation::Identity),
    ])
    .unwrap();
    let t = m.forward(&[1.0, 2.0]).unwrap();
    assert_eq!(t.pre_activations[0], vec![-1.0, 3.0]);
    assert_eq!(t.activations[0], vec![0.0, 3.0]);
}

#[test]
fn two_layer_hand_evaluation() {
    let m = MlpModel::new(vec![
        dense(2, 2, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], Activation::Relu),
        dense(1, 2, &[1.0, 1.0], &[0.0], Activation::Identity),
    ])
    .unwrap();
    assert_eq!(m.logits(&[2.0, -3.0]).unwrap(), vec![2.0]);
}

#[test]
fn input_dimension_mismatch_is_a_shape_error() {
    let m = MlpModel::init(&[3, 4, 2], 1).unwrap();
    assert!(m.forward(&[1.0, 2.0]).is_err());
}

#[test]
fn scalar_chain_rule_example() {
    let m = MlpModel::new(vec![dense(1, 1, &[2.0], &[0.0], Activation::Identity)]).unwrap();
    let (value, g) = backward(&m, &[3.0], &SquaredError { target: &[0.0] }).unwrap();
    assert_eq!(value, 36.0);
    assert_eq!(g.weights[0], vec![36.0]);
}

#[test]
fn dead_relu_blocks_upstream_weight_gradients() {
    // zero input and zero bias leave every hidden unit at exactly 0
    let m = MlpModel::init(&[3, 5, 2], 4).unwrap();
    let zeroed: Vec<DenseLayer> = m
        .layers()
        .iter()
        .map(|l| dense(l.output_dim(), l.input_dim(), l.weight().data(), &vec![0.0; l.output_dim()], l.activation()))
        .collect();
    let m = MlpModel::new(zeroed).unwrap();
    let (_, g) = backward(&m, &[0.0; 3], &CrossEntropy { label: 1 }).unwrap();
    assert!(g.weights.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn gradients_match_central_differences() {
    let h = 1e-5;
    let mut checked = 0;
    for seed in 0..120u64 {
        let mut r = rng::seeded(seed);
        let depth = 1 + (seed % 4) as usize;
        let mut widths = vec![2 + (seed % 5) as usize];
        for _ in 1..depth {
            widths.push(3 + (rng::uniform(&mut r, 0.0, 29.0) as usize));
        }
        widths.push(3);
        let model = MlpModel::init(&widths, seed).unwrap();
        let x: Vec<f64> = (0..widths[0]).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
        let loss = CrossEntropy { label: (seed % 3) as usize };
        let (_, grads) = backward(&model, &x, &loss).unwrap();
        let analytic = grads.flat_parameters();
        let params = flat(&model);
        let gate = gating(&model, &x);
        // a handful of coordinates per network keeps the run short
        for k in (0..params.len()).step_by(1 + params.len() / 25) {
            let mut up = params.clone();
            up[k] += h;
            let mut down = params.clone();
            down[k] -= h;
            let (mu, md) = (with_params(&model, &up), with_params(&model, &down));
            if gating(&mu, &x) != gate || gating(&md, &x) != gate {
                continue;
            }
            let fd = (loss_at(&mu, &x, &loss) - loss_at(&md, &x, &loss)) / (2.0 * h);
            let scale = analytic[k].abs().max(fd.abs()).max(1e-4);
            assert!(
                (analytic[k] - fd).abs() / scale <= 1e-5,
                "seed {seed} param {k}: {} vs {fd}",
                analytic[k]
            );
            checked += 1;
        }
        for i in 0..x.len() {
            let mut up = x.clone();
            up[i] += h;
            let mut down = x.clone();
            down[i] -= h;
            if gating(&model, &up) != gate || gating(&model, &down) != gate {
                continue;
            }
            let fd = (loss_at(&model, &up, &loss) - loss_at(&model, &down, &loss)) / (2.0 * h);
            let scale = grads.input[i].abs().max(fd.abs()).max(1e-4);
            assert!((grads.input[i] - fd).abs() / scale <= 1e-5, "seed {seed} input {i}");
        }
    }
    assert!(checked > 1000);
}

#[test]
fn forward_is_pure_and_relu_trace_is_exact() {
    for seed in 0..50u64 {
        let model = MlpModel::init(&[4, 16, 16, 3], seed).unwrap();
        let mut r = rng::seeded(seed + 1000);
        let x: Vec<f64> = (0..4).map(|_| rng::uniform(&mut r, -3.0, 3.0)).collect();
        let a = model.forward(&x).unwrap();
        let b = model.forward(&x).unwrap();
        assert_eq!(a, b);
        for (l, layer) in model.layers().iter().enumerate() {
            let expect: Vec<f64> = match layer.activation() {
                Activation::Relu => a.pre_activations[l].iter().map(|v| v.max(0.0)).collect(),
                Activation::Identity => a.pre_activations[l].clone(),
            };
            assert_eq!(a.activations[l], expect);
        }
        assert_eq!(model.layers().last().unwrap().activation(), Activation::Identity);
    }
}
