//! Analytic backward passes against central finite differences.

use gprda_core::nn::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: usize = 50;
const H: f64 = 1e-6;
const REL_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-7;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    // Keep clear of the leaky kink so finite differences stay one-sided-safe.
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Builds a scalar loss from the input vars.
type Graph<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

fn loss_value(graph: &Graph, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let l = graph(&mut tape, &vars);
    tape.value(l).data()[0]
}

/// Analytic gradient of every input, each scaled by `factor`, compared to
/// central differences of the forward pass.
fn check_scaled(name: &str, graph: &Graph, inputs: &[Tensor], factor: f64) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let l = graph(&mut tape, &vars);
    let grads = tape.backward(l).unwrap();
    for (k, (v, t)) in vars.iter().zip(inputs).enumerate() {
        let analytic = grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let numeric = factor * (loss_value(graph, &plus) - loss_value(graph, &minus)) / (2.0 * H);
            let a = analytic.data()[i];
            let err = (a - numeric).abs();
            assert!(
                err <= REL_TOL * a.abs().max(numeric.abs()) + ABS_FLOOR,
                "{name}: input {k} element {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

fn check(name: &str, graph: &Graph, inputs: &[Tensor]) {
    check_scaled(name, graph, inputs, 1.0)
}

fn target_for(tape: &Tape, y: Var, rng_seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    random(&mut rng, tape.shape(y))
}

#[test]
fn conv1d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..INSTANCES {
        let ci = rng.gen_range(1..=3);
        let co = rng.gen_range(1..=3);
        let k = rng.gen_range(1..=4);
        let s = rng.gen_range(1..=3);
        let p = rng.gen_range(0..=1);
        let l = rng.gen_range(k.max(2)..=(32 / ci).max(k));
        let b = rng.gen_range(1..=2);
        let inputs = [
            random(&mut rng, &[b, ci, l]),
            random(&mut rng, &[co, ci, k]),
            random(&mut rng, &[co]),
        ];
        let seed = case as u64;
        check(
            "conv1d",
            &|tape, v| {
                let y = tape.conv1d(v[0], v[1], v[2], s, p).unwrap();
                let t = target_for(tape, y, seed);
                tape.mse(y, &t).unwrap()
            },
            &inputs,
        );
    }
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..INSTANCES {
        let b = rng.gen_range(1..=4);
        let i = rng.gen_range(1..=6);
        let o = rng.gen_range(1..=5);
        let inputs = [
            random(&mut rng, &[b, i]),
            random(&mut rng, &[o, i]),
            random(&mut rng, &[o]),
        ];
        let seed = 100 + case as u64;
        check(
            "linear",
            &|tape, v| {
                let y = tape.linear(v[0], v[1], v[2]).unwrap();
                let t = target_for(tape, y, seed);
                tape.mse(y, &t).unwrap()
            },
            &inputs,
        );
    }
}

#[test]
fn leaky_relu_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..INSTANCES {
        let n = rng.gen_range(1..=32);
        let slope = rng.gen_range(0.0..0.3);
        let inputs = [random(&mut rng, &[n])];
        let seed = 200 + case as u64;
        check(
            "leaky_relu",
            &|tape, v| {
                let y = tape.leaky_relu(v[0], slope);
                let t = target_for(tape, y, seed);
                tape.mse(y, &t).unwrap()
            },
            &inputs,
        );
    }
}

#[test]
fn upsample_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..INSTANCES {
        let c = rng.gen_range(1..=3);
        let l = rng.gen_range(1..=8);
        let out = rng.gen_range(l..=(l * 4).min(32 / c).max(l));
        let inputs = [random(&mut rng, &[1, c, l])];
        let seed = 300 + case as u64;
        check(
            "upsample_linear",
            &|tape, v| {
                let y = tape.upsample_linear(v[0], out).unwrap();
                let t = target_for(tape, y, seed);
                tape.mse(y, &t).unwrap()
            },
            &inputs,
        );
    }
}

#[test]
fn sum_fuse_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..INSTANCES {
        let b = rng.gen_range(1..=2);
        let c = rng.gen_range(1..=4);
        let l = rng.gen_range(1..=(32 / (b * c)).max(1));
        let inputs = [random(&mut rng, &[b, c, l]), random(&mut rng, &[b, c])];
        let seed = 400 + case as u64;
        check(
            "sum_fuse",
            &|tape, v| {
                let y = tape.sum_fuse(v[0], v[1]).unwrap();
                let t = target_for(tape, y, seed);
                tape.mse(y, &t).unwrap()
            },
            &inputs,
        );
    }
}

#[test]
fn grl_gradients_are_reversed_and_scaled() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..INSTANCES {
        let n = rng.gen_range(1..=32);
        let lambda = rng.gen_range(0.0..2.0);
        let inputs = [random(&mut rng, &[n])];
        let seed = 500 + case as u64;
        check_scaled(
            "grl",
            &|tape, v| {
                let y = tape.grl(v[0], lambda);
                let t = target_for(tape, y, seed);
                tape.mse(y, &t).unwrap()
            },
            &inputs,
            -lambda,
        );
    }
}

#[test]
fn mse_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..INSTANCES {
        let n = rng.gen_range(1..=32);
        let inputs = [random(&mut rng, &[n])];
        let target = random(&mut rng, &[n]);
        check("mse", &|tape, v| tape.mse(v[0], &target).unwrap(), &inputs);
    }
}

#[test]
fn domain_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..INSTANCES {
        let b = rng.gen_range(1..=8);
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..2)).collect();
        let inputs = [random(&mut rng, &[b, 2])];
        check(
            "domain_loss",
            &|tape, v| tape.cross_entropy(v[0], &labels).unwrap(),
            &inputs,
        );
    }
}

#[test]
fn composed_network_gradients() {
    // conv -> leaky -> flatten -> linear -> scale + add, through shared input.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..10 {
        let inputs = [
            random(&mut rng, &[2, 1, 12]),
            random(&mut rng, &[3, 1, 3]),
            random(&mut rng, &[3]),
            random(&mut rng, &[2, 12]),
            random(&mut rng, &[2]),
        ];
        let seed = 600 + case as u64;
        check(
            "composed",
            &|tape, v| {
                let h = tape.conv1d(v[0], v[1], v[2], 3, 0).unwrap();
                let h = tape.leaky_relu(h, 0.01);
                let f = tape.flatten(h);
                let y = tape.linear(f, v[3], v[4]).unwrap();
                let y2 = tape.scale(y, 0.7);
                let z = tape.add(y, y2).unwrap();
                let t = target_for(tape, z, seed);
                tape.mse(z, &t).unwrap()
            },
            &inputs,
        );
    }
}

#[test]
fn grl_forward_is_identity_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random(&mut rng, &[4, 7]);
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let y = tape.grl(v, 0.37);
    assert_eq!(tape.value(y), &x);
}

#[test]
fn grl_with_zero_lambda_blocks_gradient() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
    let y = tape.grl(x, 0.0);
    let l = tape.mse(y, &Tensor::zeros(&[3])).unwrap();
    let g = tape.backward(l).unwrap();
    assert!(g.wrt(x).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn losses_match_hand_values() {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
    let l = tape.mse(p, &Tensor::zeros(&[2])).unwrap();
    assert_eq!(tape.value(l).data()[0], 1.0);
    let z = tape.constant(Tensor::zeros(&[1, 2]));
    let ce0 = tape.cross_entropy(z, &[0]).unwrap();
    let ce1 = tape.cross_entropy(z, &[1]).unwrap();
    assert!((tape.value(ce0).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((tape.value(ce1).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    let strong = tape.constant(Tensor::new(vec![1, 2], vec![30.0, -30.0]).unwrap());
    let ce = tape.cross_entropy(strong, &[0]).unwrap();
    assert!(tape.value(ce).data()[0] < 1e-20);
}

#[test]
fn sgd_on_square_matches_hand_step() {
    use gprda_core::nn::{Group, Optimizer, OptimizerKind, ParameterStore};
    let mut store = ParameterStore::new();
    store.push("w", Group::Estimator, Tensor::scalar(1.0));
    let mut opt = Optimizer::new(OptimizerKind::Sgd, &store, vec![0]);
    let mut tape = Tape::new();
    let p = tape.bind(&store);
    // f(w) = w^2 as mse against 0 over one element.
    let l = tape.mse(p[0], &Tensor::zeros(&[1])).unwrap();
    let g = tape.backward(l).unwrap();
    let pg = tape.param_grads(&g, &store);
    opt.step(&mut store, &pg, 0.1);
    assert!((store.value(0).data()[0] - 0.8).abs() < 1e-15);
    opt.step(&mut store, &[Tensor::zeros(&[1])], 0.1);
    assert!((store.value(0).data()[0] - 0.8).abs() < 1e-15);
}
