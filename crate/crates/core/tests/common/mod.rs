#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ted_core::tensor::{Tape, Tensor, Var};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;
/// Denominator floor so that vanishing gradients are compared absolutely.
pub const FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in ±1, kept away from 0 so relu kinks are never straddled.
pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

pub type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

/// Projects the op output onto fixed random weights to get a scalar.
fn scalar_loss(tape: &mut Tape, out: Var, weights: &Tensor) -> Var {
    let w = tape.constant(weights.clone());
    let p = tape.mul(out, w).unwrap();
    tape.sum(p).unwrap()
}

fn eval(build: &Build, inputs: &[Tensor], weights: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
    let out = build(&mut tape, &vars);
    let l = scalar_loss(&mut tape, out, weights);
    tape.value(l).unwrap().item()
}

/// Largest relative error between analytic and central-difference
/// gradients over every input element.
pub fn max_gradient_error(build: &Build, inputs: &[Tensor], rng: &mut ChaCha8Rng) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
    let out = build(&mut tape, &vars);
    let shape = tape.value(out).unwrap().shape().to_vec();
    let weights = random(&shape, rng);
    let l = scalar_loss(&mut tape, out, &weights);
    let grads = tape.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).unwrap();
        for k in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= STEP;
            let numeric =
                (eval(build, &plus, &weights) - eval(build, &minus, &weights)) / (2.0 * STEP);
            let a = analytic.data()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

pub struct OpCase {
    pub name: &'static str,
    pub shapes: fn(&mut ChaCha8Rng) -> Vec<Vec<usize>>,
    pub build: Box<Build>,
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (
        rng.random_range(1..=4),
        rng.random_range(1..=4),
        rng.random_range(1..=4),
    )
}

fn causal_mask(r: usize, c: usize) -> Tensor {
    let data = (0..r * c)
        .map(|k| if k % c <= k / c { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(&[r, c], data).unwrap()
}

/// Every differentiable tape operation.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "add",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![vec![m, n], vec![m, n]]
            },
            build: Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
        },
        OpCase {
            name: "add_broadcast",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![vec![m, n], vec![n]]
            },
            build: Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
        },
        OpCase {
            name: "sub",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![vec![m, n], vec![n]]
            },
            build: Box::new(|t, v| t.sub(v[0], v[1]).unwrap()),
        },
        OpCase {
            name: "mul",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![vec![m, n], vec![m, n]]
            },
            build: Box::new(|t, v| t.mul(v[0], v[1]).unwrap()),
        },
        OpCase {
            name: "mul_broadcast",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![vec![m, n], vec![1, n]]
            },
            build: Box::new(|t, v| t.mul(v[0], v[1]).unwrap()),
        },
        OpCase {
            name: "scale",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![vec![m, n]]
            },
            build: Box::new(|t, v| t.scale(v[0], -1.7).unwrap()),
        },
        OpCase {
            name: "relu",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![vec![m, n]]
            },
            build: Box::new(|t, v| t.relu(v[0]).unwrap()),
        },
        OpCase {
            name: "sigmoid",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![vec![m, n]]
            },
            build: Box::new(|t, v| t.sigmoid(v[0]).unwrap()),
        },
        OpCase {
            name: "tanh",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![vec![m, n]]
            },
            build: Box::new(|t, v| t.tanh(v[0]).unwrap()),
        },
        OpCase {
            name: "matmul",
            shapes: |r| {
                let (m, k, n) = dims(r);
                vec![vec![m, k], vec![k, n]]
            },
            build: Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()),
        },
        OpCase {
            name: "matmul_nt",
            shapes: |r| {
                let (m, k, n) = dims(r);
                vec![vec![m, k], vec![n, k]]
            },
            build: Box::new(|t, v| t.matmul_nt(v[0], v[1]).unwrap()),
        },
        OpCase {
            name: "transpose",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![vec![m, n]]
            },
            build: Box::new(|t, v| t.transpose(v[0]).unwrap()),
        },
        OpCase {
            name: "masked_softmax",
            shapes: |r| {
                let (m, _, _) = dims(r);
                vec![vec![m, m + 1]]
            },
            build: Box::new(|t, v| {
                let s = t.value(v[0]).unwrap().shape().to_vec();
                t.masked_softmax(v[0], &causal_mask(s[0], s[1])).unwrap()
            }),
        },
        OpCase {
            name: "masked_softmax_of_matmul",
            shapes: |_| vec![vec![4, 4], vec![4, 4]],
            build: Box::new(|t, v| {
                let s = t.matmul(v[0], v[1]).unwrap();
                t.masked_softmax(s, &causal_mask(4, 4)).unwrap()
            }),
        },
        OpCase {
            name: "logsumexp",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![vec![m, n]]
            },
            build: Box::new(|t, v| t.logsumexp(v[0]).unwrap()),
        },
        OpCase {
            name: "slice_cols",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![vec![m, n + 2]]
            },
            build: Box::new(|t, v| t.slice_cols(v[0], 1, 2).unwrap()),
        },
        OpCase {
            name: "concat_cols",
            shapes: |r| {
                let (m, a, b) = dims(r);
                vec![vec![m, a], vec![m, b]]
            },
            build: Box::new(|t, v| t.concat_cols(&[v[0], v[1], v[0]]).unwrap()),
        },
        OpCase {
            name: "concat_rows",
            shapes: |r| {
                let (a, b, n) = dims(r);
                vec![vec![a, n], vec![b, n]]
            },
            build: Box::new(|t, v| t.concat_rows(&[v[1], v[0]]).unwrap()),
        },
        OpCase {
            name: "gather_rows",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![vec![m + 1, n]]
            },
            build: Box::new(|t, v| {
                let m = t.value(v[0]).unwrap().rows();
                t.gather_rows(v[0], &[m - 1, 0, m - 1]).unwrap()
            }),
        },
        OpCase {
            name: "gather_per_row",
            shapes: |r| {
                let (m, _, _) = dims(r);
                vec![vec![m, 3]]
            },
            build: Box::new(|t, v| {
                let m = t.value(v[0]).unwrap().rows();
                let cols: Vec<usize> = (0..m).flat_map(|i| [i % 3, 2, 0]).collect();
                t.gather_per_row(v[0], &cols).unwrap()
            }),
        },
        OpCase {
            name: "sum",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![vec![m, n]]
            },
            build: Box::new(|t, v| t.sum(v[0]).unwrap()),
        },
        OpCase {
            name: "mean",
            shapes: |r| {
                let (m, n, _) = dims(r);
                vec![vec![m, n]]
            },
            build: Box::new(|t, v| t.mean(v[0]).unwrap()),
        },
        OpCase {
            name: "span_attention",
            shapes: |r| {
                let heads = r.random_range(1..=2);
                let dk = r.random_range(1..=3);
                vec![vec![3, heads * dk], vec![5, heads * dk], vec![5, heads * dk], vec![heads]]
            },
            build: Box::new(|t, v| {
                let heads = t.value(v[3]).unwrap().numel();
                t.span_attention(v[0], v[1], v[2], heads, &[(0, 1), (0, 3), (2, 5)])
                    .unwrap()
            }),
        },
    ]
}

/// Runs `instances` random gradient checks per op; returns per-op worst
/// relative error.
pub fn gradient_suite(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    op_cases()
        .iter()
        .map(|case| {
            let mut worst: f64 = 0.0;
            for _ in 0..instances {
                let inputs: Vec<Tensor> = (case.shapes)(&mut r)
                    .iter()
                    .map(|s| random(s, &mut r))
                    .collect();
                worst = worst.max(max_gradient_error(&*case.build, &inputs, &mut r));
            }
            (case.name, worst)
        })
        .collect()
}
