//! Randomized finite-difference checks for every primitive on the tape.
//!
//! Each case draws random shapes and inputs at `f64`, reduces the primitive's
//! output to a scalar through a random weighting (so the whole Jacobian is
//! exercised), and compares reverse-mode gradients with central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{GradCheck, Graph, Result, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const FLOOR: f64 = 1e-8;

/// Worst relative error seen for one primitive over all its random cases.
#[derive(Debug, Clone)]
pub struct PrimitiveReport {
    pub name: &'static str,
    pub cases: usize,
    pub max_rel_error: f64,
}

type Builder = fn(&mut Graph<f64>, &[Var], &Case) -> Result<Var>;

/// Shape/index metadata drawn per case.
#[derive(Debug, Clone, Default)]
pub struct Case {
    pub axis: usize,
    pub axes: Vec<usize>,
    pub shape: Vec<usize>,
    pub indices: Vec<usize>,
    pub range: (usize, usize),
    pub mask: Vec<bool>,
}

fn rand_shape(rng: &mut ChaCha8Rng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.gen_range(1..=4)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

fn away_from(rng: &mut ChaCha8Rng, shape: &[usize], kink: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = rng.gen_range(-3.0..3.0);
            if (v.abs() - kink).abs() > 1e-2 {
                break v;
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

/// Drops leading dims or sets dims to 1 so `b` broadcasts against `a`.
fn broadcast_variant(rng: &mut ChaCha8Rng, a: &[usize]) -> Vec<usize> {
    let drop = rng.gen_range(0..=a.len());
    a[drop..]
        .iter()
        .map(|&d| if rng.gen_bool(0.3) { 1 } else { d })
        .collect()
}

struct Spec {
    name: &'static str,
    build: Builder,
    draw: fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Case),
}

fn weighted(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(y).to_vec();
    let w = g.constant(rand_tensor(&mut rng, &shape, -1.0, 1.0));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn binary_inputs(rng: &mut ChaCha8Rng, denom: bool) -> (Vec<Tensor<f64>>, Case) {
    let rank = rng.gen_range(1..=3);
    let a = rand_shape(rng, rank);
    let b = broadcast_variant(rng, &a);
    let (sa, sb) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
    let ta = rand_tensor(rng, &sa, -2.0, 2.0);
    let tb = if denom {
        let t = rand_tensor(rng, &sb, 0.5, 2.0);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        t.map(|x| x * sign)
    } else {
        rand_tensor(rng, &sb, -2.0, 2.0)
    };
    (vec![ta, tb], Case::default())
}

fn unary_inputs(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> (Vec<Tensor<f64>>, Case) {
    let rank = rng.gen_range(1..=3);
    let s = rand_shape(rng, rank);
    (vec![rand_tensor(rng, &s, lo, hi)], Case::default())
}

fn specs() -> Vec<Spec> {
    vec![
        Spec {
            name: "add",
            build: |g, v, _| g.add(v[0], v[1]),
            draw: |r| binary_inputs(r, false),
        },
        Spec {
            name: "sub",
            build: |g, v, _| g.sub(v[0], v[1]),
            draw: |r| binary_inputs(r, false),
        },
        Spec {
            name: "mul",
            build: |g, v, _| g.mul(v[0], v[1]),
            draw: |r| binary_inputs(r, false),
        },
        Spec {
            name: "div",
            build: |g, v, _| g.div(v[0], v[1]),
            draw: |r| binary_inputs(r, true),
        },
        Spec {
            name: "neg",
            build: |g, v, _| Ok(g.neg(v[0])),
            draw: |r| unary_inputs(r, -2.0, 2.0),
        },
        Spec {
            name: "scale",
            build: |g, v, _| Ok(g.scale(v[0], -1.7)),
            draw: |r| unary_inputs(r, -2.0, 2.0),
        },
        Spec {
            name: "add_scalar",
            build: |g, v, _| Ok(g.add_scalar(v[0], 0.3)),
            draw: |r| unary_inputs(r, -2.0, 2.0),
        },
        Spec {
            name: "matmul",
            build: |g, v, _| g.matmul(v[0], v[1]),
            draw: |r| {
                let (m, k, n) = (r.gen_range(1..=4), r.gen_range(1..=4), r.gen_range(1..=4));
                let batched = r.gen_range(0..3);
                let (sa, sb) = match batched {
                    0 => (vec![m, k], vec![k, n]),
                    1 => {
                        let b = r.gen_range(1..=3);
                        (vec![b, m, k], vec![b, k, n])
                    }
                    _ => (vec![r.gen_range(1..=3), m, k], vec![k, n]),
                };
                let a = rand_tensor(r, &sa, -1.0, 1.0);
                let b = rand_tensor(r, &sb, -1.0, 1.0);
                (vec![a, b], Case::default())
            },
        },
        Spec {
            name: "transpose",
            build: |g, v, _| g.transpose(v[0]),
            draw: |r| {
                let rank = r.gen_range(2..=3);
                let s = rand_shape(r, rank);
                (vec![rand_tensor(r, &s, -1.0, 1.0)], Case::default())
            },
        },
        Spec {
            name: "permute",
            build: |g, v, c| g.permute(v[0], &c.axes),
            draw: |r| {
                let s = rand_shape(r, 3);
                let mut axes = vec![0, 1, 2];
                for i in (1..3).rev() {
                    let j = r.gen_range(0..=i);
                    axes.swap(i, j);
                }
                (
                    vec![rand_tensor(r, &s, -1.0, 1.0)],
                    Case {
                        axes,
                        ..Case::default()
                    },
                )
            },
        },
        Spec {
            name: "reshape",
            build: |g, v, c| g.reshape(v[0], &c.shape),
            draw: |r| {
                let (a, b) = (r.gen_range(1..=4), r.gen_range(1..=4));
                let c = r.gen_range(1..=3);
                (
                    vec![rand_tensor(r, &[a, b, c], -1.0, 1.0)],
                    Case {
                        shape: vec![a * b, c],
                        ..Case::default()
                    },
                )
            },
        },
        Spec {
            name: "concat",
            build: |g, v, c| g.concat(v, c.axis),
            draw: |r| {
                let s = rand_shape(r, 3);
                let axis = r.gen_range(0..3);
                let parts = r.gen_range(2..=3);
                let ts = (0..parts)
                    .map(|_| {
                        let mut si = s.clone();
                        si[axis] = r.gen_range(1..=3);
                        rand_tensor(r, &si, -1.0, 1.0)
                    })
                    .collect();
                (
                    ts,
                    Case {
                        axis,
                        ..Case::default()
                    },
                )
            },
        },
        Spec {
            name: "slice",
            build: |g, v, c| g.slice(v[0], c.axis, c.range.0, c.range.1),
            draw: |r| {
                let s = rand_shape(r, 3);
                let axis = r.gen_range(0..3);
                let start = r.gen_range(0..s[axis]);
                let end = r.gen_range(start + 1..=s[axis]);
                (
                    vec![rand_tensor(r, &s, -1.0, 1.0)],
                    Case {
                        axis,
                        range: (start, end),
                        ..Case::default()
                    },
                )
            },
        },
        Spec {
            name: "gather",
            build: |g, v, c| g.gather(v[0], &c.indices),
            draw: |r| {
                let rows = r.gen_range(1..=5);
                let cols = r.gen_range(1..=4);
                let k = r.gen_range(1..=6);
                let indices = (0..k).map(|_| r.gen_range(0..rows)).collect();
                (
                    vec![rand_tensor(r, &[rows, cols], -1.0, 1.0)],
                    Case {
                        indices,
                        ..Case::default()
                    },
                )
            },
        },
        Spec {
            name: "broadcast_to",
            build: |g, v, c| g.broadcast_to(v[0], &c.shape),
            draw: |r| {
                let target = rand_shape(r, 3);
                let s = broadcast_variant(r, &target);
                (
                    vec![rand_tensor(r, &s, -1.0, 1.0)],
                    Case {
                        shape: target,
                        ..Case::default()
                    },
                )
            },
        },
        Spec {
            name: "sum_axis",
            build: |g, v, c| g.sum_axis(v[0], c.axis),
            draw: |r| {
                let s = rand_shape(r, 3);
                let axis = r.gen_range(0..3);
                (
                    vec![rand_tensor(r, &s, -1.0, 1.0)],
                    Case {
                        axis,
                        ..Case::default()
                    },
                )
            },
        },
        Spec {
            name: "mean_axis",
            build: |g, v, c| g.mean_axis(v[0], c.axis),
            draw: |r| {
                let s = rand_shape(r, 3);
                let axis = r.gen_range(0..3);
                (
                    vec![rand_tensor(r, &s, -1.0, 1.0)],
                    Case {
                        axis,
                        ..Case::default()
                    },
                )
            },
        },
        Spec {
            name: "mean",
            build: |g, v, _| Ok(g.mean(v[0])),
            draw: |r| unary_inputs(r, -2.0, 2.0),
        },
        Spec {
            name: "softmax",
            build: |g, v, _| g.softmax(v[0]),
            draw: |r| unary_inputs(r, -3.0, 3.0),
        },
        Spec {
            name: "log_softmax",
            build: |g, v, _| g.log_softmax(v[0]),
            draw: |r| unary_inputs(r, -3.0, 3.0),
        },
        Spec {
            name: "layer_norm",
            build: |g, v, _| g.layer_norm(v[0], 1e-5),
            draw: |r| {
                let rows = r.gen_range(1..=3);
                let n = r.gen_range(2..=6);
                (vec![rand_tensor(r, &[rows, n], -2.0, 2.0)], Case::default())
            },
        },
        Spec {
            name: "gelu",
            build: |g, v, _| Ok(g.gelu(v[0])),
            draw: |r| unary_inputs(r, -3.0, 3.0),
        },
        Spec {
            name: "sigmoid",
            build: |g, v, _| Ok(g.sigmoid(v[0])),
            draw: |r| unary_inputs(r, -4.0, 4.0),
        },
        Spec {
            name: "tanh",
            build: |g, v, _| Ok(g.tanh(v[0])),
            draw: |r| unary_inputs(r, -2.0, 2.0),
        },
        Spec {
            name: "exp",
            build: |g, v, _| Ok(g.exp(v[0])),
            draw: |r| unary_inputs(r, -2.0, 2.0),
        },
        Spec {
            name: "log",
            build: |g, v, _| Ok(g.log(v[0])),
            draw: |r| unary_inputs(r, 0.3, 3.0),
        },
        Spec {
            name: "sqrt",
            build: |g, v, _| Ok(g.sqrt(v[0])),
            draw: |r| unary_inputs(r, 0.3, 3.0),
        },
        Spec {
            name: "square",
            build: |g, v, _| Ok(g.square(v[0])),
            draw: |r| unary_inputs(r, -2.0, 2.0),
        },
        Spec {
            name: "softplus",
            build: |g, v, _| Ok(g.softplus(v[0])),
            draw: |r| unary_inputs(r, -4.0, 4.0),
        },
        Spec {
            name: "smooth_l1",
            build: |g, v, _| Ok(g.smooth_l1(v[0])),
            draw: |r| {
                let s = rand_shape(r, 2);
                (vec![away_from(r, &s, 1.0)], Case::default())
            },
        },
        Spec {
            name: "masked_fill",
            build: |g, v, c| g.masked_fill(v[0], &c.mask, -3.0),
            draw: |r| {
                let s = rand_shape(r, 2);
                let n = s.iter().product();
                let mask = (0..n).map(|_| r.gen_bool(0.4)).collect();
                (
                    vec![rand_tensor(r, &s, -1.0, 1.0)],
                    Case {
                        mask,
                        ..Case::default()
                    },
                )
            },
        },
    ]
}

/// Names of every primitive covered by [`run`].
pub fn primitive_names() -> Vec<&'static str> {
    specs().iter().map(|s| s.name).collect()
}

/// Checks every primitive on `cases` random draws seeded from `seed`.
pub fn run(seed: u64, cases: usize) -> Result<Vec<PrimitiveReport>> {
    let mut out = Vec::new();
    for (k, spec) in specs().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((k as u64 + 1) << 32));
        let mut worst: f64 = 0.0;
        for i in 0..cases {
            let (inputs, case) = (spec.draw)(&mut rng);
            let wseed = seed.wrapping_mul(31).wrapping_add(i as u64);
            let build = spec.build;
            let check = GradCheck::run(
                |g, v| {
                    let y = build(g, v, &case)?;
                    weighted(g, y, wseed)
                },
                &inputs,
                STEP,
                FLOOR,
            )?;
            worst = worst.max(check.max_rel_error);
        }
        out.push(PrimitiveReport {
            name: spec.name,
            cases,
            max_rel_error: worst,
        });
    }
    Ok(out)
}
