#![allow(dead_code)]

use deepwarp_nn::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi)).param()
}

/// Reduces a node to a scalar with fixed random weights so every output
/// element contributes a distinct amount.
pub fn weighted_sum(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Var {
    let mut r = rng(seed);
    let shape = g.shape(y).to_vec();
    let w = g.input(Tensor::from_fn(&shape, |_| r.gen_range(-1.0..1.0)));
    let p = g.mul(y, w).unwrap();
    g.mean(p)
}

/// Central differences of `f` with respect to every entry of every parameter.
pub fn numeric_grads(params: &mut [Tensor<f64>], h: f64, f: impl Fn(&[Tensor<f64>]) -> f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..params.len() {
        let mut g = vec![0.0; params[i].len()];
        for k in 0..params[i].len() {
            let orig = params[i].data[k];
            params[i].data[k] = orig + h;
            let up = f(params);
            params[i].data[k] = orig - h;
            let down = f(params);
            params[i].data[k] = orig;
            g[k] = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Worst relative error, with the denominator floored at `floor` times the
/// largest numeric gradient magnitude of that tensor.
pub fn max_rel_err(analytic: &[Vec<f64>], numeric: &[Vec<f64>], floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.len(), n.len());
        let scale = n.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let den_floor = (floor * scale).max(1e-12);
        for (x, y) in a.iter().zip(n) {
            let e = (x - y).abs() / x.abs().max(y.abs()).max(den_floor);
            worst = worst.max(e);
        }
    }
    worst
}

/// Builds the scalar with `build` on fresh graphs and compares analytic and
/// numeric gradients for every parameter.
pub fn grad_check(
    params: &mut Vec<Tensor<f64>>,
    h: f64,
    build: impl Fn(&mut Graph<'_, f64>) -> Var,
) -> f64 {
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new(params);
        let root = build(&mut g);
        let grads = g.backward(root);
        grads
            .params
            .into_iter()
            .zip(params.iter())
            .map(|(o, p)| o.unwrap_or_else(|| vec![0.0; p.len()]))
            .collect()
    };
    let numeric = numeric_grads(params, h, |ps| {
        let mut g = Graph::new(ps);
        let root = build(&mut g);
        g.scalar(root)
    });
    max_rel_err(&analytic, &numeric, 1e-3)
}
