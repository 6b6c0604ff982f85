//! Finite-difference oracles shared by unit, integration and acceptance tests.
//!
//! Nothing here calls a backward pass; gradients are measured from forward
//! evaluations only.

use crate::nnkit::{Layer, Mode, Tensor};

/// Relative error with an absolute floor for gradients near zero.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_differences(x: &mut [f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(x);
            x[i] = orig - h;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Deterministic pseudo-random values in `[-1, 1)`.
pub fn probe_values(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect()
}

/// Largest relative error between a layer's backward pass and central
/// differences of the scalar `sum(output * R)` for a fixed random `R`,
/// across the input and every parameter tensor.
pub fn check_layer<L: Layer>(layer: &mut L, input: &Tensor, mode: Mode, h: f64) -> f64 {
    let (out, cache) = layer.forward(input, mode).expect("forward");
    let r = Tensor::new(out.shape().to_vec(), probe_values(out.len(), 99)).unwrap();
    let (g_in, g_params) = layer.backward(&r, &cache).expect("backward");
    let objective = |layer: &L, x: &Tensor| -> f64 {
        let (y, _) = layer.forward(x, mode).expect("forward");
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };

    let mut x = input.clone();
    let shape = x.shape().to_vec();
    let num_in = central_differences(&mut x.data_mut().to_vec(), h, |v| {
        objective(layer, &Tensor::new(shape.clone(), v.to_vec()).unwrap())
    });
    let mut worst = max_rel_error(g_in.data(), &num_in);

    for (p, g) in g_params.iter().enumerate() {
        let n = layer.params()[p].len();
        let mut num = Vec::with_capacity(n);
        for i in 0..n {
            let orig = layer.params()[p].data()[i];
            layer.params_mut()[p].data_mut()[i] = orig + h;
            let up = objective(layer, input);
            layer.params_mut()[p].data_mut()[i] = orig - h;
            let down = objective(layer, input);
            layer.params_mut()[p].data_mut()[i] = orig;
            num.push((up - down) / (2.0 * h));
        }
        worst = worst.max(max_rel_error(g.data(), &num));
    }
    worst
}
