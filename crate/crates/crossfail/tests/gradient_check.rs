//! Analytic gradients vs central finite differences, per layer kind and
//! activation.

use crossfail::nn::{
    finite_difference_grads, Activation, Dense, Layer, Network, Residual,
};
use crossfail::rng::stream;
use rand::Rng;

/// Scalar loss: fixed random linear functional of the network output on a
/// fixed input, evaluated through the forward path only.
fn scalar_loss<'a>(weights: &'a [f64], input: &'a [f64]) -> impl Fn(&Network) -> f64 + 'a {
    move |net: &Network| {
        let y = net.forward(input).unwrap();
        y.iter().zip(weights).map(|(a, b)| a * b).sum()
    }
}

fn check_net(net: &Network, seed_tag: &str, points: usize) {
    let mut worst = 0.0f64;
    for p in 0..points {
        let mut rng = stream(77, seed_tag, p as u64);
        let input: Vec<f64> = (0..net.input_dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let weights: Vec<f64> = (0..net.output_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let cache = net.forward_batch(&input, 1).unwrap();
        let (analytic, _) = net.backward_batch(&cache, &weights);

        let loss = scalar_loss(&weights, &input);
        let numeric = finite_difference_grads(net, &mut |n| loss(n), 1e-5);

        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let denom = a.abs().max(n.abs()).max(1e-4);
            let rel = (a - n).abs() / denom;
            worst = worst.max(rel);
            assert!(
                rel < 1e-4,
                "{seed_tag} point {p} param {i}: analytic {a} vs numeric {n} (rel {rel:.2e})"
            );
        }
    }
    eprintln!("{seed_tag}: worst relative error {worst:.3e}");
}

#[test]
fn dense_layer_gradients_all_activations() {
    for act in [
        Activation::Identity,
        Activation::Relu,
        Activation::Silu,
        Activation::Sigmoid,
        Activation::Tanh,
    ] {
        let mut rng = stream(78, "gc-init", act.tag() as u64);
        let net = Network::new(vec![
            Layer::Dense(Dense::new(4, 6, act, &mut rng)),
            Layer::Dense(Dense::new(6, 3, Activation::Identity, &mut rng)),
        ])
        .unwrap();
        // ReLU kinks break finite differences exactly at 0; random inputs
        // keep pre-activations away from the kink almost surely.
        check_net(&net, &format!("dense-{:?}", act), 100);
    }
}

#[test]
fn residual_block_gradients() {
    let mut rng = stream(79, "gc-res", 0);
    let net = Network::new(vec![
        Layer::Dense(Dense::new(5, 8, Activation::Silu, &mut rng)),
        Layer::Residual(Residual::new(8, 8, &mut rng)),
        Layer::Residual(Residual::new(8, 8, &mut rng)),
        Layer::Dense(Dense::new(8, 4, Activation::Identity, &mut rng)),
    ])
    .unwrap();
    check_net(&net, "residual", 100);
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut rng = stream(80, "gc-input", 0);
    let net = Network::residual_mlp(6, 12, 2, 3, Activation::Identity, &mut rng);
    let input: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let weights: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cache = net.forward_batch(&input, 1).unwrap();
    let (_, gx) = net.backward_batch(&cache, &weights);
    let h = 1e-6;
    for i in 0..6 {
        let mut up = input.clone();
        up[i] += h;
        let mut dn = input.clone();
        dn[i] -= h;
        let f = |x: &[f64]| -> f64 {
            net.forward(x)
                .unwrap()
                .iter()
                .zip(&weights)
                .map(|(a, b)| a * b)
                .sum()
        };
        let num = (f(&up) - f(&dn)) / (2.0 * h);
        let denom = gx[i].abs().max(num.abs()).max(1e-6);
        assert!(
            ((gx[i] - num) / denom).abs() < 1e-4,
            "input grad {i}: {} vs {num}",
            gx[i]
        );
    }
}
