//! Checks the hand-written GRU backward pass against central finite
//! differences of a scalar loss `L = c · h'`.
//!
//! ```sh
//! cargo run --example gru_gradient_check -- [dimension]
//! ```

use iterative_retriever::recurrent::GruParams;
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest relative error over every parameter, the incoming state and the input.
pub fn run(d: usize) -> Result<f64, Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut vec = |n: usize| Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
    let (h, x, c) = (vec(d), vec(d), vec(d));
    let mut gru = GruParams::random(d, &mut ChaCha8Rng::seed_from_u64(12));
    gru.bz = Array1::from_elem(d, 0.3);
    gru.bh = Array1::from_elem(d, -0.2);

    let loss = |g: &GruParams, h: &Array1<f64>, x: &Array1<f64>| -> f64 {
        g.step(h.view(), x.view()).unwrap().0.dot(&c)
    };
    let (_, tape) = gru.step(h.view(), x.view())?;
    let grads = gru.backward(&tape, c.view())?;

    let eps = 1e-6;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
    let mut worst: f64 = 0.0;

    let analytic = [
        &grads.params.wz, &grads.params.uz, &grads.params.wr,
        &grads.params.ur, &grads.params.wh, &grads.params.uh,
    ];
    let names = ["Wz", "Uz", "Wr", "Ur", "Wh", "Uh"];
    for (m, name) in names.iter().enumerate() {
        let mut group: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let nudge = |delta: f64| {
                    let mut g = gru.clone();
                    let target = [&mut g.wz, &mut g.uz, &mut g.wr, &mut g.ur, &mut g.wh, &mut g.uh];
                    let mat = target.into_iter().nth(m).unwrap();
                    mat[[i, j]] += delta;
                    loss(&g, &h, &x)
                };
                let numeric = (nudge(eps) - nudge(-eps)) / (2.0 * eps);
                group = group.max(rel(analytic[m][[i, j]], numeric));
            }
        }
        println!("{name}: max relative error {group:.2e}");
        worst = worst.max(group);
    }
    for i in 0..d {
        let shifted = |v: &Array1<f64>, delta: f64| {
            let mut v = v.clone();
            v[i] += delta;
            v
        };
        let dh = (loss(&gru, &shifted(&h, eps), &x) - loss(&gru, &shifted(&h, -eps), &x)) / (2.0 * eps);
        let dx = (loss(&gru, &h, &shifted(&x, eps)) - loss(&gru, &h, &shifted(&x, -eps))) / (2.0 * eps);
        worst = worst.max(rel(grads.h[i], dh)).max(rel(grads.x[i], dx));
    }
    println!("overall max relative error {worst:.2e}");
    Ok(worst)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let d = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    run(d)?;
    Ok(())
}
