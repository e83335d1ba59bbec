//! Manual timing probes at production resolution; not part of the normal
//! suite. Run with:
//!
//! `cargo test -p vortwave --test perf -- --ignored --nocapture`

use std::time::Instant;

use vortwave::field::{SamplerScratch, VectorSampler};
use vortwave::lattice::{make_grid, LatticeSpec};
use vortwave::synth::{random_elevation, random_flow_perturbation, Rng};
use vortwave::transport::Transport;
use vortwave::field::VectorField;

fn production_velocity(noise: f64) -> (std::sync::Arc<vortwave::Grid>, VectorField) {
    let spec = LatticeSpec::from_wavenumbers(1.0, 1.0, 1.0, 1.0, 1.0, 24, 24, 33).unwrap();
    let g = make_grid(&spec).unwrap();
    let mut rng = Rng::new(7);
    let c = 1.94;
    let mut u = VectorField::uniform_x1(&g, c)
        .add(&random_flow_perturbation(&g, &mut rng, 0.02 * c));
    // Iterative solves leave a noise floor across the whole spectrum; model it
    // so the probe sees realistic sampler block counts.
    if noise > 0.0 {
        for comp in u.comps.iter_mut() {
            for v in comp.iter_mut() {
                *v += num_complex::Complex64::new(noise * rng.uniform(), noise * rng.uniform());
            }
        }
        u.sym = None;
        u.divergence_free = false;
    }
    (g, u)
}

#[test]
#[ignore]
fn probe_sampler_eval() {
    for (label, noise) in [("clean", 0.0), ("noisy", 1e-10)] {
        let (_g, u) = production_velocity(noise);
        let samp = VectorSampler::new(&u);
        let mut scratch = SamplerScratch::new();
        let n = 200_000;
        let t0 = Instant::now();
        let mut acc = 0.0;
        for i in 0..n {
            let x = i as f64 * 1e-3;
            let v = samp.eval(x % 6.28, (1.7 * x) % 6.28, -0.5 + 0.4 * (x % 1.0), &mut scratch);
            acc += v[0] + v[1] + v[2];
        }
        let dt = t0.elapsed().as_secs_f64();
        println!("{label}: {:.3} us/eval (acc {acc:.3})", dt / n as f64 * 1e6);
    }
}

#[test]
#[ignore]
fn probe_transport_solve() {
    for (label, noise, mirror) in
        [("clean", 0.0, false), ("mirror", 0.0, true), ("noisy", 1e-10, false)]
    {
        let (g, u) = production_velocity(noise);
        let mut rng = Rng::new(11);
        let eta = random_elevation(&g, &mut rng, 1e-2);
        let mut tr = Transport::new(&u, 0.2, 1e-10).unwrap();
        tr.exploit_symmetry = mirror;
        let t0 = Instant::now();
        let tf = tr.time_functions(&eta).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        println!(
            "{label}: {dt:.2} s/solve, {} steps, err {:.2e}",
            tf.tau.steps, tf.tau.error_estimate
        );
    }
}
