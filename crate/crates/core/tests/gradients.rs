//! Analytic gradients against central finite differences.

use ceme_core::math::softplus_inv;
use ceme_core::nnet::Mlp;
use ceme_core::rng::{standard_normals, stream};
use ceme_core::scm::CemeModel;
use ceme_core::vi::{decoder_log_joint_grad, iw_elbo_grad, iw_elbo_with_eps, Batch};

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-4;
/// Below this magnitude both gradients count as zero.
const FLOOR: f64 = 1e-6;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Fourth-order central stencil; the two-point one carries `O(h²)`
/// truncation error that can exceed `TOL` on small components.
fn central_diff(params: &[f64], i: usize, f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let mut p = params.to_vec();
    let mut at = |k: f64| {
        p[i] = params[i] + k * STEP;
        f(&p)
    };
    // Differences first, so a constant `f` gives exactly zero.
    let (d1, d2) = (at(1.0) - at(-1.0), at(2.0) - at(-2.0));
    (8.0 * d1 - d2) / (12.0 * STEP)
}

fn worst(analytic: &[f64], params: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> (f64, usize) {
    let mut w = (0.0, 0);
    for i in 0..params.len() {
        let e = rel_err(analytic[i], central_diff(params, i, f));
        if e > w.0 {
            w = (e, i);
        }
    }
    w
}

#[test]
fn network_backward_matches_finite_differences() {
    for (width, depth, inputs) in [(20, 3, 1), (26, 3, 23), (30, 5, 6)] {
        let mut rng = stream(100 + width as u64, 0);
        let net = Mlp::with_hidden(inputs, &vec![width; depth], 1, &mut rng).unwrap();
        let rows = 8;
        let x = standard_normals(&mut rng, rows * inputs);
        let t = standard_normals(&mut rng, rows);
        let loss = |n: &Mlp| -> f64 {
            let out = n.forward_batch(&x, rows).unwrap();
            out.iter().zip(&t).map(|(o, y)| 0.5 * (o - y) * (o - y) + o.sin()).sum()
        };
        let tape = net.forward_tape(x.clone(), rows).unwrap();
        let d_out: Vec<f64> = tape.output().iter().zip(&t).map(|(o, y)| (o - y) + o.cos()).collect();
        let mut g = vec![0.0; net.n_params()];
        net.backward(&tape, &d_out, &mut g, false).unwrap();
        let base = net.params().to_vec();
        let mut probe = net.clone();
        let (e, i) = worst(&g, &base, &mut |p| {
            probe.params_mut().copy_from_slice(p);
            loss(&probe)
        });
        assert!(e < TOL, "{width}x{depth}: parameter {i} rel err {e}");
    }
}

fn model_and_batch(seed: u64, hidden: &[usize]) -> (CemeModel, Vec<f64>) {
    let mut rng = stream(seed, 0);
    let m = CemeModel::new(1, hidden, 0.4, 0.3, None, &mut rng).unwrap();
    (m, standard_normals(&mut rng, 32))
}

#[test]
fn decoder_log_joint_gradient() {
    let (m, r) = model_and_batch(200, &[20, 20, 20]);
    let b = Batch::new(1, &r[0..8], &r[8..16], &r[16..24]).unwrap();
    let xs = &r[24..32];
    let mut g = m.zero_grads();
    decoder_log_joint_grad(&m, &b, xs, &mut g).unwrap();
    let mut probe = m.clone();
    let (e, i) = worst(&g.flatten(), &m.flat_params(), &mut |p| {
        probe.set_flat_params(p).unwrap();
        let mut scratch = probe.zero_grads();
        decoder_log_joint_grad(&probe, &b, xs, &mut scratch).unwrap()
    });
    assert!(e < TOL, "parameter {i} rel err {e}");
}

#[test]
fn iw_elbo_gradient_all_roles() {
    let (k, beta) = (4, 2.0);
    let (m, r) = model_and_batch(300, &[20, 20, 20]);
    let b = Batch::new(1, &r[0..8], &r[8..16], &r[16..24]).unwrap();
    let eps = standard_normals(&mut stream(300, 1), 8 * k);
    let mut g = m.zero_grads();
    iw_elbo_grad(&m, &b, k, beta, &eps, 1.0, &mut g).unwrap();
    let mut probe = m.clone();
    let (e, i) = worst(&g.flatten(), &m.flat_params(), &mut |p| {
        probe.set_flat_params(p).unwrap();
        iw_elbo_with_eps(&probe, &b, k, beta, &eps).unwrap().iter().sum()
    });
    assert!(e < TOL, "parameter {i} rel err {e}");
}

#[test]
fn known_tau_gets_no_gradient() {
    let mut rng = stream(400, 0);
    let m = CemeModel::new(2, &[5], 0.4, 0.3, Some(0.25), &mut rng).unwrap();
    assert_eq!(m.tau_raw, softplus_inv(0.25));
    let r = standard_normals(&mut rng, 16);
    let b = Batch::new(2, &r[0..8], &r[8..12], &r[12..16]).unwrap();
    let eps = standard_normals(&mut rng, 8);
    let mut g = m.zero_grads();
    iw_elbo_grad(&m, &b, 2, 1.5, &eps, 1.0, &mut g).unwrap();
    assert_eq!(g.tau_raw, 0.0);
    assert_eq!(m.n_trainable() + 1, m.flat_params().len());
}
