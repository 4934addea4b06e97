//! Analytic gradients against central finite differences.

use forge_core::causality::{smooth_loss, smooth_loss_and_grad, MotifNetwork};
use forge_core::nn::{Activation, LstmNet};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

/// Relative error with an absolute floor so near-zero components do not blow up.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

fn fd_check(name: &str, params: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) {
    assert_eq!(params.len(), analytic.len());
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + H;
        let fp = f(&p);
        p[k] = orig - H;
        let fm = f(&p);
        p[k] = orig;
        let numeric = (fp - fm) / (2.0 * H);
        let e = rel_err(numeric, analytic[k]);
        worst = worst.max(e);
        assert!(e < TOL, "{name}: param {k} analytic {} numeric {numeric} rel err {e}", analytic[k]);
    }
    eprintln!("{name}: max rel err {worst:.2e} over {} params", p.len());
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

pub fn lstm_bptt() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for act in [Activation::Identity, Activation::Sigmoid] {
        let net = LstmNet::random(3, 3, 2, act, &mut rng);
        let x = random_matrix(&mut rng, 4, 3);
        let w = random_matrix(&mut rng, 4, 2);
        let loss = |n: &LstmNet| -> f64 {
            let c = n.forward(x.view()).unwrap();
            (&c.outputs * &w).sum() + c.outputs.mapv(|v| v * v).sum()
        };
        let cache = net.forward(x.view()).unwrap();
        let d_out = &w + &(2.0 * &cache.outputs);
        let (grad, d_in) = net.backward(&cache, d_out.view(), None);
        let mut probe = net.clone();
        fd_check(&format!("lstm params {act:?}"), &net.flat(), &grad.flat(), |p| {
            probe.set_flat(p);
            loss(&probe)
        });
        let flat_x: Vec<f64> = x.iter().copied().collect();
        fd_check(&format!("lstm inputs {act:?}"), &flat_x, &d_in.iter().copied().collect::<Vec<_>>(), |p| {
            let xi = Array2::from_shape_vec(x.dim(), p.to_vec()).unwrap();
            let c = net.forward(xi.view()).unwrap();
            (&c.outputs * &w).sum() + c.outputs.mapv(|v| v * v).sum()
        });
    }
}

pub fn lstm_feedback_bptt() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let net = LstmNet::random(2 + 2, 3, 2, Activation::Sigmoid, &mut rng);
    let z = random_matrix(&mut rng, 4, 2);
    let w = random_matrix(&mut rng, 4, 2);
    let cache = net.forward_feedback(z.view()).unwrap();
    let (grad, d_in) = net.backward(&cache, w.view(), Some(2));
    let mut probe = net.clone();
    fd_check("feedback params", &net.flat(), &grad.flat(), |p| {
        probe.set_flat(p);
        (&probe.forward_feedback(z.view()).unwrap().outputs * &w).sum()
    });
    // exogenous input gradients are the first two columns
    let analytic: Vec<f64> = d_in.rows().into_iter().flat_map(|r| vec![r[0], r[1]]).collect();
    fd_check("feedback exog", &z.iter().copied().collect::<Vec<_>>(), &analytic, |p| {
        let zi = Array2::from_shape_vec(z.dim(), p.to_vec()).unwrap();
        (&net.forward_feedback(zi.view()).unwrap().outputs * &w).sum()
    });
}

pub fn motif_smooth_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let m = 3;
    let net = MotifNetwork::random(1, m, 2, 99);
    let data: Vec<Array2<f64>> = (0..4)
        .map(|_| {
            let mut a = Array2::zeros((5, m));
            for t in 0..5 {
                a[[t, rng.random_range(0..m)]] = 1.0;
            }
            a
        })
        .collect();
    let (_, grad) = smooth_loss_and_grad(&net, &data).unwrap();
    let mut probe = net.clone();
    fd_check("motif smooth loss", &net.net.flat(), &grad.flat(), |p| {
        probe.net.set_flat(p);
        smooth_loss(&probe, &data).unwrap()
    });
}

pub mod gan_phases {
    use super::*;
    use forge_core::gan::{
        autoencoder_phase, discriminator_phase, generator_phase, GanConfig, GanState, HiddenSizes, NetId, PhaseOutput,
    };

    fn tiny() -> (GanState, Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let cfg = GanConfig {
            embed_dim: 2,
            hidden: HiddenSizes { embedder: 3, recovery: 3, generator: 3, discriminator: 3 },
            seed: 5,
            ..Default::default()
        };
        let state = GanState::new(&cfg, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Vec<_> = (0..3).map(|_| Array2::from_shape_fn((4, 1), |_| rng.random_range(0.05..0.95))).collect();
        let z: Vec<_> = (0..3).map(|_| random_matrix(&mut rng, 4, 2)).collect();
        (state, x, z)
    }

    fn check_phase(name: &str, state: &GanState, ids: &[NetId], run: impl Fn(&GanState) -> PhaseOutput) {
        let out = run(state);
        for &id in ids {
            let analytic = out.mean_grad(id).unwrap();
            let mut probe = state.clone();
            fd_check(&format!("{name} {id:?}"), &state.net(id).flat(), &analytic.flat(), |p| {
                probe.net_mut(id).set_flat(p);
                run(&probe).objective
            });
        }
    }

    pub fn autoencoder() {
        let (state, x, z) = tiny();
        check_phase("AE", &state, &[NetId::Embedder, NetId::Recovery], |s| autoencoder_phase(s, &x, &z, 0.1).unwrap());
    }

    pub fn generator() {
        let (state, x, z) = tiny();
        check_phase("G", &state, &[NetId::Generator], |s| generator_phase(s, &x, &z, 10.0, None).unwrap());
    }

    pub fn discriminator() {
        let (state, x, z) = tiny();
        check_phase("D", &state, &[NetId::Discriminator], |s| discriminator_phase(s, &x, &z).unwrap());
    }
}

/// Every finite-difference check, in order.
pub fn all() {
    lstm_bptt();
    lstm_feedback_bptt();
    motif_smooth_loss();
    gan_phases::autoencoder();
    gan_phases::generator();
    gan_phases::discriminator();
}
