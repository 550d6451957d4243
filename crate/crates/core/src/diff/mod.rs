//! Small differentiable-computation toolkit: 2-D tensors, a reverse-mode tape,
//! dense and recurrent layers, diagonal Gaussians, Adam and checkpoints.
//!
//! Randomness enters only through explicit noise tensors and the RNG handed
//! to initialisers.

mod check;
mod gauss;
mod graph;
mod nn;
mod params;
mod tensor;

pub use check::{finite_diff_check, finite_diff_check_vec, relative_error, REL_FLOOR};
pub use gauss::{kl_diag_gaussians, kl_graph, nll_graph, reparam_sample, sample_graph, GaussVar, GaussianParams};
pub use graph::{Grads, Graph, Var};
pub use nn::{GaussianHead, GruCell, Linear, Mlp, LOG_STD_MAX, LOG_STD_MIN};
pub use params::{AdamConfig, ParamId, ParamSet, TrainingState};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn linear_case_by_hand() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::scalar(2.0));
        let unused = ps.add("unused", Tensor::scalar(7.0));
        let mut g = Graph::new(&ps);
        let x = g.input(Tensor::scalar(3.0));
        let wv = g.param(w);
        let loss = g.mul(wv, x);
        let loss = g.sum(loss);
        let grads = g.backward(loss);
        assert_eq!(grads.param(w).item(), 3.0);
        assert_eq!(grads.of(x).unwrap().item(), 2.0);
        assert_eq!(grads.param(unused).item(), 0.0);
    }

    fn two_layer() -> (ParamSet, Mlp, GruCell, Tensor) {
        let mut rng = seed::rng(5, "test/diff");
        let mut ps = ParamSet::new();
        let mlp = Mlp::new(&mut ps, "mlp", &[3, 5, 2], &mut rng);
        let gru = GruCell::new(&mut ps, "gru", 2, 4, &mut rng);
        let x = Tensor::from_rows(&[vec![0.3, -1.2, 0.5], vec![1.0, 0.1, -0.4]]);
        (ps, mlp, gru, x)
    }

    fn net_loss(ps: &ParamSet, mlp: &Mlp, gru: &GruCell, x: &Tensor) -> (f64, Vec<Tensor>) {
        let mut g = Graph::new(ps);
        let xv = g.input(x.clone());
        let y = mlp.forward(&mut g, xv);
        let mut h = g.input(Tensor::zeros(2, 4));
        for _ in 0..3 {
            h = gru.step(&mut g, y, h);
        }
        let sq = g.square(h);
        let e = g.exp(y);
        let s1 = g.sum(sq);
        let s2 = g.mean(e);
        let loss = g.add(s1, s2);
        let value = g.value(loss).item();
        (value, g.backward(loss).into_params())
    }

    #[test]
    fn random_network_matches_finite_differences() {
        let (ps, mlp, gru, x) = two_layer();
        let (_, grads) = net_loss(&ps, &mlp, &gru, &x);
        let err = finite_diff_check(|p| net_loss(p, &mlp, &gru, &x).0, &ps, &grads, 1e-5);
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn broken_gradient_is_detected() {
        let (ps, mlp, gru, x) = two_layer();
        let (_, mut grads) = net_loss(&ps, &mlp, &gru, &x);
        grads[0].data[1] *= 1.5;
        let err = finite_diff_check(|p| net_loss(p, &mlp, &gru, &x).0, &ps, &grads, 1e-5);
        assert!(err > 1e-2);
    }

    #[test]
    fn linear_loss_is_exact() {
        let err = finite_diff_check_vec(|x| 3.0 * x[0] - 2.0 * x[1], &[0.4, 1.7], &[3.0, -2.0], 1e-3);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn central_difference_error_is_second_order() {
        // f = x^3: central difference error is step^2 exactly
        let f = |x: &[f64]| x[0].powi(3);
        let grad = [3.0];
        let e1 = finite_diff_check_vec(f, &[1.0], &grad, 1e-2);
        let e2 = finite_diff_check_vec(f, &[1.0], &grad, 1e-3);
        let slope = (e1 / e2).log10();
        assert!((slope - 2.0).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn adam_step_has_learning_rate_magnitude() {
        let mut ps = ParamSet::new();
        let id = ps.add("p", Tensor::row(&[1.0, -2.0, 0.5]));
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        ps.adam_step(&[Tensor::row(&[0.3, -4.0, 1e3])], &cfg);
        let v = ps.value(id);
        for (after, (before, sign)) in v.data.iter().zip([(1.0, 1.0), (-2.0, -1.0), (0.5, 1.0)]) {
            assert!((before - after - sign * 0.01).abs() < 1e-6);
        }
        let frozen = ps.value(id).clone();
        ps.adam_step(&[Tensor::zeros(1, 3)], &cfg);
        // zero gradient still moves through momentum, but a fresh state does not
        let mut fresh = ParamSet::new();
        let f = fresh.add("p", frozen.clone());
        fresh.adam_step(&[Tensor::zeros(1, 3)], &cfg);
        assert_eq!(fresh.value(f), &frozen);
    }

    #[test]
    fn checkpoint_round_trip_and_shape_check() {
        let (mut ps, _, _, _) = two_layer();
        ps.quantize();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ps.save(&path).unwrap();
        let mut loaded = two_layer().0;
        loaded.load_into(&path).unwrap();
        assert_eq!(loaded.flatten(), ps.flatten());
        assert_eq!(loaded.hash(), ps.hash());

        let mut other = ParamSet::new();
        other.add("mlp.0.w", Tensor::zeros(2, 2));
        assert!(other.load_into(&path).is_err());
    }

    #[test]
    fn clamp_blocks_gradient_outside_bounds() {
        let ps = ParamSet::new();
        let mut g = Graph::new(&ps);
        let x = g.input(Tensor::row(&[-3.0, 0.5, 3.0]));
        let c = g.clamp(x, -1.0, 1.0);
        let s = g.sum(c);
        let grads = g.backward(s);
        assert_eq!(grads.of(x).unwrap().data, vec![0.0, 1.0, 0.0]);
    }
}
