//! Minimal reverse-mode differentiable math: dense f64 matrices, the
//! operator set the model needs, named parameter collections, checkpoint
//! serialization, and a finite-difference gradient checker.
//!
//! Everything is 64-bit and single-threaded per graph; independent training
//! runs isolate by owning separate graphs.

mod gradcheck;
mod node;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use node::{
    backward, concat_rows, lookup, mean_pool_rows, weighted_sum, Node, LOG_CLAMP,
};
pub use params::{Checkpoint, ModelParameters, NamedArray, CHECKPOINT_VERSION};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let x = Node::constant(Tensor::row_vector(vec![0.0, 0.0]));
        let y = x.softmax_row().value();
        assert_eq!(y.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x = Node::constant(rand_tensor(&mut rng, 3, 5));
            let y = x.softmax_row().value();
            for r in 0..3 {
                let s: f64 = y.row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mean_pool_single_row_is_identity() {
        let x = Node::constant(
            Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
        );
        let y = mean_pool_rows(&x, &[1]).unwrap().value();
        assert_eq!(y.as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_mismatch_reports_both_shapes() {
        let a = Node::constant(Tensor::zeros(2, 3));
        let b = Node::constant(Tensor::zeros(4, 2));
        match a.matmul(&b) {
            Err(Error::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, (2, 3));
                assert_eq!(rhs, (4, 2));
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let exact = Node::constant(Tensor::row_vector(vec![1.0, 0.0]));
        assert_eq!(exact.cross_entropy(0).unwrap().item(), 0.0);

        let even = Node::constant(Tensor::row_vector(vec![0.5, 0.5]));
        let loss = even.cross_entropy(1).unwrap().item();
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);

        let degenerate = Node::constant(Tensor::row_vector(vec![0.0, 1.0]));
        let clamped = degenerate.cross_entropy(0).unwrap().item();
        assert!((clamped - -(LOG_CLAMP.ln())).abs() < 1e-9);

        assert!(matches!(
            even.cross_entropy(5),
            Err(Error::Index { index: 5, len: 2 })
        ));
    }

    #[test]
    fn jsd_examples() {
        let u = Node::constant(Tensor::row_vector(vec![0.3, 0.7]));
        assert!(u.jsd(&u).unwrap().item().abs() < 1e-12);

        let a = Node::constant(Tensor::row_vector(vec![1.0, 0.0]));
        let b = Node::constant(Tensor::row_vector(vec![0.0, 1.0]));
        let max = a.jsd(&b).unwrap().item();
        assert!((max - 2.0f64.ln()).abs() < 1e-9);

        let c = Node::constant(Tensor::row_vector(vec![0.2, 0.3, 0.5]));
        assert!(matches!(a.jsd(&c), Err(Error::Shape { .. })));
    }

    #[test]
    fn jsd_is_symmetric_and_bounded_for_two_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let pa: f64 = rng.gen_range(0.0..1.0);
            let pb: f64 = rng.gen_range(0.0..1.0);
            let a = Node::constant(Tensor::row_vector(vec![pa, 1.0 - pa]));
            let b = Node::constant(Tensor::row_vector(vec![pb, 1.0 - pb]));
            let ab = a.jsd(&b).unwrap().item();
            let ba = b.jsd(&a).unwrap().item();
            assert!((ab - ba).abs() < 1e-12);
            assert!(ab >= -1e-12 && ab <= 2.0f64.ln() + 1e-12);
        }
    }

    #[test]
    fn backward_accumulates_over_duplicate_paths() {
        // y = x * x + x consumed twice more via sum: dy/dx = 2x + 1 per entry,
        // checked against the hand formula.
        let mut params = ModelParameters::new();
        let x = params.register("x", Tensor::row_vector(vec![1.5, -2.0]), true);
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum();
        backward(&y).unwrap();
        let g = x.grad();
        assert!((g.as_slice()[0] - (2.0 * 1.5 + 1.0)).abs() < 1e-12);
        assert!((g.as_slice()[1] - (2.0 * -2.0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let mut params = ModelParameters::new();
        let x = params.register("x", Tensor::row_vector(vec![2.0]), true);
        let y = x.stop_gradient().mul(&x).unwrap().sum();
        backward(&y).unwrap();
        // Only the non-stopped path contributes: d/dx [sg(x) * x] = sg(x) = 2.
        assert_eq!(x.grad().as_slice()[0], 2.0);
    }

    #[test]
    fn sum_of_params_gradient_is_ones() {
        let mut params = ModelParameters::new();
        params.register("w", Tensor::filled(2, 3, 0.7), true);
        let report = grad_check(
            |p| Ok(p.get("w").unwrap().sum()),
            &params,
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn zero_tolerance_always_fails_with_report() {
        let mut params = ModelParameters::new();
        params.register("w", Tensor::filled(1, 4, 0.3), true);
        let report = grad_check(
            |p| {
                let w = p.get("w").unwrap();
                Ok(w.tanh().mul(w)?.sum())
            },
            &params,
            1e-5,
            0.0,
        )
        .unwrap();
        assert!(!report.passed());
        assert!(report.max_rel_error > 0.0);
    }

    /// Every operator against central finite differences on random small
    /// shapes, in 64-bit arithmetic.
    #[test]
    fn all_operators_pass_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        type LossFn = Box<dyn Fn(&ModelParameters) -> crate::error::Result<Node>>;

        #[allow(clippy::type_complexity)]
        let cases: Vec<(&str, Vec<(&str, Tensor)>, LossFn)> = vec![
            (
                "add+mul",
                vec![
                    ("a", rand_tensor(&mut rng, 4, 5)),
                    ("b", rand_tensor(&mut rng, 4, 5)),
                ],
                Box::new(|p| {
                    let a = p.get("a").unwrap();
                    let b = p.get("b").unwrap();
                    Ok(a.add(b)?.mul(a)?.sum())
                }),
            ),
            (
                "matmul+tanh",
                vec![
                    ("a", rand_tensor(&mut rng, 3, 6)),
                    ("b", rand_tensor(&mut rng, 6, 4)),
                ],
                Box::new(|p| {
                    let a = p.get("a").unwrap();
                    let b = p.get("b").unwrap();
                    Ok(a.matmul(b)?.tanh().sum())
                }),
            ),
            (
                "softmax+log",
                vec![("a", rand_tensor(&mut rng, 2, 7))],
                Box::new(|p| {
                    let a = p.get("a").unwrap();
                    Ok(a.softmax_row().log().sum())
                }),
            ),
            (
                "masked_softmax",
                vec![("a", rand_tensor(&mut rng, 1, 6))],
                Box::new(|p| {
                    let a = p.get("a").unwrap();
                    let valid = vec![true, false, true, true, false, true];
                    Ok(a.masked_softmax_row(&valid)?.log().sum())
                }),
            ),
            (
                "lookup+mean_pool",
                vec![("table", rand_tensor(&mut rng, 5, 3))],
                Box::new(|p| {
                    let t = p.get("table").unwrap();
                    let e = lookup(t, &[0, 3, 3, 1])?;
                    Ok(mean_pool_rows(&e, &[0, 2, 3])?.tanh().sum())
                }),
            ),
            (
                "weighted_sum+transpose",
                vec![
                    ("w", rand_tensor(&mut rng, 8, 1)),
                    ("v", rand_tensor(&mut rng, 8, 3)),
                ],
                Box::new(|p| {
                    let w = p.get("w").unwrap().transpose().softmax_row();
                    let v = p.get("v").unwrap();
                    Ok(weighted_sum(&w, v)?.sum())
                }),
            ),
            (
                "repeat_row+row+concat",
                vec![("a", rand_tensor(&mut rng, 1, 4))],
                Box::new(|p| {
                    let a = p.get("a").unwrap();
                    let tiled = a.repeat_row(3)?;
                    let parts = vec![tiled.row(0)?, tiled.row(2)?.tanh()];
                    Ok(concat_rows(&parts)?.sum())
                }),
            ),
            (
                "cross_entropy",
                vec![("a", rand_tensor(&mut rng, 1, 4))],
                Box::new(|p| p.get("a").unwrap().softmax_row().cross_entropy(2)),
            ),
            (
                "jsd",
                vec![
                    ("a", rand_tensor(&mut rng, 1, 3)),
                    ("b", rand_tensor(&mut rng, 1, 3)),
                ],
                Box::new(|p| {
                    let a = p.get("a").unwrap().softmax_row();
                    let b = p.get("b").unwrap().softmax_row();
                    a.jsd(&b)
                }),
            ),
            // stop_gradient is deliberately absent here: finite differences
            // see the full forward, so a stopped path can never agree with
            // the analytic gradient. Its contract is checked separately.
            (
                "scale+add",
                vec![("a", rand_tensor(&mut rng, 2, 2))],
                Box::new(|p| {
                    let a = p.get("a").unwrap();
                    Ok(a.scale(3.5).add(&a.scale(-0.25))?.sum())
                }),
            ),
        ];

        for (label, tensors, f) in cases {
            let mut params = ModelParameters::new();
            for (name, t) in tensors {
                params.register(name, t, true);
            }
            let report = grad_check(f, &params, 1e-5, 1e-6).unwrap();
            assert!(report.passed(), "{label}: {report}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");

        let mut params = ModelParameters::new();
        params.register("w1", Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true);
        params.register("frozen", Tensor::row_vector(vec![0.5]), false);

        let ckpt = params.to_checkpoint(99, "abc");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.digest(), ckpt.digest());
        assert_eq!(loaded.seed, 99);

        let mut fresh = ModelParameters::new();
        fresh.register("w1", Tensor::zeros(2, 2), true);
        fresh.register("frozen", Tensor::zeros(1, 1), false);
        fresh.load_checkpoint(&loaded).unwrap();
        assert_eq!(fresh.get("w1").unwrap().value().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }
}
