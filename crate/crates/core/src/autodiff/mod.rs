//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The primitive set is exactly what the recurrent models need: elementwise
//! arithmetic, matmul, concat/slice, the usual squashing functions, row-wise
//! softmax / cumsum / suffix-product, reductions, embedding lookup, dropout,
//! a causal 1-d convolution and cross-entropy with logits.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, relative_error, GradCheckReport};
pub use graph::{dropout_mask, sigmoid, Gradients, Graph, Var};
pub use params::{param_rng, Bound, ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{:?} vs {:?}", a, b);
        }
    }

    #[test]
    fn softmax_and_cumsum_of_equal_logits() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.3; 4]));
        let s = g.softmax(x).unwrap();
        close(g.value(s).data(), &[0.25; 4], 1e-15);
        let c = g.cumsum(s).unwrap();
        close(g.value(c).data(), &[0.25, 0.5, 0.75, 1.0], 1e-15);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).item(), 0.5);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 0.25);
    }

    #[test]
    fn hardtanh_clamps() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![2.0, -2.0, 0.3]));
        let y = g.hardtanh(x);
        assert_eq!(g.value(y).data(), &[1.0, -1.0, 0.3]);
    }

    #[test]
    fn cumax_saturates() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![60.0, 0.0, 0.0, 0.0]));
        let y = g.cumax(x).unwrap();
        close(g.value(y).data(), &[1.0; 4], 1e-12);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 3]);
    }

    #[test]
    fn backward_of_square_is_twice_x() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.5, -2.0, 0.25]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, -4.0, 0.5]);
    }

    #[test]
    fn fan_out_sums_adjoints() {
        // loss = sum(x) + sum(3x) + sum(x*c): gradient = 1 + 3 + c
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![0.1, 0.2]));
        let c = g.constant(Tensor::vector(vec![5.0, -7.0]));
        let a = g.sum(x);
        let t = g.affine(x, 3.0, 0.0);
        let b = g.sum(t);
        let m = g.mul(x, c).unwrap();
        let d = g.sum(m);
        let ab = g.add(a, b).unwrap();
        let loss = g.add(ab, d).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[9.0, -3.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{}", err);
        let c = g.constant(Tensor::zeros(&[4]));
        let err = g.add(a, c).unwrap_err().to_string();
        assert!(err.contains("add"), "{}", err);
    }

    #[test]
    fn grad_check_linear_is_exact() {
        let x = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let err = grad_check(
            |g, x| {
                let y = g.affine(x, 2.5, 1.0);
                Ok(g.sum(y))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{}", err);
    }

    #[test]
    fn grad_check_sigmoid_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&mut rng, &[6]);
        let err = grad_check(
            |g, x| {
                let y = g.sigmoid(x);
                Ok(g.sum(y))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{}", err);
    }

    #[test]
    fn grad_check_hardtanh_away_from_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let delta = 1e-3;
        let data: Vec<f64> = (0..200)
            .map(|_| loop {
                let v: f64 = rng.gen_range(-2.0..2.0);
                if (v.abs() - 1.0).abs() > delta {
                    break v;
                }
            })
            .collect();
        let x = Tensor::vector(data);
        let w = Tensor::vector((0..200).map(|i| (i as f64 * 0.37).sin()).collect());
        let err = grad_check(
            |g, x| {
                let h = g.hardtanh(x);
                let wv = g.constant(w.clone());
                let m = g.mul(h, wv)?;
                Ok(g.sum(m))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{}", err);
    }

    #[test]
    fn rev_cumprod_with_zero_entries() {
        let x = Tensor::matrix(2, 4, vec![0.5, 0.0, 0.7, 0.9, 0.3, 0.6, 0.0, 0.2]).unwrap();
        let w = Tensor::matrix(2, 4, vec![1.0, -2.0, 0.5, 3.0, 0.7, 1.1, -0.4, 2.0]).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = g.rev_cumprod(xv).unwrap();
        close(
            g.value(y).data(),
            &[0.0, 0.0, 0.63, 0.9, 0.0, 0.0, 0.0, 0.2],
            1e-15,
        );
        let err = grad_check(
            |g, x| {
                let y = g.rev_cumprod(x)?;
                let wv = g.constant(w.clone());
                let m = g.mul(y, wv)?;
                Ok(g.sum(m))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{}", err);
    }

    #[test]
    fn broadcast_column_and_row() {
        let mut g = Graph::new();
        let a = g.param(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let col = g.param(Tensor::matrix(2, 1, vec![10., 20.]).unwrap());
        let row = g.param(Tensor::vector(vec![1., 0., -1.]));
        let s = g.add(a, col).unwrap();
        assert_eq!(g.value(s).data(), &[11., 12., 13., 24., 25., 26.]);
        let t = g.mul(s, row).unwrap();
        let l = g.sum(t);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(col).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(grads.get(row).unwrap().data(), &[35., 37., 39.]);
    }

    #[test]
    fn conv_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, &[7, 3]);
        let w = rand_tensor(&mut rng, &[9, 2]);
        let run = |x: &Tensor| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let wv = g.constant(w.clone());
            let y = g.causal_conv1d(xv, wv, 3).unwrap();
            g.value(y).clone()
        };
        let base = run(&x);
        assert_eq!(base.shape(), &[5, 2]);
        let mut bumped = x.clone();
        bumped.data_mut()[5 * 3] += 1.0; // input row 5 feeds output rows 3, 4
        let after = run(&bumped);
        assert_eq!(&base.data()[..6], &after.data()[..6]);
        assert_ne!(&base.data()[6..], &after.data()[6..]);
    }

    #[test]
    fn dropout_zero_is_identity_and_mask_is_inverted() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[1000]));
        assert_eq!(g.dropout(x, 0.0, &mut rng).unwrap(), x);
        let y = g.dropout(x, 0.25, &mut rng).unwrap();
        for &v in g.value(y).data() {
            assert!(v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15);
        }
        let mean = g.value(y).sum() / 1000.0;
        assert!((mean - 1.0).abs() < 0.1);
    }

    #[test]
    fn cross_entropy_uniform() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::zeros(&[2, 3]));
        let ce = g.cross_entropy(l, &[0, 2]).unwrap();
        close(g.value(ce).data(), &[3f64.ln(), 3f64.ln()], 1e-15);
    }

    #[test]
    fn every_primitive_passes_grad_check() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let a = rand_tensor(&mut rng, &[3, 4]);
            let b = rand_tensor(&mut rng, &[4, 2]);
            let c = rand_tensor(&mut rng, &[3, 4]);
            let r = rand_tensor(&mut rng, &[4]);
            let pos = Tensor::matrix(3, 4, (0..12).map(|_| rng.gen_range(0.5..2.0)).collect())
                .unwrap();
            let proj = rand_tensor(&mut rng, &[3, 4]);
            let inputs = vec![a, b, c, r, pos];
            let cases: Vec<(&str, Box<dyn Fn(&mut Graph, &[Var]) -> crate::Result<Var>>)> = vec![
                ("add", Box::new(|g, v| g.add(v[0], v[2]))),
                ("add_row", Box::new(|g, v| g.add(v[0], v[3]))),
                ("sub", Box::new(|g, v| g.sub(v[0], v[2]))),
                ("mul", Box::new(|g, v| g.mul(v[0], v[2]))),
                ("mul_row", Box::new(|g, v| g.mul(v[0], v[3]))),
                ("div", Box::new(|g, v| g.div(v[0], v[4]))),
                ("matmul", Box::new(|g, v| g.matmul(v[0], v[1]))),
                ("transpose", Box::new(|g, v| {
                    let m = g.matmul(v[0], v[1])?;
                    g.transpose(m)
                })),
                ("concat0", Box::new(|g, v| g.concat(&[v[0], v[2]], 0))),
                ("concat1", Box::new(|g, v| g.concat(&[v[0], v[2]], 1))),
                ("slice", Box::new(|g, v| g.slice(v[0], 1, 1, 3))),
                ("sigmoid", Box::new(|g, v| Ok(g.sigmoid(v[0])))),
                ("tanh", Box::new(|g, v| Ok(g.tanh(v[0])))),
                ("relu", Box::new(|g, v| Ok(g.relu(v[0])))),
                ("softmax", Box::new(|g, v| g.softmax(v[0]))),
                ("cumsum", Box::new(|g, v| g.cumsum(v[0]))),
                ("cumax", Box::new(|g, v| g.cumax(v[0]))),
                ("rev_cumprod", Box::new(|g, v| g.rev_cumprod(v[4]))),
                ("sum_axis0", Box::new(|g, v| {
                    let s = g.sum_axis(v[0], 0)?;
                    let t = g.mul(s, v[3])?;
                    g.concat(&[t, s], 0)
                })),
                ("mean_axis1", Box::new(|g, v| g.mean_axis(v[0], 1))),
                ("embedding", Box::new(|g, v| g.embedding(v[0], &[2, 0, 2, 1]))),
                ("take", Box::new(|g, v| g.take(v[0], &[0, 5, 5, 11]))),
                ("reshape", Box::new(|g, v| g.reshape(v[0], &[2, 6]))),
                ("conv", Box::new(|g, v| {
                    let w = g.reshape(v[1], &[8, 1])?;
                    g.causal_conv1d(v[2], w, 2)
                })),
                ("cross_entropy", Box::new(|g, v| g.cross_entropy(v[0], &[3, 0, 1]))),
            ];
            for (name, f) in &cases {
                let report = grad_check_many(
                    |g, v| {
                        let out = f(g, v)?;
                        // random projection to a scalar
                        let n = g.value(out).len();
                        let w = g.constant(
                            Tensor::new(
                                g.value(out).shape().to_vec(),
                                proj.data().iter().cycle().take(n).cloned().collect(),
                            )
                            .unwrap(),
                        );
                        let m = g.mul(out, w)?;
                        Ok(g.sum(m))
                    },
                    &inputs,
                    1e-5,
                )
                .unwrap();
                assert!(
                    report.max_rel_err < 1e-4,
                    "{} seed {}: {:?}",
                    name,
                    seed,
                    report
                );
            }
        }
    }

    #[test]
    fn determinism_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let a = rand_tensor(&mut rng, &[5, 6]);
            let mut g = Graph::new();
            let x = g.param(a);
            let y = g.cumax(x).unwrap();
            let z = g.dropout(y, 0.3, &mut rng).unwrap();
            let s = g.sum(z);
            let grads = g.backward(s).unwrap();
            (g.value(z).clone(), grads.get(x).unwrap().clone())
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&v1), bits(&v2));
        assert_eq!(bits(&g1), bits(&g2));
    }
}
