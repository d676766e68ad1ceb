//! Minimal dense-tensor engine with tape-based reverse-mode autodiff.
//!
//! Single-threaded per tape; separate tapes are independent and may run on
//! separate threads.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, DEFAULT_STEP};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_expansion() {
        let mut tape = Tape::new();
        let id = tape.constant(t2(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let b = tape.constant(t2(&[vec![5.0, 6.0], vec![7.0, 8.0]]));
        let c = tape.matmul(id, b).unwrap();
        assert_eq!(tape.value(c).values(), &[5.0, 6.0, 7.0, 8.0]);

        let a = tape.constant(t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let d = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(d).values(), &[19.0, 22.0, 43.0, 50.0]);

        let z = tape.constant(Tensor::zeros(vec![2, 2]));
        let e = tape.matmul(z, b).unwrap();
        assert!(tape.value(e).values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 2]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn softmax_rows_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(t2(&[vec![0.0, 0.0]]));
        let s = tape.softmax_rows(a).unwrap();
        assert_eq!(tape.value(s).values(), &[0.5, 0.5]);

        let big = tape.constant(t2(&[vec![1000.0, 1000.0]]));
        let s2 = tape.softmax_rows(big).unwrap();
        assert_eq!(tape.value(s2).values(), &[0.5, 0.5]);

        let ln3 = tape.constant(t2(&[vec![0.0, 3.0f64.ln()]]));
        let s3 = tape.softmax_rows(ln3).unwrap();
        let v = tape.value(s3).values();
        assert!((v[0] - 0.25).abs() < 1e-12 && (v[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut tape = Tape::new();
        let x = vec![0.31, -2.4, 1.7, 0.05];
        let a = tape.constant(t2(&[x.clone()]));
        let s = tape.softmax_rows(a).unwrap();
        let sum: f64 = tape.value(s).values().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);

        let shifted: Vec<f64> = x.iter().map(|v| v + 7.3).collect();
        let b = tape.constant(t2(&[shifted]));
        let s2 = tape.softmax_rows(b).unwrap();
        for (u, v) in tape.value(s).values().iter().zip(tape.value(s2).values()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rms_norm_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t2(&[vec![3.0, 4.0]]));
        let g = tape.constant(Tensor::vector(vec![1.0, 1.0]));
        let y = tape.rms_norm(x, g, 0.0).unwrap();
        let v = tape.value(y).values();
        let r = 12.5f64.sqrt();
        assert!((v[0] - 3.0 / r).abs() < 1e-12 && (v[1] - 4.0 / r).abs() < 1e-12);

        let c = tape.constant(t2(&[vec![2.5; 6]]));
        let g6 = tape.constant(Tensor::vector(vec![1.0; 6]));
        let yc = tape.rms_norm(c, g6, 0.0).unwrap();
        assert!(tape.value(yc).values().iter().all(|v| (v - 1.0).abs() < 1e-12));

        let z = tape.constant(t2(&[vec![0.0; 4]]));
        let g4 = tape.constant(Tensor::vector(vec![1.0; 4]));
        let yz = tape.rms_norm(z, g4, 1e-8).unwrap();
        assert!(tape.value(yz).values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rms_norm_unit_gain_has_unit_rms() {
        let mut tape = Tape::new();
        let x = tape.constant(t2(&[vec![0.3, -1.2, 4.5, 0.01]]));
        let g = tape.constant(Tensor::vector(vec![1.0; 4]));
        let y = tape.rms_norm(x, g, 0.0).unwrap();
        let rms =
            (tape.value(y).values().iter().map(|v| v * v).sum::<f64>() / 4.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-9);
    }

    #[test]
    fn linear_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t2(&[vec![1.0, 0.0]]));
        let w = tape.constant(t2(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let b = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).values(), &[1.0, 0.0]);

        let x2 = tape.constant(t2(&[vec![1.0, 1.0]]));
        let w2 = tape.constant(t2(&[vec![2.0], vec![3.0]]));
        let b2 = tape.constant(Tensor::vector(vec![1.0]));
        let y2 = tape.linear(x2, w2, b2).unwrap();
        assert_eq!(tape.value(y2).values(), &[6.0]);

        let zeros = tape.constant(Tensor::zeros(vec![3, 2]));
        let y3 = tape.linear(zeros, w2, b2).unwrap();
        assert_eq!(tape.value(y3).values(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_sum_square_and_fanout() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let sq = tape.dot(x, x).unwrap();
        let g = tape.backward(sq).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[6.0]);

        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(5.0));
        let y = tape.add(x, x).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_of_softmax_sum_is_zero() {
        let mut tape = Tape::new();
        let x = tape.param(t2(&[vec![0.4, -1.0, 2.2]]));
        let s = tape.softmax_rows(x).unwrap();
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap();
        for v in g.wrt(x).unwrap() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    /// Runs grad_check for a tape-built scalar function of a flat input.
    fn check_op(build: impl Fn(&mut Tape, Var) -> Var, x0: &[f64], shape: Vec<usize>) -> f64 {
        let eval = |x: &[f64]| {
            let mut tape = Tape::new();
            let v = tape.param(Tensor::new(shape.clone(), x.to_vec()).unwrap());
            let loss = build(&mut tape, v);
            tape.value(loss).values()[0]
        };
        let mut tape = Tape::new();
        let v = tape.param(Tensor::new(shape.clone(), x0.to_vec()).unwrap());
        let loss = build(&mut tape, v);
        let grads = tape.backward(loss).unwrap();
        grad_check(eval, grads.wrt(v).unwrap(), x0, DEFAULT_STEP)
    }

    #[test]
    fn per_op_gradients_match_finite_differences() {
        let xs: Vec<Vec<f64>> = vec![
            vec![0.5, -0.3, 1.2, 0.8, -1.1, 0.05],
            vec![1.5, 0.7, -0.2, 0.9, 0.33, -0.41],
            vec![-0.9, 0.1, 0.6, -1.4, 2.0, 0.27],
            vec![0.21, -0.77, 1.9, 0.44, -0.6, 1.01],
            vec![2.2, 0.13, -1.7, 0.58, 0.91, -0.35],
        ];
        for x in &xs {
            // softmax → weighted sum
            let err = check_op(
                |tape, v| {
                    let s = tape.softmax_rows(v).unwrap();
                    let w = tape.constant(
                        Tensor::matrix(3, 1, vec![0.3, -1.0, 2.0]).unwrap(),
                    );
                    let p = tape.matmul(s, w).unwrap();
                    tape.sum(p)
                },
                x,
                vec![2, 3],
            );
            assert!(err < 1e-6, "softmax grad err {err}");

            // rms_norm with fixed gain
            let err = check_op(
                |tape, v| {
                    let g = tape.constant(Tensor::vector(vec![1.3, 0.8, -0.5]));
                    let y = tape.rms_norm(v, g, 1e-6).unwrap();
                    let w = tape.constant(
                        Tensor::matrix(3, 1, vec![1.0, 2.0, -1.0]).unwrap(),
                    );
                    let p = tape.matmul(y, w).unwrap();
                    tape.sum(p)
                },
                x,
                vec![2, 3],
            );
            assert!(err < 1e-6, "rms_norm grad err {err}");

            // layer_norm with fixed gain
            let err = check_op(
                |tape, v| {
                    let g = tape.constant(Tensor::vector(vec![0.9, 1.4, -1.2]));
                    let y = tape.layer_norm(v, g, 1e-6).unwrap();
                    let w = tape.constant(
                        Tensor::matrix(3, 1, vec![0.5, -0.7, 1.1]).unwrap(),
                    );
                    let p = tape.matmul(y, w).unwrap();
                    tape.sum(p)
                },
                x,
                vec![2, 3],
            );
            assert!(err < 1e-6, "layer_norm grad err {err}");

            // matmul_tb + gelu + exp mixture
            let err = check_op(
                |tape, v| {
                    let other = tape.constant(t2(&[
                        vec![0.2, -0.4, 0.6],
                        vec![1.0, 0.3, -0.8],
                    ]));
                    let scores = tape.matmul_tb(v, other).unwrap();
                    let ge = tape.gelu(scores);
                    let s = tape.sum(ge);
                    let e = tape.exp(s);
                    tape.sum(e)
                },
                x,
                vec![2, 3],
            );
            assert!(err < 1e-6, "matmul_tb/gelu/exp grad err {err}");

            // slice + concat + idwt path
            let err = check_op(
                |tape, v| {
                    let left = tape.slice_cols(v, 0, 3).unwrap();
                    let right = tape.slice_cols(v, 3, 3).unwrap();
                    let scaled = tape.scale(right, -0.7);
                    let joined = tape.concat_cols(&[left, scaled]).unwrap();
                    let filter =
                        crate::wavelet::WaveletFilter::new(crate::wavelet::WaveletFamily::Haar);
                    // 1×6 is not divisible by 4, so reshape to 1×... keep L=1.
                    let y = tape.idwt_rows(joined, &filter, 1).unwrap();
                    let target = tape.constant(Tensor::matrix(1, 6, vec![0.1; 6]).unwrap());
                    tape.mse_loss(y, target).unwrap()
                },
                x,
                vec![1, 6],
            );
            assert!(err < 1e-6, "slice/concat/idwt grad err {err}");

            // mul_scalar + dot + affine_rows
            let err = check_op(
                |tape, v| {
                    let row0 = tape.slice_cols(v, 0, 3).unwrap();
                    let row1 = tape.slice_cols(v, 3, 3).unwrap();
                    let d = tape.dot(row0, row1).unwrap();
                    let e = tape.exp(d);
                    let scaled = tape.mul_scalar(v, e).unwrap();
                    let aff = tape
                        .affine_rows(scaled, vec![1.2], vec![-0.3])
                        .unwrap();
                    tape.sum(aff)
                },
                x,
                vec![1, 6],
            );
            assert!(err < 1e-6, "mul_scalar/dot/affine grad err {err}");
        }
    }

    #[test]
    fn single_layer_mse_gradient_matches_fd() {
        // f = MSE of a 1-layer linear net on fixed data.
        let data = t2(&[vec![0.5, -1.0], vec![1.5, 0.2], vec![-0.7, 0.9]]);
        let target = t2(&[vec![1.0], vec![0.0], vec![0.5]]);
        let x0 = vec![0.3, -0.2, 0.1]; // w (2) + b (1)
        let eval = |p: &[f64]| {
            let mut tape = Tape::new();
            let x = tape.constant(data.clone());
            let w = tape.param(Tensor::matrix(2, 1, p[..2].to_vec()).unwrap());
            let b = tape.param(Tensor::vector(vec![p[2]]));
            let y = tape.linear(x, w, b).unwrap();
            let t = tape.constant(target.clone());
            let loss = tape.mse_loss(y, t).unwrap();
            tape.value(loss).values()[0]
        };
        let mut tape = Tape::new();
        let x = tape.constant(data.clone());
        let w = tape.param(Tensor::matrix(2, 1, x0[..2].to_vec()).unwrap());
        let b = tape.param(Tensor::vector(vec![x0[2]]));
        let y = tape.linear(x, w, b).unwrap();
        let t = tape.constant(target.clone());
        let loss = tape.mse_loss(y, t).unwrap();
        let grads = tape.backward(loss).unwrap();
        let mut analytic = grads.wrt(w).unwrap().to_vec();
        analytic.extend_from_slice(grads.wrt(b).unwrap());
        let err = grad_check(eval, &analytic, &x0, DEFAULT_STEP);
        assert!(err < 1e-6, "relative error {err}");
    }
}
