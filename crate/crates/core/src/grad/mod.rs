//! Minimal reverse-mode differentiation for the primitives the model uses:
//! row gather, segment mean, element-wise product, matrix products,
//! softmax, row dot product, sigmoid, squared L2 norm and distance correlation.

mod param;
mod tape;

pub use param::{AdamConfig, ParamId, ParamStore, ParamTable};
pub use tape::{log_sigmoid, sigmoid, Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("index {index} out of range for {op} over {len} rows")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroNorm { row: usize },
    #[error("backward was already run on this tape")]
    TapeConsumed,
    #[error("non-finite gradient {value} in {param}[{row}, {col}]; step aborted")]
    NonFiniteGradient {
        param: String,
        row: usize,
        col: usize,
        value: f64,
    },
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::matrix::Matrix;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect())
    }

    /// Builds `sum(proj ⊙ f(inputs))` on a fresh tape and returns (value, grads per input).
    fn eval(
        f: &dyn Fn(&mut Tape, &[Var]) -> Var,
        inputs: &[Matrix],
        proj: Option<&Matrix>,
        want_grads: bool,
    ) -> (f64, Vec<Matrix>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
        let out = f(&mut tape, &vars);
        let p = proj
            .cloned()
            .unwrap_or_else(|| Matrix::filled(tape.value(out).rows(), tape.value(out).cols(), 1.0));
        let pv = tape.constant(p);
        let prod = tape.mul(out, pv).unwrap();
        let loss = tape.sum(prod);
        let value = tape.value(loss).item();
        if !want_grads {
            return (value, vec![]);
        }
        let mut store = ParamStore::new();
        let g = tape
            .backward(loss, Matrix::scalar(1.0), &mut store)
            .unwrap();
        let grads = vars
            .iter()
            .zip(inputs)
            .map(|(v, m)| {
                g.get(*v)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()))
            })
            .collect();
        (value, grads)
    }

    /// Max relative error between the analytic and central-difference gradient.
    fn fd_check(f: &dyn Fn(&mut Tape, &[Var]) -> Var, inputs: &[Matrix], rng: &mut ChaCha8Rng) -> f64 {
        let out_shape = {
            let mut t = Tape::new();
            let vs: Vec<Var> = inputs.iter().map(|m| t.constant(m.clone())).collect();
            let o = f(&mut t, &vs);
            t.value(o).shape()
        };
        let proj = rand_matrix(rng, out_shape.0, out_shape.1);
        let (_, grads) = eval(f, inputs, Some(&proj), true);
        let h = 1e-5;
        let mut worst = 0.0f64;
        for (which, m) in inputs.iter().enumerate() {
            for k in 0..m.data().len() {
                let mut plus = inputs.to_vec();
                plus[which].data_mut()[k] += h;
                let mut minus = inputs.to_vec();
                minus[which].data_mut()[k] -= h;
                let num = (eval(f, &plus, Some(&proj), false).0
                    - eval(f, &minus, Some(&proj), false).0)
                    / (2.0 * h);
                let ana = grads[which].data()[k];
                let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn elementwise_product_forward() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::row_vector(&[1.0, 2.0]));
        let b = t.constant(Matrix::row_vector(&[3.0, 4.0]));
        let c = t.mul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[3.0, 8.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::row_vector(&[0.0; 4]));
        let s = t.softmax_rows(a);
        assert_eq!(t.value(s).data(), &[0.25; 4]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::scalar(0.0));
        let s = t.sigmoid(a);
        assert_eq!(t.value(s).item(), 0.5);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::row_vector(&[1.0, 2.0]));
        let b = t.constant(Matrix::row_vector(&[1.0, 2.0, 3.0]));
        assert!(matches!(t.mul(a, b), Err(GradError::Shape { op: "mul", .. })));
        assert!(matches!(t.matmul(a, b), Err(GradError::Shape { .. })));
    }

    #[test]
    fn dot_self_gradient() {
        let mut store = ParamStore::new();
        let id = store.register("x", Matrix::row_vector(&[1.0, 2.0]));
        let mut t = Tape::new();
        let x = t.param(&store, id);
        let d = t.row_dot(x, x).unwrap();
        t.backward(d, Matrix::scalar(1.0), &mut store).unwrap();
        assert_eq!(store.grads(id).data(), &[2.0, 4.0]);
    }

    #[test]
    fn sigmoid_dot_at_zero_has_zero_gradient() {
        let mut store = ParamStore::new();
        let u = store.register("u", Matrix::row_vector(&[0.0, 0.0]));
        let i = store.register("i", Matrix::row_vector(&[0.0, 0.0]));
        let mut t = Tape::new();
        let (uv, iv) = (t.param(&store, u), t.param(&store, i));
        let d = t.row_dot(uv, iv).unwrap();
        let s = t.sigmoid(d);
        t.backward(s, Matrix::scalar(1.0), &mut store).unwrap();
        assert_eq!(store.grads(u).data(), &[0.0, 0.0]);
        assert_eq!(store.grads(i).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_twice_is_rejected() {
        let mut store = ParamStore::new();
        let mut t = Tape::new();
        let x = t.constant(Matrix::scalar(1.0));
        let y = t.sigmoid(x);
        t.backward(y, Matrix::scalar(1.0), &mut store).unwrap();
        assert_eq!(
            t.backward(y, Matrix::scalar(1.0), &mut store).unwrap_err(),
            GradError::TapeConsumed
        );
        t.clear();
        assert!(t.is_empty());
    }

    #[test]
    fn segment_mean_backward_splits_evenly() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]));
        let seg: Arc<[usize]> = Arc::from(vec![0, 0, 0, 2]);
        let m = t.segment_mean(x, seg, 3).unwrap();
        assert_eq!(t.value(m).data(), &[2.0, 0.0, 4.0]);
        let mut store = ParamStore::new();
        let g = t
            .backward(m, Matrix::from_rows(&[vec![3.0], vec![5.0], vec![1.0]]), &mut store)
            .unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = rand_matrix(&mut rng, 1, 7).scale(10.0);
            let shifted = Matrix::from_vec(1, 7, x.data().iter().map(|v| v + 123.0).collect());
            let mut t = Tape::new();
            let a = t.constant(x);
            let b = t.constant(shifted);
            let (sa, sb) = (t.softmax_rows(a), t.softmax_rows(b));
            let total: f64 = t.value(sa).data().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            let argmax = |m: &Matrix| {
                m.data()
                    .iter()
                    .enumerate()
                    .max_by(|x, y| x.1.total_cmp(y.1))
                    .unwrap()
                    .0
            };
            assert_eq!(argmax(t.value(sa)), argmax(t.value(sb)));
        }
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        type Prim = (&'static str, Vec<(usize, usize)>, Box<dyn Fn(&mut Tape, &[Var]) -> Var>);
        let idx: Arc<[usize]> = Arc::from(vec![2, 0, 2, 1]);
        let seg: Arc<[usize]> = Arc::from(vec![1, 1, 0, 3]);
        let prims: Vec<Prim> = vec![
            ("gather", vec![(3, 4)], Box::new(move |t, v| t.gather(v[0], idx.clone()).unwrap())),
            ("segment_mean", vec![(4, 3)], Box::new(move |t, v| t.segment_mean(v[0], seg.clone(), 4).unwrap())),
            ("add", vec![(2, 3), (2, 3)], Box::new(|t, v| t.add(v[0], v[1]).unwrap())),
            ("sub", vec![(2, 3), (2, 3)], Box::new(|t, v| t.sub(v[0], v[1]).unwrap())),
            ("mul", vec![(2, 3), (2, 3)], Box::new(|t, v| t.mul(v[0], v[1]).unwrap())),
            ("scale", vec![(2, 3)], Box::new(|t, v| t.scale(v[0], -1.7))),
            ("matmul", vec![(2, 3), (3, 4)], Box::new(|t, v| t.matmul(v[0], v[1]).unwrap())),
            ("matmul_nt", vec![(2, 3), (4, 3)], Box::new(|t, v| t.matmul_nt(v[0], v[1]).unwrap())),
            ("matmul_tn", vec![(3, 2), (3, 4)], Box::new(|t, v| t.matmul_tn(v[0], v[1]).unwrap())),
            ("softmax_rows", vec![(3, 4)], Box::new(|t, v| t.softmax_rows(v[0]))),
            ("softmax_cols", vec![(3, 4)], Box::new(|t, v| t.softmax_cols(v[0]))),
            ("log_softmax_rows", vec![(3, 4)], Box::new(|t, v| t.log_softmax_rows(v[0]))),
            ("row_dot", vec![(3, 4), (3, 4)], Box::new(|t, v| t.row_dot(v[0], v[1]).unwrap())),
            ("diag", vec![(3, 3)], Box::new(|t, v| t.diag(v[0]).unwrap())),
            ("sigmoid", vec![(2, 3)], Box::new(|t, v| t.sigmoid(v[0]))),
            ("log_sigmoid", vec![(2, 3)], Box::new(|t, v| t.log_sigmoid(v[0]))),
            ("sum", vec![(2, 3)], Box::new(|t, v| t.sum(v[0]))),
            ("sum_squares", vec![(2, 3)], Box::new(|t, v| t.sum_squares(v[0]))),
            ("normalize_rows", vec![(3, 4)], Box::new(|t, v| t.normalize_rows(v[0]).unwrap())),
            ("dcor", vec![(1, 8), (1, 8)], Box::new(|t, v| t.dcor(v[0], v[1]).unwrap())),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (name, shapes, f) in &prims {
            let mut worst = 0.0f64;
            for _ in 0..100 {
                let inputs: Vec<Matrix> = shapes
                    .iter()
                    .map(|&(r, c)| rand_matrix(&mut rng, r, c))
                    .collect();
                worst = worst.max(fd_check(f.as_ref(), &inputs, &mut rng));
            }
            assert!(worst < 1e-4, "{name}: max relative error {worst:e}");
        }
    }

    #[test]
    fn parallel_scatter_matches_serial_within_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = 50;
        let n = 10_000;
        let index: Arc<[usize]> = Arc::from((0..n).map(|_| rng.gen_range(0..rows)).collect::<Vec<_>>());
        let src = rand_matrix(&mut rng, rows, 4);
        let seed = rand_matrix(&mut rng, n, 4);
        let run = |parallel: bool| {
            let mut t = Tape::with_parallel(parallel);
            let x = t.constant(src.clone());
            let g = t.gather(x, index.clone()).unwrap();
            let mut store = ParamStore::new();
            t.backward(g, seed.clone(), &mut store).unwrap().get(x).unwrap().clone()
        };
        assert!(run(true).max_abs_diff(&run(false)) < 1e-9);
    }
}
