use funs::tensor::{grad_check_many, Matrix, Tape};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    bounded(rows, cols, 2.0)
}

fn bounded(rows: usize, cols: usize, r: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-r..r, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matmul_matches_triple_loop(a in matrix(3, 4), b in matrix(4, 5)) {
        prop_assert!(a.matmul(&b).unwrap().max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
    }

    #[test]
    fn matmul_is_associative(a in matrix(3, 4), b in matrix(4, 2), c in matrix(2, 3)) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) < 1e-9);
    }

    #[test]
    fn transpose_of_product(a in matrix(3, 4), b in matrix(4, 3)) {
        let lhs = a.matmul(&b).unwrap().transpose();
        let rhs = b.transpose().matmul(&a.transpose()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn identity_is_neutral(a in matrix(3, 4)) {
        prop_assert_eq!(a.matmul(&Matrix::identity(4)).unwrap(), a.clone());
        prop_assert_eq!(Matrix::identity(3).matmul(&a).unwrap(), a);
    }

    #[test]
    fn composite_gradient_matches_differences(a in bounded(3, 4, 1.0), w in bounded(4, 4, 0.5), b in matrix(3, 4)) {
        let err = grad_check_many(
            |_, v| {
                let h = v[0].matmul(v[1])?.tanh();
                let g = h.mul(v[2])?.sigmoid();
                let c = g.concat(v[0])?;
                Ok(c.mul(c)?.sum())
            },
            &[a, w, b],
            1e-6,
        )
        .unwrap();
        prop_assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn leaky_relu_gradient_away_from_kink(a in matrix(3, 4)) {
        let a = a.map(|x| if x.abs() < 1e-2 { x + 0.05 } else { x });
        let err = grad_check_many(|_, v| Ok(v[0].leaky_relu(0.2).tanh().sum()), &[a], 1e-6).unwrap();
        prop_assert!(err < 1e-4);
    }

    #[test]
    fn gather_scatter_gradient(a in matrix(3, 4), seed in 0u64..1000) {
        let idx: std::rc::Rc<[usize]> = vec![(seed % 3) as usize, 2, 0, 2].into();
        let err = grad_check_many(
            move |_, v| {
                let g = v[0].gather_rows(idx.clone())?;
                let s = g.mul(g)?.scatter_add_rows(idx.clone(), 3)?;
                Ok(s.sigmoid().sum())
            },
            &[a],
            1e-6,
        )
        .unwrap();
        prop_assert!(err < 1e-4);
    }

    #[test]
    fn segment_softmax_gradient(a in matrix(4, 1), w in matrix(4, 1)) {
        let seg: std::rc::Rc<[usize]> = vec![0, 1, 0, 1].into();
        let err = grad_check_many(
            move |_, v| Ok(v[0].segment_softmax(seg.clone())?.mul(v[1])?.sum()),
            &[a, w],
            1e-6,
        )
        .unwrap();
        prop_assert!(err < 1e-4);
    }

    #[test]
    fn sum_of_products_reaches_every_input(a in matrix(3, 4), b in matrix(3, 4)) {
        let tape = Tape::new();
        let (x, y) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
        let loss = x.mul(y).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        prop_assert_eq!(g.wrt(x), b);
        prop_assert_eq!(g.wrt(y), a);
    }
}
