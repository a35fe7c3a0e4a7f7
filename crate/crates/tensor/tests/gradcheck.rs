//! Central finite differences against the tape's analytic gradients.

use fairgen_tensor::{Matrix, Tape, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = dyn Fn(&Tape<f64>, &[Var]) -> Var;

fn eval(f: &Build, inputs: &[Matrix<f64>]) -> f64 {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|m| tape.variable(m.clone())).collect();
    let out = f(&tape, &vars);
    tape.scalar_value(out)
}

fn numeric_grads(f: &Build, inputs: &[Matrix<f64>], h: f64) -> Vec<Matrix<f64>> {
    let mut out = Vec::new();
    for i in 0..inputs.len() {
        let mut g = Matrix::zeros(inputs[i].rows(), inputs[i].cols());
        for k in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].as_mut_slice()[k] += h;
            let mut minus = inputs.to_vec();
            minus[i].as_mut_slice()[k] -= h;
            g.as_mut_slice()[k] = (eval(f, &plus) - eval(f, &minus)) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

fn analytic_grads(f: &Build, inputs: &[Matrix<f64>]) -> Vec<Matrix<f64>> {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|m| tape.variable(m.clone())).collect();
    let out = f(&tape, &vars);
    tape.grad_values(out, &vars)
}

fn assert_close(a: &[Matrix<f64>], b: &[Matrix<f64>], tol: f64) {
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.as_slice().iter().zip(y.as_slice()) {
            let scale = p.abs().max(q.abs()).max(1.0);
            assert!((p - q).abs() / scale < tol, "analytic {p} vs numeric {q}");
        }
    }
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn check(f: &Build, inputs: Vec<Matrix<f64>>) {
    let a = analytic_grads(f, &inputs);
    let n = numeric_grads(f, &inputs, 1e-5);
    assert_close(&a, &n, 1e-6);
}

#[test]
fn matmul_with_every_transpose_combination() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = if ta {
            random(4, 3, &mut rng)
        } else {
            random(3, 4, &mut rng)
        };
        let b = if tb {
            random(2, 4, &mut rng)
        } else {
            random(4, 2, &mut rng)
        };
        let f = move |t: &Tape<f64>, v: &[Var]| t.sum(t.square(t.matmul_t(v[0], v[1], ta, tb)));
        check(&f, vec![a, b]);
    }
}

#[test]
fn smooth_unary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(3, 4, &mut rng).map(|v| v + 2.0);
    let f = |t: &Tape<f64>, v: &[Var]| {
        let a = t.tanh(v[0]);
        let b = t.log(v[0]);
        let c = t.sqrt(v[0]);
        let d = t.recip(t.exp(v[0]));
        let s = t.add(t.add(a, b), t.mul(c, d));
        t.sum(t.scale(t.add_scalar(s, 0.5), 1.5))
    };
    check(&f, vec![x]);
}

#[test]
fn broadcasts_reductions_and_layout_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(4, 6, &mut rng);
    let row = random(1, 6, &mut rng);
    let col = random(4, 1, &mut rng);
    let f = |t: &Tape<f64>, v: &[Var]| {
        let a = t.add_row(v[0], v[1]);
        let b = t.mul_row(a, v[1]);
        let c = t.mul_col(b, v[2]);
        let left = t.slice_cols(c, 0, 2);
        let right = t.slice_cols(c, 2, 6);
        let joined = t.concat_cols(&[right, t.tanh(left)]);
        let packed = t.reshape(joined, 2, 12);
        let rs = t.sum_rows(t.square(packed));
        let cs = t.sum_cols(t.embed_cols(rs, 3, 20));
        let bc = t.broadcast_col(cs, 3);
        let br = t.broadcast_row(rs, 2);
        let s = t.broadcast_scalar(t.mean(bc), 2, 2);
        t.add(t.add(t.sum(br), t.sum(s)), t.sum(t.sub(bc, bc)))
    };
    check(&f, vec![x, row, col]);
}

#[test]
fn softmax_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random(3, 5, &mut rng).map(|v| v * 4.0);
    let w = random(3, 5, &mut rng);
    let f = |t: &Tape<f64>, v: &[Var]| {
        let sm = t.softmax_rows(v[0]);
        let ls = t.log_softmax_rows(v[0]);
        t.add(t.sum(t.mul(sm, v[1])), t.sum(t.mul(ls, t.square(v[1]))))
    };
    check(&f, vec![x, w]);
}

#[test]
fn second_order_gradient_of_input_gradient_norm() {
    // f(W) = || d/dx sum(tanh(x W)) ||^2, differentiated w.r.t. W
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(3, 4, &mut rng);
    let w = random(4, 2, &mut rng);
    let f = |t: &Tape<f64>, v: &[Var]| {
        let y = t.sum(t.tanh(t.matmul(v[0], v[1])));
        let gx = t.grad(y, &[v[0]])[0];
        t.sum(t.square(gx))
    };
    let a = analytic_grads(&f, &[x.clone(), w.clone()]);
    let n = numeric_grads(&f, &[x, w], 1e-5);
    assert_close(&a, &n, 1e-6);
}

#[test]
fn unrelated_inputs_get_zero_gradient() {
    let tape = Tape::<f64>::new();
    let a = tape.variable(Matrix::full(2, 2, 1.0));
    let b = tape.variable(Matrix::full(3, 1, 1.0));
    let out = tape.sum(tape.square(a));
    let g = tape.grad_values(out, &[a, b]);
    assert_eq!(g[1], Matrix::zeros(3, 1));
    assert_eq!(g[0], Matrix::full(2, 2, 2.0));
}

#[test]
fn leaky_relu_has_mask_derivative() {
    let tape = Tape::<f64>::new();
    let x = tape.variable(Matrix::from_vec(1, 3, vec![-2.0, 0.5, 3.0]).unwrap());
    let y = tape.sum(tape.leaky_relu(x, 0.2));
    assert!((tape.scalar_value(y) - (-0.4 + 3.5)).abs() < 1e-12);
    let g = tape.grad_values(y, &[x]);
    assert_eq!(g[0].as_slice(), &[0.2, 1.0, 1.0]);
}

proptest! {
    #[test]
    fn softmax_rows_lie_on_simplex(vals in proptest::collection::vec(-30.0f64..30.0, 12)) {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Matrix::from_vec(3, 4, vals).unwrap());
        let sm = tape.value(tape.softmax_rows(x));
        for r in 0..3 {
            let s: f64 = sm.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(sm.row(r).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn linear_map_gradient_is_its_weight(w in proptest::collection::vec(-5.0f64..5.0, 4),
                                         x in proptest::collection::vec(-5.0f64..5.0, 4)) {
        let tape = Tape::<f64>::new();
        let xv = tape.variable(Matrix::from_vec(1, 4, x).unwrap());
        let wv = tape.constant(Matrix::from_vec(4, 1, w.clone()).unwrap());
        let y = tape.sum(tape.matmul(xv, wv));
        let g = tape.grad_values(y, &[xv]);
        prop_assert_eq!(g[0].as_slice(), &w[..]);
    }
}
