//! Layers, parameter storage and the Adam optimiser.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Matrix, Scalar, ShapeError, Tape, Var};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(usize);

/// Owns the trainable tensors of one network.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    values: Vec<Rc<Matrix<T>>>,
}

/// Serialized form of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(Rc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        Rc::make_mut(&mut self.values[id.0])
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Place every tensor on the tape.
    ///
    /// With `trainable = false` the tensors are constants, which keeps
    /// backward passes from computing gradients nobody will use.
    pub fn bind(&self, tape: &Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .values
            .iter()
            .map(|v| {
                if trainable {
                    tape.variable_shared(Rc::clone(v))
                } else {
                    tape.constant_shared(Rc::clone(v))
                }
            })
            .collect();
        Bound { vars }
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(name, v)| NamedTensor {
                name: name.clone(),
                rows: v.rows(),
                cols: v.cols(),
                data: v.to_f64_vec(),
            })
            .collect()
    }

    /// Overwrite values from a serialized snapshot with identical layout.
    pub fn load_named(&mut self, named: &[NamedTensor]) -> Result<(), ShapeError> {
        if named.len() != self.values.len() {
            return Err(ShapeError::ParamCount {
                expected: self.values.len(),
                found: named.len(),
            });
        }
        for (slot, (name, t)) in self.values.iter_mut().zip(self.names.iter().zip(named)) {
            if *name != t.name || slot.shape() != (t.rows, t.cols) {
                return Err(ShapeError::ParamMismatch {
                    name: t.name.clone(),
                });
            }
            let data = t.data.iter().map(|&x| T::of(x)).collect();
            *slot = Rc::new(Matrix::from_vec(t.rows, t.cols, data)?);
        }
        Ok(())
    }
}

/// Tape handles of a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation.
fn fan_in_uniform<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut R,
) -> Matrix<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| T::of(rng.random_range(-bound..bound)))
}

/// Fully connected layer `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_uniform(inputs, outputs, inputs, rng),
        );
        let bias = store.add(
            format!("{name}.bias"),
            fan_in_uniform(1, outputs, inputs, rng),
        );
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, params: &Bound, x: Var) -> Var {
        let h = tape.matmul(x, params.var(self.weight));
        tape.add_row(h, params.var(self.bias))
    }
}

/// Batch normalisation over the batch dimension with running statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Matrix::full(1, width, T::one()));
        let beta = store.add(format!("{name}.beta"), Matrix::zeros(1, width));
        Self {
            gamma,
            beta,
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Normalise with batch statistics and update the running estimates.
    pub fn forward_train<T: Scalar>(&mut self, tape: &Tape<T>, params: &Bound, x: Var) -> Var {
        let (m, n) = tape.shape(x);
        let inv_m = 1.0 / m as f64;
        let mean = tape.scale(tape.sum_rows(x), inv_m);
        let centered = tape.sub(x, tape.broadcast_row(mean, m));
        let var = tape.scale(tape.sum_rows(tape.square(centered)), inv_m);
        let inv_std = tape.recip(tape.sqrt(tape.add_scalar(var, self.eps)));
        let normed = tape.mul(centered, tape.broadcast_row(inv_std, m));

        let mean_v = tape.value(mean);
        let var_v = tape.value(var);
        let unbias = if m > 1 {
            m as f64 / (m - 1) as f64
        } else {
            1.0
        };
        for j in 0..n {
            let mu = mean_v.get(0, j).to_f64_lossless();
            let v = var_v.get(0, j).to_f64_lossless() * unbias;
            self.running_mean[j] =
                (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mu;
            self.running_var[j] = (1.0 - self.momentum) * self.running_var[j] + self.momentum * v;
        }
        self.affine(tape, params, normed)
    }

    /// Normalise with the running statistics.
    pub fn forward_eval<T: Scalar>(&self, tape: &Tape<T>, params: &Bound, x: Var) -> Var {
        let n = tape.shape(x).1;
        let shift = Matrix::from_fn(1, n, |_, j| T::of(-self.running_mean[j]));
        let scale = Matrix::from_fn(1, n, |_, j| {
            T::of(1.0 / (self.running_var[j] + self.eps).sqrt())
        });
        let centered = tape.add_row(x, tape.constant(shift));
        let normed = tape.mul_row(centered, tape.constant(scale));
        self.affine(tape, params, normed)
    }

    fn affine<T: Scalar>(&self, tape: &Tape<T>, params: &Bound, x: Var) -> Var {
        let scaled = tape.mul_row(x, params.var(self.gamma));
        tape.add_row(scaled, params.var(self.beta))
    }
}

/// Inverted dropout mask: zeros with probability `p`, else `1 / (1 - p)`.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    p: f64,
    rng: &mut R,
) -> Matrix<T> {
    let keep = T::of(1.0 / (1.0 - p));
    Matrix::from_fn(rows, cols, |_, _| {
        if rng.random::<f64>() < p {
            T::zero()
        } else {
            keep
        }
    })
}

/// Adam hyperparameters. `weight_decay` is an L2 term added to the gradient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

pub struct Adam<T: Scalar> {
    config: AdamConfig,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let m: Vec<_> = store
            .values
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            config,
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Matrix<T>]) {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        self.step += 1;
        let c = self.config;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one = T::one();
        let wd = T::of(c.weight_decay);
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        let step_size = T::of(c.lr / bc1);
        let inv_bc2_sqrt = T::of(1.0 / bc2.sqrt());
        let eps = T::of(c.eps);
        for (i, g) in grads.iter().enumerate() {
            let p = Rc::make_mut(&mut store.values[i]);
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            for (((x, &gi), mi), vi) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gi = gi + wd * *x;
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let denom = vi.sqrt() * inv_bc2_sqrt + eps;
                *x = *x - step_size * *mi / denom;
            }
        }
    }
}
