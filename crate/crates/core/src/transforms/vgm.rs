//! One-dimensional variational Bayesian Gaussian mixture with a truncated
//! Dirichlet-process weight prior.
//!
//! Update equations follow the usual coordinate-ascent scheme for a
//! Gauss-Wishart prior (Bishop, PRML 10.2) with stick-breaking weights.
//! Data are standardized before fitting and results mapped back to feature
//! units.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::{digamma, ln_gamma};

use super::TransformError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VgmConfig {
    pub max_components: usize,
    /// Components with posterior weight below this are deactivated.
    pub weight_threshold: f64,
    pub concentration_prior: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub reg_covar: f64,
    /// Minimum component stddev in standardized units.
    pub std_floor: f64,
}

impl Default for VgmConfig {
    fn default() -> Self {
        Self {
            max_components: 10,
            weight_threshold: 0.005,
            concentration_prior: 1e-3,
            max_iter: 1000,
            tol: 1e-3,
            reg_covar: 1e-6,
            std_floor: 1e-4,
        }
    }
}

/// Fitted mixture for one numeric feature, in feature units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VgmModel {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub active: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    /// Draw the mode from the posterior responsibilities.
    Sample,
    Argmax,
}

impl VgmModel {
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&k| self.active[k]).collect()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        let k = self.weights.len();
        let bad = |m: &str| Err(TransformError::InvalidState(m.to_string()));
        if k == 0 || self.means.len() != k || self.stds.len() != k || self.active.len() != k {
            return bad("mixture component arrays disagree in length");
        }
        if self.n_active() == 0 {
            return bad("mixture has no active component");
        }
        if self.stds.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("mixture stddev must be positive and finite");
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return bad("mixture mean must be finite");
        }
        if self.weights.iter().any(|&w| !(w >= 0.0))
            || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-6
        {
            return bad("mixture weights must be non-negative and sum to 1");
        }
        Ok(())
    }

    /// Posterior responsibilities over the active components, in
    /// [`active_indices`](Self::active_indices) order.
    pub fn responsibilities(&self, x: f64) -> Vec<f64> {
        let logs: Vec<f64> = self
            .active_indices()
            .into_iter()
            .map(|k| {
                let z = (x - self.means[k]) / self.stds[k];
                self.weights[k].max(f64::MIN_POSITIVE).ln() - self.stds[k].ln() - 0.5 * z * z
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / sum).collect()
    }

    /// `(scalar, mode)` where `mode` indexes the active components and
    /// `scalar = (x - mean) / (4 std)` clipped to `[-1, 1]`.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        x: f64,
        selection: ModeSelection,
        rng: &mut R,
    ) -> (f64, usize) {
        let resp = self.responsibilities(x);
        let mode = match selection {
            ModeSelection::Argmax => argmax(&resp),
            ModeSelection::Sample => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = resp.len() - 1;
                for (i, r) in resp.iter().enumerate() {
                    acc += r;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            }
        };
        let k = self.active_indices()[mode];
        let scalar = ((x - self.means[k]) / (4.0 * self.stds[k])).clamp(-1.0, 1.0);
        (scalar, mode)
    }

    /// Inverse of [`encode`](Self::encode) for an active-mode index.
    pub fn decode(&self, scalar: f64, mode: usize) -> f64 {
        let k = self.active_indices()[mode];
        self.means[k] + 4.0 * self.stds[k] * scalar
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Fit a mixture to `values`. A constant column yields one component at the
/// value with stddev equal to the floor.
pub fn fit_vgm(values: &[f64], config: &VgmConfig, seed: u64) -> Result<VgmModel, TransformError> {
    if values.is_empty() {
        return Err(TransformError::EmptyColumn);
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(TransformError::NonFinite);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let scale = var.sqrt();
    if values.len() < 2 || scale <= 1e-12 * mean.abs().max(1.0) {
        return Ok(VgmModel {
            weights: vec![1.0],
            means: vec![mean],
            stds: vec![config.std_floor],
            active: vec![true],
        });
    }
    // Duplicates collapse into weighted points; the updates are unchanged.
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut z: Vec<f64> = Vec::new();
    let mut w: Vec<f64> = Vec::new();
    for x in sorted {
        let v = (x - mean) / scale;
        match z.last() {
            Some(&last) if last == v => *w.last_mut().expect("paired") += 1.0,
            _ => {
                z.push(v);
                w.push(1.0);
            }
        }
    }
    let k = config.max_components.clamp(1, values.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = kmeans_1d(&z, &w, k, &mut rng);
    let mut resp = vec![0.0; z.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        resp[i * k + l] = 1.0;
    }

    let mut fit = Variational::new(&z, &w, k, config);
    fit.m_step(&z, &w, &resp);
    let mut lower_bound = f64::NEG_INFINITY;
    let mut converged = false;
    for iter in 0..config.max_iter {
        let prev = lower_bound;
        let log_resp = fit.e_step(&z);
        for (r, l) in resp.iter_mut().zip(&log_resp) {
            *r = l.exp();
        }
        fit.m_step(&z, &w, &resp);
        lower_bound = fit.lower_bound(&w, &log_resp);
        if (lower_bound - prev).abs() < config.tol {
            log::debug!("vgm converged after {} iterations", iter + 1);
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("vgm stopped at max_iter={}", config.max_iter);
    }

    let weights = fit.weights();
    let mut active: Vec<bool> = weights
        .iter()
        .map(|&w| w > config.weight_threshold)
        .collect();
    if !active.iter().any(|&a| a) {
        active[argmax(&weights)] = true;
    }
    Ok(VgmModel {
        means: fit.means.iter().map(|m| mean + scale * m).collect(),
        stds: fit
            .covariances
            .iter()
            .map(|c| scale * c.sqrt().max(config.std_floor))
            .collect(),
        weights,
        active,
    })
}

/// Variational posterior state in standardized units.
struct Variational {
    k: usize,
    concentration_prior: f64,
    mean_prior: f64,
    mean_precision_prior: f64,
    dof_prior: f64,
    covariance_prior: f64,
    reg_covar: f64,
    // Beta posteriors of the stick-breaking fractions
    conc_a: Vec<f64>,
    conc_b: Vec<f64>,
    mean_precision: Vec<f64>,
    means: Vec<f64>,
    dof: Vec<f64>,
    /// Expected covariance (scale matrix over degrees of freedom).
    covariances: Vec<f64>,
}

impl Variational {
    fn new(z: &[f64], w: &[f64], k: usize, config: &VgmConfig) -> Self {
        let n: f64 = w.iter().sum();
        let mean = z.iter().zip(w).map(|(x, c)| c * x).sum::<f64>() / n;
        let unbiased = z
            .iter()
            .zip(w)
            .map(|(x, c)| c * (x - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        Self {
            k,
            concentration_prior: config.concentration_prior,
            mean_prior: mean,
            mean_precision_prior: 1.0,
            dof_prior: 1.0,
            covariance_prior: unbiased,
            reg_covar: config.reg_covar,
            conc_a: vec![0.0; k],
            conc_b: vec![0.0; k],
            mean_precision: vec![0.0; k],
            means: vec![0.0; k],
            dof: vec![0.0; k],
            covariances: vec![0.0; k],
        }
    }

    fn m_step(&mut self, z: &[f64], w: &[f64], resp: &[f64]) {
        let k = self.k;
        let eps = 10.0 * f64::EPSILON;
        let mut nk = vec![eps; k];
        let mut sx = vec![0.0; k];
        for (i, &x) in z.iter().enumerate() {
            for j in 0..k {
                let r = w[i] * resp[i * k + j];
                nk[j] += r;
                sx[j] += r * x;
            }
        }
        let xk: Vec<f64> = (0..k).map(|j| sx[j] / nk[j]).collect();
        let mut sk = vec![0.0; k];
        for (i, &x) in z.iter().enumerate() {
            for j in 0..k {
                sk[j] += w[i] * resp[i * k + j] * (x - xk[j]).powi(2);
            }
        }
        for j in 0..k {
            sk[j] = sk[j] / nk[j] + self.reg_covar;
        }

        // Stick-breaking: a_j = 1 + N_j, b_j = alpha + sum_{l > j} N_l
        let mut tail = 0.0;
        for j in (0..k).rev() {
            self.conc_a[j] = 1.0 + nk[j];
            self.conc_b[j] = self.concentration_prior + tail;
            tail += nk[j];
        }
        for j in 0..k {
            self.mean_precision[j] = self.mean_precision_prior + nk[j];
            self.means[j] = (self.mean_precision_prior * self.mean_prior + nk[j] * xk[j])
                / self.mean_precision[j];
            self.dof[j] = self.dof_prior + nk[j];
            let diff = xk[j] - self.mean_prior;
            let scale = self.covariance_prior
                + nk[j] * sk[j]
                + nk[j] * self.mean_precision_prior / self.mean_precision[j] * diff * diff;
            self.covariances[j] = scale / self.dof[j];
        }
    }

    fn expected_log_weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.k);
        let mut acc = 0.0;
        for j in 0..self.k {
            let ds = digamma(self.conc_a[j] + self.conc_b[j]);
            out.push(digamma(self.conc_a[j]) - ds + acc);
            acc += digamma(self.conc_b[j]) - ds;
        }
        out
    }

    /// Log responsibilities, row-major `n x k`.
    fn e_step(&self, z: &[f64]) -> Vec<f64> {
        let k = self.k;
        let log_w = self.expected_log_weights();
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let consts: Vec<f64> = (0..k)
            .map(|j| {
                let prec_chol = 1.0 / self.covariances[j].sqrt();
                let log_lambda = std::f64::consts::LN_2 + digamma(0.5 * self.dof[j]);
                log_w[j] + prec_chol.ln() - 0.5 * ln2pi - 0.5 * self.dof[j].ln()
                    + 0.5 * (log_lambda - 1.0 / self.mean_precision[j])
            })
            .collect();
        let mut out = vec![0.0; z.len() * k];
        for (i, &x) in z.iter().enumerate() {
            let row = &mut out[i * k..(i + 1) * k];
            for j in 0..k {
                let d = x - self.means[j];
                row[j] = consts[j] - 0.5 * d * d / self.covariances[j];
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        out
    }

    fn lower_bound(&self, w: &[f64], log_resp: &[f64]) -> f64 {
        let entropy: f64 = log_resp
            .chunks(self.k)
            .zip(w)
            .map(|(row, c)| {
                c * row
                    .iter()
                    .map(|&l| {
                        let r = l.exp();
                        if r > 0.0 {
                            r * l
                        } else {
                            0.0
                        }
                    })
                    .sum::<f64>()
            })
            .sum();
        let mut log_wishart = 0.0;
        let mut log_norm_weight = 0.0;
        let mut log_mean_precision = 0.0;
        for j in 0..self.k {
            let log_det_chol = -0.5 * self.covariances[j].ln() - 0.5 * self.dof[j].ln();
            log_wishart -= self.dof[j] * log_det_chol
                + self.dof[j] * 0.5 * std::f64::consts::LN_2
                + ln_gamma(0.5 * self.dof[j]);
            log_norm_weight -= ln_beta(self.conc_a[j], self.conc_b[j]);
            log_mean_precision += self.mean_precision[j].ln();
        }
        -entropy - log_wishart - log_norm_weight - 0.5 * log_mean_precision
    }

    fn weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.k);
        let mut remaining = 1.0;
        for j in 0..self.k {
            let s = self.conc_a[j] + self.conc_b[j];
            w.push(self.conc_a[j] / s * remaining);
            remaining *= self.conc_b[j] / s;
        }
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }
}

/// Index drawn with probability proportional to `mass`.
fn draw(mass: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = mass.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, m) in mass.iter().enumerate() {
        acc += m;
        if u < acc {
            return i;
        }
    }
    mass.len() - 1
}

/// Weighted Lloyd's algorithm with k-means++ seeding; returns a label per
/// point.
fn kmeans_1d(z: &[f64], w: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = z.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(z[draw(w, rng)]);
    let mut d2: Vec<f64> = z.iter().map(|x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let mass: Vec<f64> = d2.iter().zip(w).map(|(d, c)| d * c).collect();
        let next = if mass.iter().sum::<f64>() <= 0.0 {
            z[draw(w, rng)]
        } else {
            z[draw(&mass, rng)]
        };
        centers.push(next);
        for (d, x) in d2.iter_mut().zip(z) {
            *d = d.min((x - next).powi(2));
        }
    }
    let mut labels = vec![0usize; n];
    for _ in 0..300 {
        let mut changed = false;
        for (l, x) in labels.iter_mut().zip(z) {
            let mut best = 0;
            for j in 1..k {
                if (x - centers[j]).abs() < (x - centers[best]).abs() {
                    best = j;
                }
            }
            if *l != best {
                *l = best;
                changed = true;
            }
        }
        let mut sum = vec![0.0; k];
        let mut count = vec![0.0; k];
        for ((l, x), c) in labels.iter().zip(z).zip(w) {
            sum[*l] += c * x;
            count[*l] += c;
        }
        for j in 0..k {
            if count[j] > 0.0 {
                centers[j] = sum[j] / count[j];
            }
        }
        if !changed {
            break;
        }
    }
    labels
}
