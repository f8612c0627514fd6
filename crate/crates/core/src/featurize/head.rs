//! Linear head on auxiliary targets and the train-fitted standardization that
//! stands in for the fine-tuned representation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureMatrix};
use crate::linalg::Standardizer;

/// Consecutive loss increases tolerated before giving up.
const MAX_RISING_EPOCHS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean over rows of the L1 norm of the residual vector.
    L1,
    /// Mean over rows of the squared L2 norm of the residual vector.
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    pub loss: LossKind,
    pub lr: f64,
    pub epochs: usize,
    /// Standardize columns (fitted on the rows passed to the fit) first.
    pub standardize: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            loss: LossKind::L2,
            lr: 1e-2,
            epochs: 500,
            standardize: true,
        }
    }
}

/// `s_hat = z W + b`, with `W` of shape `d x m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub loss_kind: LossKind,
    pub standardizer: Option<Standardizer>,
    /// Loss before training followed by the loss after each epoch.
    pub loss_history: Vec<f64>,
}

impl LinearHead {
    pub fn final_loss(&self) -> f64 {
        self.loss_history
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn predict(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let z = match &self.standardizer {
            Some(s) => s.apply(z),
            None => z.clone(),
        };
        let mut out = z * &self.weights;
        for mut row in out.row_iter_mut() {
            row += self.bias.transpose();
        }
        out
    }
}

fn loss_and_residual(
    z: &DMatrix<f64>,
    s: &DMatrix<f64>,
    w: &DMatrix<f64>,
    b: &DVector<f64>,
    kind: LossKind,
) -> (f64, DMatrix<f64>) {
    let mut r = z * w - s;
    for mut row in r.row_iter_mut() {
        row += b.transpose();
    }
    let n = z.nrows() as f64;
    let loss = match kind {
        LossKind::L2 => r.iter().map(|v| v * v).sum::<f64>() / n,
        LossKind::L1 => r.iter().map(|v| v.abs()).sum::<f64>() / n,
    };
    (loss, r)
}

/// Full-batch gradient descent from `W = 0, b = 0`. Returns the parameters
/// with the lowest loss seen, so the reported loss never exceeds the initial
/// one.
pub fn fit_linear_head(
    z: &DMatrix<f64>,
    s: &DMatrix<f64>,
    config: &HeadConfig,
) -> Result<LinearHead, FeatureError> {
    if z.nrows() != s.nrows() {
        return Err(FeatureError::RowCountMismatch(format!(
            "{} feature rows, {} target rows",
            z.nrows(),
            s.nrows()
        )));
    }
    if z.nrows() == 0 {
        return Err(FeatureError::InvalidArgument("no training rows".into()));
    }
    if !(config.lr > 0.0 && config.lr.is_finite()) {
        return Err(FeatureError::InvalidArgument(format!(
            "learning rate must be positive, got {}",
            config.lr
        )));
    }
    let standardizer = config.standardize.then(|| Standardizer::fit(z));
    let z = match &standardizer {
        Some(st) => st.apply(z),
        None => z.clone(),
    };
    let (d, m) = (z.ncols(), s.ncols());
    let n = z.nrows() as f64;
    let mut w = DMatrix::zeros(d, m);
    let mut b = DVector::zeros(m);
    let (mut loss, mut r) = loss_and_residual(&z, s, &w, &b, config.loss);
    let mut history = vec![loss];
    let mut best = (loss, w.clone(), b.clone());
    let mut rising = 0;
    for epoch in 1..=config.epochs {
        let g = match config.loss {
            LossKind::L2 => r.scale(2.0 / n),
            LossKind::L1 => r.map(|v| if v == 0.0 { 0.0 } else { v.signum() / n }),
        };
        let grad_w = z.transpose() * &g;
        let grad_b: DVector<f64> = g.row_sum().transpose();
        w -= grad_w * config.lr;
        b -= grad_b * config.lr;
        let prev = loss;
        (loss, r) = loss_and_residual(&z, s, &w, &b, config.loss);
        history.push(loss);
        if !loss.is_finite() {
            return Err(FeatureError::Diverged { epoch, loss });
        }
        rising = if loss > prev { rising + 1 } else { 0 };
        if rising >= MAX_RISING_EPOCHS {
            return Err(FeatureError::Diverged { epoch, loss });
        }
        if loss < best.0 {
            best = (loss, w.clone(), b.clone());
        }
    }
    Ok(LinearHead {
        weights: best.1,
        bias: best.2,
        loss_kind: config.loss,
        standardizer,
        loss_history: history,
    })
}

/// The representation passed downstream: `Z` standardized with the head's
/// training statistics, or `Z` unchanged when the head was fitted raw.
pub fn apply_head_residual(z: &FeatureMatrix, head: &LinearHead) -> FeatureMatrix {
    match &head.standardizer {
        None => z.clone(),
        Some(st) => {
            let mut out = z.clone();
            let d = z.d();
            let values: Vec<f64> = z
                .values()
                .iter()
                .enumerate()
                .map(|(i, v)| (v - st.means[i % d]) / st.sds[i % d])
                .collect();
            out.values = values;
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{rng_from_seed, select_rows};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn one_step_hand_gradient() {
        let z = DMatrix::from_element(1, 1, 1.0);
        let s = DMatrix::from_element(1, 1, 1.0);
        let cfg = HeadConfig {
            loss: LossKind::L2,
            lr: 0.1,
            epochs: 1,
            standardize: false,
        };
        let head = fit_linear_head(&z, &s, &cfg).unwrap();
        // dL/dW = 2 * z * (0 - 1) = -2, so W = 0.2; same for b
        assert!((head.weights[(0, 0)] - 0.2).abs() < 1e-15);
        assert!((head.bias[0] - 0.2).abs() < 1e-15);
        assert_eq!(head.loss_history[0], 1.0);
    }

    #[test]
    fn realizable_target_converges() {
        let z = random_matrix(60, 4, 1);
        let truth = DMatrix::from_row_slice(4, 2, &[1.0, -0.5, 0.3, 2.0, -1.2, 0.0, 0.7, 0.4]);
        let mut s = &z * &truth;
        for mut row in s.row_iter_mut() {
            row[0] += 0.5;
            row[1] -= 1.0;
        }
        let cfg = HeadConfig {
            loss: LossKind::L2,
            lr: 0.1,
            epochs: 2000,
            standardize: false,
        };
        let head = fit_linear_head(&z, &s, &cfg).unwrap();
        assert!(head.final_loss() < 1e-6, "{}", head.final_loss());
        assert!(head.final_loss() <= head.loss_history[0]);
    }

    #[test]
    fn l1_loss_decreases() {
        let z = random_matrix(40, 3, 2);
        let s = &z * DMatrix::from_row_slice(3, 1, &[1.0, 2.0, -1.0]);
        let cfg = HeadConfig {
            loss: LossKind::L1,
            lr: 0.05,
            epochs: 400,
            standardize: true,
        };
        let head = fit_linear_head(&z, &s, &cfg).unwrap();
        assert!(head.final_loss() < 0.1 * head.loss_history[0]);
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let z = random_matrix(30, 5, 3);
        let s = random_matrix(30, 2, 4);
        let cfg = HeadConfig {
            loss: LossKind::L2,
            lr: 1e6,
            epochs: 100,
            standardize: false,
        };
        // oracle: the first step alone multiplies the loss by orders of magnitude
        let err = fit_linear_head(&z, &s, &cfg).unwrap_err();
        assert!(matches!(err, FeatureError::Diverged { .. }));
    }

    #[test]
    fn standardization_on_and_off() {
        let raw = random_matrix(20, 3, 5).map(|v| 3.0 * v + 10.0);
        let fm = FeatureMatrix::from_matrix(
            &raw,
            (0..20).map(|i| i.to_string()).collect(),
            "v",
            super::super::Provenance::RandomConv,
        )
        .unwrap();
        let s = DMatrix::from_element(20, 1, 1.0);
        let on = fit_linear_head(&raw, &s, &HeadConfig::default()).unwrap();
        let z = apply_head_residual(&fm, &on).to_matrix();
        for col in z.column_iter() {
            let mean = col.iter().sum::<f64>() / 20.0;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 20.0).sqrt();
            assert!(mean.abs() < 1e-12);
            assert!((sd - 1.0).abs() < 1e-12);
        }
        let off_cfg = HeadConfig {
            standardize: false,
            lr: 1e-4,
            ..HeadConfig::default()
        };
        let off = fit_linear_head(&raw, &s, &off_cfg).unwrap();
        assert_eq!(apply_head_residual(&fm, &off), fm);
    }

    #[test]
    fn held_out_rows_use_training_statistics() {
        let raw = random_matrix(40, 2, 6);
        let shifted = raw.map(|v| v + 1.0);
        let train: Vec<usize> = (0..30).collect();
        let test: Vec<usize> = (30..40).collect();
        let train_x = select_rows(&shifted, &train);
        let head = fit_linear_head(
            &train_x,
            &DMatrix::from_element(30, 1, 0.0),
            &HeadConfig::default(),
        )
        .unwrap();
        let fm = FeatureMatrix::from_matrix(
            &shifted,
            (0..40).map(|i| i.to_string()).collect(),
            "v",
            super::super::Provenance::RandomConv,
        )
        .unwrap();
        let z = apply_head_residual(&fm, &head).to_matrix();
        let z_test = select_rows(&z, &test);
        // oracle: standardize the test rows with the training mean/sd directly
        for j in 0..2 {
            let col: Vec<f64> = train.iter().map(|&i| shifted[(i, j)]).collect();
            let mean = col.iter().sum::<f64>() / 30.0;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 30.0).sqrt();
            for (k, &i) in test.iter().enumerate() {
                let want = (shifted[(i, j)] - mean) / sd;
                assert!((z_test[(k, j)] - want).abs() < 1e-12);
            }
            let test_mean = z_test.column(j).iter().sum::<f64>() / 10.0;
            assert!(test_mean.abs() > 1e-6, "test columns are not re-centered");
        }
    }
}
