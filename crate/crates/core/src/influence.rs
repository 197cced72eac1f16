//! Leave-one-out influence without retraining.
//!
//! For the fitted logistic model θ̂ and a point z,
//!
//! ```text
//! I_up,loss(z, z_test) = −∇L(z_test, θ̂)ᵀ H⁻¹ ∇L(z, θ̂)
//! I_LOO(z)             = I_up,loss(z, z)
//! ```
//!
//! where `L` is the unweighted logistic loss and `H` the Hessian of the loss
//! scale of the training objective, `Σ wᵢ L(zᵢ) + ‖w‖² / (2C)`, i.e. the
//! objective Hessian divided by `C`. With that scaling, removing a unit-weight
//! point raises its own loss by approximately `−I_LOO(z)`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, LabeledExample};
use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky};
use crate::linmodel::{
    fit_logistic, fit_logistic_from, hessian, point_gradient, point_loss, ModelParams, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMetric {
    Loss,
    Influence,
    MarginAbs,
    MarginInv,
    Uniform,
}

impl ScoreMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMetric::Loss => "loss",
            ScoreMetric::Influence => "influence",
            ScoreMetric::MarginAbs => "margin_abs",
            ScoreMetric::MarginInv => "margin_inv",
            ScoreMetric::Uniform => "uniform",
        }
    }
}

impl fmt::Display for ScoreMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss" => Ok(ScoreMetric::Loss),
            "influence" => Ok(ScoreMetric::Influence),
            "margin_abs" => Ok(ScoreMetric::MarginAbs),
            "margin_inv" => Ok(ScoreMetric::MarginInv),
            "uniform" => Ok(ScoreMetric::Uniform),
            other => Err(Error::Parameter(format!("unknown score metric {other:?}"))),
        }
    }
}

/// Per-example augmentation scores, tagged with the metric and the model fit
/// that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    values: Vec<f64>,
    pub metric: ScoreMetric,
    /// Set once the scores have been passed through `1/(s + ε)`.
    pub inverted: bool,
    pub model_version: u64,
}

impl ScoreVector {
    /// Panics on negative or non-finite entries.
    pub fn new(values: Vec<f64>, metric: ScoreMetric, model_version: u64) -> Self {
        Self::try_new(values, metric, model_version).expect("scores must be finite and nonnegative")
    }

    pub fn try_new(values: Vec<f64>, metric: ScoreMetric, model_version: u64) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Data(format!(
                "score {v} is not finite and nonnegative"
            )));
        }
        Ok(ScoreVector {
            values,
            metric,
            inverted: false,
            model_version,
        })
    }

    pub fn uniform(n: usize) -> Self {
        Self::new(vec![1.0; n], ScoreMetric::Uniform, 0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Metric label used in CSV output, with an `_inverse` suffix for
    /// inverted scores.
    pub fn metric_label(&self) -> String {
        if self.inverted {
            format!("{}_inverse", self.metric)
        } else {
            self.metric.to_string()
        }
    }

    /// Writes `index,score,metric,model_version` rows with a header.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "index,score,metric,model_version")?;
        let label = self.metric_label();
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{i},{v:?},{label},{}", self.model_version)?;
        }
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<(usize, f64)> = Vec::new();
        let mut meta: Option<(String, u64)> = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("index")) {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != 4 {
                return Err(Error::Format(format!(
                    "score line {} has {} columns, expected 4",
                    lineno + 1,
                    cells.len()
                )));
            }
            let bad = |msg: &str| Error::Parse {
                line: lineno + 1,
                msg: msg.to_string(),
            };
            let idx: usize = cells[0]
                .parse()
                .map_err(|_| bad("index is not an integer"))?;
            let v: f64 = cells[1].parse().map_err(|_| bad("score is not numeric"))?;
            let version: u64 = cells[3]
                .parse()
                .map_err(|_| bad("model_version is not an integer"))?;
            let this_meta = (cells[2].to_string(), version);
            match &meta {
                None => meta = Some(this_meta),
                Some(m) if *m != this_meta => {
                    return Err(bad("metric/model_version differ between rows"));
                }
                _ => {}
            }
            rows.push((idx, v));
        }
        let (label, version) = meta.ok_or_else(|| Error::Format("score CSV has no rows".into()))?;
        rows.sort_by_key(|r| r.0);
        if rows.iter().map(|r| r.0).ne(0..rows.len()) {
            return Err(Error::Format("score indices must be 0..n".into()));
        }
        let (metric, inverted) = match label.strip_suffix("_inverse") {
            Some(base) => (base.parse()?, true),
            None => (label.parse()?, false),
        };
        let mut sv = Self::try_new(rows.into_iter().map(|r| r.1).collect(), metric, version)?;
        sv.inverted = inverted;
        Ok(sv)
    }
}

/// Reusable factorization of a symmetric positive-definite Hessian.
#[derive(Debug, Clone)]
pub struct HessianFactor {
    chol: Cholesky,
    jitter: f64,
}

impl HessianFactor {
    pub fn dim(&self) -> usize {
        self.chol.dim()
    }

    /// Diagonal shift that was needed to make the matrix factorizable.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// x = H⁻¹ b
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.chol.solve(b)
    }
}

/// Cholesky factorization; if a pivot is not positive, retries with jitter
/// `δ·I` for δ = 1e−9·trace(H)/dim × 10ᵏ, k = 0..=3.
pub fn factorize(h: &Array2<f64>) -> Result<HessianFactor> {
    let n = h.nrows();
    if n != h.ncols() {
        return Err(Error::Parameter("Hessian must be square".into()));
    }
    let scale = h
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in (i + 1)..n {
            if (h[(i, j)] - h[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Parameter(format!(
                    "Hessian is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    if let Some(chol) = Cholesky::factor_shifted(h.view(), 0.0) {
        return Ok(HessianFactor { chol, jitter: 0.0 });
    }
    let base = 1e-9 * h.diag().sum() / n as f64;
    if base > 0.0 {
        for k in 0..=3 {
            let jitter = base * 10f64.powi(k);
            if let Some(chol) = Cholesky::factor_shifted(h.view(), jitter) {
                return Ok(HessianFactor { chol, jitter });
            }
        }
    }
    Err(Error::Conditioning(
        "Hessian is not positive definite even with maximal jitter".into(),
    ))
}

/// Hessian of `Σ wᵢ L(zᵢ) + ‖w‖²/(2C)` at `params`, i.e. `∇²J / C`.
pub fn loss_hessian(params: &ModelParams, data: &Dataset, config: &TrainConfig) -> Array2<f64> {
    hessian(params, data, config) / config.c
}

/// Factor of [`loss_hessian`], the matrix every influence query solves against.
pub fn factor_for_fit(
    params: &ModelParams,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<HessianFactor> {
    factorize(&loss_hessian(params, data, config))
}

/// −∇L(z_test)ᵀ H⁻¹ ∇L(z)
pub fn influence_up_loss(
    params: &ModelParams,
    factor: &HessianFactor,
    z_test: &LabeledExample,
    z: &LabeledExample,
) -> Result<f64> {
    if factor.dim() != params.dim() + 1 {
        return Err(Error::Parameter(format!(
            "factor has dimension {}, model needs {}",
            factor.dim(),
            params.dim() + 1
        )));
    }
    let g = point_gradient(params, z);
    let g_test = point_gradient(params, z_test);
    Ok(-dot(&g_test, &factor.solve(&g)))
}

/// I_LOO(z) = I_up,loss(z, z); never positive.
pub fn loo_influence(
    params: &ModelParams,
    factor: &HessianFactor,
    z: &LabeledExample,
) -> Result<f64> {
    influence_up_loss(params, factor, z, z)
}

/// Exact self-loss change from removing example `i` and refitting:
/// L(zᵢ, θ̂₋ᵢ) − L(zᵢ, θ̂). Two full fits; meant as a reference.
pub fn brute_force_loo(data: &Dataset, config: &TrainConfig, i: usize) -> Result<f64> {
    let z = data.get(i)?.clone();
    let full = fit_logistic(data, config)?;
    let reduced = fit_logistic(&data.without(i)?, config)?;
    Ok(point_loss(&reduced, &z) - point_loss(&full, &z))
}

/// [`brute_force_loo`] for every example, sharing one full fit and starting
/// each reduced fit from it.
pub fn brute_force_loo_all(data: &Dataset, config: &TrainConfig) -> Result<Vec<f64>> {
    let full = fit_logistic(data, config)?;
    (0..data.len())
        .map(|i| {
            let z = data.get(i)?;
            let reduced = fit_logistic_from(&data.without(i)?, config, &full)?;
            Ok(point_loss(&reduced, z) - point_loss(&full, z))
        })
        .collect()
}

/// Loss or |I_LOO| for every example of `data`.
pub fn score_all(
    params: &ModelParams,
    factor: Option<&HessianFactor>,
    data: &Dataset,
    metric: ScoreMetric,
    model_version: u64,
) -> Result<ScoreVector> {
    let values = match metric {
        ScoreMetric::Loss => data
            .examples()
            .iter()
            .map(|z| point_loss(params, z))
            .collect(),
        ScoreMetric::Influence => {
            let factor = factor.ok_or_else(|| {
                Error::Parameter("influence scores need a Hessian factorization".into())
            })?;
            data.examples()
                .iter()
                .map(|z| loo_influence(params, factor, z).map(f64::abs))
                .collect::<Result<Vec<_>>>()?
        }
        other => {
            return Err(Error::Parameter(format!(
                "score_all computes loss or influence, not {other}"
            )))
        }
    };
    ScoreVector::try_new(values, metric, model_version)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Label;
    use ndarray::array;

    #[test]
    fn factorize_identity_and_diagonal() {
        let f = factorize(&Array2::eye(3)).unwrap();
        assert_eq!(f.solve(&[1.0, -2.0, 3.5]), vec![1.0, -2.0, 3.5]);
        assert_eq!(f.jitter(), 0.0);
        let f = factorize(&array![[2.0, 0.0], [0.0, 4.0]]).unwrap();
        assert!(f.solve(&[2.0, 4.0]).iter().all(|x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn factorize_jitters_semidefinite_and_rejects_indefinite() {
        let psd = array![[1.0, 1.0], [1.0, 1.0]];
        let f = factorize(&psd).unwrap();
        assert!(f.jitter() > 0.0);
        let indefinite = array![[1.0, 0.0], [0.0, -1.0]];
        assert!(matches!(
            factorize(&indefinite),
            Err(Error::Conditioning(_))
        ));
        let asym = array![[1.0, 0.5], [0.0, 1.0]];
        assert!(factorize(&asym).is_err());
    }

    fn z(x: &[f64], y: f64) -> LabeledExample {
        LabeledExample::new(x.to_vec(), Label::from_sign(y), 0)
    }

    #[test]
    fn identity_hessian_reduces_to_gradient_dot() {
        let params = ModelParams {
            weights: vec![0.4, -0.3],
            bias: 0.1,
        };
        let factor = factorize(&Array2::eye(3)).unwrap();
        let a = z(&[1.0, 2.0], 1.0);
        let b = z(&[-0.5, 0.7], -1.0);
        let direct = -dot(&point_gradient(&params, &a), &point_gradient(&params, &b));
        let got = influence_up_loss(&params, &factor, &a, &b).unwrap();
        assert!((got - direct).abs() < 1e-15);
        let sym = influence_up_loss(&params, &factor, &b, &a).unwrap();
        assert!((got - sym).abs() < 1e-15);
        assert_eq!(
            loo_influence(&params, &factor, &a).unwrap(),
            influence_up_loss(&params, &factor, &a, &a).unwrap()
        );
    }

    #[test]
    fn saturated_point_has_no_influence() {
        let params = ModelParams {
            weights: vec![1000.0],
            bias: 0.0,
        };
        let factor = factorize(&array![[2.0, 0.1], [0.1, 1.0]]).unwrap();
        let sat = z(&[1.0], 1.0);
        assert_eq!(loo_influence(&params, &factor, &sat).unwrap(), 0.0);
        assert_eq!(
            influence_up_loss(&params, &factor, &z(&[-0.3], 1.0), &sat).unwrap(),
            0.0
        );
    }

    #[test]
    fn score_all_requires_factor_for_influence() {
        let data = Dataset::from_examples(vec![z(&[0.0], 1.0)]).unwrap();
        let p = ModelParams::zeros(1);
        assert!(score_all(&p, None, &data, ScoreMetric::Influence, 0).is_err());
        let s = score_all(&p, None, &data, ScoreMetric::Loss, 3).unwrap();
        assert!((s.values()[0] - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(s.model_version, 3);
        assert!(score_all(&p, None, &data, ScoreMetric::MarginAbs, 0).is_err());
    }

    #[test]
    fn score_csv_round_trip() {
        let mut s = ScoreVector::new(vec![0.5, 0.0, 1e-300, 2.0], ScoreMetric::Influence, 7);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(
            ScoreVector::parse_csv(std::str::from_utf8(&buf).unwrap()).unwrap(),
            s
        );
        s.inverted = true;
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(
            ScoreVector::parse_csv(std::str::from_utf8(&buf).unwrap()).unwrap(),
            s
        );
        assert!(ScoreVector::try_new(vec![-1.0], ScoreMetric::Loss, 0).is_err());
    }
}
