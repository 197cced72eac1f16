//! Linear classifiers: weighted L2-regularized logistic regression (fit by
//! damped Newton) and a linear hinge-loss SVM (dual coordinate descent).
//!
//! The logistic objective is
//!
//! ```text
//! J(w, b) = C · Σᵢ wᵢ · log(1 + exp(−yᵢ (wᵀxᵢ + b))) + ½‖w‖²
//! ```
//!
//! with the bias left unregularized. Parameters are handled internally as one
//! vector `θ = (w, b)` and every example as `x̃ = (x, 1)`.

use std::fs;
use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, LabeledExample};
use crate::error::{Error, Result};
use crate::influence::{ScoreMetric, ScoreVector};
use crate::linalg::{dot, norm_inf, Cholesky};
use crate::seeds::rng_from_seed;

/// Regularization grid searched for the SVM baselines.
pub const DEFAULT_SVM_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ModelParams {
    pub fn zeros(dim: usize) -> Self {
        ModelParams {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// f(x) = wᵀx + b
    #[inline]
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    /// (w, b) as one vector.
    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.weights.clone();
        t.push(self.bias);
        t
    }

    pub fn from_theta(theta: &[f64]) -> Self {
        let (w, b) = theta.split_at(theta.len() - 1);
        ModelParams {
            weights: w.to_vec(),
            bias: b[0],
        }
    }

    /// Plain-text form: a comment line, `dim <d>`, `bias <b>`, then one weight
    /// per line. Values are written in shortest round-trip notation.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# augsubset linear model\n");
        s.push_str(&format!("dim {}\n", self.weights.len()));
        s.push_str(&format!("bias {:?}\n", self.bias));
        for w in &self.weights {
            s.push_str(&format!("{w:?}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let mut keyed = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("model file is missing `{key}`")))?;
            line.strip_prefix(key)
                .map(|v| v.trim().to_string())
                .ok_or_else(|| Error::Format(format!("expected `{key} <value>`, got {line:?}")))
        };
        let dim: usize = keyed("dim")?
            .parse()
            .map_err(|_| Error::Format("model `dim` is not an integer".into()))?;
        let bias: f64 = keyed("bias")?
            .parse()
            .map_err(|_| Error::Format("model `bias` is not a number".into()))?;
        let weights = lines
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|_| Error::Format(format!("model weight {l:?} is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        if weights.len() != dim {
            return Err(Error::Format(format!(
                "model declares {dim} weights but lists {}",
                weights.len()
            )));
        }
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Format("model has non-finite entries".into()));
        }
        Ok(ModelParams { weights, bias })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Inverse regularization strength; multiplies the data term.
    pub c: f64,
    /// Convergence threshold on ‖∇J‖∞.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c: 10.0,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

impl TrainConfig {
    pub fn with_c(c: f64) -> Self {
        TrainConfig {
            c,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Parameter(format!(
                "C must be positive, got {}",
                self.c
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Parameter(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Parameter("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// σ(t) = 1 / (1 + e^(−t)) without overflow.
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^t), split at 0 so neither branch overflows.
#[inline]
pub fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Unweighted, unregularized logistic loss log(1 + exp(−y f(x))).
pub fn point_loss(params: &ModelParams, z: &LabeledExample) -> f64 {
    log1p_exp(-z.label.sign() * params.decision(&z.features))
}

/// ∇θ of [`point_loss`]: −y σ(−y f(x)) (x, 1).
pub fn point_gradient(params: &ModelParams, z: &LabeledExample) -> Vec<f64> {
    let y = z.label.sign();
    let coef = -y * sigmoid(-y * params.decision(&z.features));
    let mut g: Vec<f64> = z.features.iter().map(|x| coef * x).collect();
    g.push(coef);
    g
}

/// Dense copy of a dataset: augmented design matrix, labels and weights.
struct Design {
    x: Array2<f64>,
    y: Array1<f64>,
    w: Array1<f64>,
}

impl Design {
    fn new(data: &Dataset) -> Self {
        let n = data.len();
        let d = data.feature_dim();
        let mut x = Array2::<f64>::zeros((n, d + 1));
        let mut y = Array1::<f64>::zeros(n);
        let mut w = Array1::<f64>::zeros(n);
        for (i, e) in data.examples().iter().enumerate() {
            let mut row = x.row_mut(i);
            let row = row.as_slice_mut().expect("row-major design");
            row[..d].copy_from_slice(&e.features);
            row[d] = 1.0;
            y[i] = e.label.sign();
            w[i] = e.weight;
        }
        Design { x, y, w }
    }

    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn margins(&self, theta: &Array1<f64>) -> Array1<f64> {
        self.x.dot(theta) * &self.y
    }

    fn objective(&self, theta: &Array1<f64>, c: f64) -> f64 {
        let m = self.margins(theta);
        let data: f64 = m
            .iter()
            .zip(self.w.iter())
            .filter(|(_, &w)| w > 0.0)
            .map(|(&mi, &wi)| wi * log1p_exp(-mi))
            .sum();
        let d = theta.len() - 1;
        let ridge: f64 = theta.iter().take(d).map(|t| t * t).sum();
        c * data + 0.5 * ridge
    }

    fn gradient_from_margins(&self, theta: &Array1<f64>, m: &Array1<f64>, c: f64) -> Array1<f64> {
        // residual rᵢ = −C wᵢ yᵢ σ(−mᵢ)
        let r = Array1::from_iter(
            m.iter()
                .zip(self.y.iter())
                .zip(self.w.iter())
                .map(|((&mi, &yi), &wi)| -c * wi * yi * sigmoid(-mi)),
        );
        let mut g = self.x.t().dot(&r);
        let d = theta.len() - 1;
        for j in 0..d {
            g[j] += theta[j];
        }
        g
    }

    /// C Σ wᵢ pᵢ(1−pᵢ) x̃ᵢx̃ᵢᵀ + diag(1,…,1,0). Rows whose curvature is below
    /// `drop_below` times the largest are left out.
    fn hessian_from_margins(&self, m: &Array1<f64>, c: f64, drop_below: f64) -> Array2<f64> {
        let curv: Vec<f64> = m
            .iter()
            .zip(self.w.iter())
            .map(|(&mi, &wi)| c * wi * sigmoid(mi) * sigmoid(-mi))
            .collect();
        let max_curv = curv.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..curv.len())
            .filter(|&i| curv[i] > 0.0 && curv[i] >= drop_below * max_curv)
            .collect();
        let p = self.dim();
        let mut scaled = Array2::<f64>::zeros((keep.len(), p));
        for (r, &i) in keep.iter().enumerate() {
            let s = curv[i].sqrt();
            scaled
                .row_mut(r)
                .zip_mut_with(&self.x.row(i), |dst, &src| *dst = s * src);
        }
        let mut h = scaled.t().dot(&scaled);
        for j in 0..p - 1 {
            h[(j, j)] += 1.0;
        }
        h
    }
}

fn check_shapes(params: &ModelParams, data: &Dataset) -> Result<()> {
    if params.dim() != data.feature_dim() {
        return Err(Error::Data(format!(
            "model has {} weights, data has {} features",
            params.dim(),
            data.feature_dim()
        )));
    }
    Ok(())
}

/// J(θ) over the whole dataset.
pub fn objective(params: &ModelParams, data: &Dataset, config: &TrainConfig) -> f64 {
    Design::new(data).objective(&Array1::from(params.theta()), config.c)
}

/// ∇J(θ), length `feature_dim + 1`.
pub fn objective_gradient(params: &ModelParams, data: &Dataset, config: &TrainConfig) -> Vec<f64> {
    let design = Design::new(data);
    let theta = Array1::from(params.theta());
    let m = design.margins(&theta);
    design.gradient_from_margins(&theta, &m, config.c).to_vec()
}

/// ∇²J(θ): the Hessian of the full regularized objective.
pub fn hessian(params: &ModelParams, data: &Dataset, config: &TrainConfig) -> Array2<f64> {
    let design = Design::new(data);
    let theta = Array1::from(params.theta());
    let m = design.margins(&theta);
    design.hessian_from_margins(&m, config.c, 0.0)
}

/// Factorizes an SPD Newton system, adding a small diagonal shift if needed.
fn newton_factor(h: &Array2<f64>) -> Option<Cholesky> {
    if let Some(ch) = Cholesky::factor_shifted(h.view(), 0.0) {
        return Some(ch);
    }
    let scale = h.diag().iter().map(|v| v.abs()).sum::<f64>() / h.nrows() as f64;
    (0..8)
        .find_map(|k| Cholesky::factor_shifted(h.view(), scale.max(1e-300) * 1e-12 * 10f64.powi(k)))
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
// Curvature below this fraction of the largest is ignored when forming Newton
// steps; the gradient, and hence the stopping rule, is always exact.
const NEWTON_CURVATURE_CUTOFF: f64 = 1e-12;

/// Fits logistic regression by damped Newton from θ = 0.
pub fn fit_logistic(data: &Dataset, config: &TrainConfig) -> Result<ModelParams> {
    fit_logistic_from(data, config, &ModelParams::zeros(data.feature_dim()))
}

/// Damped Newton started at `init`. The optimum does not depend on the start;
/// a nearby start (e.g. the fit of a slightly larger dataset) saves iterations.
pub fn fit_logistic_from(
    data: &Dataset,
    config: &TrainConfig,
    init: &ModelParams,
) -> Result<ModelParams> {
    config.validate()?;
    data.check_fittable()?;
    let design = Design::new(data);
    if init.dim() + 1 != design.dim() {
        return Err(Error::Parameter(format!(
            "initial parameters have dimension {}, data has {}",
            init.dim(),
            design.dim() - 1
        )));
    }
    let c = config.c;
    let mut theta = Array1::from(init.theta());
    let mut grad_norm = f64::INFINITY;
    for _ in 0..config.max_iter {
        let m = design.margins(&theta);
        let g = design.gradient_from_margins(&theta, &m, c);
        grad_norm = norm_inf(g.as_slice().expect("contiguous"));
        if grad_norm <= config.tol {
            return Ok(ModelParams::from_theta(
                theta.as_slice().expect("contiguous"),
            ));
        }
        let h = design.hessian_from_margins(&m, c, NEWTON_CURVATURE_CUTOFF);
        let factor = newton_factor(&h)
            .ok_or_else(|| Error::Conditioning("Newton system is not positive definite".into()))?;
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let step = Array1::from(factor.solve(&neg_g));
        let slope = g.dot(&step);
        let j0 = design.objective(&theta, c);
        let mut t = 1.0;
        let mut next = &theta + &step;
        for _ in 0..MAX_HALVINGS {
            let jn = design.objective(&next, c);
            // Once the predicted decrease is below what J can resolve in
            // floating point, the full step is taken on the gradient's word.
            let unresolvable = -slope * t <= 1e-13 * (1.0 + j0.abs());
            if jn <= j0 + ARMIJO * t * slope || unresolvable {
                break;
            }
            t *= 0.5;
            next = &theta + &(&step * t);
        }
        theta = next;
    }
    let m = design.margins(&theta);
    let g = design.gradient_from_margins(&theta, &m, c);
    let final_norm = norm_inf(g.as_slice().expect("contiguous"));
    if final_norm <= config.tol {
        return Ok(ModelParams::from_theta(
            theta.as_slice().expect("contiguous"),
        ));
    }
    grad_norm = grad_norm.min(final_norm);
    Err(Error::Convergence {
        iterations: config.max_iter,
        grad_norm,
    })
}

/// Unweighted fraction of examples with sign(f(x)) = y; f(x) = 0 counts as +1.
pub fn accuracy(params: &ModelParams, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("accuracy of an empty dataset".into()));
    }
    check_shapes(params, data)?;
    let correct = data
        .examples()
        .iter()
        .filter(|e| {
            let f = params.decision(&e.features);
            let predicted = if f >= 0.0 { 1.0 } else { -1.0 };
            predicted == e.label.sign()
        })
        .count();
    Ok(correct as f64 / data.len() as f64)
}

fn normalized_grid(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Parameter("regularization grid is empty".into()));
    }
    if let Some(c) = grid.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
        return Err(Error::Parameter(format!(
            "grid value {c} is not a positive C"
        )));
    }
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    Ok(g)
}

/// K-fold selection of C by mean held-out accuracy; ties go to the smaller
/// C. Folds whose training part lacks a class are skipped.
fn cross_validate_with<F>(
    data: &Dataset,
    grid: &[f64],
    folds: usize,
    seed: u64,
    mut fit_and_score: F,
) -> Result<f64>
where
    F: FnMut(&Dataset, &Dataset, f64) -> Result<f64>,
{
    let grid = normalized_grid(grid)?;
    if folds < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    if folds > data.len() {
        return Err(Error::Size(format!(
            "{folds} folds for {} examples",
            data.len()
        )));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut splits = Vec::with_capacity(folds);
    for k in 0..folds {
        let held: Vec<usize> = order.iter().skip(k).step_by(folds).copied().collect();
        let mut train_idx: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(p, _)| p % folds != k)
            .map(|(_, &i)| i)
            .collect();
        train_idx.sort_unstable();
        let train = data.subset(&train_idx)?;
        if let Err(e) = train.check_fittable() {
            warn!("cross-validation fold {k} skipped: {e}");
            continue;
        }
        splits.push((train, data.subset(&held)?));
    }
    if splits.is_empty() {
        return Err(Error::Data(
            "every cross-validation fold was skipped".into(),
        ));
    }
    let mut best: Option<(f64, f64)> = None;
    for &c in &grid {
        let mut total = 0.0;
        for (train, held) in &splits {
            total += fit_and_score(train, held, c)?;
        }
        let mean = total / splits.len() as f64;
        if best.is_none_or(|(_, m)| mean > m) {
            best = Some((c, mean));
        }
    }
    Ok(best.expect("grid is nonempty").0)
}

/// Chooses C for logistic regression by cross-validated accuracy.
pub fn cross_validate_c(
    data: &Dataset,
    grid: &[f64],
    folds: usize,
    seed: u64,
    base: &TrainConfig,
) -> Result<f64> {
    cross_validate_with(data, grid, folds, seed, |train, held, c| {
        let cfg = TrainConfig { c, ..*base };
        let params = fit_logistic(train, &cfg)?;
        accuracy(&params, held)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub support_indices: Vec<usize>,
    pub chosen_c: f64,
}

impl SvmFit {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn as_params(&self) -> ModelParams {
        ModelParams {
            weights: self.weights.clone(),
            bias: self.bias,
        }
    }
}

/// Margin slack under which a point counts as a support vector.
pub const SUPPORT_TOLERANCE: f64 = 1e-6;
const SVM_GAP_TOL: f64 = 1e-10;
const SVM_MAX_EPOCHS: usize = 20_000;

/// L1-loss linear SVM by dual coordinate descent. The bias is handled as an
/// extra constant feature; box constraints are `0 ≤ αᵢ ≤ C wᵢ`.
fn svm_dual_cd(data: &Dataset, c: f64, seed: u64) -> ModelParams {
    let n = data.len();
    let d = data.feature_dim();
    let ex = data.examples();
    let q_diag: Vec<f64> = ex
        .iter()
        .map(|e| dot(&e.features, &e.features) + 1.0)
        .collect();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut alpha = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from_seed(seed);
    for epoch in 0..SVM_MAX_EPOCHS {
        order.shuffle(&mut rng);
        let mut max_pg = f64::NEG_INFINITY;
        let mut min_pg = f64::INFINITY;
        for &i in &order {
            let e = &ex[i];
            let y = e.label.sign();
            let upper = c * e.weight;
            let grad = y * (dot(&w, &e.features) + b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                grad.min(0.0)
            } else if alpha[i] >= upper {
                grad.max(0.0)
            } else {
                grad
            };
            max_pg = max_pg.max(pg);
            min_pg = min_pg.min(pg);
            if pg != 0.0 {
                let new = (alpha[i] - grad / q_diag[i]).clamp(0.0, upper);
                let delta = (new - alpha[i]) * y;
                if delta != 0.0 {
                    for (wj, xj) in w.iter_mut().zip(&e.features) {
                        *wj += delta * xj;
                    }
                    b += delta;
                }
                alpha[i] = new;
            }
        }
        if max_pg - min_pg <= SVM_GAP_TOL || (max_pg <= 0.0 && min_pg >= 0.0) {
            break;
        }
        if epoch + 1 == SVM_MAX_EPOCHS {
            warn!(
                "SVM dual coordinate descent stopped at {SVM_MAX_EPOCHS} epochs (gap {:e})",
                max_pg - min_pg
            );
        }
    }
    ModelParams {
        weights: w,
        bias: b,
    }
}

/// Linear SVM with C picked by cross-validated accuracy over `grid`, refit on
/// all of `data`. Support vectors are the points with yᵢ f(xᵢ) ≤ 1 + 1e−6.
pub fn fit_svm(data: &Dataset, grid: &[f64], folds: usize, seed: u64) -> Result<SvmFit> {
    data.check_fittable()?;
    let chosen_c = cross_validate_with(data, grid, folds, seed, |train, held, c| {
        let params = svm_dual_cd(train, c, seed);
        accuracy(&params, held)
    })?;
    let params = svm_dual_cd(data, chosen_c, seed);
    let support_indices = data
        .examples()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.label.sign() * params.decision(&e.features) <= 1.0 + SUPPORT_TOLERANCE)
        .map(|(i, _)| i)
        .collect();
    Ok(SvmFit {
        weights: params.weights,
        bias: params.bias,
        support_indices,
        chosen_c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginVariant {
    Absolute,
    Inverse,
}

/// Absolute margin |f(xᵢ)| or its inverse 1/(|f(xᵢ)| + ε) per point.
pub fn margin_scores(svm: &SvmFit, data: &Dataset, variant: MarginVariant) -> ScoreVector {
    let abs: Vec<f64> = data
        .examples()
        .iter()
        .map(|e| svm.decision(&e.features).abs())
        .collect();
    match variant {
        MarginVariant::Absolute => ScoreVector::new(abs, ScoreMetric::MarginAbs, 0),
        MarginVariant::Inverse => {
            let max = abs.iter().cloned().fold(0.0, f64::max);
            let eps = if max > 0.0 { 1e-12 * max } else { 1e-12 };
            let inv = abs.iter().map(|a| 1.0 / (a + eps)).collect();
            ScoreVector::new(inv, ScoreMetric::MarginInv, 0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Label;

    fn ex(x: &[f64], y: f64) -> LabeledExample {
        LabeledExample::new(x.to_vec(), Label::from_sign(y), 0)
    }

    fn ds(rows: &[(&[f64], f64)]) -> Dataset {
        let mut v: Vec<LabeledExample> = rows.iter().map(|(x, y)| ex(x, *y)).collect();
        for (i, e) in v.iter_mut().enumerate() {
            e.origin_id = i;
        }
        Dataset::from_examples(v).unwrap()
    }

    #[test]
    fn symmetric_pair_has_zero_bias() {
        let data = ds(&[(&[1.0], 1.0), (&[-1.0], -1.0)]);
        let p = fit_logistic(&data, &TrainConfig::with_c(10.0)).unwrap();
        assert!(p.weights[0] > 0.0);
        assert!(p.bias.abs() < 1e-8);
    }

    #[test]
    fn zero_weights_and_single_class_are_data_errors() {
        let mut data = ds(&[(&[1.0], 1.0), (&[-1.0], -1.0)]);
        for e in data.examples_mut() {
            e.weight = 0.0;
        }
        assert!(matches!(
            fit_logistic(&data, &TrainConfig::default()),
            Err(Error::Data(_))
        ));
        let one_class = ds(&[(&[1.0], 1.0), (&[2.0], 1.0)]);
        assert!(matches!(
            fit_logistic(&one_class, &TrainConfig::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn max_iter_exhaustion_reports_gradient() {
        let data = ds(&[(&[1.0], 1.0), (&[-1.0], -1.0), (&[0.5], -1.0)]);
        let cfg = TrainConfig {
            max_iter: 1,
            ..TrainConfig::default()
        };
        match fit_logistic(&data, &cfg) {
            Err(Error::Convergence { grad_norm, .. }) => assert!(grad_norm > 1e-8),
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn point_loss_values() {
        let p = ModelParams {
            weights: vec![0.0],
            bias: 0.0,
        };
        assert!((point_loss(&p, &ex(&[3.0], 1.0)) - std::f64::consts::LN_2).abs() < 1e-15);
        let far = ModelParams {
            weights: vec![0.0],
            bias: -35.0,
        };
        // log(1 + e^35) = 35 + log1p(e^-35)
        let want = 35.0 + (-35.0f64).exp();
        assert!((point_loss(&far, &ex(&[0.0], 1.0)) - want).abs() < 1e-13);
        let mut prev = f64::INFINITY;
        for b in [0.0, 1.0, 5.0, 20.0, 50.0, 800.0] {
            let l = point_loss(
                &ModelParams {
                    weights: vec![0.0],
                    bias: b,
                },
                &ex(&[0.0], 1.0),
            );
            assert!(l < prev || l == 0.0);
            prev = l;
        }
        assert!(prev >= 0.0 && prev < 1e-300);
    }

    #[test]
    fn point_gradient_at_zero() {
        let p = ModelParams::zeros(2);
        assert_eq!(
            point_gradient(&p, &ex(&[1.0, 0.0], 1.0)),
            vec![-0.5, 0.0, -0.5]
        );
        let saturated = ModelParams {
            weights: vec![100.0, 0.0],
            bias: 0.0,
        };
        let g = point_gradient(&saturated, &ex(&[1.0, 0.0], 1.0));
        assert!(norm_inf(&g) < 1e-40);
    }

    #[test]
    fn hessian_closed_form_single_point_at_origin() {
        let data = ds(&[(&[0.0, 0.0], 1.0)]);
        let p = ModelParams {
            weights: vec![0.3, -0.2],
            bias: 0.7,
        };
        let cfg = TrainConfig::with_c(4.0);
        let h = hessian(&p, &data, &cfg);
        let s = sigmoid(0.7);
        let want = 4.0 * s * (1.0 - s);
        assert_eq!(h[(0, 0)], 1.0);
        assert_eq!(h[(1, 1)], 1.0);
        assert!((h[(2, 2)] - want).abs() < 1e-15);
        assert_eq!(h[(0, 1)], 0.0);
    }

    #[test]
    fn hessian_weight_c_tradeoff() {
        let data = ds(&[
            (&[1.0, 2.0], 1.0),
            (&[-0.5, 0.3], -1.0),
            (&[0.2, -1.0], 1.0),
        ]);
        let mut doubled = data.clone();
        for e in doubled.examples_mut() {
            e.weight *= 2.0;
        }
        let p = ModelParams {
            weights: vec![0.4, -0.1],
            bias: 0.2,
        };
        let a = hessian(&p, &data, &TrainConfig::with_c(3.0));
        let b = hessian(&p, &doubled, &TrainConfig::with_c(1.5));
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn accuracy_counting_and_tie_rule() {
        let data = ds(&[
            (&[1.0], 1.0),
            (&[2.0], 1.0),
            (&[-1.0], -1.0),
            (&[-2.0], 1.0),
        ]);
        let p = ModelParams {
            weights: vec![1.0],
            bias: 0.0,
        };
        assert_eq!(accuracy(&p, &data).unwrap(), 0.75);
        let zero = ModelParams::zeros(1);
        assert_eq!(accuracy(&zero, &data).unwrap(), 0.75);
        assert!(accuracy(&p, &Dataset::empty(1)).is_err());
    }

    #[test]
    fn cv_singleton_and_duplicate_grid() {
        let data = ds(&[
            (&[1.0], 1.0),
            (&[2.0], 1.0),
            (&[1.5], 1.0),
            (&[-1.0], -1.0),
            (&[-2.0], -1.0),
            (&[0.1], -1.0),
        ]);
        let base = TrainConfig::default();
        assert_eq!(cross_validate_c(&data, &[10.0], 3, 0, &base).unwrap(), 10.0);
        let a = cross_validate_c(&data, &[0.1, 1.0, 10.0], 3, 5, &base).unwrap();
        let b = cross_validate_c(&data, &[10.0, 0.1, 1.0, 1.0, 0.1], 3, 5, &base).unwrap();
        assert_eq!(a, b);
        assert!(cross_validate_c(&data, &[], 3, 0, &base).is_err());
        assert!(cross_validate_c(&data, &[1.0, 2.0], 1, 0, &base).is_err());
    }

    #[test]
    fn model_text_round_trip() {
        let p = ModelParams {
            weights: vec![0.1, -2.5e-17, 3.0],
            bias: -0.3333333333333333,
        };
        assert_eq!(ModelParams::from_text(&p.to_text()).unwrap(), p);
        assert!(ModelParams::from_text("dim 2\nbias 0\n1\n").is_err());
    }

    #[test]
    fn svm_support_set_on_separated_clusters() {
        let mut rows = Vec::new();
        for i in 0..10 {
            let t = i as f64 * 0.1;
            rows.push((vec![3.0 + t, 1.0 - t], 1.0));
            rows.push((vec![-3.0 - t, -1.0 + t], -1.0));
        }
        let refs: Vec<(&[f64], f64)> = rows.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
        let data = ds(&refs);
        let fit = fit_svm(&data, &DEFAULT_SVM_GRID, 5, 1).unwrap();
        assert!(!fit.support_indices.is_empty());
        assert!(fit.support_indices.len() < 20);
        assert!(accuracy(&fit.as_params(), &data).unwrap() == 1.0);
    }

    #[test]
    fn margin_scores_variants() {
        let svm = SvmFit {
            weights: vec![1.0],
            bias: 0.0,
            support_indices: vec![],
            chosen_c: 1.0,
        };
        let data = ds(&[(&[0.5], 1.0), (&[-1.0], 1.0), (&[2.0], -1.0)]);
        let abs = margin_scores(&svm, &data, MarginVariant::Absolute);
        assert_eq!(abs.values(), &[0.5, 1.0, 2.0]);
        let mut flipped = data.clone();
        for e in flipped.examples_mut() {
            e.label = e.label.flipped();
        }
        assert_eq!(
            margin_scores(&svm, &flipped, MarginVariant::Absolute).values(),
            abs.values()
        );
        let boundary = ds(&[(&[0.0], 1.0), (&[-1.0], 1.0), (&[2.0], -1.0)]);
        let inv = margin_scores(&svm, &boundary, MarginVariant::Inverse);
        let v = inv.values();
        assert!(v[0] > v[1] && v[0] > v[2]);
    }
}
