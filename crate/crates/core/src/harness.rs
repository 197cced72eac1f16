//! The round-based augment, retrain and evaluate loop, and the metrics
//! reported over its accuracy curves.
//!
//! Each round a policy picks one not-yet-augmented original point and its
//! augmentation family joins the training set. The model is only refit at
//! checkpoint budgets; that is also when scores are refreshed for policies
//! that update them. Training sets are always assembled canonically
//! (originals, then families in ascending origin order), so two policies that
//! reach the same augmented subset train on bit-identical data.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{
    binary_pool, load_augmented_feature_csv, load_feature_csv, load_idx, make_binary_task,
    AugmentedFeatures, Dataset, Label, LabeledExample, RawImage,
};
use crate::error::{Error, Result};
use crate::influence::{factor_for_fit, score_all, ScoreMetric, ScoreVector};
use crate::linmodel::{
    accuracy, cross_validate_c, fit_logistic, fit_svm, margin_scores, MarginVariant, ModelParams,
    SvmFit, TrainConfig, DEFAULT_SVM_GRID,
};
use crate::seeds::{derive_seed, rng_from_seed, Purpose};
use crate::selection::{
    append_family, apply_downweight, build_dpp_kernel, draw_proportional, invert_scores, kmeans,
    rank_descending, sample_kdpp, stratified_select, vsv_select, DownweightDivisor, DppKernel,
    PolicyConfig, PolicyKind,
};
use crate::transforms::{build_poisoned_test, expand, AugmentationFamily, TransformSpec};

/// Default checkpoint budgets before clipping to the experiment budget.
pub const DEFAULT_CHECKPOINTS: [usize; 11] = [0, 1, 2, 5, 10, 25, 50, 100, 250, 500, 750];

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959964;

// ---------------------------------------------------------------------------
// data

/// Everything a run needs: the original training points, each point's
/// augmentation family, and the poisoned test set.
#[derive(Debug, Clone)]
pub struct PreparedData {
    /// `train.examples()[i].origin_id == i`, unit weights.
    pub train: Dataset,
    /// `families[i]` belongs to original `i`.
    pub families: Vec<AugmentationFamily>,
    pub poisoned_test: Dataset,
}

/// How family weights are set when a training set is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Weighting {
    Unit,
    Downweight(DownweightDivisor),
}

impl Weighting {
    pub fn for_policy(policy: &PolicyConfig) -> Self {
        if policy.downweight {
            Weighting::Downweight(policy.divisor)
        } else {
            Weighting::Unit
        }
    }
}

impl PreparedData {
    pub fn from_images(
        train: &[(RawImage, Label)],
        test: &[(RawImage, Label)],
        spec: &TransformSpec,
    ) -> Result<Self> {
        let mut examples = Vec::with_capacity(train.len());
        let mut families = Vec::with_capacity(train.len());
        for (i, (img, label)) in train.iter().enumerate() {
            let e = LabeledExample::new(img.to_features(), *label, i);
            families.push(expand(spec, &e, img)?);
            examples.push(e);
        }
        let data = PreparedData {
            train: Dataset::from_examples(examples)?,
            families,
            poisoned_test: build_poisoned_test(test, spec)?,
        };
        data.validate()?;
        Ok(data)
    }

    /// Builds the run inputs from feature tables whose augmented rows were
    /// computed elsewhere. Every training row needs a family.
    pub fn from_features(
        train: Dataset,
        train_augmented: &AugmentedFeatures,
        test: Dataset,
        test_augmented: &AugmentedFeatures,
    ) -> Result<Self> {
        let mut families = Vec::with_capacity(train.len());
        for (i, e) in train.examples().iter().enumerate() {
            let rows = train_augmented.get(&i).ok_or_else(|| {
                Error::Data(format!("training example {i} has no augmented rows"))
            })?;
            families.push(AugmentationFamily {
                origin_id: i,
                members: rows
                    .iter()
                    .map(|x| LabeledExample::new(x.clone(), e.label, i))
                    .collect(),
            });
        }
        let mut poisoned = test.clone();
        for (origin, rows) in test_augmented {
            let label = test.get(*origin)?.label;
            for x in rows {
                poisoned.push(LabeledExample::new(x.clone(), label, *origin))?;
            }
        }
        let data = PreparedData {
            train,
            families,
            poisoned_test: poisoned,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn n(&self) -> usize {
        self.train.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.check_fittable()?;
        if self.poisoned_test.is_empty() {
            return Err(Error::Data("the poisoned test set is empty".into()));
        }
        let d = self.train.feature_dim();
        if self.poisoned_test.feature_dim() != d {
            return Err(Error::Data(format!(
                "test features have dimension {}, training features {d}",
                self.poisoned_test.feature_dim()
            )));
        }
        if self.families.len() != self.n() {
            return Err(Error::Data(format!(
                "{} families for {} training points",
                self.families.len(),
                self.n()
            )));
        }
        for (i, (e, f)) in self.train.examples().iter().zip(&self.families).enumerate() {
            if e.origin_id != i || f.origin_id != i {
                return Err(Error::Data(format!(
                    "training point {i} has mismatched origin ids"
                )));
            }
            if e.weight != 1.0 {
                return Err(Error::Data(format!(
                    "training point {i} does not have unit weight"
                )));
            }
            if f.members
                .iter()
                .any(|m| m.features.len() != d || m.origin_id != i)
            {
                return Err(Error::Data(format!("family {i} has malformed members")));
            }
        }
        Ok(())
    }

    /// Originals followed by the families of `selected`, in ascending origin
    /// order regardless of the order they were selected in.
    pub fn assemble(&self, selected: &[usize], weighting: Weighting) -> Result<Dataset> {
        let mut ids = selected.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let mut out = self.train.clone();
        for &i in &ids {
            let family = self.families.get(i).ok_or(Error::Index {
                index: i,
                len: self.families.len(),
            })?;
            match weighting {
                Weighting::Unit => append_family(&mut out, family)?,
                Weighting::Downweight(div) => apply_downweight(&mut out, family, div)?,
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Two classes of an IDX image set. Without separate test files the test
    /// points are drawn from the examples not used for training.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        /// First class is labelled +1, second −1.
        classes: [u8; 2],
        n_train: usize,
        n_test: usize,
    },
    /// Feature CSVs with precomputed augmented rows.
    Features {
        train: PathBuf,
        train_augmented: PathBuf,
        test: PathBuf,
        test_augmented: PathBuf,
    },
    /// Data supplied programmatically through [`run_prepared`].
    Prepared,
}

impl DatasetConfig {
    /// Relative paths are taken relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetConfig::Idx {
                images,
                labels,
                test_images,
                test_labels,
                ..
            } => {
                fix(images);
                fix(labels);
                if let Some(p) = test_images {
                    fix(p);
                }
                if let Some(p) = test_labels {
                    fix(p);
                }
            }
            DatasetConfig::Features {
                train,
                train_augmented,
                test,
                test_augmented,
            } => {
                for p in [train, train_augmented, test, test_augmented] {
                    fix(p);
                }
            }
            DatasetConfig::Prepared => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    /// Fixed inverse regularization strength; 10 when neither this nor a
    /// grid is given.
    #[serde(default)]
    pub c: Option<f64>,
    /// Cross-validate C over this grid on the original training set.
    #[serde(default)]
    pub cv_grid: Option<Vec<f64>>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            c: None,
            cv_grid: None,
            folds: default_folds(),
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmSettings {
    #[serde(default = "default_svm_grid")]
    pub grid: Vec<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
}

impl Default for SvmSettings {
    fn default() -> Self {
        SvmSettings {
            grid: default_svm_grid(),
            folds: default_folds(),
        }
    }
}

fn default_folds() -> usize {
    5
}
fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    100
}
fn default_svm_grid() -> Vec<f64> {
    DEFAULT_SVM_GRID.to_vec()
}
fn default_repeats() -> usize {
    5
}
fn default_threads() -> usize {
    1
}
fn default_bins() -> usize {
    20
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Required for image datasets; feature datasets carry their own
    /// augmented rows.
    #[serde(default)]
    pub transform: Option<TransformSpec>,
    /// Number of source points to augment; defaults to all of them.
    #[serde(default)]
    pub budget: Option<usize>,
    /// Budgets at which to refit and evaluate; 0 and the budget are always
    /// added.
    #[serde(default)]
    pub checkpoints: Option<Vec<usize>>,
    /// Repeats of each stochastic policy; deterministic ones run once.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    /// Upper bound on repeats run concurrently.
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    /// Compute initial-vs-final influence pairs for each policy.
    #[serde(default = "default_true")]
    pub influence_pairs: bool,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub svm: SvmSettings,
    pub policies: Vec<PolicyConfig>,
}

impl ExperimentConfig {
    /// A config for data passed to [`run_prepared`], with default settings.
    pub fn for_prepared(policies: Vec<PolicyConfig>) -> Self {
        ExperimentConfig {
            dataset: DatasetConfig::Prepared,
            transform: None,
            budget: None,
            checkpoints: None,
            repeats: default_repeats(),
            seed: 0,
            threads: default_threads(),
            histogram_bins: default_bins(),
            influence_pairs: true,
            train: TrainSettings::default(),
            svm: SvmSettings::default(),
            policies,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::Config("histogram_bins must be at least 1".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("no policies configured".into()));
        }
        let mut labels: Vec<String> = Vec::new();
        for p in &self.policies {
            p.validate()?;
            let l = p.label();
            if labels.contains(&l) {
                return Err(Error::Config(format!("two policies are labelled {l:?}")));
            }
            labels.push(l);
        }
        if let Some(t) = &self.transform {
            t.validate()?;
        }
        match (&self.train.c, &self.train.cv_grid) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "train.c and train.cv_grid are exclusive".into(),
                ))
            }
            (Some(c), None) if !(*c > 0.0 && c.is_finite()) => {
                return Err(Error::Config(format!(
                    "train.c = {c} is not a positive number"
                )))
            }
            _ => {}
        }
        if let Some(cp) = &self.checkpoints {
            if cp.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(
                    "checkpoints must be strictly ascending".into(),
                ));
            }
        }
        Ok(())
    }

    /// Budget and checkpoint schedule for a training set of `n` points.
    pub fn schedule(&self, n: usize) -> Result<(usize, Vec<usize>)> {
        let budget = self.budget.unwrap_or(n);
        if budget > n {
            return Err(Error::Size(format!(
                "budget {budget} exceeds the {n} training points available to augment"
            )));
        }
        let mut cps: Vec<usize> = match &self.checkpoints {
            Some(c) => {
                if let Some(bad) = c.iter().find(|&&b| b > budget) {
                    return Err(Error::Config(format!(
                        "checkpoint {bad} exceeds the budget {budget}"
                    )));
                }
                c.clone()
            }
            None => DEFAULT_CHECKPOINTS
                .iter()
                .copied()
                .filter(|&b| b <= budget)
                .collect(),
        };
        cps.push(0);
        cps.push(budget);
        cps.sort_unstable();
        cps.dedup();
        Ok((budget, cps))
    }

    fn train_config(&self, c: f64) -> TrainConfig {
        TrainConfig {
            c,
            tol: self.train.tol,
            max_iter: self.train.max_iter,
        }
    }
}

/// Loads the configured dataset and applies the transform.
pub fn load_prepared(config: &ExperimentConfig) -> Result<PreparedData> {
    match &config.dataset {
        DatasetConfig::Idx {
            images,
            labels,
            test_images,
            test_labels,
            classes,
            n_train,
            n_test,
        } => {
            let spec = config
                .transform
                .as_ref()
                .ok_or_else(|| Error::Config("image datasets need a [transform] section".into()))?;
            let [a, b] = *classes;
            let pairs = load_idx(images, labels)?;
            let task = make_binary_task(
                &pairs,
                a,
                b,
                *n_train,
                derive_seed(config.seed, 0, Purpose::TrainSplit),
            )?;
            let test_seed = derive_seed(config.seed, 0, Purpose::TestSplit);
            let test: Vec<(RawImage, Label)> = match (test_images, test_labels) {
                (Some(ti), Some(tl)) => {
                    let test_pairs = load_idx(ti, tl)?;
                    let t = make_binary_task(&test_pairs, a, b, *n_test, test_seed)?;
                    t.images
                        .into_iter()
                        .zip(t.dataset.examples().iter().map(|e| e.label))
                        .collect()
                }
                (None, None) => {
                    let leftover: Vec<(RawImage, u8)> = task
                        .unused_indices
                        .iter()
                        .map(|&i| pairs[i].clone())
                        .collect();
                    let pool = binary_pool(&leftover, a, b);
                    if pool.len() < *n_test {
                        return Err(Error::Size(format!(
                            "{n_test} test examples requested, {} left after the training split",
                            pool.len()
                        )));
                    }
                    let mut idx = rand::seq::index::sample(
                        &mut rng_from_seed(test_seed),
                        pool.len(),
                        *n_test,
                    )
                    .into_vec();
                    idx.sort_unstable();
                    idx.into_iter()
                        .map(|k| (pool[k].1.clone(), pool[k].2))
                        .collect()
                }
                _ => {
                    return Err(Error::Config(
                        "test_images and test_labels must be given together".into(),
                    ))
                }
            };
            let train: Vec<(RawImage, Label)> = task
                .images
                .into_iter()
                .zip(task.dataset.examples().iter().map(|e| e.label))
                .collect();
            PreparedData::from_images(&train, &test, spec)
        }
        DatasetConfig::Features {
            train,
            train_augmented,
            test,
            test_augmented,
        } => {
            if config.transform.is_some() {
                warn!("feature datasets carry their own augmented rows; [transform] is ignored");
            }
            PreparedData::from_features(
                load_feature_csv(train)?,
                &load_augmented_feature_csv(train_augmented)?,
                load_feature_csv(test)?,
                &load_augmented_feature_csv(test_augmented)?,
            )
        }
        DatasetConfig::Prepared => Err(Error::Config(
            "dataset kind \"prepared\" can only be run programmatically".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// report types

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget: usize,
    /// Accuracy on the poisoned test set.
    pub accuracy: f64,
    pub total_weight: f64,
    pub train_size: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub points: Vec<CurvePoint>,
}

impl AccuracyCurve {
    pub fn from_pairs(pairs: &[(usize, f64)]) -> Self {
        AccuracyCurve {
            points: pairs
                .iter()
                .map(|&(budget, accuracy)| CurvePoint {
                    budget,
                    accuracy,
                    total_weight: f64::NAN,
                    train_size: 0,
                })
                .collect(),
        }
    }

    pub fn accuracy_at(&self, budget: usize) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.budget == budget)
            .map(|p| p.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub rho: f64,
    /// Two-sided p-value from a normal approximation to the t statistic.
    pub p_approx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluencePairs {
    /// (initial |I_LOO|, final |I_LOO|) per original training point.
    pub pairs: Vec<(f64, f64)>,
    pub spearman: Option<Spearman>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub label: String,
    pub kind: PolicyKind,
    pub stochastic: bool,
    /// Policy seed used by each repeat.
    pub seeds: Vec<u64>,
    pub curves: Vec<AccuracyCurve>,
    /// Source points in the order they were augmented, per repeat. Policies
    /// that choose whole subsets report the final subset in ascending order.
    pub selections: Vec<Vec<usize>>,
    pub aucs: Vec<f64>,
    pub auc_mean: f64,
    /// Absent for single-run policies.
    pub auc_std: Option<f64>,
    pub auc_ci95: Option<(f64, f64)>,
    /// Mean accuracy over repeats at each checkpoint budget.
    pub mean_curve: Vec<(usize, f64)>,
    pub influence_pairs: Option<InfluencePairs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Filled in by whoever knows the config text (the CLI).
    pub config_hash: Option<String>,
    pub config: ExperimentConfig,
    pub n_train: usize,
    pub n_poisoned_test: usize,
    pub train_c: f64,
    pub budget: usize,
    pub checkpoints: Vec<usize>,
    pub initial_accuracy: f64,
    /// Histogram of the initial |I_LOO| over the original training points.
    pub histogram: Histogram,
    pub policies: Vec<PolicyReport>,
}

// ---------------------------------------------------------------------------
// metrics

/// Trapezoidal area under the accuracy-vs-budget curve.
pub fn auc(curve: &AccuracyCurve) -> Result<f64> {
    let pts = &curve.points;
    if pts.len() < 2 {
        return Err(Error::Metric("AUC needs at least two curve points".into()));
    }
    if pts.windows(2).any(|w| w[0].budget >= w[1].budget) {
        return Err(Error::Metric(
            "curve budgets must be strictly ascending".into(),
        ));
    }
    Ok(pts
        .windows(2)
        .map(|w| (w[1].budget - w[0].budget) as f64 * (w[0].accuracy + w[1].accuracy) / 2.0)
        .sum())
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Spearman's ρ (Pearson correlation of average ranks) with a two-sided
/// p-value from t = ρ√((n−2)/(1−ρ²)) treated as standard normal.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Spearman> {
    if a.len() != b.len() {
        return Err(Error::Metric(format!(
            "spearman inputs have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 3 {
        return Err(Error::Metric("spearman needs at least 3 pairs".into()));
    }
    let rho = pearson(&average_ranks(a), &average_ranks(b))
        .ok_or_else(|| Error::Metric("spearman is undefined for a constant input".into()))?;
    let n = a.len() as f64;
    let p_approx = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * ((n - 2.0) / (1.0 - rho * rho)).sqrt();
        2.0 * normal_cdf(-t.abs())
    };
    Ok(Spearman { rho, p_approx })
}

/// Equal-width bins over [min, max]; the maximum lands in the last bin.
pub fn score_histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Metric("a histogram needs at least one bin".into()));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0usize; bins];
    if values.is_empty() {
        return Ok(Histogram {
            edges: vec![0.0; bins + 1],
            counts,
        });
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    for &v in values {
        let b = if width > 0.0 {
            (((v - lo) / width).floor() as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Quantile of the standard normal by bisection on its CDF.
fn normal_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// mean ± z·sd/√n with the normal quantile z (1.959964 at the 0.95 level).
pub fn confidence_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::Metric(
            "a confidence interval needs at least 2 samples".into(),
        ));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Metric(format!(
            "confidence level {level} is not in (0, 1)"
        )));
    }
    let z = if level == 0.95 {
        Z_95
    } else {
        normal_quantile(0.5 + level / 2.0)
    };
    let (mean, sd) = mean_sd(samples);
    let half = z * sd / (samples.len() as f64).sqrt();
    Ok((mean - half, mean + half))
}

/// Mean and sample standard deviation (n − 1 denominator).
fn mean_sd(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// |I_LOO| of every original point under the initial fit and under a final
/// fit on `final_train`.
pub fn initial_final_influence_pairs(
    originals: &Dataset,
    initial: &ModelParams,
    final_params: &ModelParams,
    final_train: &Dataset,
    config: &TrainConfig,
) -> Result<Vec<(f64, f64)>> {
    let f0 = factor_for_fit(initial, originals, config)?;
    let s0 = score_all(initial, Some(&f0), originals, ScoreMetric::Influence, 0)?;
    let f1 = factor_for_fit(final_params, final_train, config)?;
    let s1 = score_all(
        final_params,
        Some(&f1),
        originals,
        ScoreMetric::Influence,
        1,
    )?;
    Ok(s0
        .values()
        .iter()
        .copied()
        .zip(s1.values().iter().copied())
        .collect())
}

// ---------------------------------------------------------------------------
// the experiment loop

#[derive(Debug)]
struct FitOutcome {
    params: ModelParams,
    accuracy: f64,
}

type FitKey = (Vec<usize>, Weighting);

struct Context<'a> {
    data: &'a PreparedData,
    config: &'a ExperimentConfig,
    train: TrainConfig,
    checkpoints: Vec<usize>,
    initial: ModelParams,
    initial_influence: ScoreVector,
    initial_scores: HashMap<ScoreMetric, ScoreVector>,
    svm: Option<SvmFit>,
    fits: Mutex<HashMap<FitKey, Arc<FitOutcome>>>,
}

impl Context<'_> {
    /// Fit and poisoned-test accuracy for a canonical training set, shared
    /// between every policy and repeat that reaches it.
    fn fit(&self, selected: &[usize], weighting: Weighting) -> Result<(Arc<FitOutcome>, Dataset)> {
        let mut ids = selected.to_vec();
        ids.sort_unstable();
        let weighting = if ids.is_empty() {
            Weighting::Unit
        } else {
            weighting
        };
        let train = self.data.assemble(&ids, weighting)?;
        let key = (ids, weighting);
        if let Some(hit) = self.fits.lock().expect("fit cache poisoned").get(&key) {
            return Ok((Arc::clone(hit), train));
        }
        let params = fit_logistic(&train, &self.train)?;
        let accuracy = accuracy(&params, &self.data.poisoned_test)?;
        let outcome = Arc::new(FitOutcome { params, accuracy });
        self.fits
            .lock()
            .expect("fit cache poisoned")
            .entry(key)
            .or_insert_with(|| Arc::clone(&outcome));
        Ok((outcome, train))
    }

    fn scores_for(
        &self,
        metric: ScoreMetric,
        params: &ModelParams,
        train: &Dataset,
        svm_seed: u64,
        version: u64,
    ) -> Result<ScoreVector> {
        let originals = &self.data.train;
        let mut s = match metric {
            ScoreMetric::Loss => score_all(params, None, originals, metric, version)?,
            ScoreMetric::Influence => {
                let f = factor_for_fit(params, train, &self.train)?;
                score_all(params, Some(&f), originals, metric, version)?
            }
            ScoreMetric::MarginAbs | ScoreMetric::MarginInv => {
                let svm = fit_svm(
                    train,
                    &self.config.svm.grid,
                    self.config.svm.folds,
                    svm_seed,
                )?;
                let variant = if metric == ScoreMetric::MarginAbs {
                    MarginVariant::Absolute
                } else {
                    MarginVariant::Inverse
                };
                margin_scores(&svm, originals, variant)
            }
            ScoreMetric::Uniform => ScoreVector::uniform(originals.len()),
        };
        s.model_version = version;
        Ok(s)
    }
}

struct RepeatOutcome {
    seed: u64,
    curve: AccuracyCurve,
    selection: Vec<usize>,
    final_params: ModelParams,
    final_train: Dataset,
}

/// Loads the configured data and runs every policy.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let data = load_prepared(config)?;
    run_prepared(&data, config)
}

/// Runs every configured policy on already prepared data. The config's
/// dataset and transform entries are not consulted.
pub fn run_prepared(data: &PreparedData, config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    data.validate()?;
    let n = data.n();
    let (budget, checkpoints) = config.schedule(n)?;

    let c = match &config.train.cv_grid {
        Some(grid) => cross_validate_c(
            &data.train,
            grid,
            config.train.folds,
            derive_seed(config.seed, 0, Purpose::CrossValidation),
            &config.train_config(1.0),
        )?,
        None => config.train.c.unwrap_or(10.0),
    };
    let train = config.train_config(c);
    info!("training with C = {c}, {n} points, checkpoints {checkpoints:?}");

    let initial = fit_logistic(&data.train, &train)?;
    let initial_factor = factor_for_fit(&initial, &data.train, &train)?;
    let initial_influence = score_all(
        &initial,
        Some(&initial_factor),
        &data.train,
        ScoreMetric::Influence,
        0,
    )?;

    let needs_svm = config.policies.iter().any(|p| {
        p.kind == PolicyKind::Vsv
            || matches!(
                p.effective_metric(),
                Some(ScoreMetric::MarginAbs | ScoreMetric::MarginInv)
            )
    });
    let svm = if needs_svm {
        Some(fit_svm(
            &data.train,
            &config.svm.grid,
            config.svm.folds,
            derive_seed(config.seed, 0, Purpose::Svm),
        )?)
    } else {
        None
    };

    let mut initial_scores = HashMap::new();
    initial_scores.insert(ScoreMetric::Influence, initial_influence.clone());
    for p in &config.policies {
        if let Some(m) = p.effective_metric() {
            if initial_scores.contains_key(&m) {
                continue;
            }
            let s = match m {
                ScoreMetric::MarginAbs => margin_scores(
                    svm.as_ref().expect("svm fitted"),
                    &data.train,
                    MarginVariant::Absolute,
                ),
                ScoreMetric::MarginInv => margin_scores(
                    svm.as_ref().expect("svm fitted"),
                    &data.train,
                    MarginVariant::Inverse,
                ),
                ScoreMetric::Loss => score_all(&initial, None, &data.train, m, 0)?,
                ScoreMetric::Influence => unreachable!("inserted above"),
                ScoreMetric::Uniform => ScoreVector::uniform(n),
            };
            initial_scores.insert(m, s);
        }
    }

    let ctx = Context {
        data,
        config,
        train,
        checkpoints: checkpoints.clone(),
        initial,
        initial_influence,
        initial_scores,
        svm,
        fits: Mutex::new(HashMap::new()),
    };
    let (initial_outcome, _) = ctx.fit(&[], Weighting::Unit)?;
    let initial_accuracy = initial_outcome.accuracy;

    for p in &config.policies {
        if p.kind == PolicyKind::Kdpp {
            let kernel = ctx.kdpp_kernel(&ctx.initial_policy_scores(p))?;
            let rank = kernel.rank();
            if rank < budget {
                return Err(Error::Size(format!(
                    "policy {} cannot select {budget} points: its k-DPP kernel has rank {rank}",
                    p.label()
                )));
            }
        }
    }

    let mut jobs = Vec::new();
    for (pi, p) in config.policies.iter().enumerate() {
        let runs = if p.kind.is_stochastic() {
            config.repeats
        } else {
            1
        };
        for r in 0..runs {
            jobs.push((pi, r));
        }
    }
    let outcomes = run_jobs(&ctx, &jobs, config.threads)?;

    let mut policies = Vec::with_capacity(config.policies.len());
    let mut outcomes = outcomes.into_iter();
    for p in &config.policies {
        let runs = if p.kind.is_stochastic() {
            config.repeats
        } else {
            1
        };
        let mine: Vec<RepeatOutcome> = outcomes.by_ref().take(runs).collect();
        policies.push(ctx.summarize(p, mine)?);
    }

    Ok(ExperimentReport {
        config_hash: None,
        config: config.clone(),
        n_train: n,
        n_poisoned_test: data.poisoned_test.len(),
        train_c: c,
        budget,
        checkpoints,
        initial_accuracy,
        histogram: score_histogram(ctx.initial_influence.values(), config.histogram_bins)?,
        policies,
    })
}

fn run_jobs(
    ctx: &Context<'_>,
    jobs: &[(usize, usize)],
    threads: usize,
) -> Result<Vec<RepeatOutcome>> {
    let workers = threads.min(jobs.len()).max(1);
    let results: Vec<Mutex<Option<Result<RepeatOutcome>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    if workers == 1 {
        for (slot, &(pi, r)) in results.iter().zip(jobs) {
            *slot.lock().expect("result slot") = Some(ctx.run_one(pi, r));
        }
    } else {
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let j = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&(pi, r)) = jobs.get(j) else { break };
                    let out = ctx.run_one(pi, r);
                    *results[j].lock().expect("result slot") = Some(out);
                });
            }
        });
    }
    results
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every job ran"))
        .collect()
}

impl Context<'_> {
    fn initial_policy_scores(&self, p: &PolicyConfig) -> ScoreVector {
        let s = match p.effective_metric() {
            Some(m) => self.initial_scores[&m].clone(),
            None => ScoreVector::uniform(self.data.n()),
        };
        if p.inverse && p.effective_metric().is_some() {
            invert_scores(&s)
        } else {
            s
        }
    }

    fn kdpp_kernel(&self, qualities: &ScoreVector) -> Result<DppKernel> {
        build_dpp_kernel(&self.data.train.features(), qualities)
    }

    fn run_one(&self, pi: usize, repeat: usize) -> Result<RepeatOutcome> {
        let p = &self.config.policies[pi];
        let seed = derive_seed(p.seed.unwrap_or(self.config.seed), repeat, Purpose::Policy);
        let mut rng = rng_from_seed(seed);
        let n = self.data.n();
        let weighting = Weighting::for_policy(p);
        let metric = p.effective_metric();
        let mut scores = self.initial_policy_scores(p);
        let mut rank_cache: Option<Vec<usize>> = None;
        let mut kernel_cache: Option<DppKernel> = None;

        let checkpoints: Vec<usize> = if p.kind == PolicyKind::Vsv {
            let sv = self.svm.as_ref().expect("svm fitted").support_indices.len();
            if sv == 0 {
                vec![0]
            } else {
                vec![0, sv]
            }
        } else {
            self.checkpoints.clone()
        };

        let mut remaining: Vec<usize> = (0..n).collect();
        let mut order: Vec<usize> = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        let mut curve = AccuracyCurve::default();
        let mut last: Option<(Arc<FitOutcome>, Dataset)> = None;

        for (ci, &b) in checkpoints.iter().enumerate() {
            current = match p.kind {
                PolicyKind::Vsv => {
                    if b == 0 {
                        Vec::new()
                    } else {
                        vsv_select(self.svm.as_ref().expect("svm fitted"))
                    }
                }
                PolicyKind::StratifiedCluster => {
                    if b == 0 {
                        Vec::new()
                    } else {
                        let features = self.data.train.features();
                        let km = kmeans(
                            &features,
                            b,
                            derive_seed(self.config.seed, repeat, Purpose::Clustering),
                        )?;
                        let within = metric.map(|_| &scores);
                        let mut s = stratified_select(&km.assignments, b, within, &mut rng)?;
                        s.sort_unstable();
                        s
                    }
                }
                PolicyKind::Kdpp => {
                    if kernel_cache.is_none() {
                        kernel_cache = Some(self.kdpp_kernel(&scores)?);
                    }
                    let kernel = kernel_cache.as_ref().expect("kernel built");
                    let mut s = sample_kdpp(kernel, b, &mut rng).map_err(|e| Error::Round {
                        round: b,
                        source: Box::new(e),
                    })?;
                    s.sort_unstable();
                    s
                }
                PolicyKind::BaselineUniform
                | PolicyKind::RandomProportional
                | PolicyKind::DeterministicTopk => {
                    while order.len() < b {
                        let pos = match p.kind {
                            PolicyKind::BaselineUniform => rng.random_range(0..remaining.len()),
                            PolicyKind::RandomProportional => {
                                draw_proportional(scores.values(), &remaining, &mut rng)
                            }
                            _ => {
                                let rank = rank_cache
                                    .get_or_insert_with(|| rank_descending(scores.values()));
                                let top = *rank
                                    .iter()
                                    .find(|i| remaining.binary_search(i).is_ok())
                                    .expect("budget ≤ n leaves a candidate");
                                remaining
                                    .binary_search(&top)
                                    .expect("candidate is remaining")
                            }
                        };
                        order.push(remaining.remove(pos));
                    }
                    order.clone()
                }
            };

            let (outcome, train) = self.fit(&current, weighting).map_err(|e| Error::Round {
                round: b,
                source: Box::new(e),
            })?;
            curve.points.push(CurvePoint {
                budget: b,
                accuracy: outcome.accuracy,
                total_weight: train.total_weight(),
                train_size: train.len(),
            });

            let more = ci + 1 < checkpoints.len();
            if p.update_scores && more {
                if let Some(m) = metric {
                    let svm_seed = derive_seed(self.config.seed, repeat, Purpose::Svm);
                    let fresh = self
                        .scores_for(m, &outcome.params, &train, svm_seed, (ci + 1) as u64)
                        .map_err(|e| Error::Round {
                            round: b,
                            source: Box::new(e),
                        })?;
                    scores = if p.inverse {
                        invert_scores(&fresh)
                    } else {
                        fresh
                    };
                    rank_cache = None;
                    kernel_cache = None;
                }
            }
            last = Some((outcome, train));
        }

        let (outcome, final_train) = last.expect("at least one checkpoint");
        let selection = if p.kind.selects_whole_subsets() || p.kind == PolicyKind::Vsv {
            current
        } else {
            order
        };
        Ok(RepeatOutcome {
            seed,
            curve,
            selection,
            final_params: outcome.params.clone(),
            final_train,
        })
    }

    fn summarize(&self, p: &PolicyConfig, runs: Vec<RepeatOutcome>) -> Result<PolicyReport> {
        let aucs: Vec<f64> = runs.iter().map(|r| auc(&r.curve).unwrap_or(0.0)).collect();
        let (auc_mean, sd) = mean_sd(&aucs);
        let multi = runs.len() >= 2;
        let budgets: Vec<usize> = runs[0].curve.points.iter().map(|pt| pt.budget).collect();
        let mean_curve = budgets
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                let acc = runs.iter().map(|r| r.curve.points[k].accuracy).sum::<f64>()
                    / runs.len() as f64;
                (b, acc)
            })
            .collect();
        let influence_pairs = if self.config.influence_pairs {
            let first = &runs[0];
            let pairs = initial_final_influence_pairs(
                &self.data.train,
                &self.initial,
                &first.final_params,
                &first.final_train,
                &self.train,
            )?;
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let spearman = match spearman(&a, &b) {
                Ok(s) => Some(s),
                Err(e) => {
                    warn!(
                        "policy {}: influence pair correlation unavailable: {e}",
                        p.label()
                    );
                    None
                }
            };
            Some(InfluencePairs { pairs, spearman })
        } else {
            None
        };
        Ok(PolicyReport {
            label: p.label(),
            kind: p.kind,
            stochastic: p.kind.is_stochastic(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            curves: runs.iter().map(|r| r.curve.clone()).collect(),
            selections: runs.iter().map(|r| r.selection.clone()).collect(),
            auc_mean,
            auc_std: multi.then_some(sd),
            auc_ci95: if multi {
                Some(confidence_interval(&aucs, 0.95)?)
            } else {
                None
            },
            aucs,
            mean_curve,
            influence_pairs,
        })
    }
}

// ---------------------------------------------------------------------------
// output files

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, fs::File)> {
    let path = dir.join(name);
    let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok((path, f))
}

/// `config_hash,seed,policy,repeat,budget,accuracy,total_weight`
pub fn write_curves_csv<W: Write>(out: &mut W, report: &ExperimentReport) -> std::io::Result<()> {
    let hash = report.config_hash.as_deref().unwrap_or("-");
    writeln!(
        out,
        "config_hash,seed,policy,repeat,budget,accuracy,total_weight"
    )?;
    for p in &report.policies {
        for (r, (curve, seed)) in p.curves.iter().zip(&p.seeds).enumerate() {
            for pt in &curve.points {
                writeln!(
                    out,
                    "{hash},{seed},{},{r},{},{},{}",
                    p.label,
                    pt.budget,
                    fmt_f64(pt.accuracy),
                    fmt_f64(pt.total_weight)
                )?;
            }
        }
    }
    Ok(())
}

/// `config_hash,seed,policy,repeats,mean,std`; std is `-` for single runs.
pub fn write_auc_csv<W: Write>(out: &mut W, report: &ExperimentReport) -> std::io::Result<()> {
    let hash = report.config_hash.as_deref().unwrap_or("-");
    writeln!(out, "config_hash,seed,policy,repeats,mean,std")?;
    for p in &report.policies {
        let std = p.auc_std.map_or_else(|| "-".to_string(), fmt_f64);
        writeln!(
            out,
            "{hash},{},{},{},{},{std}",
            report.config.seed,
            p.label,
            p.aucs.len(),
            fmt_f64(p.auc_mean)
        )?;
    }
    Ok(())
}

pub fn write_histogram_csv<W: Write>(
    out: &mut W,
    report: &ExperimentReport,
) -> std::io::Result<()> {
    let hash = report.config_hash.as_deref().unwrap_or("-");
    let h = &report.histogram;
    writeln!(out, "config_hash,seed,bin,lo,hi,count")?;
    for (i, c) in h.counts.iter().enumerate() {
        writeln!(
            out,
            "{hash},{},{i},{},{},{c}",
            report.config.seed,
            fmt_f64(h.edges[i]),
            fmt_f64(h.edges[i + 1])
        )?;
    }
    Ok(())
}

pub fn write_influence_pairs_csv<W: Write>(
    out: &mut W,
    report: &ExperimentReport,
) -> std::io::Result<()> {
    let hash = report.config_hash.as_deref().unwrap_or("-");
    writeln!(out, "config_hash,seed,policy,index,initial,final")?;
    for p in &report.policies {
        if let Some(ip) = &p.influence_pairs {
            for (i, (a, b)) in ip.pairs.iter().enumerate() {
                writeln!(
                    out,
                    "{hash},{},{},{i},{},{}",
                    p.seeds[0],
                    p.label,
                    fmt_f64(*a),
                    fmt_f64(*b)
                )?;
            }
        }
    }
    Ok(())
}

/// Writes curves.csv, auc.csv, histogram.csv, influence_pairs.csv and
/// report.json into `dir`, creating it if needed.
pub fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    type Writer = fn(&mut fs::File, &ExperimentReport) -> std::io::Result<()>;
    let tables: [(&str, Writer); 4] = [
        ("curves.csv", |f, r| write_curves_csv(f, r)),
        ("auc.csv", |f, r| write_auc_csv(f, r)),
        ("histogram.csv", |f, r| write_histogram_csv(f, r)),
        ("influence_pairs.csv", |f, r| {
            write_influence_pairs_csv(f, r)
        }),
    ];
    for (name, write) in tables {
        let (path, mut f) = create(dir, name)?;
        write(&mut f, report).map_err(|e| Error::io(&path, e))?;
    }
    let (path, mut f) = create(dir, "report.json")?;
    serde_json::to_writer_pretty(&mut f, report)
        .map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
    writeln!(f).map_err(|e| Error::io(&path, e))?;
    Ok(())
}
