//! Subset-selection policies: which original points get their augmentation
//! families added to the training set.
//!
//! Samplers take an explicit RNG and are pure given their inputs, so repeats
//! seeded independently can run in any order.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;

use log::warn;
use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::influence::{ScoreMetric, ScoreVector};
use crate::linalg::{dot, jacobi_eigen};
use crate::linmodel::SvmFit;
use crate::seeds::{rng_from_seed, SeededRng};
use crate::transforms::AugmentationFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    BaselineUniform,
    RandomProportional,
    DeterministicTopk,
    Vsv,
    StratifiedCluster,
    Kdpp,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::BaselineUniform => "baseline_uniform",
            PolicyKind::RandomProportional => "random_proportional",
            PolicyKind::DeterministicTopk => "deterministic_topk",
            PolicyKind::Vsv => "vsv",
            PolicyKind::StratifiedCluster => "stratified_cluster",
            PolicyKind::Kdpp => "kdpp",
        }
    }

    /// Policies whose output depends on the RNG; only these are repeated.
    pub fn is_stochastic(self) -> bool {
        !matches!(self, PolicyKind::DeterministicTopk | PolicyKind::Vsv)
    }

    /// Policies that choose a whole subset for a given budget instead of
    /// growing one point at a time.
    pub fn selects_whole_subsets(self) -> bool {
        matches!(self, PolicyKind::StratifiedCluster | PolicyKind::Kdpp)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How an augmented family's weight is split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownweightDivisor {
    /// Origin and each of the m members get w₀/(m+1); total weight is kept.
    #[default]
    FamilyPlusOrigin,
    /// Origin and members get w₀/m, so a family weighs w₀(m+1)/m.
    Family,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// Display name in reports; derived from the other fields when absent.
    #[serde(default)]
    pub name: Option<String>,
    pub kind: PolicyKind,
    #[serde(default)]
    pub metric: Option<ScoreMetric>,
    #[serde(default)]
    pub update_scores: bool,
    #[serde(default)]
    pub downweight: bool,
    #[serde(default)]
    pub divisor: DownweightDivisor,
    #[serde(default)]
    pub inverse: bool,
    /// Overrides the seed derived from the experiment's base seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind, metric: Option<ScoreMetric>) -> Self {
        PolicyConfig {
            name: None,
            kind,
            metric,
            update_scores: false,
            downweight: false,
            divisor: DownweightDivisor::default(),
            inverse: false,
            seed: None,
        }
    }

    pub fn baseline() -> Self {
        Self::new(PolicyKind::BaselineUniform, None)
    }

    pub fn label(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        let mut s = self.kind.to_string();
        if let Some(m) = self.effective_metric() {
            s.push('_');
            s.push_str(m.as_str());
        }
        if self.inverse && self.kind != PolicyKind::BaselineUniform {
            s.push_str("_inverse");
        }
        if self.update_scores {
            s.push_str("_update");
        }
        if self.downweight {
            s.push_str("_downweight");
        }
        s
    }

    /// The metric the policy actually consumes: none for the baseline and
    /// VSV, which ignore any configured metric.
    pub fn effective_metric(&self) -> Option<ScoreMetric> {
        match self.kind {
            PolicyKind::BaselineUniform | PolicyKind::Vsv => None,
            _ => self.metric,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let needs_metric = matches!(
            self.kind,
            PolicyKind::RandomProportional | PolicyKind::DeterministicTopk | PolicyKind::Kdpp
        );
        match (self.kind, self.metric) {
            (PolicyKind::BaselineUniform | PolicyKind::Vsv, Some(m)) => {
                warn!("policy {} ignores metric {m}", self.kind);
            }
            (_, None) if needs_metric => {
                return Err(Error::Config(format!(
                    "policy {} needs a metric",
                    self.kind
                )));
            }
            (_, Some(ScoreMetric::Uniform)) if self.kind != PolicyKind::StratifiedCluster => {
                return Err(Error::Config(format!(
                    "policy {} needs a score metric, not uniform",
                    self.kind
                )));
            }
            _ => {}
        }
        if self.inverse && matches!(self.kind, PolicyKind::BaselineUniform | PolicyKind::Vsv) {
            warn!("policy {} ignores the inverse flag", self.kind);
        }
        Ok(())
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k > n {
        return Err(Error::Size(format!("cannot select {k} of {n} points")));
    }
    Ok(())
}

/// k distinct indices drawn uniformly without replacement.
pub fn sample_uniform(n: usize, k: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    check_k(n, k)?;
    Ok(index::sample(rng, n, k).into_vec())
}

/// Draws one position from `candidates` with probability proportional to
/// `weights[candidate]`; uniform among the candidates when their total
/// weight is zero. Returns the position within `candidates`.
pub fn draw_proportional(weights: &[f64], candidates: &[usize], rng: &mut SeededRng) -> usize {
    assert!(!candidates.is_empty(), "no candidates to draw from");
    let total: f64 = candidates.iter().map(|&i| weights[i]).sum();
    if total <= 0.0 {
        return rng.random_range(0..candidates.len());
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (pos, &i) in candidates.iter().enumerate() {
        let w = weights[i];
        if w > 0.0 {
            acc += w;
            last_positive = pos;
            if target < acc {
                return pos;
            }
        }
    }
    // rounding left target at or beyond the accumulated total
    last_positive
}

/// Sequential draws without replacement: each draw picks i with probability
/// sᵢ / Σ_{remaining} sⱼ and removes it. Once the remaining positive mass is
/// exhausted the rest of the slots are filled uniformly.
pub fn sample_proportional(
    scores: &ScoreVector,
    k: usize,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    let n = scores.len();
    check_k(n, k)?;
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let pos = draw_proportional(scores.values(), &remaining, rng);
        out.push(remaining.remove(pos));
    }
    Ok(out)
}

/// All indices ordered by descending score, ties by ascending index.
pub fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Indices of the k largest scores, descending, ties by ascending index.
pub fn select_topk(scores: &ScoreVector, k: usize) -> Result<Vec<usize>> {
    check_k(scores.len(), k)?;
    let mut order = rank_descending(scores.values());
    order.truncate(k);
    Ok(order)
}

/// sᵢ′ = 1/(sᵢ + ε) with ε = 1e−12·max(s), or 1e−12 when every score is 0.
pub fn invert_scores(scores: &ScoreVector) -> ScoreVector {
    let max = scores.values().iter().cloned().fold(0.0, f64::max);
    let eps = if max > 0.0 { 1e-12 * max } else { 1e-12 };
    let values = scores.values().iter().map(|s| 1.0 / (s + eps)).collect();
    let mut out = ScoreVector::new(values, scores.metric, scores.model_version);
    out.inverted = !scores.inverted;
    out
}

/// The SVM's support vectors, ascending. The budget is their count.
pub fn vsv_select(svm: &SvmFit) -> Vec<usize> {
    let mut idx = svm.support_indices.clone();
    idx.sort_unstable();
    idx.dedup();
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl KMeans {
    /// Sum of squared distances from each point to its centroid.
    pub fn distortion(&self, features: &[&[f64]]) -> f64 {
        features
            .iter()
            .zip(&self.assignments)
            .map(|(x, &c)| sq_dist(x, &self.centroids[c]))
            .sum()
    }

    pub fn cluster_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.centroids.len()];
        for (i, &c) in self.assignments.iter().enumerate() {
            members[c].push(i);
        }
        members
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

const KMEANS_MAX_ITER: usize = 300;

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(x, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm from a k-means++ start, run to an assignment fixpoint
/// or 300 iterations. Empty clusters take the point farthest from its
/// centroid among clusters with more than one member.
pub fn kmeans(features: &[&[f64]], k: usize, seed: u64) -> Result<KMeans> {
    let n = features.len();
    if k == 0 {
        return Err(Error::Parameter(
            "k-means needs at least one cluster".into(),
        ));
    }
    check_k(n, k)?;
    let dim = features[0].len();
    if features.iter().any(|x| x.len() != dim) {
        return Err(Error::Data(
            "k-means features have differing dimensions".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);

    // k-means++ seeding; exact duplicates fall back to a uniform pick among
    // the points not yet used as centers
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![features[first].to_vec()];
    let mut d2: Vec<f64> = features
        .iter()
        .map(|x| sq_dist(x, features[first]))
        .collect();
    while centroids.len() < k {
        let unused: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
        let pick = unused[draw_proportional(&d2, &unused, &mut rng)];
        chosen[pick] = true;
        centroids.push(features[pick].to_vec());
        for (i, x) in features.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, features[pick]));
        }
    }

    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut next = Vec::with_capacity(n);
        let mut dist = Vec::with_capacity(n);
        for x in features {
            let (c, d) = nearest(x, &centroids);
            next.push(c);
            dist.push(d);
        }
        repair_empty(&mut next, &mut dist, k);
        if next == assignments {
            break;
        }
        assignments = next;
        centroids = means(features, &assignments, k, dim);
    }
    Ok(KMeans {
        assignments,
        centroids,
        iterations,
    })
}

fn repair_empty(assign: &mut [usize], dist: &mut [f64], k: usize) {
    let mut sizes = vec![0usize; k];
    for &c in assign.iter() {
        sizes[c] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let far = (0..assign.len())
            .filter(|&i| sizes[assign[i]] > 1)
            .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
            .expect("k ≤ n leaves a cluster with two or more points");
        sizes[assign[far]] -= 1;
        sizes[empty] = 1;
        assign[far] = empty;
        dist[far] = 0.0;
    }
}

fn means(features: &[&[f64]], assign: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (x, &c) in features.iter().zip(assign) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(x.iter()) {
            *s += v;
        }
    }
    for (s, &cnt) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut() {
            *v /= cnt as f64;
        }
    }
    sums
}

/// One index per cluster, in cluster order: uniform within the cluster when
/// `scores` is `None`, proportional to the scores otherwise.
pub fn stratified_select(
    assignments: &[usize],
    clusters: usize,
    scores: Option<&ScoreVector>,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    if let Some(s) = scores {
        if s.len() != assignments.len() {
            return Err(Error::Length(format!(
                "{} scores for {} clustered points",
                s.len(),
                assignments.len()
            )));
        }
    }
    let mut members = vec![Vec::new(); clusters];
    for (i, &c) in assignments.iter().enumerate() {
        let slot = members.get_mut(c).ok_or(Error::Index {
            index: c,
            len: clusters,
        })?;
        slot.push(i);
    }
    members
        .iter()
        .enumerate()
        .map(|(c, m)| {
            if m.is_empty() {
                return Err(Error::Data(format!("cluster {c} is empty")));
            }
            Ok(match scores {
                None => m[rng.random_range(0..m.len())],
                Some(s) => m[draw_proportional(s.values(), m, rng)],
            })
        })
        .collect()
}

/// L-ensemble kernel with its eigendecomposition.
#[derive(Debug, Clone)]
pub struct DppKernel {
    pub l: Array2<f64>,
    /// Nonincreasing and nonnegative.
    pub eigenvalues: Array1<f64>,
    /// Orthonormal columns matching `eigenvalues`.
    pub eigenvectors: Array2<f64>,
}

const EIGEN_TOL: f64 = 1e-12;
const FEATURE_SCALE: f64 = 1000.0;

impl DppKernel {
    /// Decomposes a symmetric PSD matrix. Eigenvalues down to −1e−8·λ_max
    /// are treated as rounding and clamped to 0.
    pub fn from_matrix(l: Array2<f64>) -> Result<Self> {
        let n = l.nrows();
        if n != l.ncols() {
            return Err(Error::Parameter("DPP kernel must be square".into()));
        }
        let scale = l.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in (i + 1)..n {
                if (l[(i, j)] - l[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Parameter(format!(
                        "DPP kernel is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let eig = jacobi_eigen(l.view(), EIGEN_TOL)?;
        let top = eig.values.iter().cloned().fold(0.0, f64::max);
        if let Some(bad) = eig
            .values
            .iter()
            .find(|&&v| v < -1e-8 * top.max(f64::MIN_POSITIVE))
        {
            return Err(Error::Conditioning(format!(
                "DPP kernel has eigenvalue {bad:e}; it is not positive semidefinite"
            )));
        }
        Ok(DppKernel {
            l,
            eigenvalues: eig.values.mapv(|v| v.max(0.0)),
            eigenvectors: eig.vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.l.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.l.nrows() == 0
    }

    /// Eigenvalues above n·ε·λ_max; the rest are indistinguishable from 0.
    pub fn rank(&self) -> usize {
        let cut = self.rank_cutoff();
        self.eigenvalues.iter().filter(|&&v| v > cut).count()
    }

    fn rank_cutoff(&self) -> f64 {
        let top = self.eigenvalues.iter().cloned().fold(0.0, f64::max);
        self.len() as f64 * f64::EPSILON * top
    }
}

/// Lᵢⱼ = qᵢ φᵢᵀφⱼ qⱼ with φᵢ = 1000·xᵢ/‖xᵢ‖. A zero feature vector is given
/// the first coordinate axis as its direction.
pub fn build_dpp_kernel(features: &[&[f64]], qualities: &ScoreVector) -> Result<DppKernel> {
    let n = features.len();
    if qualities.len() != n {
        return Err(Error::Length(format!(
            "{} qualities for {n} feature vectors",
            qualities.len()
        )));
    }
    let phi: Vec<Vec<f64>> = features
        .iter()
        .map(|x| {
            let norm = dot(x, x).sqrt();
            if norm > 0.0 {
                x.iter().map(|v| FEATURE_SCALE * v / norm).collect()
            } else {
                let mut e = vec![0.0; x.len().max(1)];
                e[0] = FEATURE_SCALE;
                e
            }
        })
        .collect();
    let q = qualities.values();
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = q[i] * dot(&phi[i], &phi[j]) * q[j];
            l[(i, j)] = v;
            l[(j, i)] = v;
        }
    }
    DppKernel::from_matrix(l)
}

/// Float with an explicit power-of-two exponent, so products of many large
/// eigenvalues neither overflow nor lose bits relative to plain `f64`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtFloat {
    mantissa: f64,
    exponent: i64,
}

impl ExtFloat {
    pub const ZERO: ExtFloat = ExtFloat {
        mantissa: 0.0,
        exponent: 0,
    };
    pub const ONE: ExtFloat = ExtFloat {
        mantissa: 1.0,
        exponent: 0,
    };

    pub fn from_f64(v: f64) -> Self {
        Self::normalized(v, 0)
    }

    fn normalized(m: f64, e: i64) -> Self {
        if m == 0.0 || !m.is_finite() {
            return ExtFloat {
                mantissa: m,
                exponent: 0,
            };
        }
        let (frac, exp) = libm::frexp(m);
        ExtFloat {
            mantissa: frac,
            exponent: e + i64::from(exp),
        }
    }

    pub fn mul(self, other: ExtFloat) -> Self {
        Self::normalized(
            self.mantissa * other.mantissa,
            self.exponent + other.exponent,
        )
    }

    pub fn add(self, other: ExtFloat) -> Self {
        if self.mantissa == 0.0 {
            return other;
        }
        if other.mantissa == 0.0 {
            return self;
        }
        let (hi, lo) = if self.exponent >= other.exponent {
            (self, other)
        } else {
            (other, self)
        };
        let shift = hi.exponent - lo.exponent;
        if shift > 1100 {
            return hi;
        }
        Self::normalized(hi.mantissa + scale_pow2(lo.mantissa, -shift), hi.exponent)
    }

    /// self / other as a plain float; saturates when out of range.
    pub fn ratio(self, other: ExtFloat) -> f64 {
        let e = self.exponent - other.exponent;
        let m = self.mantissa / other.mantissa;
        scale_pow2(m, e.clamp(-2200, 2200))
    }

    pub fn to_f64(self) -> f64 {
        scale_pow2(self.mantissa, self.exponent.clamp(-2200, 2200))
    }
}

fn scale_pow2(v: f64, e: i64) -> f64 {
    // split so each ldexp step stays in range
    let mut v = v;
    let mut e = e;
    while e != 0 {
        let step = e.clamp(-1000, 1000);
        v = libm::ldexp(v, step as i32);
        e -= step;
    }
    v
}

/// Table `e[l][m]` = e_l(λ₁..λₘ) for l ≤ k, m ≤ n, by the standard
/// recursion e_l^(m) = e_l^(m−1) + λₘ e_{l−1}^(m−1), e₀ = 1.
pub fn elementary_symmetric(eigenvalues: &[f64], k: usize) -> Result<Vec<Vec<ExtFloat>>> {
    let n = eigenvalues.len();
    check_k(n, k)?;
    let mut e = vec![vec![ExtFloat::ZERO; n + 1]; k + 1];
    e[0] = vec![ExtFloat::ONE; n + 1];
    for l in 1..=k {
        for m in 1..=n {
            let lam = ExtFloat::from_f64(eigenvalues[m - 1]);
            e[l][m] = e[l][m - 1].add(lam.mul(e[l - 1][m - 1]));
        }
    }
    Ok(e)
}

/// Exact k-DPP sample: choose k eigenvectors through the elementary
/// symmetric polynomials, then draw items from the spanned subspace one at a
/// time, projecting the chosen item out after each draw.
pub fn sample_kdpp(kernel: &DppKernel, k: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    let n = kernel.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let rank = kernel.rank();
    if k > rank {
        return Err(Error::Size(format!(
            "cannot draw {k} points from a k-DPP whose kernel has rank {rank}"
        )));
    }
    let cut = kernel.rank_cutoff();
    let lambda: Vec<f64> = kernel
        .eigenvalues
        .iter()
        .map(|&v| if v > cut { v } else { 0.0 })
        .collect();
    let e = elementary_symmetric(&lambda, k)?;

    let mut picked_vectors = Vec::with_capacity(k);
    let mut remaining = k;
    for m in (1..=n).rev() {
        if remaining == 0 {
            break;
        }
        let p = ExtFloat::from_f64(lambda[m - 1])
            .mul(e[remaining - 1][m - 1])
            .ratio(e[remaining][m]);
        if rng.random::<f64>() < p {
            picked_vectors.push(m - 1);
            remaining -= 1;
        }
    }
    if remaining != 0 {
        return Err(Error::Conditioning(
            "k-DPP eigenvector phase selected too few vectors".into(),
        ));
    }

    // columns of V, stored as rows for contiguous access
    let mut basis: Vec<Vec<f64>> = picked_vectors
        .iter()
        .map(|&j| kernel.eigenvectors.column(j).to_vec())
        .collect();
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(k);
    while !basis.is_empty() {
        let mass: Vec<f64> = (0..n)
            .map(|i| {
                if taken[i] {
                    0.0
                } else {
                    basis.iter().map(|v| v[i] * v[i]).sum()
                }
            })
            .collect();
        let candidates: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
        if candidates.iter().map(|&i| mass[i]).sum::<f64>() <= 0.0 {
            return Err(Error::Conditioning("k-DPP projection lost all mass".into()));
        }
        let item = candidates[draw_proportional(&mass, &candidates, rng)];
        taken[item] = true;
        out.push(item);

        // eliminate the item's coordinate using the column with the largest entry
        let pivot = (0..basis.len())
            .max_by(|&a, &b| {
                basis[a][item]
                    .abs()
                    .partial_cmp(&basis[b][item].abs())
                    .unwrap_or(Ordering::Equal)
            })
            .expect("basis is nonempty");
        let pv = basis.swap_remove(pivot);
        let pivot_entry = pv[item];
        if pivot_entry == 0.0 {
            return Err(Error::Conditioning(
                "k-DPP drew an item outside the subspace".into(),
            ));
        }
        for v in basis.iter_mut() {
            let f = v[item] / pivot_entry;
            for (a, b) in v.iter_mut().zip(&pv) {
                *a -= f * b;
            }
            v[item] = 0.0;
        }
        gram_schmidt(&mut basis)?;
    }
    Ok(out)
}

fn gram_schmidt(basis: &mut [Vec<f64>]) -> Result<()> {
    for i in 0..basis.len() {
        let (done, rest) = basis.split_at_mut(i);
        let v = &mut rest[0];
        for u in done.iter() {
            let proj = dot(v, u);
            for (a, b) in v.iter_mut().zip(u) {
                *a -= proj * b;
            }
        }
        let norm = dot(v, v).sqrt();
        if !(norm > 1e-12) {
            return Err(Error::Conditioning(
                "k-DPP basis became degenerate during projection".into(),
            ));
        }
        for a in v.iter_mut() {
            *a /= norm;
        }
    }
    Ok(())
}

/// Appends a family with unit weights, leaving the origin untouched.
pub fn append_family(data: &mut Dataset, family: &AugmentationFamily) -> Result<()> {
    for m in &family.members {
        data.push(m.clone())?;
    }
    Ok(())
}

/// Appends `family` and splits the origin's current weight w₀ across the
/// origin and its members. The origin is the first example carrying the
/// family's `origin_id`.
pub fn apply_downweight(
    data: &mut Dataset,
    family: &AugmentationFamily,
    divisor: DownweightDivisor,
) -> Result<()> {
    let origin = data
        .examples()
        .iter()
        .position(|e| e.origin_id == family.origin_id)
        .ok_or(Error::Index {
            index: family.origin_id,
            len: data.len(),
        })?;
    let m = family.len();
    if m == 0 {
        return Ok(());
    }
    let w0 = data.examples()[origin].weight;
    let share = match divisor {
        DownweightDivisor::FamilyPlusOrigin => w0 / (m + 1) as f64,
        DownweightDivisor::Family => w0 / m as f64,
    };
    data.examples_mut()[origin].weight = share;
    for member in &family.members {
        data.push(member.clone().with_weight(share))?;
    }
    Ok(())
}

/// Writes a `round,index` CSV of selected source indices.
pub fn write_selection_csv<W: Write>(out: &mut W, selected: &[usize]) -> std::io::Result<()> {
    writeln!(out, "round,index")?;
    for (round, idx) in selected.iter().enumerate() {
        writeln!(out, "{},{idx}", round + 1)?;
    }
    Ok(())
}
