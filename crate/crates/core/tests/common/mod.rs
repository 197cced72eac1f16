//! Fixtures and brute-force reference implementations shared by the
//! integration tests. Nothing here calls into the algorithm under test
//! except to build inputs.

#![allow(dead_code)]

use std::path::PathBuf;

use augsubset::dataio::{load_idx, make_binary_task, Dataset, Label, LabeledExample, RawImage};
use augsubset::linmodel::{ModelParams, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal draw by Box–Muller.
pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - r.random::<f64>();
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Two Gaussian blobs at ±`sep`/2 along a random direction, unit variance,
/// balanced labels, origin ids equal to row index.
pub fn gaussian_blobs(n: usize, d: usize, sep: f64, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut dir: Vec<f64> = (0..d).map(|_| normal(&mut r)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);
    let examples = (0..n)
        .map(|i| {
            let y = if i % 2 == 0 { 1.0 } else { -1.0 };
            let x = dir
                .iter()
                .map(|u| y * sep / 2.0 * u + normal(&mut r))
                .collect();
            LabeledExample::new(x, Label::from_sign(y), i)
        })
        .collect();
    Dataset::from_examples(examples).unwrap()
}

// ---------------------------------------------------------------------------
// logistic objective, written out independently

fn aug(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.push(1.0);
    v
}

fn stable_log1pexp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub fn ref_point_loss(theta: &[f64], x: &[f64], y: f64) -> f64 {
    let f: f64 = aug(x).iter().zip(theta).map(|(a, b)| a * b).sum();
    stable_log1pexp(-y * f)
}

pub fn ref_objective(theta: &[f64], data: &Dataset, c: f64) -> f64 {
    let d = data.feature_dim();
    let data_term: f64 = data
        .examples()
        .iter()
        .map(|e| e.weight * ref_point_loss(theta, &e.features, e.label.sign()))
        .sum();
    c * data_term + 0.5 * theta[..d].iter().map(|w| w * w).sum::<f64>()
}

pub fn ref_gradient(theta: &[f64], data: &Dataset, c: f64) -> Vec<f64> {
    let d = data.feature_dim();
    let mut g = vec![0.0; d + 1];
    for e in data.examples() {
        let xa = aug(&e.features);
        let y = e.label.sign();
        let f: f64 = xa.iter().zip(theta).map(|(a, b)| a * b).sum();
        // d/df log(1+exp(-y f)) = -y / (1 + exp(y f))
        let s = -y / (1.0 + (y * f).exp());
        for (gj, xj) in g.iter_mut().zip(&xa) {
            *gj += c * e.weight * s * xj;
        }
    }
    for j in 0..d {
        g[j] += theta[j];
    }
    g
}

/// Plain fixed-step gradient descent on the objective until the gradient
/// ∞-norm falls below `gtol` or `max_steps` is reached.
pub fn gradient_descent_oracle(data: &Dataset, c: f64, gtol: f64, max_steps: usize) -> Vec<f64> {
    let d = data.feature_dim();
    // Lipschitz bound of the gradient: C Σ wᵢ ‖x̃ᵢ‖² / 4 + 1
    let lip = c * data
        .examples()
        .iter()
        .map(|e| e.weight * (1.0 + e.features.iter().map(|v| v * v).sum::<f64>()))
        .sum::<f64>()
        / 4.0
        + 1.0;
    let step = 1.0 / lip;
    let mut theta = vec![0.0; d + 1];
    for _ in 0..max_steps {
        let g = ref_gradient(&theta, data, c);
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < gtol {
            break;
        }
        for (t, gj) in theta.iter_mut().zip(&g) {
            *t -= step * gj;
        }
    }
    theta
}

pub fn theta_of(p: &ModelParams) -> Vec<f64> {
    let mut t = p.weights.clone();
    t.push(p.bias);
    t
}

pub fn cfg(c: f64) -> TrainConfig {
    TrainConfig {
        c,
        ..TrainConfig::default()
    }
}

// ---------------------------------------------------------------------------
// linear algebra and combinatorics

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut d = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[piv][col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            a.swap(piv, col);
            d = -d;
        }
        d *= a[col][col];
        for r in (col + 1)..n {
            let f = a[r][col] / a[col][col];
            for k in col..n {
                a[r][k] -= f * a[col][k];
            }
        }
    }
    d
}

/// All k-subsets of 0..n in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Σ over k-subsets of the product of their entries.
pub fn esp_enumerated(values: &[f64], k: usize) -> f64 {
    subsets(values.len(), k)
        .iter()
        .map(|s| s.iter().map(|&i| values[i]).product::<f64>())
        .sum()
}

/// Regularized upper incomplete gamma Q(a, x), series for x < a + 1 and
/// Lentz's continued fraction otherwise.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let ln_pre = a * x.ln() - x - libm::lgamma(a);
    if x < a + 1.0 {
        let mut sum = 1.0 / a;
        let mut term = sum;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        1.0 - sum * ln_pre.exp()
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        ln_pre.exp() * h
    }
}

/// Upper tail of the chi-square distribution with `df` degrees of freedom.
pub fn chi_square_sf(stat: f64, df: usize) -> f64 {
    gamma_q(df as f64 / 2.0, stat / 2.0)
}

// ---------------------------------------------------------------------------
// images

/// Direct index remap: output (x, y) reads input (x − dx, y − dy), else 0.
pub fn remap_translate(img: &RawImage, dx: i64, dy: i64) -> Vec<u8> {
    let (w, h, ch) = (img.width() as i64, img.height() as i64, img.channels());
    let mut out = Vec::with_capacity(img.pixels().len());
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let (sx, sy) = (x - dx, y - dy);
                out.push(if sx >= 0 && sx < w && sy >= 0 && sy < h {
                    img.get(sx as usize, sy as usize, c)
                } else {
                    0
                });
            }
        }
    }
    out
}

/// Counterclockwise quarter turn of a square image as displayed: output
/// (x, y) reads input (w − 1 − y, x).
pub fn quarter_turn(img: &RawImage) -> Vec<u8> {
    let w = img.width();
    let mut out = Vec::with_capacity(img.pixels().len());
    for y in 0..img.height() {
        for x in 0..w {
            for c in 0..img.channels() {
                out.push(img.get(w - 1 - y, x, c));
            }
        }
    }
    out
}

pub fn random_image(w: usize, h: usize, seed: u64) -> RawImage {
    let mut r = rng(seed);
    RawImage::new(w, h, 1, (0..w * h).map(|_| r.random::<u8>()).collect()).unwrap()
}

/// Small synthetic digit-like images: class +1 has a bright vertical bar,
/// class −1 a horizontal one, with noise and jitter.
pub fn bar_images(n: usize, side: usize, seed: u64) -> Vec<(RawImage, Label)> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 {
                Label::Positive
            } else {
                Label::Negative
            };
            let pos = r.random_range(1..side - 1);
            let mut px = vec![0u8; side * side];
            for y in 0..side {
                for x in 0..side {
                    let on = match label {
                        Label::Positive => x == pos,
                        Label::Negative => y == pos,
                    };
                    let noise: u8 = r.random_range(0..60);
                    px[y * side + x] = if on { 255 - noise } else { noise };
                }
            }
            (RawImage::new(side, side, 1, px).unwrap(), label)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// MNIST

pub fn vendored_mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-3v8")
}

pub fn load_vendored_pairs() -> Vec<(RawImage, u8)> {
    let dir = vendored_mnist_dir();
    load_idx(
        &dir.join("images-idx3-ubyte"),
        &dir.join("labels-idx1-ubyte"),
    )
    .unwrap()
}

/// `n` training images of 3 (+1) vs 8 (−1) from the vendored subset, and the
/// remaining 3/8 images as the test pool.
pub fn mnist_split(n: usize, seed: u64) -> (Vec<(RawImage, Label)>, Vec<(RawImage, Label)>) {
    let pairs = load_vendored_pairs();
    let task = make_binary_task(&pairs, 3, 8, n, seed).unwrap();
    let train = task
        .images
        .iter()
        .cloned()
        .zip(task.dataset.examples().iter().map(|e| e.label))
        .collect();
    let test = task
        .unused_indices
        .iter()
        .map(|&i| {
            let label = if pairs[i].1 == 3 {
                Label::Positive
            } else {
                Label::Negative
            };
            (pairs[i].0.clone(), label)
        })
        .collect();
    (train, test)
}
