//! `augsubset oracle`: the library checked against brute force at desk
//! scale. Every reference here is computed the slow, obvious way.

use std::time::Instant;

use augsubset::harness::spearman;
use augsubset::influence::{brute_force_loo_all, factor_for_fit, loo_influence};
use augsubset::linmodel::{fit_logistic, hessian, objective_gradient, point_gradient, point_loss};
use augsubset::seeds::{rng_from_seed, SeededRng};
use augsubset::selection::{
    elementary_symmetric, sample_kdpp, sample_proportional, sample_uniform, DppKernel,
};
use augsubset::transforms::{rotate, translate};
use augsubset::{
    Dataset, Label, LabeledExample, ModelParams, RawImage, ScoreMetric, ScoreVector, TrainConfig,
    TransformSpec,
};
use clap::ValueEnum;
use ndarray::Array2;
use rand::Rng;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    All,
    /// Leave-one-out influence against retraining.
    Loo,
    /// Gradient and Hessian against finite differences.
    Calculus,
    /// Newton fit against plain gradient descent.
    Solver,
    /// Sampling laws of the uniform and proportional samplers.
    Sampler,
    /// k-DPP frequencies against determinant enumeration.
    Dpp,
    /// Rotation and translation against index remaps.
    Transforms,
}

struct Check {
    name: &'static str,
    pass: bool,
    observed: String,
    expected: String,
}

pub fn run(suite: Suite) -> Result<(), CliError> {
    let all: [(Suite, fn() -> Vec<Check>); 6] = [
        (Suite::Loo, loo),
        (Suite::Calculus, calculus),
        (Suite::Solver, solver),
        (Suite::Sampler, sampler),
        (Suite::Dpp, dpp),
        (Suite::Transforms, transforms),
    ];
    let mut failures = 0;
    for (s, f) in all {
        if suite != Suite::All && suite != s {
            continue;
        }
        let start = Instant::now();
        for c in f() {
            let tag = if c.pass { "pass" } else { "FAIL" };
            println!(
                "{tag}  {:<40} observed {}  expected {}",
                c.name, c.observed, c.expected
            );
            failures += usize::from(!c.pass);
        }
        log::info!("{s:?} suite took {:.1}s", start.elapsed().as_secs_f64());
    }
    if failures > 0 {
        return Err(CliError {
            code: 1,
            message: format!("{failures} oracle check(s) failed"),
        });
    }
    Ok(())
}

fn normal(r: &mut SeededRng) -> f64 {
    let u1: f64 = 1.0 - r.random::<f64>();
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn blobs(n: usize, d: usize, sep: f64, seed: u64) -> Dataset {
    let mut r = rng_from_seed(seed);
    let examples = (0..n)
        .map(|i| {
            let y = if i % 2 == 0 { 1.0 } else { -1.0 };
            let mut x: Vec<f64> = (0..d).map(|_| normal(&mut r)).collect();
            x[0] += y * sep / 2.0;
            LabeledExample::new(x, Label::from_sign(y), i)
        })
        .collect();
    Dataset::from_examples(examples).expect("consistent fixture")
}

fn cfg(c: f64) -> TrainConfig {
    TrainConfig {
        c,
        ..TrainConfig::default()
    }
}

fn loo() -> Vec<Check> {
    let data = blobs(20, 2, 2.0, 11);
    let config = cfg(0.1);
    let params = fit_logistic(&data, &config).expect("fixture fits");
    let factor = factor_for_fit(&params, &data, &config).expect("fixture factors");
    let influence: Vec<f64> = data
        .examples()
        .iter()
        .map(|z| loo_influence(&params, &factor, z).expect("dimensions match"))
        .collect();
    let deltas = brute_force_loo_all(&data, &config).expect("refits converge");
    let rho = spearman(&influence, &deltas).expect("nonconstant").rho;
    vec![Check {
        name: "I_LOO vs retraining delta, rank corr.",
        pass: rho <= -0.99,
        observed: format!("{rho:.4}"),
        expected: "<= -0.99".into(),
    }]
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    num / b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300)
}

fn calculus() -> Vec<Check> {
    const H: f64 = 1e-5;
    let d = 3;
    let mut r = rng_from_seed(21);
    let data = blobs(25, d, 1.5, 22);
    let config = cfg(1.0);
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let theta: Vec<f64> = (0..=d).map(|_| normal(&mut r)).collect();
        let x: Vec<f64> = (0..d).map(|_| normal(&mut r)).collect();
        let z = LabeledExample::new(x, Label::from_sign(if r.random() { 1.0 } else { -1.0 }), 0);
        let at = |t: &[f64]| ModelParams::from_theta(t);
        let shifted = |j: usize, h: f64| {
            let mut t = theta.clone();
            t[j] += h;
            t
        };
        let fd_g: Vec<f64> = (0..=d)
            .map(|j| {
                (point_loss(&at(&shifted(j, H)), &z) - point_loss(&at(&shifted(j, -H)), &z))
                    / (2.0 * H)
            })
            .collect();
        worst_g = worst_g.max(rel_err(&point_gradient(&at(&theta), &z), &fd_g));
        let hess = hessian(&at(&theta), &data, &config);
        for j in 0..=d {
            let gp = objective_gradient(&at(&shifted(j, H)), &data, &config);
            let gm = objective_gradient(&at(&shifted(j, -H)), &data, &config);
            let fd: Vec<f64> = gp
                .iter()
                .zip(&gm)
                .map(|(a, b)| (a - b) / (2.0 * H))
                .collect();
            worst_h = worst_h.max(rel_err(&hess.column(j).to_vec(), &fd));
        }
    }
    vec![
        Check {
            name: "point gradient vs finite differences",
            pass: worst_g < 1e-6,
            observed: format!("{worst_g:.2e}"),
            expected: "< 1e-6".into(),
        },
        Check {
            name: "Hessian vs finite differences",
            pass: worst_h < 1e-5,
            observed: format!("{worst_h:.2e}"),
            expected: "< 1e-5".into(),
        },
    ]
}

fn solver() -> Vec<Check> {
    let data = blobs(30, 3, 1.0, 31);
    let c = 1.0;
    let config = cfg(c);
    let fit = fit_logistic(&data, &config).expect("fixture fits");
    // gradient descent with step 1/L, L = C Σ ‖x̃‖²/4 + 1
    let lip = c * data
        .examples()
        .iter()
        .map(|e| 1.0 + e.features.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / 4.0
        + 1.0;
    let mut theta = vec![0.0; data.feature_dim() + 1];
    for _ in 0..2_000_000 {
        let g = objective_gradient(&ModelParams::from_theta(&theta), &data, &config);
        if g.iter().all(|v| v.abs() < 1e-11) {
            break;
        }
        theta.iter_mut().zip(&g).for_each(|(t, gj)| *t -= gj / lip);
    }
    let diff = fit
        .theta()
        .iter()
        .zip(&theta)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let grad = objective_gradient(&fit, &data, &config)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    vec![
        Check {
            name: "Newton fit vs gradient descent",
            pass: diff <= 1e-6,
            observed: format!("{diff:.2e}"),
            expected: "<= 1e-6".into(),
        },
        Check {
            name: "gradient norm at the fit",
            pass: grad <= 1e-8,
            observed: format!("{grad:.2e}"),
            expected: "<= 1e-8".into(),
        },
    ]
}

/// Upper tail of chi-square(df) by the Wilson-Hilferty cube-root normal
/// approximation; accurate to a few percent in the tail, plenty for a
/// 0.001 threshold.
fn chi_square_upper(stat: f64, df: f64) -> f64 {
    let z = ((stat / df).cbrt() - (1.0 - 2.0 / (9.0 * df))) / (2.0 / (9.0 * df)).sqrt();
    1.0 - augsubset::harness::normal_cdf(z)
}

fn sampler() -> Vec<Check> {
    let trials = 200_000;
    let scores = ScoreVector::new(vec![2.0, 1.0, 1.0], ScoreMetric::Loss, 0);
    let mut counts = [[0usize; 3]; 3];
    let mut r = rng_from_seed(41);
    for _ in 0..trials {
        let s = sample_proportional(&scores, 2, &mut r).expect("k <= n");
        counts[s[0]][s[1]] += 1;
    }
    let w = [2.0, 1.0, 1.0];
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in (0..3).filter(|&j| j != i) {
            let exact = w[i] / 4.0 * w[j] / (4.0 - w[i]);
            worst = worst.max((counts[i][j] as f64 / trials as f64 - exact).abs());
        }
    }

    let (n, k) = (5, 2);
    let mut cells = vec![0usize; n * n];
    for _ in 0..trials {
        let s = sample_uniform(n, k, &mut r).expect("k <= n");
        let (a, b) = (s[0].min(s[1]), s[0].max(s[1]));
        cells[a * n + b] += 1;
    }
    let pairs = n * (n - 1) / 2;
    let expected = trials as f64 / pairs as f64;
    let mut chi2 = 0.0;
    for a in 0..n {
        for b in a + 1..n {
            chi2 += (cells[a * n + b] as f64 - expected).powi(2) / expected;
        }
    }
    let p = chi_square_upper(chi2, (pairs - 1) as f64);
    vec![
        Check {
            name: "proportional sampler, ordered pairs",
            pass: worst <= 0.005,
            observed: format!("max deviation {worst:.4}"),
            expected: "<= 0.005".into(),
        },
        Check {
            name: "uniform sampler, chi-square",
            pass: p > 0.001,
            observed: format!("p = {p:.3}"),
            expected: "> 0.001".into(),
        },
    ]
}

fn det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut d = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("nonempty");
        if a[piv][col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            a.swap(piv, col);
            d = -d;
        }
        d *= a[col][col];
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    d
}

fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    (k - 1..n)
        .flat_map(|last| {
            k_subsets(last, k - 1).into_iter().map(move |mut s| {
                s.push(last);
                s
            })
        })
        .collect()
}

fn dpp() -> Vec<Check> {
    let (n, k) = (8, 3);
    let mut r = rng_from_seed(51);
    let b: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| normal(&mut r)).collect())
        .collect();
    let l = Array2::from_shape_fn((n, n), |(i, j)| (0..n).map(|t| b[i][t] * b[j][t]).sum());
    let subsets = k_subsets(n, k);
    let dets: Vec<f64> = subsets
        .iter()
        .map(|s| {
            det(s
                .iter()
                .map(|&i| s.iter().map(|&j| l[(i, j)]).collect())
                .collect())
        })
        .collect();
    let z: f64 = dets.iter().sum();
    let kernel = DppKernel::from_matrix(l).expect("PSD kernel");
    let trials = 200_000;
    let mut counts = std::collections::HashMap::<Vec<usize>, usize>::new();
    for _ in 0..trials {
        let mut s = sample_kdpp(&kernel, k, &mut r).expect("k <= rank");
        s.sort_unstable();
        *counts.entry(s).or_default() += 1;
    }
    let worst = subsets
        .iter()
        .zip(&dets)
        .map(|(s, d)| (*counts.get(s).unwrap_or(&0) as f64 / trials as f64 - d / z).abs())
        .fold(0.0f64, f64::max);

    let mut mismatches = 0;
    let mut cases = 0;
    for len in 1..=12 {
        let eig: Vec<f64> = (0..len).map(|_| r.random_range(0..8) as f64).collect();
        let table = elementary_symmetric(&eig, len).expect("k <= n");
        for kk in 0..=len {
            let brute: f64 = k_subsets(len, kk)
                .iter()
                .map(|s| s.iter().map(|&i| eig[i]).product::<f64>())
                .sum();
            cases += 1;
            mismatches += usize::from(table[kk][len].to_f64() != brute);
        }
    }
    vec![
        Check {
            name: "k-DPP subset frequencies (n=8, k=3)",
            pass: worst <= 0.01,
            observed: format!("max deviation {worst:.4}"),
            expected: "<= 0.01".into(),
        },
        Check {
            name: "elementary symmetric polynomials",
            pass: mismatches == 0,
            observed: format!("{mismatches} of {cases} differ"),
            expected: "exact".into(),
        },
    ]
}

fn transforms() -> Vec<Check> {
    let mut r = rng_from_seed(61);
    let side = 28;
    let img = RawImage::new(
        side,
        side,
        1,
        (0..side * side).map(|_| r.random()).collect(),
    )
    .expect("valid image");
    let remap = |f: &dyn Fn(usize, usize) -> Option<(usize, usize)>| -> Vec<u8> {
        let mut out = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                out.push(f(x, y).map_or(0, |(sx, sy)| img.get(sx, sy, 0)));
            }
        }
        out
    };
    let turned = remap(&|x, y| Some((side - 1 - y, x)));
    let rot_ok = rotate(&img, 90.0).expect("valid angle").pixels() == turned.as_slice();
    let mut shift_ok = true;
    for (dx, dy) in [(2i64, 0i64), (-2, 0), (0, 2), (0, -2), (3, -5)] {
        let expected = remap(&|x, y| {
            let (sx, sy) = (x as i64 - dx, y as i64 - dy);
            (0..side as i64).contains(&sx).then_some(()).and(
                (0..side as i64)
                    .contains(&sy)
                    .then_some((sx as usize, sy as usize)),
            )
        });
        shift_ok &= translate(&img, dx, dy).expect("valid shift").pixels() == expected.as_slice();
    }
    let sizes = [
        TransformSpec::mnist_translate().grid_size(),
        TransformSpec::mnist_rotate().grid_size(),
        TransformSpec::mnist_crop().grid_size(),
    ];
    vec![
        Check {
            name: "90 degree rotation vs permutation",
            pass: rot_ok,
            observed: rot_ok.to_string(),
            expected: "true".into(),
        },
        Check {
            name: "translation vs index remap",
            pass: shift_ok,
            observed: shift_ok.to_string(),
            expected: "true".into(),
        },
        Check {
            name: "family sizes translate/rotate/crop",
            pass: sizes == [4, 14, 6],
            observed: format!("{sizes:?}"),
            expected: "[4, 14, 6]".into(),
        },
    ]
}
