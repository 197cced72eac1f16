//! One function per subcommand. Each returns `CliError` so `main` can map
//! failures to exit codes.

use std::fs;
use std::io::Write;
use std::path::Path;

use augsubset::dataio::{
    binary_pool, encode_idx_images, encode_idx_labels, load_feature_csv, load_idx,
    make_binary_task, parse_idx_images, save_feature_csv, write_augmented_feature_csv,
    AugmentedFeatures,
};
use augsubset::harness::{run_experiment, write_outputs, ExperimentReport};
use augsubset::influence::{factor_for_fit, score_all};
use augsubset::linmodel::{fit_logistic, fit_svm, margin_scores, MarginVariant, DEFAULT_SVM_GRID};
use augsubset::seeds::{derive_seed, rng_from_seed, Purpose};
use augsubset::selection::{
    build_dpp_kernel, invert_scores, kmeans, sample_kdpp, sample_proportional, sample_uniform,
    select_topk, stratified_select, vsv_select, write_selection_csv, PolicyKind,
};
use augsubset::{Dataset, ScoreMetric, ScoreVector, TrainConfig, TransformSpec};
use log::info;

use crate::{config, CliError};

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::input(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Writes to `out`, or to standard output when it is `None`.
fn emit(
    out: Option<&Path>,
    write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write(&mut buf).expect("writing to memory");
    match out {
        Some(p) => write_file(p, &buf),
        None => std::io::stdout()
            .write_all(&buf)
            .map_err(|e| CliError::input(format!("standard output: {e}"))),
    }
}

pub fn ingest(
    images: &Path,
    labels: &Path,
    classes: [u8; 2],
    n_train: usize,
    n_test: Option<usize>,
    seed: u64,
    out_dir: &Path,
) -> Result<(), CliError> {
    let [a, b] = classes;
    let pairs = load_idx(images, labels)?;
    // same seed derivation as `run`, so an ingest and a run with one seed agree
    let task = make_binary_task(
        &pairs,
        a,
        b,
        n_train,
        derive_seed(seed, 0, Purpose::TrainSplit),
    )?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    save_feature_csv(&out_dir.join("train.csv"), &task.dataset)?;
    let digits: Vec<u8> = task.source_indices.iter().map(|&i| pairs[i].1).collect();
    write_file(
        &out_dir.join("train-images-idx3-ubyte"),
        &encode_idx_images(&task.images)?,
    )?;
    write_file(
        &out_dir.join("train-labels-idx1-ubyte"),
        &encode_idx_labels(&digits),
    )?;
    println!(
        "train: {} examples ({} of class {a}, {} of class {b})",
        task.dataset.len(),
        task.class_split.0,
        task.class_split.1
    );

    if let Some(n_test) = n_test {
        let leftover: Vec<_> = task
            .unused_indices
            .iter()
            .map(|&i| pairs[i].clone())
            .collect();
        let pool = binary_pool(&leftover, a, b);
        if pool.len() < n_test {
            return Err(CliError::input(format!(
                "{n_test} test examples requested, {} left after the training split",
                pool.len()
            )));
        }
        let mut rng = rng_from_seed(derive_seed(seed, 0, Purpose::TestSplit));
        let mut idx = rand::seq::index::sample(&mut rng, pool.len(), n_test).into_vec();
        idx.sort_unstable();
        let chosen: Vec<_> = idx.iter().map(|&k| &pool[k]).collect();
        let test = Dataset::from_examples(
            chosen
                .iter()
                .enumerate()
                .map(|(i, (_, img, label))| {
                    augsubset::LabeledExample::new(img.to_features(), *label, i)
                })
                .collect(),
        )?;
        let test_images: Vec<_> = chosen.iter().map(|(_, img, _)| img.clone()).collect();
        let test_digits: Vec<u8> = chosen.iter().map(|(src, _, _)| leftover[*src].1).collect();
        save_feature_csv(&out_dir.join("test.csv"), &test)?;
        write_file(
            &out_dir.join("test-images-idx3-ubyte"),
            &encode_idx_images(&test_images)?,
        )?;
        write_file(
            &out_dir.join("test-labels-idx1-ubyte"),
            &encode_idx_labels(&test_digits),
        )?;
        println!("test: {n_test} examples");
    }
    Ok(())
}

/// Parses a preset name or `kind:arg,arg,...`.
pub fn parse_transform(text: &str) -> Result<TransformSpec, CliError> {
    let bad = |msg: String| CliError::input(format!("transform {text:?}: {msg}"));
    let spec = match text {
        "mnist-translate" => TransformSpec::mnist_translate(),
        "mnist-rotate" => TransformSpec::mnist_rotate(),
        "mnist-crop" => TransformSpec::mnist_crop(),
        "cifar-translate" => TransformSpec::cifar_translate(),
        "norb-translate" => TransformSpec::norb_translate(),
        "small-rotate" => TransformSpec::small_rotate(),
        "cifar-crop" => TransformSpec::cifar_crop(),
        _ => {
            let (kind, args) = text
                .split_once(':')
                .ok_or_else(|| bad("expected a preset or kind:args".into()))?;
            let nums = |what: &str| -> Result<Vec<f64>, CliError> {
                args.split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| bad(format!("{s:?} is not a {what}")))
                    })
                    .collect()
            };
            let whole = |v: f64| -> Result<usize, CliError> {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(bad(format!("{v} is not a nonnegative integer")))
                }
            };
            match kind {
                "translate" => {
                    let v = nums("number")?;
                    if v.len() != 1 {
                        return Err(bad("translate takes one offset".into()));
                    }
                    TransformSpec::translate(whole(v[0])?)?
                }
                "rotate" => TransformSpec::rotate(nums("angle")?)?,
                "crop" => TransformSpec::crop(
                    nums("border")?
                        .into_iter()
                        .map(whole)
                        .collect::<Result<_, _>>()?,
                )?,
                other => return Err(bad(format!("unknown transform kind {other:?}"))),
            }
        }
    };
    Ok(spec)
}

pub fn augment(images: &Path, transform: &str, out: &Path) -> Result<(), CliError> {
    let spec = parse_transform(transform)?;
    let bytes = fs::read(images).map_err(|e| io_err(images, e))?;
    let imgs = parse_idx_images(&bytes)?;
    let mut families = AugmentedFeatures::new();
    for (i, img) in imgs.iter().enumerate() {
        let members = spec
            .apply_all(img)?
            .iter()
            .map(|m| m.to_features())
            .collect();
        families.insert(i, members);
    }
    emit(Some(out), |buf| write_augmented_feature_csv(buf, &families))?;
    println!(
        "{} images, {} augmented copies each, written to {}",
        imgs.len(),
        spec.grid_size(),
        out.display()
    );
    Ok(())
}

pub fn score(
    data_path: &Path,
    metric: ScoreMetric,
    c: f64,
    svm_grid: Option<Vec<f64>>,
    folds: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let data = load_feature_csv(data_path)?;
    let scores = match metric {
        ScoreMetric::Loss | ScoreMetric::Influence => {
            let config = TrainConfig::with_c(c);
            let params = fit_logistic(&data, &config)?;
            let factor = match metric {
                ScoreMetric::Influence => Some(factor_for_fit(&params, &data, &config)?),
                _ => None,
            };
            score_all(&params, factor.as_ref(), &data, metric, 0)?
        }
        ScoreMetric::MarginAbs | ScoreMetric::MarginInv => {
            let grid = svm_grid.unwrap_or_else(|| DEFAULT_SVM_GRID.to_vec());
            let svm = fit_svm(&data, &grid, folds, seed)?;
            info!(
                "SVM C = {} with {} support vectors",
                svm.chosen_c,
                svm.support_indices.len()
            );
            let variant = if metric == ScoreMetric::MarginAbs {
                MarginVariant::Absolute
            } else {
                MarginVariant::Inverse
            };
            margin_scores(&svm, &data, variant)
        }
        ScoreMetric::Uniform => ScoreVector::uniform(data.len()),
    };
    emit(out, |buf| scores.write_csv(buf))
}

pub struct SelectArgs<'a> {
    pub policy: PolicyKind,
    pub k: Option<usize>,
    pub scores: Option<&'a Path>,
    pub data: Option<&'a Path>,
    pub invert: bool,
    pub seed: u64,
    pub out: Option<&'a Path>,
}

pub fn select(args: &SelectArgs) -> Result<(), CliError> {
    let scores = match args.scores {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            let s = ScoreVector::parse_csv(&text)?;
            Some(if args.invert { invert_scores(&s) } else { s })
        }
        None if args.invert => return Err(CliError::input("--invert needs --scores")),
        None => None,
    };
    let data = args.data.map(load_feature_csv).transpose()?;
    if let (Some(s), Some(d)) = (&scores, &data) {
        if s.len() != d.len() {
            return Err(CliError::input(format!(
                "{} scores for {} data rows",
                s.len(),
                d.len()
            )));
        }
    }
    let n = scores
        .as_ref()
        .map(ScoreVector::len)
        .or(data.as_ref().map(Dataset::len))
        .ok_or_else(|| CliError::input("select needs --scores or --data"))?;
    let need_scores = || {
        scores
            .as_ref()
            .ok_or_else(|| CliError::input(format!("policy {} needs --scores", args.policy)))
    };
    let need_data = || {
        data.as_ref()
            .ok_or_else(|| CliError::input(format!("policy {} needs --data", args.policy)))
    };
    let need_k = || {
        args.k
            .ok_or_else(|| CliError::input(format!("policy {} needs --k", args.policy)))
    };
    let mut rng = rng_from_seed(args.seed);
    let selected = match args.policy {
        PolicyKind::BaselineUniform => sample_uniform(n, need_k()?, &mut rng)?,
        PolicyKind::RandomProportional => sample_proportional(need_scores()?, need_k()?, &mut rng)?,
        PolicyKind::DeterministicTopk => select_topk(need_scores()?, need_k()?)?,
        PolicyKind::Vsv => {
            let svm = fit_svm(need_data()?, &DEFAULT_SVM_GRID, 5, args.seed)?;
            vsv_select(&svm)
        }
        PolicyKind::StratifiedCluster => {
            let k = need_k()?;
            let km = kmeans(&need_data()?.features(), k, args.seed)?;
            stratified_select(&km.assignments, k, scores.as_ref(), &mut rng)?
        }
        PolicyKind::Kdpp => {
            let kernel = build_dpp_kernel(&need_data()?.features(), need_scores()?)?;
            sample_kdpp(&kernel, need_k()?, &mut rng)?
        }
    };
    emit(args.out, |buf| write_selection_csv(buf, &selected))
}

pub fn run(config_path: &Path, out: &Path, threads: Option<usize>) -> Result<(), CliError> {
    let loaded = config::load(config_path)?;
    let mut cfg = loaded.config;
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::input("--threads must be at least 1"));
        }
        cfg.threads = t;
    }
    info!("config hash {}", loaded.hash);
    let mut report = run_experiment(&cfg)?;
    report.config_hash = Some(loaded.hash);
    write_outputs(&report, out)?;
    print_summary(&report);
    println!("outputs written to {}", out.display());
    Ok(())
}

pub fn report(dir: &Path) -> Result<(), CliError> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let report: ExperimentReport = serde_json::from_str(&text)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    print_summary(&report);
    let budgets = &report.checkpoints;
    println!();
    print!("{:<44}", "mean accuracy at budget");
    for b in budgets {
        print!("{b:>8}");
    }
    println!();
    for p in &report.policies {
        print!("{:<44}", p.label);
        for b in budgets {
            match p.mean_curve.iter().find(|(x, _)| x == b) {
                Some((_, a)) => print!("{a:>8.4}"),
                None => print!("{:>8}", "-"),
            }
        }
        println!();
    }
    Ok(())
}

fn print_summary(report: &ExperimentReport) {
    println!(
        "config {}  seed {}  n_train {}  poisoned test {}  C {}  budget {}",
        report.config_hash.as_deref().unwrap_or("-"),
        report.config.seed,
        report.n_train,
        report.n_poisoned_test,
        report.train_c,
        report.budget
    );
    println!(
        "accuracy before augmentation {:.4}",
        report.initial_accuracy
    );
    println!(
        "{:<44}{:>6}{:>12}{:>10}  95% interval",
        "policy", "runs", "AUC", "std"
    );
    for p in &report.policies {
        let std = p
            .auc_std
            .map_or_else(|| "-".to_string(), |s| format!("{s:.3}"));
        let ci = p
            .auc_ci95
            .map_or_else(|| "-".to_string(), |(lo, hi)| format!("[{lo:.3}, {hi:.3}]"));
        println!(
            "{:<44}{:>6}{:>12.3}{:>10}  {ci}",
            p.label,
            p.aucs.len(),
            p.auc_mean,
            std
        );
    }
}
