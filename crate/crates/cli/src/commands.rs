use serde::Serialize;
use std::path::{Path, PathBuf};

use qresnet::dataio::{
    load_mnist, pca_fit, pca_transform, scale_features, stratified_indices, write_feature_cache,
    Dataset, Split, DATA_DIR_ENV, TRAIN_IMAGES,
};
use qresnet::experiments::{
    build_regression_model, expressibility_table, gradient_check, run_fit, FitReport, GradCheckRow,
};
use qresnet::qcnn::{run_mnist_experiment, QcnnReport};
use qresnet::residual::ResidualKind;
use qresnet::spectrum::{
    residual_spectrum, sample_coefficient_cloud, traditional_spectrum, FrequencyForm, GeneratorSpec,
};

use crate::config::{
    CloudConfig, ExpressibilityConfig, FitConfig, GradCheckConfig, MnistConfig, SpectrumConfig,
};
use crate::output::{num, slug, Manifest, OutDir};
use crate::{CliError, Common};

/// Writes the report and manifest once a command has produced its files.
struct Run {
    out: OutDir,
    manifest: Manifest,
}

impl Run {
    fn start<C: Serialize>(
        command: &str,
        common: &Common,
        config: &C,
        seeds: Vec<u64>,
    ) -> Result<Self, CliError> {
        let mut manifest = Manifest::new(command, config, common.config.as_deref());
        manifest.seeds = seeds;
        manifest.desk_scale = common.desk_scale;
        manifest.threads = common.threads;
        Ok(Run {
            out: OutDir::create(&common.out)?,
            manifest,
        })
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.out.json(name, value)?;
        self.manifest.outputs.push(name.into());
        Ok(())
    }

    fn csv(
        &mut self,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<(), CliError> {
        self.out.csv(name, header, rows)?;
        self.manifest.outputs.push(name.into());
        Ok(())
    }

    fn finish(self) -> Result<(), CliError> {
        self.out.json("manifest.json", &self.manifest)
    }
}

#[derive(Serialize)]
struct SpectrumReport {
    eigenvalues: Vec<f64>,
    layers: usize,
    residual: bool,
    frequencies: Vec<f64>,
    forms: Vec<FrequencyForm>,
    count: usize,
}

pub fn spectrum(common: &Common, cfg: SpectrumConfig) -> Result<(), CliError> {
    let gen = GeneratorSpec::new(cfg.eigenvalues.clone(), "cli")?;
    let s = if cfg.residual {
        residual_spectrum(&gen, cfg.layers)?
    } else {
        traditional_spectrum(&gen, cfg.layers)?
    };
    let report = SpectrumReport {
        eigenvalues: cfg.eigenvalues.clone(),
        layers: cfg.layers,
        residual: cfg.residual,
        count: s.frequencies.len(),
        frequencies: s.frequencies,
        forms: s.forms,
    };
    let mut run = Run::start("spectrum", common, &cfg, vec![])?;
    run.json("report.json", &report)?;
    run.csv(
        "spectrum.csv",
        &["frequency"],
        report.frequencies.iter().map(|&w| vec![num(w)]),
    )?;
    println!(
        "{}",
        serde_json::to_string(&report).map_err(|e| CliError::Runtime(e.to_string()))?
    );
    run.finish()
}

#[derive(Serialize)]
struct FitSummary {
    name: String,
    encoding: ResidualKind,
    target: String,
    layers: usize,
    best_mse: f64,
    median_mse: f64,
    best_seed: u64,
}

#[derive(Serialize)]
struct FitCommandReport {
    name: String,
    summary: Vec<FitSummary>,
    experiments: Vec<FitReport>,
}

pub fn fit(common: &Common, mut cfg: FitConfig) -> Result<(), CliError> {
    if cfg.experiments.is_empty() {
        return Err(CliError::Validation("config lists no experiments".into()));
    }
    if let Some(seed) = common.seed {
        cfg.experiments.iter_mut().for_each(|e| e.train.seed = seed);
    }
    for e in &cfg.experiments {
        e.validate()?;
    }
    let seeds = cfg
        .experiments
        .iter()
        .flat_map(|e| (0..e.repetitions as u64).map(move |r| e.train.seed + r))
        .collect();
    let mut run = Run::start("fit", common, &cfg, seeds)?;
    let mut reports = Vec::new();
    for e in &cfg.experiments {
        eprintln!(
            "fit {}: {} encoding, {} layer(s)",
            e.name,
            e.encoding.name(),
            e.layers
        );
        let r = run_fit(e)?;
        eprintln!(
            "  best MSE {:.3e} (seed {}), median {:.3e}",
            r.best_mse, r.best_seed, r.median_mse
        );
        let s = slug(&r.name);
        run.csv(
            &format!("{s}_curve.csv"),
            &["x", "target", "prediction"],
            r.curve
                .iter()
                .map(|p| vec![num(p.x), num(p.target), num(p.prediction)]),
        )?;
        run.csv(
            &format!("{s}_loss.csv"),
            &["step", "loss"],
            r.loss_history
                .iter()
                .enumerate()
                .map(|(i, l)| vec![(i + 1).to_string(), num(*l)]),
        )?;
        run.csv(
            &format!("{s}_coefficients.csv"),
            &[
                "frequency",
                "target_re",
                "target_im",
                "fitted_re",
                "fitted_im",
            ],
            r.coefficients.iter().map(|c| {
                vec![
                    num(c.frequency),
                    num(c.target.re),
                    num(c.target.im),
                    num(c.fitted.re),
                    num(c.fitted.im),
                ]
            }),
        )?;
        reports.push(r);
    }
    let report = FitCommandReport {
        name: cfg.name.clone(),
        summary: reports
            .iter()
            .map(|r| FitSummary {
                name: r.name.clone(),
                encoding: r.encoding,
                target: r.target.clone(),
                layers: r.layers,
                best_mse: r.best_mse,
                median_mse: r.median_mse,
                best_seed: r.best_seed,
            })
            .collect(),
        experiments: reports,
    };
    run.json("report.json", &report)?;
    run.finish()
}

#[derive(Serialize)]
struct CloudRow {
    encoding: ResidualKind,
    frequency: f64,
    mean_re: f64,
    mean_im: f64,
    var_re: f64,
    var_im: f64,
    max_modulus: f64,
}

#[derive(Serialize)]
struct CloudReport {
    name: String,
    samples: usize,
    seed: u64,
    rows: Vec<CloudRow>,
}

fn mean_var(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let m = v.clone().sum::<f64>() / n;
    (m, v.map(|x| (x - m).powi(2)).sum::<f64>() / n)
}

pub fn coeff_cloud(common: &Common, mut cfg: CloudConfig) -> Result<(), CliError> {
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let mut run = Run::start("coeff-cloud", common, &cfg, vec![cfg.seed])?;
    let mut rows = Vec::new();
    for &kind in &cfg.encodings {
        let model = build_regression_model(kind, cfg.layers, cfg.layout)?;
        let cloud =
            sample_coefficient_cloud(&model, cfg.samples, cfg.seed, Some(&cfg.frequencies))?;
        let mut lines = Vec::new();
        for (w, samples) in cloud.frequencies.iter().zip(&cloud.samples) {
            let (mean_re, var_re) = mean_var(samples.iter().map(|c| c.re));
            let (mean_im, var_im) = mean_var(samples.iter().map(|c| c.im));
            rows.push(CloudRow {
                encoding: kind,
                frequency: *w,
                mean_re,
                mean_im,
                var_re,
                var_im,
                max_modulus: samples.iter().map(|c| c.norm()).fold(0.0, f64::max),
            });
            for (s, c) in samples.iter().enumerate() {
                lines.push(vec![s.to_string(), num(*w), num(c.re), num(c.im)]);
            }
        }
        run.csv(
            &format!("cloud_{}.csv", kind.name()),
            &["sample", "frequency", "re", "im"],
            lines,
        )?;
    }
    for r in &rows {
        eprintln!(
            "{:<11} w={:<4} Var(Re)={:.4e} Var(Im)={:.4e} max|c|={:.3e}",
            r.encoding.name(),
            r.frequency,
            r.var_re,
            r.var_im,
            r.max_modulus
        );
    }
    run.json(
        "report.json",
        &CloudReport {
            name: cfg.name.clone(),
            samples: cfg.samples,
            seed: cfg.seed,
            rows,
        },
    )?;
    run.finish()
}

pub fn expressibility(common: &Common, mut cfg: ExpressibilityConfig) -> Result<(), CliError> {
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let mut run = Run::start("expressibility", common, &cfg, vec![cfg.seed])?;
    let rows = expressibility_table(&cfg.encodings, cfg.pairs, cfg.seed, cfg.x, cfg.bins)?;
    for r in &rows {
        eprintln!("{:<11} KL = {:.4}", r.encoding.name(), r.kl);
    }
    run.csv(
        "expressibility.csv",
        &["encoding", "kl", "pairs", "bins"],
        rows.iter().map(|r| {
            vec![
                r.encoding.name().into(),
                num(r.kl),
                r.n_pairs.to_string(),
                r.bins.to_string(),
            ]
        }),
    )?;
    run.json("report.json", &rows)?;
    run.finish()
}

#[derive(Serialize)]
struct MnistReport {
    name: String,
    data_dir: String,
    pca_components: usize,
    explained_variance: Vec<f64>,
    variants: Vec<(String, QcnnReport)>,
}

fn data_dir(common: &Common, cfg: &MnistConfig) -> Result<PathBuf, CliError> {
    let dir = common
        .data_dir
        .clone()
        .or_else(|| cfg.data_dir.clone())
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| {
            CliError::MissingData(format!(
                "no MNIST directory: pass --data-dir or set {DATA_DIR_ENV}"
            ))
        })?;
    if !dir.join(TRAIN_IMAGES).is_file() {
        return Err(CliError::MissingData(format!(
            "MNIST files not found in {}",
            dir.display()
        )));
    }
    Ok(dir)
}

fn reduce(dir: &Path, cfg: &MnistConfig) -> Result<(Dataset, Dataset, Vec<f64>), CliError> {
    let (train, test) = load_mnist(dir, &cfg.variants[0].qcnn.classes)?;
    eprintln!(
        "loaded {} train and {} test images",
        train.len(),
        test.len()
    );
    let pca = pca_fit(&train.features, cfg.pca_components)?;
    let (tr, te, _) = scale_features(
        &pca_transform(&pca, &train.features)?,
        &pca_transform(&pca, &test.features)?,
    )?;
    let wrap = |features, labels, split| Dataset {
        features,
        labels,
        split,
    };
    Ok((
        wrap(tr, train.labels, Split::Train),
        wrap(te, test.labels, Split::Test),
        pca.explained_variance,
    ))
}

pub fn mnist(common: &Common, mut cfg: MnistConfig) -> Result<(), CliError> {
    if cfg.variants.is_empty() {
        return Err(CliError::Validation("config lists no variants".into()));
    }
    for v in &mut cfg.variants {
        if let Some(seed) = common.seed {
            v.qcnn.seed = seed;
        }
        if common.desk_scale {
            v.qcnn.train_subset = Some(2000);
            v.qcnn.repetitions = 5;
        }
        v.qcnn.validate()?;
    }
    if cfg
        .variants
        .iter()
        .any(|v| v.qcnn.classes != cfg.variants[0].qcnn.classes)
    {
        return Err(CliError::Validation(
            "all variants must use the same classes".into(),
        ));
    }
    let dir = data_dir(common, &cfg)?;
    let seeds = cfg
        .variants
        .iter()
        .flat_map(|v| (0..v.qcnn.repetitions as u64).map(move |r| v.qcnn.seed + r))
        .collect();
    let mut run = Run::start("mnist", common, &cfg, seeds)?;
    let (train, test, explained_variance) = reduce(&dir, &cfg)?;
    for (name, set) in [
        ("features_train.qrnf", &train),
        ("features_test.qrnf", &test),
    ] {
        write_feature_cache(&run.out.path(name), &set.features, &set.labels)?;
        run.manifest.outputs.push(name.into());
    }
    let mut variants = Vec::new();
    for v in &cfg.variants {
        let subset = match v.qcnn.train_subset {
            Some(n) => train.subset(&stratified_indices(&train.labels, n, v.qcnn.subset_seed)?),
            None => train.clone(),
        };
        eprintln!(
            "{}: training on {} samples, {} repetitions",
            v.name,
            subset.len(),
            v.qcnn.repetitions
        );
        let r = run_mnist_experiment(&v.qcnn, &subset, &test)?;
        eprintln!(
            "  mean train accuracy {:.4}, mean test accuracy {:.4}",
            r.mean_train_accuracy, r.mean_test_accuracy
        );
        let s = slug(&v.name);
        let mut header = vec!["step".to_string(), "mean_cost".to_string()];
        header.extend(r.runs.iter().map(|run| format!("seed_{}", run.seed)));
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        run.csv(
            &format!("{s}_cost.csv"),
            &header_refs,
            r.mean_cost_curve.iter().enumerate().map(|(i, m)| {
                let mut row = vec![(i + 1).to_string(), num(*m)];
                row.extend(r.runs.iter().map(|run| num(run.cost_curve[i])));
                row
            }),
        )?;
        run.csv(
            &format!("{s}_accuracy.csv"),
            &["seed", "train_accuracy", "test_accuracy"],
            r.runs.iter().map(|run| {
                vec![
                    run.seed.to_string(),
                    num(run.train_accuracy),
                    num(run.test_accuracy),
                ]
            }),
        )?;
        variants.push((v.name.clone(), r));
    }
    run.json(
        "report.json",
        &MnistReport {
            name: cfg.name.clone(),
            data_dir: dir.display().to_string(),
            pca_components: cfg.pca_components,
            explained_variance,
            variants,
        },
    )?;
    run.finish()
}

#[derive(Serialize)]
struct GradCheckReport {
    seed: u64,
    draws: usize,
    tolerance: f64,
    max_deviation: f64,
    pass: bool,
    models: Vec<GradCheckRow>,
}

/// Returns whether every deviation is within tolerance.
pub fn gradcheck(common: &Common, mut cfg: GradCheckConfig) -> Result<bool, CliError> {
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if cfg.draws == 0 {
        return Err(CliError::Validation("draws must be at least 1".into()));
    }
    let mut run = Run::start("gradcheck", common, &cfg, vec![cfg.seed])?;
    let rows = gradient_check(cfg.seed, cfg.draws)?;
    let max_deviation = rows
        .iter()
        .map(|r| r.max_shift_deviation.max(r.max_adjoint_deviation))
        .fold(0.0, f64::max);
    let max_shift = rows
        .iter()
        .map(|r| r.max_shift_deviation)
        .fold(0.0, f64::max);
    let pass = max_deviation <= cfg.tolerance;
    println!("max |parameter-shift - finite-diff| = {max_shift:.3e}");
    println!(
        "max |adjoint - finite-diff| = {:.3e}",
        rows.iter()
            .map(|r| r.max_adjoint_deviation)
            .fold(0.0, f64::max)
    );
    println!(
        "{} (tolerance {:e})",
        if pass { "ok" } else { "FAILED" },
        cfg.tolerance
    );
    run.json(
        "report.json",
        &GradCheckReport {
            seed: cfg.seed,
            draws: cfg.draws,
            tolerance: cfg.tolerance,
            max_deviation,
            pass,
            models: rows,
        },
    )?;
    run.finish()?;
    Ok(pass)
}
