use std::fs;
use std::path::{Path, PathBuf};

use decnn::data_io::{
    export_decoding_grid, load_checkpoint, load_idx, load_mnist_dir, make_biased_synthetic_with, make_biased_synthetic_with_cues,
    save_checkpoint, Checkpoint, Report,
};
use decnn::dataset::{LabeledDataset, Split};
use decnn::metrics::{accuracy, calibration, detection_auc, group_report};
use decnn::robustness::{corrupt_dataset, CorruptionKind, fgsm, run_ood_experiment, Corruption};
use decnn::training::{predict_proba_dataset, train_pretrained, TrainContext, Trainer};
use decnn::uncertainty::{uncertainty, EnsembleSampler, Models, SamplerKind};
use decnn::{Error, ModelBundle, PretrainedModel, Result, Tensor};

use crate::config::{DatasetKind, Experiment, OodSource, PretrainTarget, RunConfig};
use crate::Common;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.log";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

fn requirement(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// Loads `--config`, falling back to the config echoed in `checkpoint`, then defaults.
fn resolve_config(common: &Common, checkpoint: Option<&Checkpoint>) -> Result<RunConfig> {
    let mut cfg = match (&common.config, checkpoint) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(ck)) if !ck.config_json.is_empty() => RunConfig::parse(&ck.config_json)?,
        _ => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.eval.sampler_seed = seed;
    }
    if cfg.data.dataset == DatasetKind::Mnist {
        cfg.data.root = Some(cfg.data_root()?);
    }
    if common.threads > 1 {
        eprintln!("note: --threads {} requested; running single-threaded", common.threads);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_resolved(cfg: &RunConfig, out: &Path) -> Result<()> {
    let path = out.join(RESOLVED_CONFIG_FILE);
    fs::write(&path, cfg.to_json() + "\n").map_err(|e| Error::Io { path, source: e })
}

struct Loaded {
    train: LabeledDataset,
    test: LabeledDataset,
    /// Cue side of each training example (synthetic data only).
    train_cues: Option<Vec<usize>>,
}

/// Training and test sets; the held-out class, if any, is removed from training only.
fn load_data(cfg: &RunConfig) -> Result<Loaded> {
    let d = &cfg.data;
    let (mut train, mut test, mut cues) = match d.dataset {
        DatasetKind::Mnist => {
            let dir = cfg.data_root()?.join("mnist");
            (load_mnist_dir(&dir, Split::Train)?, load_mnist_dir(&dir, Split::Test)?, None)
        }
        DatasetKind::Synthetic => {
            let (train, cues) = make_biased_synthetic_with_cues(d.synthetic_train, d.data_seed, &d.synthetic)?;
            let test = make_biased_synthetic_with(d.synthetic_test, d.data_seed.wrapping_add(1), &d.synthetic)?;
            (train, test, Some(cues))
        }
    };
    if let Some(n) = d.train_examples {
        train = train.head(n)?;
        cues.iter_mut().for_each(|c| c.truncate(n));
    }
    if let Some(n) = d.test_examples {
        test = test.head(n)?;
    }
    if let Some(c) = d.hold_out_class {
        if let Some(cs) = cues.as_mut() {
            *cs = cs.iter().zip(&train.labels).filter(|(_, &l)| l != c).map(|(&v, _)| v).collect();
        }
        train = train.filter_labels(|l| l != c)?;
    }
    let arch = &cfg.train.arch;
    if train.pixels() != arch.input_dim {
        return Err(requirement(
            "train.arch.input_dim",
            format!("dataset has {} pixels per image", train.pixels()),
        ));
    }
    if train.classes > arch.classes {
        return Err(requirement(
            "train.arch.classes",
            format!("dataset has {} classes", train.classes),
        ));
    }
    train.classes = arch.classes;
    test.classes = arch.classes;
    Ok(Loaded {
        train,
        test,
        train_cues: cues,
    })
}

fn pretrain(cfg: &RunConfig, data: &Loaded) -> Result<PretrainedModel> {
    let train = &data.train;
    let p = &cfg.pretrained;
    let (targets, classes) = match p.target {
        PretrainTarget::Labels => (train.labels.clone(), train.classes),
        PretrainTarget::Protected => {
            let ids = train.protected_ids.clone().ok_or_else(|| {
                requirement(
                    "pretrained.target",
                    "protected targets need a dataset with group ids (data.dataset = synthetic)",
                )
            })?;
            let k = ids.iter().max().map_or(2, |&m| (m + 1).max(2));
            (ids, k)
        }
        PretrainTarget::Cue => {
            let cues = data.train_cues.clone().ok_or_else(|| {
                requirement("pretrained.target", "cue targets need data.dataset = synthetic")
            })?;
            (cues, 2)
        }
    };
    train_pretrained(&train.images, &targets, classes, &p.config)
}

pub fn train(common: &Common) -> Result<()> {
    let cfg = resolve_config(common, None)?;
    create_dir(&common.out)?;
    write_resolved(&cfg, &common.out)?;
    let loaded = load_data(&cfg)?;
    let pretrained = match cfg.train.objective {
        k if k.needs_pretrained() => Some(pretrain(&cfg, &loaded)?),
        _ => None,
    };
    let ctx = TrainContext {
        eval: Some(&loaded.test),
        pretrained: pretrained.as_ref(),
    };
    let mut trainer = Trainer::new(cfg.train.clone())?;
    let mut log = Report::new(
        "epochs",
        &["epoch", "train_loss", "ce_root", "recon", "aux", "eval_accuracy"],
    )?;
    while trainer.epochs_done < cfg.train.epochs {
        let r = trainer.run_epoch(&loaded.train, &ctx)?;
        let aux = r.aux.map_or("none".to_string(), |a| a.to_string());
        let acc = r.eval_accuracy.map_or("none".to_string(), |a| a.to_string());
        log.push(&[&r.epoch, &r.train_loss, &r.ce_root, &r.recon, &aux, &acc])?;
        eprintln!("epoch {} loss {:.5} test accuracy {acc}", r.epoch, r.train_loss);
    }
    log.write(common.out.join(METRICS_FILE))?;
    let rng = trainer.rng_state();
    let ck = Checkpoint {
        epochs_done: trainer.epochs_done as u64,
        adam: Some(trainer.adam),
        rng: Some(rng),
        config_json: cfg.to_json(),
        bundle: trainer.bundle,
    };
    save_checkpoint(&ck, common.out.join(CHECKPOINT_FILE))
}

pub fn probe(common: &Common, checkpoint: &Path, n: Option<usize>) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let cfg = resolve_config(common, Some(&ck))?;
    let n = n.unwrap_or(cfg.eval.probe_examples);
    create_dir(&common.out)?;
    write_resolved(&cfg, &common.out)?;
    let test = load_data(&cfg)?.test;
    let bundle = &ck.bundle;
    let pred = predict_proba_dataset(bundle, &test)?.argmax_rows();
    let mut correct = Vec::new();
    let mut wrong = Vec::new();
    for (i, (&p, &y)) in pred.iter().zip(&test.labels).enumerate() {
        let bucket = if p == y { &mut correct } else { &mut wrong };
        if bucket.len() < n {
            bucket.push(i);
        }
    }
    for (name, found) in [("correct", correct.len()), ("misclassified", wrong.len())] {
        if found < n {
            eprintln!("warning: only {found} {name} examples available (asked for {n})");
        }
    }
    let mut report = Report::new("probe", &["example", "label", "prediction", "file"])?;
    let tagged: Vec<(String, usize)> = correct
        .iter()
        .map(|&i| (format!("correct_{i}"), i))
        .chain(wrong.iter().map(|&i| (format!("wrong_{i}"), i)))
        .collect();
    let examples: Vec<(String, &[f64])> =
        tagged.iter().map(|(t, i)| (t.clone(), test.image(*i))).collect();
    let files = export_decoding_grid(bundle, &examples, test.height, test.width, common.out.join(""))?;
    for ((_, i), f) in tagged.iter().zip(&files) {
        let file = f.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        report.push(&[i, &test.labels[*i], &pred[*i], &file])?;
    }
    report.write(common.out.join("probe.log"))
}

/// Argmax of the member-averaged probabilities.
fn reference_predictions(models: &[ModelBundle], data: &LabeledDataset) -> Result<Vec<usize>> {
    let mut mean = predict_proba_dataset(&models[0], data)?;
    for m in &models[1..] {
        mean = mean.zip_map(&predict_proba_dataset(m, data)?, |a, b| a + b)?;
    }
    Ok(mean.argmax_rows())
}

fn sampler_for(cfg: &RunConfig, members: usize) -> Result<EnsembleSampler> {
    let e = &cfg.eval;
    if e.sampler == SamplerKind::EnsembleMembers && members < 2 {
        return Err(requirement("eval.sampler", "ensemble_members needs two or more --checkpoint"));
    }
    if e.sampler != SamplerKind::EnsembleMembers && members > 1 {
        return Err(requirement(
            "eval.sampler",
            "several --checkpoint values need sampler = ensemble_members",
        ));
    }
    Ok(EnsembleSampler {
        kind: e.sampler,
        samples: if e.sampler == SamplerKind::EnsembleMembers { members } else { e.samples },
        seed: e.sampler_seed,
        depth: cfg.sampler_depth(),
        dropout_p: e.dropout_p,
    })
}

fn models_of(bundles: &[ModelBundle]) -> Models<'_> {
    match bundles {
        [one] => Models::Single(one),
        many => Models::Ensemble(many),
    }
}

fn eval_subset(cfg: &RunConfig, test: LabeledDataset) -> Result<LabeledDataset> {
    match cfg.eval.eval_examples {
        Some(n) => test.head(n),
        None => Ok(test),
    }
}

pub fn eval(common: &Common, checkpoints: &[PathBuf], experiment: Option<Experiment>) -> Result<()> {
    let cks = checkpoints.iter().map(load_checkpoint).collect::<Result<Vec<_>>>()?;
    let cfg = resolve_config(common, cks.first())?;
    let experiment = experiment
        .or(cfg.eval.experiment)
        .ok_or_else(|| requirement("eval.experiment", "no experiment selected (use --experiment)"))?;
    let bundles: Vec<ModelBundle> = cks.into_iter().map(|c| c.bundle).collect();
    if bundles.iter().any(|b| b.arch != bundles[0].arch) {
        return Err(Error::Contract("checkpoints disagree on architecture".into()));
    }
    create_dir(&common.out)?;
    write_resolved(&cfg, &common.out)?;
    let test = load_data(&cfg)?.test;
    let names: Vec<String> = checkpoints.iter().map(|p| model_name(p)).collect();
    let report = match experiment {
        Experiment::Accuracy => eval_accuracy(&bundles, &names, &test)?,
        Experiment::Calibration => eval_calibration(&cfg, &bundles, &names, &test, &common.out)?,
        Experiment::Misclassification => eval_misclassification(&cfg, &bundles, test, &common.out)?,
        Experiment::Ood => eval_ood(&cfg, &bundles, test)?,
        Experiment::Fairness => eval_fairness(&cfg, &bundles, &names, &test)?,
    };
    report.write(common.out.join(format!("{}.log", experiment.name())))
}

/// Report token for a checkpoint path, with whitespace and `=` replaced.
fn model_name(path: &Path) -> String {
    let raw = path.display().to_string();
    raw.chars()
        .map(|c| if c.is_whitespace() || c == '=' { '_' } else { c })
        .collect()
}

fn eval_accuracy(bundles: &[ModelBundle], names: &[String], test: &LabeledDataset) -> Result<Report> {
    let mut r = Report::new("accuracy", &["model", "examples", "accuracy"])?;
    for (b, name) in bundles.iter().zip(names) {
        let pred = reference_predictions(std::slice::from_ref(b), test)?;
        r.push(&[name, &test.len(), &accuracy(&pred, &test.labels)?])?;
    }
    if bundles.len() > 1 {
        let pred = reference_predictions(bundles, test)?;
        r.push(&[&"ensemble", &test.len(), &accuracy(&pred, &test.labels)?])?;
    }
    Ok(r)
}

fn eval_calibration(
    cfg: &RunConfig,
    bundles: &[ModelBundle],
    names: &[String],
    test: &LabeledDataset,
    out: &Path,
) -> Result<Report> {
    let mut r = Report::new("calibration", &["model", "examples", "accuracy", "ece_percent"])?;
    let mut bins = Report::new("calibration_bins", &["model", "bin", "count", "confidence", "accuracy"])?;
    for (b, name) in bundles.iter().zip(names) {
        let p = predict_proba_dataset(b, test)?;
        let pred = p.argmax_rows();
        let conf: Vec<f64> = (0..test.len())
            .map(|i| p.row(i).iter().copied().fold(0.0, f64::max))
            .collect();
        let ok: Vec<bool> = pred.iter().zip(&test.labels).map(|(a, y)| a == y).collect();
        let cal = calibration(&conf, &ok, cfg.eval.ece_bins)?;
        r.push(&[name, &test.len(), &accuracy(&pred, &test.labels)?, &cal.ece_percent()])?;
        for (i, bin) in cal.bins.iter().enumerate() {
            let (c, a) = match bin.count {
                0 => (0.0, 0.0),
                n => (bin.confidence_sum / n as f64, bin.accuracy_sum / n as f64),
            };
            bins.push(&[name, &i, &bin.count, &c, &a])?;
        }
    }
    bins.write(out.join("calibration_bins.log"))?;
    Ok(r)
}

fn eval_misclassification(
    cfg: &RunConfig,
    bundles: &[ModelBundle],
    test: LabeledDataset,
    out: &Path,
) -> Result<Report> {
    let test = eval_subset(cfg, test)?;
    let sampler = sampler_for(cfg, bundles.len())?;
    let u = uncertainty(models_of(bundles), &test.images, &sampler)?;
    // The sampled ensemble's prediction is its majority vote; the single forward
    // pass is reported alongside for comparison.
    let pred = u.majorities();
    let wrong: Vec<bool> = pred.iter().zip(&test.labels).map(|(p, y)| p != y).collect();
    let auc = detection_auc(&u.entropies(), &wrong)?;
    let root = reference_predictions(bundles, &test)?;
    let root_wrong: Vec<bool> = root.iter().zip(&test.labels).map(|(p, y)| p != y).collect();
    let root_auc = detection_auc(&u.entropies(), &root_wrong)?;
    u.to_report(&test.labels)?.write(out.join("uncertainty.log"))?;
    let mut r = Report::new(
        "misclassification",
        &["examples", "errors", "accuracy", "auc", "root_accuracy", "root_auc"],
    )?;
    let errors = wrong.iter().filter(|&&w| w).count();
    r.push(&[
        &test.len(),
        &errors,
        &accuracy(&pred, &test.labels)?,
        &auc,
        &accuracy(&root, &test.labels)?,
        &root_auc,
    ])?;
    Ok(r)
}

fn eval_ood(cfg: &RunConfig, bundles: &[ModelBundle], test: LabeledDataset) -> Result<Report> {
    let source = cfg
        .eval
        .ood_source
        .ok_or_else(|| requirement("eval.ood_source", "the ood experiment needs an outlier source"))?;
    let sampler = sampler_for(cfg, bundles.len())?;
    let mut inliers = test;
    let mut outlier_sets: Vec<(String, Tensor)> = Vec::new();
    match source {
        OodSource::Fashion => {
            if cfg.data.dataset != DatasetKind::Mnist {
                return Err(requirement("eval.ood_source", "fashion outliers need data.dataset = mnist"));
            }
            let dir = cfg.data_root()?.join("fashion");
            let images = dir.join("t10k-images-idx3-ubyte");
            let labels = dir.join("t10k-labels-idx1-ubyte");
            if !images.is_file() || !labels.is_file() {
                return Err(requirement(
                    "data.root",
                    format!("fashion outliers need {} and {}", images.display(), labels.display()),
                ));
            }
            inliers = eval_subset(cfg, inliers)?;
            let fashion = eval_subset(cfg, load_idx(images, labels)?)?;
            outlier_sets.push(("fashion".into(), fashion.images));
        }
        OodSource::Fgsm => {
            inliers = eval_subset(cfg, inliers)?;
            let adv = fgsm(&bundles[0], &inliers.images, &inliers.labels, cfg.eval.fgsm_epsilon)?;
            outlier_sets.push((format!("fgsm_eps{}", cfg.eval.fgsm_epsilon), adv));
        }
        OodSource::Heldout => {
            let c = cfg.data.hold_out_class.ok_or_else(|| {
                requirement("data.hold_out_class", "heldout outliers need a held-out class")
            })?;
            let outliers = eval_subset(cfg, inliers.filter_labels(|l| l == c)?)?;
            inliers = eval_subset(cfg, inliers.filter_labels(|l| l != c)?)?;
            outlier_sets.push((format!("class{c}"), outliers.images));
        }
        OodSource::Corruptions => {
            if cfg.eval.corruptions.is_empty() {
                return Err(requirement("eval.corruptions", "corruption outliers need at least one corruption"));
            }
            inliers = eval_subset(cfg, inliers)?;
            for kind in &cfg.eval.corruptions {
                let c = Corruption::new(kind.clone(), cfg.eval.corruption_seed);
                outlier_sets.push((corruption_label(kind), corrupt_dataset(&inliers, &c)?.images));
            }
        }
    }
    let mut r = Report::new("ood", &["outliers", "inlier_count", "outlier_count", "auc"])?;
    for (name, outliers) in outlier_sets {
        let e = run_ood_experiment(models_of(bundles), &inliers.images, &outliers, &sampler)?;
        r.push(&[&name, &inliers.len(), &outliers.rows(), &e.auc])?;
    }
    Ok(r)
}

/// `rotate_degrees45`-style token built from a corruption's parameters.
fn corruption_label(kind: &CorruptionKind) -> String {
    let mut label = kind.name().to_string();
    if let Ok(serde_json::Value::Object(fields)) = serde_json::to_value(kind) {
        for (k, v) in fields.iter().filter(|(k, _)| k.as_str() != "kind") {
            label.push_str(&format!("_{k}{v}"));
        }
    }
    label
}

fn eval_fairness(
    cfg: &RunConfig,
    bundles: &[ModelBundle],
    names: &[String],
    test: &LabeledDataset,
) -> Result<Report> {
    let groups = test.protected_ids.as_ref().ok_or_else(|| {
        requirement("data.dataset", "the fairness experiment needs group ids (data.dataset = synthetic)")
    })?;
    if test.classes != 2 {
        return Err(requirement("train.arch.classes", "the fairness experiment needs a binary task"));
    }
    let labels: Vec<bool> = test.labels.iter().map(|&y| y == 1).collect();
    let mut r = Report::new("fairness", &["model", "group", "count", "f1", "ap", "ece_percent"])?;
    for (b, name) in bundles.iter().zip(names) {
        let p = predict_proba_dataset(b, test)?;
        let scores: Vec<f64> = (0..test.len()).map(|i| p.row(i)[1]).collect();
        let g = group_report(&scores, &labels, groups, cfg.eval.ece_bins)?;
        for m in &g.groups {
            r.push(&[name, &m.group, &m.count, &m.f1, &m.ap, &m.ece])?;
        }
        r.push(&[name, &"gap", &test.len(), &g.f1_gap, &g.ap_gap, &g.ece_gap])?;
    }
    Ok(r)
}
