use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use eigencoin::classify::{Assignment, ClassifierConfig, ClassifierModel, MethodConfig, MethodKind};
use eigencoin::dataset::{self, list_images, synthesize, Manifest, ManifestClass, SynthConfig};
use eigencoin::eval::{self, evaluate, weighted_precision, EvalReport, SweepRow};
use eigencoin::imaging::{extract_roi, GrayImage, PreprocessConfig};
use eigencoin::persist::{load_classifier, save_classifier};
use eigencoin::{Classifier64, Dataset64, Error};
use serde::Serialize;
use serde_json::json;

use crate::config::Resolved;
use crate::error::{CliError, CliResult};
use crate::Global;

/// Version of the report envelope written by every command.
pub const REPORT_FORMAT_VERSION: u32 = 1;

pub struct Context {
    pub out: PathBuf,
    pub strict: bool,
    pub resolved: Resolved,
    started: Instant,
}

impl Context {
    pub fn new(g: &Global, resolved: Resolved) -> CliResult<Self> {
        std::fs::create_dir_all(&g.out)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", g.out.display())))?;
        Ok(Context {
            out: g.out.clone(),
            strict: g.strict,
            resolved,
            started: Instant::now(),
        })
    }

    fn preprocess(&self) -> Option<PreprocessConfig> {
        self.resolved.config.preprocess()
    }

    fn classifier(&self) -> &ClassifierConfig {
        &self.resolved.config.classifier
    }

    /// Writes `payload` wrapped with the format version and resolved config.
    fn report<P: Serialize>(&self, command: &str, file: &str, payload: P) -> CliResult<PathBuf> {
        #[derive(Serialize)]
        struct Envelope<'a, P> {
            format_version: u32,
            command: &'a str,
            run_config: &'a Resolved,
            #[serde(flatten)]
            payload: P,
        }
        let env = Envelope {
            format_version: REPORT_FORMAT_VERSION,
            command,
            run_config: &self.resolved,
            payload,
        };
        let path = self.out.join(file);
        let mut text = serde_json::to_string_pretty(&env).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text)?;
        self.log(command)?;
        Ok(path)
    }

    /// Appends a timestamped line to the sidecar log; reports stay free of
    /// timestamps.
    fn log(&self, command: &str) -> CliResult<()> {
        use std::io::Write;
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.out.join("run.log"))?;
        writeln!(f, "{now} {command} {} ms", self.started.elapsed().as_millis())?;
        Ok(())
    }
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(e.to_string()))?;
    w.write_record(header).map_err(|e| CliError::Data(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reports name files without their directory so that they do not depend on
/// where a run writes.
fn file_name(p: &Path) -> String {
    p.file_name().unwrap_or(p.as_os_str()).to_string_lossy().into_owned()
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string(v).expect("JSON values serialize"));
}

fn load_dataset(ctx: &Context, manifest_path: &Path) -> CliResult<Dataset64> {
    let mut manifest = Manifest::from_path(manifest_path)?;
    let o = &ctx.resolved.config.dataset;
    if let Some(f) = o.fraction {
        manifest.fraction = f;
    }
    if let Some(s) = o.seed {
        manifest.seed = s;
    }
    let root = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    Ok(dataset::load(root, &manifest)?)
}

fn fit(ds: &Dataset64, cfg: &ClassifierConfig, pre: Option<PreprocessConfig>) -> CliResult<Classifier64> {
    ClassifierModel::fit(ds, cfg, pre).map_err(|e| match e {
        Error::InvalidParameter(msg) => {
            CliError::Usage(format!("{msg} (training set: {} images)", ds.train_items().len()))
        }
        other => other.into(),
    })
}

/// Checks the report against the dataset it was computed on.
fn check_report(report: &EvalReport, ds: &Dataset64) -> CliResult<()> {
    if report.scores.test_counts != ds.test_counts() {
        return Err(CliError::Internal(format!(
            "confusion row sums {:?} differ from test counts {:?}",
            report.scores.test_counts,
            ds.test_counts()
        )));
    }
    let wp = weighted_precision(&report.scores.rates, &report.scores.alphas)?;
    if (wp - report.scores.weighted_precision).abs() > 1e-9
        || report.scores.rates.iter().any(|r| !(0.0..=1.0).contains(r))
    {
        return Err(CliError::Internal("rates or weighted precision out of range".into()));
    }
    Ok(())
}

pub fn preprocess(ctx: &Context, input: &Path) -> CliResult<()> {
    let files = list_images(input)?;
    let pre = ctx.resolved.config.preprocess;
    let mut items = Vec::with_capacity(files.len());
    let mut failures = 0usize;
    for f in &files {
        let name = f.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let result = GrayImage::<f64>::open(f).and_then(|img| extract_roi(&img, &pre));
        match result {
            Ok(roi) => {
                let out_name = format!("{}.png", f.file_stem().unwrap_or_default().to_string_lossy());
                roi.save_png(&ctx.out.join(&out_name))?;
                items.push(json!({"source": name, "status": "ok", "output": out_name}));
            }
            Err(Error::Segmentation { stage }) => {
                failures += 1;
                items.push(json!({"source": name, "status": "segmentation_failure", "stage": stage}));
            }
            Err(e) => {
                failures += 1;
                items.push(json!({"source": name, "status": "load_failure", "error": e.to_string()}));
            }
        }
    }
    let summary = json!({
        "input": input.display().to_string(),
        "total": files.len(),
        "successes": files.len() - failures,
        "failures": failures,
        "items": items,
    });
    ctx.report("preprocess", "preprocess_summary.json", &summary)?;
    print_json(&json!({"total": files.len(), "successes": files.len() - failures, "failures": failures}));
    if ctx.strict && failures > 0 {
        return Err(CliError::Data(format!("{failures} image(s) failed preprocessing")));
    }
    Ok(())
}

pub fn train(ctx: &Context, manifest: &Path, model_path: Option<PathBuf>) -> CliResult<()> {
    let ds = load_dataset(ctx, manifest)?;
    let model = fit(&ds, ctx.classifier(), ctx.preprocess())?;
    let model_path = model_path.unwrap_or_else(|| ctx.out.join("model.ecm"));
    save_classifier(&model, &model_path)?;
    let mut summary = json!({
        "model": file_name(&model_path),
        "method": model.config().method.kind(),
        "classes": model.class_names(),
        "gallery_size": model.gallery().len(),
        "train_counts": ds.train_counts(),
        "feature_shape": model.feature_shape(),
    });
    if let Some(m) = model.manifold() {
        summary["k"] = json!(m.k());
        summary["rank"] = json!(m.rank());
        summary["energy_fraction"] = json!(m.energy_fraction());
    }
    ctx.report("train", "train_report.json", &summary)?;
    print_json(&summary);
    Ok(())
}

pub fn classify(ctx: &Context, model_path: &Path, images: &[PathBuf]) -> CliResult<()> {
    let model: Classifier64 = load_classifier(model_path)?;
    let mut ok = Vec::with_capacity(images.len());
    let mut load_errors = Vec::with_capacity(images.len());
    for p in images {
        match GrayImage::<f64>::open(p) {
            Ok(img) => {
                ok.push(img);
                load_errors.push(None);
            }
            Err(e) => load_errors.push(Some(e)),
        }
    }
    let mut preds = model.predict_batch(&ok).into_iter();
    let mut failures = 0usize;
    for (path, load_error) in images.iter().zip(load_errors) {
        let result = match load_error {
            None => preds.next().expect("one prediction per loaded image"),
            Some(e) => Err(e),
        };
        let line = match result {
            Ok(p) => {
                let (label, class_id) = match p.label {
                    Assignment::Class(c) => (json!(model.class_names()[c]), json!(c)),
                    Assignment::Rejected => (json!("REJECTED"), serde_json::Value::Null),
                };
                json!({
                    "image": path.display().to_string(),
                    "label": label,
                    "class_id": class_id,
                    "distance": p.distance,
                    "runner_up": p.runner_up,
                })
            }
            Err(e) => {
                failures += 1;
                let stage = match &e {
                    Error::Prediction { stage, .. } => *stage,
                    _ => "load",
                };
                json!({"image": path.display().to_string(), "error": e.to_string(), "stage": stage})
            }
        };
        print_json(&line);
    }
    ctx.log("classify")?;
    if ctx.strict && failures > 0 {
        return Err(CliError::Data(format!("{failures} image(s) could not be classified")));
    }
    Ok(())
}

fn confusion_rows(report: &EvalReport) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["true\\pred".to_string()];
    header.extend(report.class_names.iter().cloned());
    header.push("rejected".into());
    let cm = &report.scores.confusion;
    let rows = cm
        .counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = vec![report.class_names[i].clone()];
            r.extend(row.iter().map(usize::to_string));
            r.push(cm.rejected[i].to_string());
            r
        })
        .collect();
    (header, rows)
}

pub fn eval(ctx: &Context, model_path: &Path, manifest: &Path) -> CliResult<()> {
    let model: Classifier64 = load_classifier(model_path)?;
    let ds = load_dataset(ctx, manifest)?;
    if ds.class_names() != model.class_names() {
        return Err(CliError::Data(format!(
            "dataset classes {:?} do not match the model's {:?}",
            ds.class_names(),
            model.class_names()
        )));
    }
    let report = evaluate(&model, &ds, ctx.resolved.config.eval)?;
    check_report(&report, &ds)?;
    let (header, rows) = confusion_rows(&report);
    write_csv(&ctx.out.join("confusion.csv"), &header, &rows)?;
    let rate_rows: Vec<Vec<String>> = report
        .class_names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            vec![
                n.clone(),
                report.scores.test_counts[i].to_string(),
                report.scores.alphas[i].to_string(),
                report.scores.rates[i].to_string(),
            ]
        })
        .collect();
    write_csv(
        &ctx.out.join("rates.csv"),
        &["class", "test_count", "alpha", "rate"].map(String::from),
        &rate_rows,
    )?;
    ctx.report(
        "eval",
        "eval_report.json",
        json!({"model": file_name(model_path), "report": &report}),
    )?;
    print_json(&json!({
        "overall_accuracy": eval::pct(report.scores.overall_accuracy),
        "weighted_precision": eval::pct(report.scores.weighted_precision),
        "rates": report.scores.rates.iter().map(|&r| eval::pct(r)).collect::<Vec<_>>(),
    }));
    Ok(())
}

pub fn sweep(ctx: &Context, manifest: &Path, ks: &[usize]) -> CliResult<()> {
    if !matches!(ctx.classifier().method, MethodConfig::Eigencoin { .. }) {
        return Err(CliError::Usage("sweep needs classifier.method = eigencoin".into()));
    }
    let ds = load_dataset(ctx, manifest)?;
    let rows: Vec<SweepRow> = eval::sweep(&ds, ks, ctx.classifier(), ctx.preprocess(), ctx.resolved.config.eval)?;
    for w in rows.windows(2) {
        if w[1].mse_train > w[0].mse_train + 1e-12 {
            return Err(CliError::Internal(format!(
                "training MSE rose from k={} to k={}",
                w[0].k, w[1].k
            )));
        }
    }
    let mut header = vec!["K".to_string(), "acc_overall".to_string()];
    header.extend((1..=ds.class_count()).map(|i| format!("R_{i}")));
    header.extend(["weighted_precision".to_string(), "mse_train".to_string()]);
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.k.to_string(), r.overall_accuracy.to_string()];
            v.extend(r.rates.iter().map(f64::to_string));
            v.push(r.weighted_precision.to_string());
            v.push(r.mse_train.to_string());
            v
        })
        .collect();
    write_csv(&ctx.out.join("sweep.csv"), &header, &csv_rows)?;
    ctx.report(
        "sweep",
        "sweep_report.json",
        json!({"class_names": ds.class_names(), "rows": &rows}),
    )?;
    for r in &rows {
        print_json(&json!({
            "k": r.k,
            "overall_accuracy": eval::pct(r.overall_accuracy),
            "weighted_precision": eval::pct(r.weighted_precision),
            "mse_train": r.mse_train,
        }));
    }
    Ok(())
}

pub fn compare(ctx: &Context, manifest: &Path, methods: &[String]) -> CliResult<()> {
    let kinds = methods
        .iter()
        .map(|m| MethodKind::parse(m.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    let ds = load_dataset(ctx, manifest)?;
    let mut results = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let cfg = match ctx.resolved.config.compare.get(kind.name()) {
            Some(c) if c.method.kind() == kind => c.clone(),
            Some(_) => return Err(CliError::Usage(format!("compare.{kind} names a different method"))),
            None if ctx.classifier().method.kind() == kind => ctx.classifier().clone(),
            None => ClassifierConfig::new(kind.default_config()),
        };
        let model = fit(&ds, &cfg, ctx.preprocess())?;
        let report = evaluate(&model, &ds, ctx.resolved.config.eval)?;
        check_report(&report, &ds)?;
        results.push((kind, report));
    }
    let mut header = vec!["method".to_string()];
    header.extend(ds.class_names());
    header.extend(["weighted_precision".to_string(), "overall_accuracy".to_string()]);
    let full: Vec<Vec<String>> = results
        .iter()
        .map(|(k, r)| {
            let mut v = vec![k.name().to_string()];
            v.extend(r.scores.rates.iter().map(f64::to_string));
            v.push(r.scores.weighted_precision.to_string());
            v.push(r.scores.overall_accuracy.to_string());
            v
        })
        .collect();
    write_csv(&ctx.out.join("compare.csv"), &header, &full)?;

    let mut md = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for (k, r) in &results {
        let mut cells = vec![k.name().to_string()];
        cells.extend(r.scores.rates.iter().map(|&x| format!("{}%", eval::pct(x))));
        cells.push(format!("{}%", eval::pct(r.scores.weighted_precision)));
        cells.push(format!("{}%", eval::pct(r.scores.overall_accuracy)));
        md.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    std::fs::write(ctx.out.join("compare.md"), &md)?;
    let reports: Vec<_> = results.iter().map(|(k, r)| json!({"method": k, "report": r})).collect();
    ctx.report("compare", "compare_report.json", json!({"results": reports}))?;
    print!("{md}");
    Ok(())
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

pub fn synth(g: &Global, preset: Option<&str>, file: Option<&Path>) -> CliResult<()> {
    let mut cfg = match (preset, file) {
        (Some(name), None) => SynthConfig::preset(name)
            .map_err(|e| CliError::Usage(format!("{e}; available: {}", SynthConfig::preset_names().join(", "))))?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid synthetic config: {e}")))?
        }
        _ => return Err(CliError::Usage("synth needs --preset or --synth-config".into())),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    let ds: Dataset64 = synthesize(&cfg)?;
    std::fs::create_dir_all(&g.out)?;
    let mut classes = Vec::with_capacity(ds.class_count());
    for (ci, (class, &train)) in ds.classes().iter().zip(&ds.train_counts()).enumerate() {
        let dir = format!("{ci:02}_{}", slug(&class.name));
        std::fs::create_dir_all(g.out.join(&dir))?;
        for (img, source) in class.images.iter().zip(&class.sources) {
            img.save_png(&g.out.join(&dir).join(source))?;
        }
        classes.push(ManifestClass {
            name: class.name.clone(),
            dir: dir.into(),
            train_count: Some(train),
        });
    }
    let manifest = Manifest {
        classes,
        fraction: cfg.fraction,
        seed: cfg.seed,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    std::fs::write(g.out.join("manifest.json"), text)?;
    let mut text = serde_json::to_string_pretty(&cfg).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    std::fs::write(g.out.join("synth_config.json"), text)?;
    print_json(&json!({
        "name": cfg.name,
        "classes": ds.class_names(),
        "counts": ds.class_sizes(),
        "train_counts": ds.train_counts(),
        "manifest": g.out.join("manifest.json").display().to_string(),
    }));
    Ok(())
}
