use std::fs;
use std::path::{Path, PathBuf};

use caudg_core::data::{
    import_with_summary, load_cwd, lodo_partition, save_cwd, source_target_partition, synth_generate, DatasetKind,
    Setting, SynthConfig, WindowedDataset,
};
use caudg_core::pipeline::outputs::{export_embeddings, find_runs, load_model, run_dir, write_run, MODEL_DIR};
use caudg_core::pipeline::{ablate, lodo_run, train, RunResult, TrainConfig, TrainedModel, Variant};
use serde::Serialize;

use crate::args::{
    AblateArgs, Command, EvaluateArgs, ExportArgs, ImportArgs, LodoArgs, ReportArgs, SynthArgs, TrainArgs,
};
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::report;
use crate::settings::{check_sweep, env_seed, resolve, resolve_base, ConfigFile};

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Import(a) => import(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_one(a),
        Command::Lodo(a) => lodo(a),
        Command::Ablate(a) => ablation(a),
        Command::Evaluate(a) => evaluate(a),
        Command::ExportEmbeddings(a) => export(a),
        Command::Report(a) => report_runs(a),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut json = serde_json::to_vec_pretty(value).map_err(caudg_core::Error::from)?;
    json.push(b'\n');
    write_file(path, &json)
}

fn check_target(ds: &WindowedDataset, t: usize) -> Result<(), CliError> {
    if t >= ds.num_domains() {
        return Err(CliError::Usage(format!(
            "target {t} out of range: the dataset has {} domains ({})",
            ds.num_domains(),
            ds.meta.domain_names.join(", ")
        )));
    }
    Ok(())
}

fn domain_name(ds: &WindowedDataset, t: usize) -> &str {
    ds.meta.domain_names.get(t).map(String::as_str).unwrap_or("?")
}

/// The one-line result summary. Values print at full precision so they
/// match `results.json` exactly.
fn summary_line(ds: &WindowedDataset, r: &RunResult, dir: &Path) -> String {
    format!(
        "variant={} target={} ({}) seed={} acc={} macro_f1={} best_epoch={} run={}",
        r.variant,
        r.target,
        domain_name(ds, r.target),
        r.seed,
        r.test.accuracy,
        r.test.macro_f1,
        r.best_epoch,
        dir.display()
    )
}

#[derive(Serialize)]
struct ImportParams {
    dataset: DatasetKind,
    setting: Setting,
    raw_dir: PathBuf,
}

fn import(a: ImportArgs) -> Result<(), CliError> {
    let dataset = match (a.dataset, a.setting) {
        (Some(d), _) => d,
        (None, Setting::CrossDataset) => DatasetKind::Ucihar,
        (None, s) => return Err(CliError::Usage(format!("--dataset is required for {s}"))),
    };
    let (ds, summary) = import_with_summary(&a.raw_dir, dataset, a.setting)?;
    save_cwd(&ds, &a.out)?;
    let params = ImportParams {
        dataset,
        setting: a.setting,
        raw_dir: a.raw_dir.clone(),
    };
    let mut m = RunManifest::new("import", &params, None)?;
    m.inputs.push(a.raw_dir);
    m.outputs.push(a.out.clone());
    m.write(&a.out)?;
    println!(
        "{} windows of {}x{} from {} recordings ({} shorter than a window), {} classes -> {}",
        ds.len(),
        ds.meta.channels,
        ds.meta.width,
        summary.recordings,
        summary.too_short,
        ds.num_classes(),
        a.out.display()
    );
    for (name, n) in ds.meta.domain_names.iter().zip(&summary.windows_per_domain) {
        println!("  {name}: {n}");
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let mut cfg = match a.preset.as_str() {
        "default" => SynthConfig::default(),
        "small" => SynthConfig {
            per_class_per_domain: 12,
            ..SynthConfig::default()
        },
        other => {
            return Err(CliError::Usage(format!(
                "unknown synthetic preset {other:?} (expected default or small)"
            )))
        }
    };
    let file = a.config.as_deref().map(ConfigFile::load).transpose()?;
    if let Some(f) = &file {
        cfg = f.apply(&cfg)?;
    }
    match (a.seed, file.as_ref().is_some_and(ConfigFile::has_seed)) {
        (Some(s), _) => cfg.seed = s,
        (None, true) => {}
        (None, false) => {
            if let Some(s) = env_seed()? {
                cfg.seed = s;
            }
        }
    }
    let ds = synth_generate(&cfg)?;
    save_cwd(&ds, &a.out)?;
    let mut m = RunManifest::new("synth", &cfg, Some(cfg.seed))?;
    m.outputs.push(a.out.clone());
    m.write(&a.out)?;
    println!(
        "{} windows of {}x{}, {} classes, {} domains -> {}",
        ds.len(),
        ds.meta.channels,
        ds.meta.width,
        ds.num_classes(),
        ds.num_domains(),
        a.out.display()
    );
    Ok(())
}

fn train_one(a: TrainArgs) -> Result<(), CliError> {
    let ds = load_cwd(&a.data)?;
    let mut cfg = resolve(&a.knobs, a.ablation, &ds)?;
    cfg.target = a.target;
    check_target(&ds, a.target)?;
    let part = if a.source.is_empty() {
        lodo_partition(&ds, cfg.target, cfg.val_fraction, cfg.seed)?
    } else {
        for &s in &a.source {
            check_target(&ds, s)?;
        }
        source_target_partition(&ds, &a.source, &[cfg.target], cfg.val_fraction, cfg.seed)?
    };
    let mut dir = run_dir(&a.out, &cfg);
    if !a.source.is_empty() {
        let names: Vec<String> = a.source.iter().map(|s| s.to_string()).collect();
        dir.as_mut_os_string().push(format!("-src{}", names.join(".")));
    }
    let mut m = RunManifest::new("train", &cfg, Some(cfg.seed))?;
    m.inputs.push(a.data.clone());
    m.outputs.push(dir.clone());
    if !a.source.is_empty() {
        m.sweep = Some(serde_json::json!({ "sources": a.source }));
    }
    m.write(&dir)?;
    let (res, model) = train(&cfg, &ds, &part)?;
    write_run(&dir, &cfg, &ds, &res, &model)?;
    println!("{}", summary_line(&ds, &res, &dir));
    Ok(())
}

/// Persists every finished run of a sweep with its own manifest.
fn persist<'a>(
    root: &'a Path,
    data: &'a Path,
    ds: &'a WindowedDataset,
) -> impl FnMut(&TrainConfig, &RunResult, &TrainedModel) -> caudg_core::Result<()> + 'a {
    move |c, r, model| {
        let dir = run_dir(root, c);
        let mut m = RunManifest::new("train", c, Some(c.seed)).map_err(to_core)?;
        m.inputs.push(data.to_path_buf());
        m.outputs.push(dir.clone());
        m.write(&dir).map_err(to_core)?;
        write_run(&dir, c, ds, r, model)?;
        println!("{}", summary_line(ds, r, &dir));
        Ok(())
    }
}

fn to_core(e: CliError) -> caudg_core::Error {
    match e {
        CliError::Core(e) => e,
        CliError::Usage(s) => caudg_core::Error::InvalidArgument(s),
    }
}

fn targets(ds: &WindowedDataset, t: &[usize]) -> Result<Option<Vec<usize>>, CliError> {
    for &x in t {
        check_target(ds, x)?;
    }
    Ok((!t.is_empty()).then(|| t.to_vec()))
}

fn lodo(a: LodoArgs) -> Result<(), CliError> {
    let ds = load_cwd(&a.data)?;
    let cfg = resolve(&a.knobs, a.ablation, &ds)?;
    let targets = targets(&ds, &a.target)?;
    let mut m = RunManifest::new("lodo", &cfg, Some(cfg.seed))?;
    m.inputs.push(a.data.clone());
    m.outputs.push(a.out.clone());
    m.sweep = Some(serde_json::json!({ "targets": targets }));
    m.write(&a.out)?;
    let table = lodo_run(&cfg, &ds, targets.as_deref(), &mut persist(&a.out, &a.data, &ds))?;
    let text = table.render(&ds.meta.domain_names);
    write_json(&a.out.join("lodo.json"), &table)?;
    write_file(&a.out.join("lodo.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn ablation(a: AblateArgs) -> Result<(), CliError> {
    if a.list {
        for v in Variant::ABLATIONS {
            println!("{:<14} {}", v.name(), v.label());
        }
        return Ok(());
    }
    let (Some(data), Some(out)) = (a.data, a.out) else {
        return Err(CliError::Usage("--data and --out are required".into()));
    };
    let ds = load_cwd(&data)?;
    let base = resolve_base(&a.knobs, &ds)?;
    let variants = if a.ablation.is_empty() {
        Variant::ABLATIONS.to_vec()
    } else {
        a.ablation.clone()
    };
    check_sweep(&a.knobs, &variants)?;
    for v in &variants {
        v.apply(&base).validate().map_err(|e| CliError::Usage(format!("{v}: {e}")))?;
    }
    let seeds = if a.seeds.is_empty() { vec![base.seed] } else { a.seeds.clone() };
    let targets = targets(&ds, &a.target)?;
    let mut m = RunManifest::new("ablate", &base, None)?;
    m.inputs.push(data.clone());
    m.outputs.push(out.clone());
    m.sweep = Some(serde_json::json!({ "variants": variants, "seeds": seeds, "targets": targets }));
    m.write(&out)?;
    let table = ablate(&base, &ds, &variants, &seeds, targets.as_deref(), &mut persist(&out, &data, &ds))?;
    let text = table.render();
    write_json(&out.join("ablation.json"), &table)?;
    write_file(&out.join("ablation.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

/// Accepts a run directory or the checkpoint directory itself.
fn open_model(path: &Path, ds: &WindowedDataset) -> Result<TrainedModel, CliError> {
    let nested = path.join(MODEL_DIR);
    let dir = if nested.is_dir() { nested } else { path.to_path_buf() };
    let model = load_model(&dir)?;
    let c = &model.net.config;
    if (c.in_channels, c.width, c.num_classes) != (ds.meta.channels, ds.meta.width, ds.num_classes()) {
        return Err(CliError::Usage(format!(
            "model expects {} channels x {} samples and {} classes, dataset has {} x {} and {}",
            c.in_channels,
            c.width,
            c.num_classes,
            ds.meta.channels,
            ds.meta.width,
            ds.num_classes()
        )));
    }
    Ok(model)
}

fn selection(ds: &WindowedDataset, target: Option<usize>) -> Result<Vec<usize>, CliError> {
    match target {
        Some(t) => {
            check_target(ds, t)?;
            Ok(ds.domain_indices(t))
        }
        None => Ok((0..ds.len()).collect()),
    }
}

fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let ds = load_cwd(&a.data)?;
    let model = open_model(&a.model, &ds)?;
    let idx = selection(&ds, a.target)?;
    let ev = model.evaluate(&ds, &idx)?;
    if let Some(out) = &a.out {
        write_json(&out.join("eval.json"), &ev)?;
        write_file(&out.join("confusion.csv"), ev.confusion.to_csv(&ds.meta.class_names).as_bytes())?;
    }
    println!("windows={} acc={} macro_f1={}", idx.len(), ev.accuracy, ev.macro_f1);
    Ok(())
}

fn export(a: ExportArgs) -> Result<(), CliError> {
    let ds = load_cwd(&a.data)?;
    let model = open_model(&a.model, &ds)?;
    let idx = selection(&ds, a.target)?;
    let meta = export_embeddings(&model, &ds, &idx, &a.out)?;
    println!("{} embeddings of dimension {} -> {}", meta.rows, meta.dim, a.out.display());
    Ok(())
}

fn report_runs(a: ReportArgs) -> Result<(), CliError> {
    let runs = find_runs(&a.runs)?;
    if runs.is_empty() {
        return Err(CliError::Usage(format!("no results.json under {}", a.runs.display())));
    }
    let groups = report::build(&runs)?;
    let out = a.out.unwrap_or(a.runs);
    let text = report::render_text(&groups);
    write_file(&out.join("report.txt"), text.as_bytes())?;
    write_file(&out.join("report.csv"), report::render_csv(&groups).as_bytes())?;
    print!("{text}");
    Ok(())
}
