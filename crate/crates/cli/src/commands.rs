use std::path::Path;

use anyhow::{bail, Context, Result};
use dualnet::data::{load_csv, DataFormat, EncodedDataset, Preprocessor, Schema, SparseClassPolicy, Task};
use dualnet::eval::{self, export, GroupAggregation, ImportanceMode, ImportanceOptions, ReportFormat};
use dualnet::experiments::{self, synth, CrossValData, SweepKind, SweepShape};
use dualnet::net::{ArchitectureConfig, Network};
use dualnet::train::{train_with, Checkpoint, TrainConfig};

use super::run::Run;
use super::{Command, Common, DataArgs, TrainArgs};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Preprocess {
            common,
            data,
            task,
            format,
        } => in_run(&common, "preprocess", |run| preprocess(run, &data, task, &format)),
        Command::Train { common, data, train } => in_run(&common, "train", |run| train_cmd(run, &common, &data, &train)),
        Command::Crossval {
            common,
            data,
            train,
            k,
            allow_sparse_classes,
        } => in_run(&common, "crossval", |run| {
            crossval(run, &common, &data, &train, k, allow_sparse_classes)
        }),
        Command::Evaluate {
            common,
            data,
            checkpoint,
            task,
        } => in_run(&common, "evaluate", |run| evaluate(run, &data, &checkpoint, task)),
        Command::Explain {
            common,
            data,
            checkpoint,
            topk,
            samples,
            importance,
            group,
        } => in_run(&common, "explain", |run| {
            let opts = ImportanceOptions {
                mode: match importance.as_str() {
                    "column-max" => ImportanceMode::ColumnMax,
                    _ => ImportanceMode::ColumnMean,
                },
                aggregation: match group.as_str() {
                    "max" => GroupAggregation::Max,
                    _ => GroupAggregation::Sum,
                },
                samples,
            };
            explain(run, &data, &checkpoint, topk, &opts)
        }),
        Command::Sweep {
            common,
            kind,
            grid,
            data,
            schema,
            train_config,
            task,
            precision,
            paper_scale,
            synthetic_rows,
        } => {
            // Reject a bad kind or grid before creating a run directory.
            let kind: SweepKind = kind.parse()?;
            let grid = match grid {
                Some(g) => experiments::parse_grid(&g)?,
                None => kind.default_grid(),
            };
            experiments::validate_grid(&grid)?;
            if paper_scale && data.is_none() {
                bail!(dualnet::Error::Config("--paper-scale needs --data".into()));
            }
            let args = SweepArgs {
                kind,
                grid,
                data: data.map(|d| DataArgs { data: d, schema }),
                train: TrainArgs {
                    arch_config: None,
                    train_config,
                    task,
                    precision,
                },
                paper_scale,
                synthetic_rows,
            };
            in_run(&common, "sweep", |run| sweep(run, &common, &args))
        }
    }
}

/// Run `body` inside a fresh run directory and always leave a manifest behind.
fn in_run(common: &Common, name: &str, body: impl FnOnce(&mut Run) -> Result<()>) -> Result<()> {
    let mut run = Run::start(&common.out, name)?;
    run.manifest.seed = common.seed;
    let outcome = body(&mut run);
    let dir = run.finish(&outcome)?;
    outcome?;
    println!("run_dir={}", dir.display());
    Ok(())
}

/// Encoded rows plus the preprocessor that produced them, when known.
fn load_data(run: &mut Run, args: &DataArgs, task: Task) -> Result<(EncodedDataset, Option<Preprocessor>)> {
    run.input(&args.data)?;
    match &args.schema {
        Some(schema_path) => {
            let schema = load_schema(run, schema_path)?;
            let raw = load_csv(&args.data, &schema)?;
            let prep = Preprocessor::fit(&raw, task)?;
            let ds = prep.transform(&raw)?;
            Ok((ds, Some(prep)))
        }
        None => {
            let ds = EncodedDataset::load(&args.data)?;
            let side = dualnet::data::sidecar_path(&args.data);
            let prep = if side.exists() {
                run.input(&side)?;
                let text = std::fs::read_to_string(&side).with_context(|| format!("reading {}", side.display()))?;
                Some(Preprocessor::from_json(&text)?)
            } else {
                None
            };
            Ok((ds, prep))
        }
    }
}

fn load_schema(run: &mut Run, path: &Path) -> Result<Schema> {
    if path.to_str().and_then(Schema::builtin).is_none() {
        run.config(path)?;
    }
    Ok(Schema::load(path)?)
}

fn read_json_file(run: &mut Run, path: &Path) -> Result<String> {
    run.config(path)?;
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Training config from file, then command-line overrides.
fn train_config(run: &mut Run, common: &Common, args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.train_config {
        Some(p) => TrainConfig::from_json(&read_json_file(run, p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.task {
        cfg.task = t;
    }
    if let Some(p) = args.precision {
        cfg.precision = p;
    }
    cfg.validate()?;
    run.manifest.seed = Some(cfg.seed);
    Ok(cfg)
}

fn arch_config(run: &mut Run, args: &TrainArgs, ds: &EncodedDataset) -> Result<ArchitectureConfig> {
    let arch = match &args.arch_config {
        Some(p) => ArchitectureConfig::from_json(&read_json_file(run, p)?)?,
        None => ArchitectureConfig::dualnet_tiny(ds.width(), ds.num_classes()),
    };
    if arch.input_width != ds.width() {
        bail!(dualnet::Error::Config(format!(
            "dataset has {} encoded features but the architecture expects {}",
            ds.width(),
            arch.input_width
        )));
    }
    if arch.classes != ds.num_classes() {
        bail!(dualnet::Error::Config(format!(
            "dataset has {} classes but the architecture expects {}",
            ds.num_classes(),
            arch.classes
        )));
    }
    Ok(arch)
}

fn preprocess(run: &mut Run, args: &DataArgs, task: Task, format: &str) -> Result<()> {
    let Some(schema_path) = &args.schema else {
        bail!(dualnet::Error::Config("preprocess needs --schema".into()));
    };
    run.input(&args.data)?;
    let schema = load_schema(run, schema_path)?;
    let raw = load_csv(&args.data, &schema)?;
    let prep = Preprocessor::fit(&raw, task)?;
    let ds = prep.transform(&raw)?;
    let (name, fmt) = match format {
        "csv" => ("encoded.csv", DataFormat::Csv),
        _ => ("encoded.bin", DataFormat::Binary),
    };
    let path = run.output(name);
    ds.save(&path, fmt, Some(&prep))?;
    run.manifest.outputs.push(format!("{name}.prep.json"));
    println!("rows={} classes={}", ds.len(), ds.num_classes());
    println!("F={}", ds.width());
    Ok(())
}

fn train_cmd(run: &mut Run, common: &Common, data: &DataArgs, args: &TrainArgs) -> Result<()> {
    let cfg = train_config(run, common, args)?;
    let (ds, prep) = load_data(run, data, cfg.task)?;
    let arch = arch_config(run, args, &ds)?;
    let mut net = Network::build(&arch, cfg.seed)?;
    println!(
        "architecture={} layers={} params={} rows={} F={}",
        arch.label(),
        net.plan.total_layers,
        net.count_params(),
        ds.len(),
        ds.width()
    );
    let history = train_with(&mut net, &ds, &cfg, |e| {
        println!("epoch={} loss={:.6} accuracy={:.4}", e.epoch, e.loss, e.accuracy);
    })?;
    let report = eval::evaluate(&net, &ds, cfg.task)?;

    let mut rows = String::from("epoch,loss,accuracy\n");
    for e in &history.epochs {
        rows.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.accuracy));
    }
    run.write("history.json", serde_json::to_string_pretty(&history)?)?;
    run.write("history.csv", rows)?;
    run.write("train_metrics.json", export::metrics_json(&report)?)?;
    run.write("architecture.json", arch.to_json()?)?;

    let ckpt = Checkpoint {
        network: net,
        preprocessor: prep,
        history: Some(history),
        train_config: Some(cfg),
    };
    let path = run.output("model.ckpt");
    ckpt.save(&path)?;
    println!("final_accuracy={:.4}", report.acc.value().unwrap_or(f64::NAN));
    println!("checkpoint={}", path.display());
    Ok(())
}

fn crossval(
    run: &mut Run,
    common: &Common,
    data: &DataArgs,
    args: &TrainArgs,
    k: usize,
    allow_sparse: bool,
) -> Result<()> {
    let cfg = train_config(run, common, args)?;
    let policy = if allow_sparse {
        SparseClassPolicy::Allow
    } else {
        SparseClassPolicy::Reject
    };
    let on_fold = |f: &experiments::FoldReport| {
        println!(
            "fold={} seed={} acc={} dr={} far={}",
            f.fold, f.seed, f.metrics.acc, f.metrics.dr, f.metrics.far
        );
    };
    let report = match &data.schema {
        Some(schema_path) => {
            run.input(&data.data)?;
            let schema = load_schema(run, schema_path)?;
            let raw = load_csv(&data.data, &schema)?;
            let probe = Preprocessor::fit(&raw, cfg.task)?;
            let arch = match &args.arch_config {
                Some(p) => ArchitectureConfig::from_json(&read_json_file(run, p)?)?,
                None => ArchitectureConfig::dualnet_tiny(probe.width(), probe.num_classes()),
            };
            experiments::cross_validate(CrossValData::Raw(&raw), &arch, &cfg, k, policy, on_fold)?
        }
        None => {
            let (ds, _) = load_data(run, data, cfg.task)?;
            let arch = arch_config(run, args, &ds)?;
            experiments::cross_validate(CrossValData::Encoded(&ds), &arch, &cfg, k, policy, on_fold)?
        }
    };

    let mut rows = String::from("fold,seed,train_size,test_size,acc,binary_acc,multiclass_acc,dr,far\n");
    let cell = |m: eval::Metric| match m.rounded() {
        eval::Metric::Value(v) => format!("{v:.4}"),
        eval::Metric::Undefined => "undefined".into(),
    };
    for f in &report.folds {
        let m = &f.metrics;
        rows.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            f.fold,
            f.seed,
            f.train_size,
            f.test_size,
            cell(m.acc),
            cell(m.binary_acc),
            cell(m.multiclass_acc),
            cell(m.dr),
            cell(m.far)
        ));
    }
    let mean = &report.mean;
    rows.push_str(&format!(
        "mean,,,,{},{},{},{},{}\n",
        cell(mean.acc),
        cell(mean.binary_acc),
        cell(mean.multiclass_acc),
        cell(mean.dr),
        cell(mean.far)
    ));
    run.write("folds.csv", rows)?;
    run.write("crossval.json", serde_json::to_string_pretty(&report)?)?;
    println!("mean acc={} dr={} far={}", mean.acc, mean.dr, mean.far);
    Ok(())
}

/// The dataset a checkpoint should be applied to: raw CSV goes through the
/// checkpoint's own preprocessor.
fn checkpoint_data(run: &mut Run, data: &DataArgs, ckpt: &Checkpoint) -> Result<EncodedDataset> {
    let ds = match &data.schema {
        Some(schema_path) => {
            let Some(prep) = &ckpt.preprocessor else {
                bail!(dualnet::Error::Config(
                    "the checkpoint carries no preprocessor, so raw CSV cannot be encoded; pass an encoded dataset"
                        .into()
                ));
            };
            run.input(&data.data)?;
            let schema = load_schema(run, schema_path)?;
            prep.transform(&load_csv(&data.data, &schema)?)?
        }
        None => {
            run.input(&data.data)?;
            EncodedDataset::load(&data.data)?
        }
    };
    if ds.width() != ckpt.network.config.input_width {
        bail!(dualnet::Error::Config(format!(
            "dataset has {} encoded features but the checkpoint expects {}",
            ds.width(),
            ckpt.network.config.input_width
        )));
    }
    Ok(ds)
}

fn load_checkpoint(run: &mut Run, path: &Path) -> Result<Checkpoint> {
    run.input(path)?;
    Ok(Checkpoint::load(path)?)
}

fn evaluate(run: &mut Run, data: &DataArgs, checkpoint: &Path, task: Option<Task>) -> Result<()> {
    let ckpt = load_checkpoint(run, checkpoint)?;
    let ds = checkpoint_data(run, data, &ckpt)?;
    let task = task
        .or_else(|| ckpt.train_config.as_ref().map(|c| c.task))
        .unwrap_or_default();
    let report = eval::evaluate(&ckpt.network, &ds, task)?;
    export::export_metrics(&report, &run.output("metrics.json"), ReportFormat::Json)?;
    export::export_metrics(&report, &run.output("metrics.csv"), ReportFormat::Csv)?;
    println!(
        "acc={} binary_acc={} multiclass_acc={} dr={} far={}",
        report.acc, report.binary_acc, report.multiclass_acc, report.dr, report.far
    );
    Ok(())
}

fn explain(run: &mut Run, data: &DataArgs, checkpoint: &Path, topk: usize, opts: &ImportanceOptions) -> Result<()> {
    let ckpt = load_checkpoint(run, checkpoint)?;
    let ds = checkpoint_data(run, data, &ckpt)?;
    let report = eval::attention_importance(&ckpt.network, &ds, opts)?;
    export::export_attention(&report, topk, &run.output("attention.json"), ReportFormat::Json)?;
    export::export_attention(&report, topk, &run.output("top_features.csv"), ReportFormat::Csv)?;
    run.write("top_encoded.csv", export::ranked_csv(&report.top_encoded(topk))?)?;
    for f in report.top_features(topk) {
        println!("{} {} {:.6}", f.rank, f.feature, f.score);
    }
    Ok(())
}

struct SweepArgs {
    kind: SweepKind,
    grid: Vec<usize>,
    data: Option<DataArgs>,
    train: TrainArgs,
    paper_scale: bool,
    synthetic_rows: usize,
}

/// Desk-scale training defaults for sweeps without a training config.
fn desk_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 20,
        batch_size: 32,
        ..TrainConfig::default()
    }
}

fn sweep(run: &mut Run, common: &Common, args: &SweepArgs) -> Result<()> {
    let mut cfg = if args.train.train_config.is_some() {
        train_config(run, common, &args.train)?
    } else {
        let mut c = desk_train_config();
        if let Some(s) = common.seed {
            c.seed = s;
        }
        if let Some(t) = args.train.task {
            c.task = t;
        }
        if let Some(p) = args.train.precision {
            c.precision = p;
        }
        run.manifest.seed = Some(c.seed);
        c
    };
    let ds = match &args.data {
        Some(d) => load_data(run, d, cfg.task)?.0,
        None => {
            cfg.task = Task::Binary;
            synth::two_blobs(args.synthetic_rows, cfg.seed)?
        }
    };
    let shape = if args.paper_scale {
        SweepShape::full_width(ds.width())
    } else {
        SweepShape::default()
    };
    let (train_ds, test_ds) = experiments::holdout_split(&ds, cfg.seed)?;
    let points = experiments::sweep_points(args.kind, &args.grid, ds.width(), ds.num_classes(), &shape)?;
    println!(
        "sweep={} points={} train_rows={} test_rows={} epochs={}",
        args.kind,
        points.len(),
        train_ds.len(),
        test_ds.len(),
        cfg.epochs
    );
    let rows = experiments::run_sweep(&points, &train_ds, &test_ds, &cfg, |r| {
        println!(
            "{} x={} acc={} dr={} far={} params={} wall={:.2}s",
            r.config_id, r.x, r.acc, r.dr, r.far, r.params, r.wall_secs
        );
    })?;
    run.write(&format!("sweep_{}.csv", args.kind), experiments::rows_csv(&rows)?)?;
    run.write("sweep.json", serde_json::to_string_pretty(&rows)?)?;
    Ok(())
}
