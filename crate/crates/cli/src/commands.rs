use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use alcs::admm::{run_alcs, AlcsConfig, DualInit, LogRecord};
use alcs::latency::{
    load_profile, measure_layer_profile, measure_network, profile_to_json, LayerSpec, MeasureConfig, MeasurementMeta,
    NetworkLatencyModel,
};
use alcs::nn::{
    accuracy, make_synthetic_task, train, Architecture, Classification, ConvPath, LabeledDataset, SparseNetwork,
    ToyNet, TrainConfig,
};
use alcs::sparse_format::SparseModel;
use alcs::verify::{benchmark_speedup, speedup_spec, verify_model};

use crate::manifest::{write_atomic, RunManifest};
use crate::{
    ArchKind, BenchLayerArgs, BuildLatencyModelArgs, Command, DualInitArg, InferArgs, MakeDatasetArgs, MeasureArgs,
    PruneArgs, ReportArgs, Split, TrainArgs, UsageError, VerificationFailed, VerifyArgs,
};

pub fn run(command: Command, manifest: Option<PathBuf>) -> Result<()> {
    match command {
        Command::MakeDataset(a) => {
            managed("make-dataset", &a, Some(a.seed), manifest, sidecar(&a.out, ""), |m| make_dataset(&a, m))
        }
        Command::Train(a) => managed("train", &a, Some(a.seed), manifest, sidecar(&a.out, ""), |m| train_dense(&a, m)),
        Command::BenchLayer(a) => {
            managed("bench-layer", &a, Some(a.measure.seed), manifest, sidecar(&a.out, ""), |m| bench_layer(&a, m))
        }
        Command::BuildLatencyModel(a) => {
            managed("build-latency-model", &a, Some(a.measure.seed), manifest, sidecar(&a.out, ""), |m| {
                build_latency_model(&a, m)
            })
        }
        Command::Prune(a) => managed("prune", &a, Some(a.seed), manifest, sidecar(&a.out, ""), |m| prune(&a, m)),
        Command::Infer(a) => {
            let primary = a.out.as_ref().map_or_else(|| sidecar(&a.model, ".infer"), |o| sidecar(o, ""));
            managed("infer", &a, None, manifest, primary, |m| infer(&a, m))
        }
        Command::Verify(a) => {
            let primary = a.out.as_ref().map_or_else(|| sidecar(&a.model, ".verify"), |o| sidecar(o, ""));
            managed("verify", &a, Some(a.seed), manifest, primary, |m| verify(&a, m))
        }
        Command::Report(a) => {
            let primary = a.out.as_ref().map_or_else(|| sidecar(&a.log, ".report"), |o| sidecar(o, ""));
            managed("report", &a, None, manifest, primary, |m| report(&a, m))
        }
    }
}

/// `<path><suffix>.manifest.json`
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!("{suffix}.manifest.json"));
    path.with_file_name(name)
}

/// Writes the manifest before `body` runs and again, with checksums or the error, after.
fn managed<A: Serialize>(
    name: &str,
    args: &A,
    seed: Option<u64>,
    manifest: Option<PathBuf>,
    default_path: PathBuf,
    body: impl FnOnce(&mut RunManifest) -> Result<()>,
) -> Result<()> {
    let path = manifest.unwrap_or(default_path);
    let mut record = RunManifest::new(name, serde_json::to_value(args)?, seed);
    record.write(&path)?;
    match body(&mut record).and_then(|()| record.finish()) {
        Ok(()) => record.write(&path),
        Err(err) => {
            record.fail(&err);
            if let Err(e) = record.write(&path) {
                log::warn!("could not update manifest {}: {e:#}", path.display());
            }
            Err(err)
        }
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_dataset(path: &Path, m: &mut RunManifest) -> Result<LabeledDataset<f32>> {
    m.input(path)?;
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    LabeledDataset::<f32>::from_bytes(&bytes).with_context(|| format!("decoding dataset {}", path.display()))
}

fn load_model(path: &Path, m: &mut RunManifest) -> Result<SparseModel> {
    m.input(path)?;
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    SparseModel::from_bytes(&bytes).with_context(|| format!("decoding model {}", path.display()))
}

fn input_dims(data: &LabeledDataset<f32>) -> Result<(usize, usize, usize)> {
    data.dims().context("dataset is empty")
}

fn make_dataset(a: &MakeDatasetArgs, m: &mut RunManifest) -> Result<()> {
    let data = make_synthetic_task(a.seed, a.classes, a.samples)?;
    m.output(&a.out);
    write_atomic(&a.out, &data.to_bytes())?;
    print_json(&json!({
        "samples": data.len(),
        "classes": data.classes(),
        "train": data.train_indices().len(),
        "validation": data.validation_indices().len(),
    }))
}

fn train_dense(a: &TrainArgs, m: &mut RunManifest) -> Result<()> {
    let data = load_dataset(&a.data, m)?;
    let arch = match a.arch {
        ArchKind::Toy => Architecture::toy(data.classes()),
        ArchKind::ToyTail => Architecture::toy_tail(data.classes()),
    };
    if input_dims(&data)? != arch.input() {
        bail!(alcs::Error::Dimension(format!(
            "dataset images are {:?}, network expects {:?}",
            data.dims(),
            arch.input()
        )));
    }
    let mut net = ToyNet::<f32>::init(arch, a.seed);
    let config = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        seed: a.seed,
        ..Default::default()
    };
    let losses = train(&Classification::new(&net.arch, &data).with_threads(a.threads), &mut net.params, &config, None);
    let val = accuracy(&net.arch, &net.params, &data, data.validation_indices());
    m.output(&a.out);
    write_atomic(&a.out, &net.to_sparse_model(a.group_size).to_bytes())?;
    print_json(&json!({ "epochs": a.epochs, "final_loss": losses.last(), "val_accuracy": val }))
}

fn measure_config(a: &MeasureArgs) -> MeasureConfig {
    MeasureConfig { group_size: a.group_size, runs: a.runs, warmup: a.warmup, seed: a.seed, ..Default::default() }
}

fn bench_layer(a: &BenchLayerArgs, m: &mut RunManifest) -> Result<()> {
    let spec = LayerSpec::from_shape_array(a.name.clone(), a.shape)?;
    let profile = measure_layer_profile(&spec, &a.measure.densities, &measure_config(&a.measure))?;
    let meta = MeasurementMeta {
        runs: a.measure.runs,
        warmup: a.measure.warmup,
        seed: a.measure.seed,
        host: alcs::latency::host_descriptor(),
    };
    let model = NetworkLatencyModel::new(0.0, vec![profile])?.with_meta(meta);
    m.output(&a.out);
    write_atomic(&a.out, profile_to_json(&model).as_bytes())?;
    let p = &model.profiles()[0];
    print_json(&json!({ "name": p.name(), "knots": p.points().collect::<Vec<_>>(), "warnings": p.warnings() }))
}

fn build_latency_model(a: &BuildLatencyModelArgs, m: &mut RunManifest) -> Result<()> {
    let model = load_model(&a.model, m)?;
    let arch = Architecture::from_model(a.input, &model)?;
    let latency = measure_network(&arch.layer_specs(), &a.measure.densities, &measure_config(&a.measure), a.tau_ms)?;
    m.output(&a.out);
    write_atomic(&a.out, profile_to_json(&latency).as_bytes())?;
    print_json(&json!({
        "layers": latency.profiles().len(),
        "tau_ms": latency.tau_ms(),
        "dense_ms": latency.dense_ms(),
        "empty_ms": latency.empty_ms(),
    }))
}

fn prune(a: &PruneArgs, m: &mut RunManifest) -> Result<()> {
    if a.group_size == 0 || a.batch_size == 0 {
        bail!(UsageError("--group-size and --batch-size must be at least 1".into()));
    }
    if a.rho.is_nan() || a.rho <= 0.0 {
        bail!(UsageError(format!("--rho must be positive, got {}", a.rho)));
    }
    let data = load_dataset(&a.data, m)?;
    let dense = load_model(&a.model, m)?;
    m.input(&a.latency)?;
    let latency = load_profile(&a.latency).with_context(|| format!("loading latency model {}", a.latency.display()))?;
    let net = ToyNet::from_sparse_model(input_dims(&data)?, &dense)?;
    if net.arch.classes() != data.classes() {
        bail!(alcs::Error::Dimension(format!(
            "model has {} outputs, dataset {} classes",
            net.arch.classes(),
            data.classes()
        )));
    }
    let specs = net.arch.layer_specs();
    if latency.profiles().len() != specs.len()
        || latency.profiles().iter().zip(&specs).any(|(p, s)| p.spec().shape_array() != s.shape_array())
    {
        bail!(alcs::Error::Dimension("latency model does not describe this network".into()));
    }
    if let Some(&bad) = a.skip_layers.iter().find(|&&l| l >= specs.len()) {
        bail!(UsageError(format!("--skip-layers: layer {bad} does not exist ({} prunable layers)", specs.len())));
    }
    let config = AlcsConfig {
        budget_ms: a.budget_ms,
        rho: a.rho,
        admm_epochs: a.admm_epochs,
        finetune_epochs: a.ft_epochs,
        admm_lr: a.admm_lr,
        finetune_lr: a.ft_lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        epsilon_ms: a.eps_ms,
        group_size: a.group_size,
        skip_layers: a.skip_layers.clone(),
        dual_init: match a.dual_init {
            DualInitArg::Residual => DualInit::Residual,
            DualInitArg::Zero => DualInit::Zero,
        },
        seed: a.seed,
    };
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut name = a.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".log.jsonl");
        a.out.with_file_name(name)
    });
    let log_dir = match log_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let pretrained_accuracy = accuracy(&net.arch, &net.params, &data, data.validation_indices());
    let objective = Classification::new(&net.arch, &data).with_threads(a.threads);
    let mut log_file = BufWriter::new(tempfile::NamedTempFile::new_in(&log_dir)?);
    let mut log_error = None;
    let outcome = run_alcs(&objective, net.params.clone(), &latency, &config, |record: &LogRecord| {
        let line = serde_json::to_string(record).map_err(std::io::Error::from);
        if let Err(e) = line.and_then(|l| writeln!(log_file, "{l}")) {
            log_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_error {
        return Err(e).context("writing training log");
    }
    let pruned = ToyNet::new(net.arch.clone(), outcome.params)?;
    let sparse = pruned.to_sparse_model(a.group_size);
    let nonzeros: Vec<usize> = sparse.layers.iter().map(|l| l.kernel.stored_values()).collect();
    let estimated = latency.estimate(&nonzeros)?;
    if estimated > a.budget_ms {
        bail!("pruned model estimates {estimated} ms, above the budget of {} ms", a.budget_ms);
    }
    m.output(&a.out);
    m.output(&log_path);
    write_atomic(&a.out, &sparse.to_bytes())?;
    log_file
        .into_inner()
        .map_err(|e| e.into_error())?
        .persist(&log_path)
        .with_context(|| format!("writing {}", log_path.display()))?;
    print_json(&json!({
        "budget_ms": a.budget_ms,
        "estimated_latency_ms": estimated,
        "dense_latency_ms": latency.dense_ms(),
        "nonzeros": nonzeros,
        "params": specs.iter().map(LayerSpec::params).collect::<Vec<_>>(),
        "pretrained_val_accuracy": pretrained_accuracy,
        "val_accuracy": accuracy(&pruned.arch, &pruned.params, &data, data.validation_indices()),
        "final_w_u_gap": outcome.log.last().map(|r| r.w_u_gap),
    }))
}

fn infer(a: &InferArgs, m: &mut RunManifest) -> Result<()> {
    if a.threads == 0 {
        bail!(UsageError("--threads must be at least 1".into()));
    }
    let data = load_dataset(&a.data, m)?;
    let model = load_model(&a.model, m)?;
    let net = SparseNetwork::new(input_dims(&data)?, model)?;
    let indices: Vec<usize> = match a.split {
        Split::All => (0..data.len()).collect(),
        Split::Train => data.train_indices().collect(),
        Split::Validation => data.validation_indices().collect(),
    };
    let path = ConvPath::Vectorized { threads: a.threads };
    let start = Instant::now();
    let predictions = indices.iter().map(|&i| net.predict(data.image(i), path)).collect::<alcs::Result<Vec<_>>>()?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let hits = indices.iter().zip(&predictions).filter(|(&i, &p)| data.label(i) == p).count();
    if let Some(out) = &a.out {
        let mut csv = String::from("index,label,prediction\n");
        for (&i, p) in indices.iter().zip(&predictions) {
            csv.push_str(&format!("{i},{},{p}\n", data.label(i)));
        }
        m.output(out);
        write_atomic(out, csv.as_bytes())?;
    }
    print_json(&json!({
        "samples": indices.len(),
        "accuracy": hits as f64 / indices.len().max(1) as f64,
        "threads": a.threads,
        "wall_ms": wall_ms,
        "ms_per_sample": wall_ms / indices.len().max(1) as f64,
    }))
}

fn verify(a: &VerifyArgs, m: &mut RunManifest) -> Result<()> {
    let model = load_model(&a.model, m)?;
    let mut report = verify_model(&model, a.input, a.samples, a.seed)?;
    if a.speedup {
        let g = model.layers.first().map_or(4, |l| l.kernel.group_size());
        let speed = benchmark_speedup(&speedup_spec(), 0.3, g, a.runs, a.warmup, a.seed)?;
        if !speed.within_floor {
            log::warn!("vectorized path is {:.1}% slower than the scalar path", (1.0 / speed.speedup - 1.0) * 100.0);
        }
        report.speedup = Some(speed);
    }
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(out) = &a.out {
        m.output(out);
        write_atomic(out, format!("{text}\n").as_bytes())?;
    }
    println!("{text}");
    if !report.passed {
        bail!(VerificationFailed(format!(
            "max relative error {:.3e} (tolerance {:.0e}), paths identical: {}",
            report.max_rel_err,
            report.tolerance,
            report.layers.iter().all(|l| l.paths_identical)
        )));
    }
    Ok(())
}

fn report(a: &ReportArgs, m: &mut RunManifest) -> Result<()> {
    m.input(&a.log)?;
    let text = fs::read_to_string(&a.log).with_context(|| format!("reading {}", a.log.display()))?;
    let mut csv = String::from("iteration,loss,aug_loss,w_u_gap,nnz,est_latency_ms\n");
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: LogRecord = serde_json::from_str(line).with_context(|| format!("{}:{}", a.log.display(), n + 1))?;
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iteration, r.loss, r.aug_loss, r.w_u_gap, r.nnz, r.est_latency_ms
        ));
    }
    match &a.out {
        Some(out) => {
            m.output(out);
            write_atomic(out, csv.as_bytes())
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
