use std::fmt;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use atk_core::attention::{MapNorm, MappingFn};
use atk_core::data::{Dataset, MeanStd};
use atk_core::export::{attention_maps, box_mass, write_atmp, write_pgm};
use atk_core::nn::{build, ArchSpec, Model};
use atk_core::train::{
    evaluate, load_checkpoint, save_checkpoint, train_with, Checkpoint, EpochMetrics, LrSchedule,
    TrainConfig, TrainData, TrainMode,
};
use atk_core::transfer::{require_bn_free, Beta, BetaDecay, KdParams, TransferSpec};
use atk_core::verify::{run_all, Fault, VerifyOptions};
use atk_core::Error;

use crate::args::{Cli, Command, DataArgs, DistillArgs, EvalArgs, ExportArgs, FaultArg, RunArgs, TrainTeacherArgs, VerifyArgs};
use crate::data;
use crate::manifest::{RunManifest, CHECKPOINT_FILE, MANIFEST_FILE, METRICS_FILE};

pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_BATCH: usize = 128;
pub const DEFAULT_LR: f64 = 0.1;

/// Failure with its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, missing inputs, incompatible configuration (exit 2).
    Usage(String),
    /// Training or verification failed (exit 1).
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_)
            | Error::DatasetNotFound(_)
            | Error::CorruptDataset { .. }
            | Error::UnknownTap { .. }
            | Error::Unsupported(_)
            | Error::BadMagic
            | Error::Truncated
            | Error::UnsupportedVersion(_)
            | Error::Format(_)
            | Error::Json(_) => CliError::Usage(msg),
            Error::Io(ref io) if io.kind() == ErrorKind::NotFound => CliError::Usage(msg),
            _ => CliError::Failed(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::TrainTeacher(a) => train_teacher(a),
        Command::Distill(a) => distill(a),
        Command::Eval(a) => eval(a),
        Command::ExportAttention(a) => export_attention(a),
        Command::Verify(a) => verify(a),
    }
}

fn print_taps(label: &str, model: &Model<f32>) {
    println!("{label} taps: {}", model.tap_names().join(", "));
}

/// Parses the architecture and fits its input/output sizes to the data.
fn arch_for(tag: &str, train: &Dataset) -> CliResult<ArchSpec> {
    let [c, _, _] = train.image_dims();
    Ok(tag.parse::<ArchSpec>()?.with_in_channels(c).with_classes(train.classes))
}

fn base_config(mode: TrainMode, run: &RunArgs) -> TrainConfig {
    let epochs = run.epochs.unwrap_or(DEFAULT_EPOCHS);
    let mut config = TrainConfig::new(mode, epochs);
    config.batch = run.batch.unwrap_or(DEFAULT_BATCH);
    config.lr = LrSchedule::standard(run.lr.unwrap_or(DEFAULT_LR), epochs);
    config.seed = run.seed;
    config
}

fn default_out(command: &str, spec: &ArchSpec, seed: u64) -> PathBuf {
    PathBuf::from("runs").join(format!("{command}-{}-s{seed}", spec.base_name()))
}

/// Replays a manifest when `--manifest` is given.
fn replay(run: &RunArgs, command: &str) -> Option<CliResult> {
    let path = run.manifest.as_ref()?;
    Some((|| {
        let mut m = RunManifest::load(path).map_err(|e| usage(format!("cannot read manifest {}: {e}", path.display())))?;
        if m.command != command {
            return Err(usage(format!(
                "manifest {} records a `{}` run, not `{command}`",
                path.display(),
                m.command
            )));
        }
        if let Some(out) = &run.out {
            m.out = out.clone();
        }
        m.final_test_error = None;
        execute(m)
    })())
}

fn train_teacher(a: TrainTeacherArgs) -> CliResult {
    if let Some(r) = replay(&a.run, "train-teacher") {
        return r;
    }
    if a.run.list_taps {
        let model: Model<f32> = build(&a.arch.parse()?, 0)?;
        print_taps("model", &model);
        return Ok(());
    }
    let (train, _) = data::load(&a.run.data)?;
    let spec = arch_for(&a.arch, &train)?;
    let config = base_config(TrainMode::Plain, &a.run);
    execute(RunManifest {
        command: "train-teacher".into(),
        arch: spec.to_string(),
        data: a.run.data.data.clone(),
        subset: a.run.data.subset,
        test_subset: a.run.data.test_subset,
        teacher: None,
        out: a.run.out.clone().unwrap_or_else(|| default_out("train-teacher", &spec, a.run.seed)),
        config,
        norm: None,
        final_test_error: None,
    })
}

fn load_model(path: &Path) -> CliResult<Model<f32>> {
    let ckpt = load_checkpoint(path).map_err(|e| match e {
        Error::Io(io) if io.kind() == ErrorKind::NotFound => usage(format!("checkpoint not found: {}", path.display())),
        e => e.into(),
    })?;
    Ok(ckpt.to_model()?)
}

/// `tap` or `student:teacher`, comma separated.
fn parse_pairs(csv: &str) -> CliResult<Vec<(String, String)>> {
    csv.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|p| match p.split_once(':') {
            Some((s, t)) if !s.is_empty() && !t.is_empty() => Ok((s.to_string(), t.to_string())),
            Some(_) => Err(usage(format!("bad pair `{p}` (expected tap or student_tap:teacher_tap)"))),
            None => Ok((p.to_string(), p.to_string())),
        })
        .collect()
}

fn distill(a: DistillArgs) -> CliResult {
    if let Some(r) = replay(&a.run, "distill") {
        return r;
    }
    let teacher = a.teacher.as_deref().map(load_model).transpose()?;
    if a.run.list_taps {
        print_taps("student", &build(&a.arch.parse()?, 0)?);
        if let Some(t) = &teacher {
            print_taps("teacher", t);
        }
        return Ok(());
    }
    let mode: TrainMode = a
        .mode
        .as_deref()
        .ok_or_else(|| usage("distill needs --mode (at, kd, at+kd, grad-at, symmetry, min-l2 or factt)"))?
        .parse()?;
    if mode == TrainMode::Plain {
        return Err(usage("mode plain trains without a teacher; use train-teacher"));
    }
    if mode.needs_teacher() && teacher.is_none() {
        return Err(usage(format!("mode {mode} needs --teacher CKPT")));
    }
    let (train, _) = data::load(&a.run.data)?;
    let spec = arch_for(&a.arch, &train)?;
    let mut config = base_config(mode, &a.run);
    let beta: Beta = a.beta.parse()?;
    if mode.uses_pairs() {
        let pairs = match &a.pairs {
            Some(csv) => parse_pairs(csv)?,
            None => {
                let student: Model<f32> = build(&spec, 0)?;
                let teacher_taps = teacher.as_ref().map(|t| t.tap_names()).unwrap_or_default();
                student
                    .tap_names()
                    .into_iter()
                    .filter(|n| teacher_taps.contains(n))
                    .map(|n| (n.clone(), n))
                    .collect()
            }
        };
        if pairs.is_empty() {
            return Err(usage("student and teacher share no tap names; pass --pairs student_tap:teacher_tap"));
        }
        let mut transfer = TransferSpec::new(pairs);
        transfer.mapping = a.mapping.parse::<MappingFn>()?;
        transfer.map_norm = a.norm.parse::<MapNorm>()?;
        transfer.beta = beta.clone();
        transfer.beta_decay = a.beta_decay.parse::<BetaDecay>()?;
        config.transfer = Some(transfer);
    }
    if mode.uses_kd() {
        config.kd = Some(KdParams {
            temperature: a.temperature,
            alpha: a.alpha,
        });
    }
    if mode.is_gradient_based() {
        match beta {
            Beta::Auto => {}
            Beta::Fixed(b) => config.grad_beta = b,
            Beta::PerPair(_) => return Err(usage(format!("mode {mode} takes a single --beta value"))),
        }
    }
    let teacher_path = if mode.needs_teacher() { a.teacher.clone() } else { None };
    execute(RunManifest {
        command: "distill".into(),
        arch: spec.to_string(),
        data: a.run.data.data.clone(),
        subset: a.run.data.subset,
        test_subset: a.run.data.test_subset,
        teacher: teacher_path,
        out: a.run.out.clone().unwrap_or_else(|| default_out(&format!("distill-{mode}"), &spec, a.run.seed)),
        config,
        norm: None,
        final_test_error: None,
    })
}

fn epoch_line(m: &EpochMetrics, epochs: usize) -> String {
    format!(
        "epoch {:>3}/{epochs} lr {:.4} loss {:.4} ce {:.4} transfer {:.4} kd {:.4} train_err {:.2}% test_err {:.2}%",
        m.epoch + 1,
        m.lr,
        m.loss,
        m.ce,
        m.transfer,
        m.kd,
        m.train_error,
        m.test_error
    )
}

/// Trains the run a manifest describes and fills its directory.
fn execute(mut m: RunManifest) -> CliResult {
    m.config.validate()?;
    let (train, test) = data::load(&m.data_args())?;
    let spec: ArchSpec = m.arch.parse()?;
    let teacher = m.teacher.as_deref().map(load_model).transpose()?;
    let data = TrainData::new(train, test);
    m.norm = Some(data.norm.clone());
    let mut student: Model<f32> = build(&spec, m.config.seed)?;
    if m.config.mode.is_gradient_based() {
        require_bn_free(&student)?;
        teacher.as_ref().map(require_bn_free).transpose()?;
    }
    fs::create_dir_all(&m.out)?;
    m.save(&m.out)?;
    println!(
        "{}: {} ({} params) on {} [{} train / {} test], mode {}, out {}",
        m.command,
        spec.base_name(),
        student.num_params(),
        m.data,
        data.train.len(),
        data.test.len(),
        m.config.mode,
        m.out.display()
    );
    let epochs = m.config.epochs;
    let history = train_with(teacher.as_ref(), &mut student, &data, &m.config, |e| {
        println!("{}", epoch_line(e, epochs))
    })
    .map_err(|e| match CliError::from(e) {
        CliError::Failed(msg) => CliError::Failed(format!("training failed: {msg}")),
        other => other,
    })?;
    save_checkpoint(&m.out.join(CHECKPOINT_FILE), &Checkpoint::from_model(&student, history.epochs.clone()))?;
    fs::write(
        m.out.join(METRICS_FILE),
        serde_json::to_string_pretty(&history.epochs).expect("metrics serialize") + "\n",
    )?;
    m.final_test_error = history.final_test_error();
    m.save(&m.out)?;
    println!("final test error: {:.2}%", m.final_test_error.unwrap_or(f64::NAN));
    Ok(())
}

/// Normalization recorded next to the checkpoint, else recomputed from the
/// training split.
fn norm_for(checkpoint: &Path, args: &DataArgs, train: &Dataset) -> MeanStd {
    checkpoint
        .parent()
        .map(|d| d.join(MANIFEST_FILE))
        .and_then(|p| RunManifest::load(&p).ok())
        .filter(|m| m.data == args.data && m.subset == args.subset)
        .and_then(|m| m.norm)
        .unwrap_or_else(|| MeanStd::compute(train))
}

fn eval(a: EvalArgs) -> CliResult {
    let model = load_model(&a.checkpoint)?;
    let (train, test) = data::load(&a.data)?;
    let norm = norm_for(&a.checkpoint, &a.data, &train);
    let err = evaluate(&model, &test, &norm)?;
    println!("test error: {err:.2}% ({} images)", test.len());
    Ok(())
}

fn export_attention(a: ExportArgs) -> CliResult {
    let model = load_model(&a.checkpoint)?;
    if a.list_taps {
        print_taps("model", &model);
        return Ok(());
    }
    let mut mapping: MappingFn = a.mapping.parse()?;
    if let Some(p) = a.p {
        mapping = MappingFn::new(mapping.kind(), p)?;
    }
    let taps: Vec<String> = match &a.taps {
        Some(csv) => csv.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        None => model.tap_names(),
    };
    let (train, test) = data::load(&a.data)?;
    let indices = a
        .images
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&i| i < test.len())
                .ok_or_else(|| usage(format!("bad image index `{s}` (test split has {} images)", test.len())))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let norm = norm_for(&a.checkpoint, &a.data, &train);
    let (images, _) = test.batch(&indices)?;
    let [_, h, w] = test.image_dims();
    let maps = attention_maps(&model, &norm.apply(&images)?, &taps, mapping)?;
    fs::create_dir_all(&a.out)?;
    for (tap, values) in &maps {
        let &[_, mh, mw] = values.dims() else {
            return Err(CliError::Failed(format!("tap {tap}: unexpected map shape {:?}", values.dims())));
        };
        let mut ratios = Vec::new();
        for (k, (&idx, map)) in indices.iter().zip(values.data().chunks(mh * mw)).enumerate() {
            let stem = a.out.join(format!("img{idx}_{tap}_{mapping}"));
            write_pgm(&stem.with_extension("pgm"), map, mh, mw)?;
            write_atmp(&stem.with_extension("atmp"), map, mh, mw)?;
            if let Some(boxes) = &test.boxes {
                let single = values.select_batch(&[k])?.reshape(&[mh, mw])?;
                let (mass, area) = box_mass(&single, &boxes[idx], h, w)?;
                ratios.push(mass / area);
            }
        }
        let extra = if ratios.is_empty() {
            String::new()
        } else {
            format!(
                ", mean in-box mass / box area {:.2}",
                ratios.iter().sum::<f64>() / ratios.len() as f64
            )
        };
        println!("{tap}: {} maps of {mh}x{mw}{extra}", indices.len());
    }
    println!("wrote {} files to {}", 2 * maps.len() * indices.len(), a.out.display());
    Ok(())
}

fn verify(a: VerifyArgs) -> CliResult {
    let opts = VerifyOptions {
        fault: a.fault.map(|FaultArg::ConvBackward| Fault::ConvBackward),
        seed: a.seed,
    };
    let reports = run_all(&opts)?;
    let mut failed = Vec::new();
    for r in &reports {
        let worst = r
            .worst_rel_error
            .map(|e| format!(" worst_rel_err={e:.3e}"))
            .unwrap_or_default();
        match &r.failure {
            None => println!("PASS {:<16} checks={}{worst}", r.name, r.checks),
            Some(f) => {
                println!("FAIL {:<16} checks={}{worst}: {f}", r.name, r.checks);
                failed.push(r.name);
            }
        }
    }
    if failed.is_empty() {
        println!("all {} suites passed", reports.len());
        Ok(())
    } else {
        Err(CliError::Failed(format!("verification failed: {}", failed.join(", "))))
    }
}
