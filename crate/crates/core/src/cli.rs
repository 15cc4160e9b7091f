//! The `mlvc` command line: `train`, `transform`, `verify` and `report`.
//!
//! Exit codes: 0 success, 1 failed property check, 2 invalid config or
//! incompatible inputs, 3 data / I/O / corrupt file, 4 numeric failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{load_corpus, Dataset};
use crate::error::{Error, Result};
use crate::io::{
    load_checkpoint, read_metrics, save_checkpoint, write_merged, CheckpointMeta, CorpusInfo,
    ExperimentConfig, Manifest, MetricsWriter, RunSummary, StoredParams, TOOL_VERSION,
};
use crate::model::{ModelConfig, ParamSet};
use crate::projection::{
    coalesce_model, decoalesce_model, interpolate, DepthFamily, LevelMapping, WidthFamily,
};
use crate::tensor::{DType, Element};
use crate::train::{
    flops_saving, run_baseline_with, run_vcycle_with, RunContext, RunOutput, Saving,
};
use crate::verify::{run_suite, VerifyOptions, VerifySizes, ALGEBRA_TOL};

#[derive(Parser, Debug)]
#[command(
    name = "mlvc",
    version,
    about = "Multi-level V-cycle training for small transformers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model from scratch or with the V-cycle.
    Train(TrainArgs),
    /// Coalesce, de-coalesce or interpolate checkpoints.
    Transform(TransformArgs),
    /// Run the invariant suite at 64-bit.
    Verify(VerifyArgs),
    /// FLOPs and walltime saving between two metrics files.
    Report(ReportArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Baseline,
    Vcycle,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(value_enum)]
    pub mode: TrainMode,
    /// Plain-text training corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Experiment JSON (`{"model": {...}, "train": {...}}`) or a run manifest.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Suppress per-evaluation progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformOp {
    Coalesce,
    Decoalesce,
    Interpolate,
}

#[derive(Args, Debug)]
pub struct TransformArgs {
    #[arg(value_enum)]
    pub op: TransformOp,
    /// Input checkpoint; give it twice for `interpolate` (a, then b).
    #[arg(long = "in", required = true, num_args = 1)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Weight of the second input for `interpolate`.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value = "stack")]
    pub width_family: WidthFamily,
    #[arg(long, default_value = "adjacent")]
    pub depth_family: DepthFamily,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteSize {
    Default,
    Tiny,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "default")]
    pub sizes: SuiteSize,
    /// Negative control: run the symmetry-breaking check with alpha = 1,
    /// which must fail.
    #[arg(long)]
    pub break_symmetry_check: bool,
    /// Also load and check a checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Compare `--checkpoint` tensor by tensor against this one.
    #[arg(long, requires = "checkpoint")]
    pub against: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub vcycle: PathBuf,
    #[arg(long)]
    pub target_loss: f64,
    /// Merged loss-vs-FLOPs CSV for plotting.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const EXIT_PROPERTY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Constraint(_)
        | Error::Shape(_)
        | Error::SingularNormalization(_) => EXIT_CONFIG,
        Error::Data(_) | Error::Io { .. } | Error::Format(_) | Error::Csv(_) | Error::Json(_) => {
            EXIT_DATA
        }
        Error::NonFinite { .. } | Error::NonFiniteLoss { .. } | Error::NotScalar(_) => EXIT_NUMERIC,
        Error::TokenOutOfRange { .. } | Error::SequenceTooLong { .. } => EXIT_CONFIG,
    }
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn run_from<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train(a) => train(&a).map(|_| 0),
        Command::Transform(a) => transform(&a).map(|_| 0),
        Command::Verify(a) => verify(&a),
        Command::Report(a) => report(&a).map(|_| 0),
    }
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut exp = ExperimentConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        exp.train.seed = s;
    }
    let corpus = load_corpus(&a.corpus, exp.text_mode, exp.train.seq_len)?;
    let data = Dataset::new(&corpus);
    let config = exp.model.resolve(data.vocab.size(), exp.train.seq_len)?;
    if a.mode == TrainMode::Vcycle {
        exp.train.level_mappings(&config)?;
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let mode = match a.mode {
        TrainMode::Baseline => "baseline",
        TrainMode::Vcycle => "vcycle",
    };
    let mut manifest = Manifest {
        tool: "mlvc".into(),
        version: TOOL_VERSION.into(),
        mode: mode.into(),
        model: (&config).into(),
        train: exp.train.clone(),
        text_mode: exp.text_mode,
        resolved_model: config.clone(),
        corpus: CorpusInfo::new(&a.corpus, &corpus, &data),
        summary: None,
    };
    let manifest_path = a.out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    let summary = match exp.train.dtype {
        DType::F32 => train_as::<f32>(a, &exp, &config, &data)?,
        DType::F64 => train_as::<f64>(a, &exp, &config, &data)?,
    };
    println!(
        "{mode}: {} steps, {} FLOPs, final val loss {}",
        summary.steps,
        summary.total_flops,
        summary
            .final_val_loss
            .map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    manifest.summary = Some(summary);
    manifest.save(&manifest_path)
}

fn train_as<T: Element>(
    a: &TrainArgs,
    exp: &ExperimentConfig,
    config: &ModelConfig,
    data: &Dataset,
) -> Result<RunSummary> {
    let mut writer = MetricsWriter::create(&a.out_dir.join("metrics.csv"))?;
    let mut write_err: Option<Error> = None;
    let quiet = a.quiet;
    let ctx = RunContext::new(&exp.train, data)?.with_observer(|row| {
        if write_err.is_none() {
            if let Err(e) = writer.write(row) {
                write_err = Some(e);
            }
        }
        if let (false, Some(v)) = (quiet, row.val_loss) {
            println!(
                "step {:>6}  level {}  {:<8}  train {:.4}  val {:.4}  lr {:.2e}",
                row.step,
                row.level,
                row.phase.name(),
                row.train_loss,
                v,
                row.lr
            );
        }
    });
    let out: RunOutput<T> = match a.mode {
        TrainMode::Baseline => run_baseline_with(config, &exp.train, ctx)?,
        TrainMode::Vcycle => run_vcycle_with(config, &exp.train, ctx)?,
    };
    if let Some(e) = write_err {
        return Err(e);
    }
    let meta = CheckpointMeta {
        model_config: config.clone(),
        vcycle_config: Some(exp.train.clone()),
        step: out.ledger.total_steps(),
        level: 1,
    };
    save_checkpoint(&a.out_dir.join("checkpoint.mlvc"), &meta, &out.params)?;
    Ok(RunSummary {
        steps: out.ledger.total_steps(),
        total_flops: out.ledger.total_flops(),
        final_val_loss: out.final_val_loss(),
        wall_seconds: out.ledger.wall_seconds(),
        ledger: out.ledger,
    })
}

fn describe(tag: &str, c: &ModelConfig, params: usize) {
    println!(
        "{tag}: L={} E={} H={} D={} FFN={} T={} S={}  params {params}",
        c.num_layers,
        c.hidden,
        c.num_heads,
        c.head_dim,
        c.ffn_hidden(),
        c.vocab,
        c.max_seq
    );
}

fn block_params(c: &ModelConfig) -> usize {
    crate::model::param_specs(c)
        .iter()
        .filter(|s| s.layer.is_some())
        .map(|s| s.shape.iter().product::<usize>())
        .sum()
}

fn apply<T: Element>(
    stored: &StoredParams,
    f: impl Fn(&ParamSet<T>) -> Result<ParamSet<T>>,
) -> Result<ParamSet<T>> {
    f(&stored.cast::<T>())
}

fn transform(a: &TransformArgs) -> Result<()> {
    let want_inputs = if a.op == TransformOp::Interpolate {
        2
    } else {
        1
    };
    if a.inputs.len() != want_inputs {
        return Err(Error::Config(format!(
            "{:?} takes {want_inputs} --in checkpoint(s), got {}",
            a.op,
            a.inputs.len()
        )));
    }
    let first = load_checkpoint(&a.inputs[0])?;
    let cfg_in = first.meta.model_config.clone();
    first.params.cast::<f64>().check_config(&cfg_in)?;
    describe("in ", &cfg_in, first.params.num_params());

    let (cfg_out, level) = match a.op {
        TransformOp::Coalesce => {
            let m = LevelMapping::from_families(&cfg_in, a.width_family, a.depth_family)?;
            (m.config_small.clone(), first.meta.level + 1)
        }
        TransformOp::Decoalesce => {
            let large = large_config_for(&cfg_in, a.width_family, a.depth_family);
            (large, first.meta.level.saturating_sub(1).max(1))
        }
        TransformOp::Interpolate => (cfg_in.clone(), first.meta.level),
    };

    let meta = CheckpointMeta {
        model_config: cfg_out.clone(),
        vcycle_config: first.meta.vcycle_config.clone(),
        step: first.meta.step,
        level,
    };
    macro_rules! run_op {
        ($t:ty) => {{
            let out: ParamSet<$t> = match a.op {
                TransformOp::Coalesce => {
                    let m = LevelMapping::from_families(&cfg_in, a.width_family, a.depth_family)?;
                    apply(&first.params, |p| coalesce_model(p, &m))?
                }
                TransformOp::Decoalesce => {
                    let m = LevelMapping::from_families(&cfg_out, a.width_family, a.depth_family)?;
                    if m.config_small != cfg_in {
                        return Err(Error::Config(
                            "input checkpoint is not the small level of the requested families"
                                .into(),
                        ));
                    }
                    apply(&first.params, |p| decoalesce_model(p, &m))?
                }
                TransformOp::Interpolate => {
                    let alpha = a
                        .alpha
                        .ok_or_else(|| Error::Config("interpolate needs --alpha".into()))?;
                    let second = load_checkpoint(&a.inputs[1])?;
                    if second.meta.model_config != cfg_in {
                        return Err(Error::Config(
                            "checkpoints have different model configs".into(),
                        ));
                    }
                    let b = second.params.cast::<$t>();
                    apply(&first.params, |p| interpolate(p, &b, alpha))?
                }
            };
            save_checkpoint(&a.out, &meta, &out)?;
            out.num_params()
        }};
    }
    let n_out = match first.params.dtype() {
        DType::F32 => run_op!(f32),
        DType::F64 => run_op!(f64),
    };
    describe("out", &cfg_out, n_out);
    let (bi, bo) = (block_params(&cfg_in), block_params(&cfg_out));
    let ratio = if bi >= bo {
        bi as f64 / bo as f64
    } else {
        bo as f64 / bi as f64
    };
    println!(
        "total params {} -> {n_out}, transformer-block params {bi} -> {bo} ({ratio:.2}x)",
        first.params.num_params()
    );
    Ok(())
}

/// The large config whose coalescing under the given families yields `small`.
fn large_config_for(small: &ModelConfig, w: WidthFamily, d: DepthFamily) -> ModelConfig {
    let mut large = if w == WidthFamily::Identity {
        small.clone()
    } else {
        small.refined(false)
    };
    if d != DepthFamily::Identity {
        large.num_layers *= 2;
    }
    large
}

fn verify(a: &VerifyArgs) -> Result<i32> {
    let mut failed = 0;
    if let Some(path) = &a.checkpoint {
        let ck = load_checkpoint(path)?;
        let p = ck.params.cast::<f64>();
        p.check_config(&ck.meta.model_config)?;
        let finite = p.check_finite().is_ok();
        println!(
            "{} checkpoint {} ({} params, {})",
            if finite { "PASS" } else { "FAIL" },
            path.display(),
            ck.params.num_params(),
            ck.params.dtype().name()
        );
        failed += usize::from(!finite);
        if let Some(other) = &a.against {
            let o = load_checkpoint(other)?.params.cast::<f64>();
            let diff = p.max_abs_diff(&o)?;
            let ok = diff <= ALGEBRA_TOL;
            println!(
                "{} match    max |diff| {diff:.3e} (<= {ALGEBRA_TOL:.0e}) against {}",
                if ok { "PASS" } else { "FAIL" },
                other.display()
            );
            failed += usize::from(!ok);
        }
    }
    let opts = VerifyOptions {
        seed: a.seed,
        sizes: match a.sizes {
            SuiteSize::Default => VerifySizes::default(),
            SuiteSize::Tiny => VerifySizes::tiny(),
        },
        break_alpha: if a.break_symmetry_check { 1.0 } else { 0.5 },
    };
    for r in run_suite(&opts)? {
        println!("{r}");
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        println!("{failed} check(s) failed");
        Ok(EXIT_PROPERTY)
    } else {
        println!("all checks passed");
        Ok(0)
    }
}

fn report(a: &ReportArgs) -> Result<()> {
    let base = read_metrics(&a.baseline)?;
    let cyc = read_metrics(&a.vcycle)?;
    let final_of = |rows: &[crate::train::MetricsRow]| rows.iter().rev().find_map(|r| r.val_loss);
    println!(
        "final val loss: baseline {}, v-cycle {}",
        fmt_opt(final_of(&base)),
        fmt_opt(final_of(&cyc))
    );
    match flops_saving(&base, &cyc, a.target_loss) {
        Saving::Reached {
            flops,
            walltime,
            baseline,
            vcycle,
        } => {
            println!(
                "target {:.4}: baseline step {} ({} FLOPs, {:.1}s), v-cycle step {} ({} FLOPs, {:.1}s)",
                a.target_loss,
                baseline.step,
                baseline.cum_flops,
                baseline.wall_seconds,
                vcycle.step,
                vcycle.cum_flops,
                vcycle.wall_seconds
            );
            println!("saving (FLOPs): {:.1}%", 100.0 * flops);
            println!("saving (walltime): {:.1}%", 100.0 * walltime);
        }
        Saving::NotReached { baseline, vcycle } => {
            println!(
                "not-reached: target {:.4} (baseline {}, v-cycle {})",
                a.target_loss,
                if baseline { "reached" } else { "not reached" },
                if vcycle { "reached" } else { "not reached" }
            );
        }
    }
    if let Some(out) = &a.out {
        write_merged(out, &[("baseline", &base), ("vcycle", &cyc)])?;
        println!("merged curves written to {}", out.display());
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.4}"))
}

/// Convenience for tests and examples: the checkpoint's config.
pub fn checkpoint_config(path: &Path) -> Result<ModelConfig> {
    Ok(load_checkpoint(path)?.meta.model_config)
}
