//! `unisynth`: train, evaluate and run the unitary-synthesis pipeline.

mod target;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use unisynth::gradsim::gradcheck_suite;
use unisynth::neural::{
    backprop_check, load_classifier, load_encoder, save_classifier, save_encoder, EncoderModel, FamilyRef,
    TrainingMetadata,
};
use unisynth::synth::{oracle_ladder, OracleConfig, RefineConfig, SynthConfig, Synthesizer};
use unisynth::tasks::{
    eval_classifier, eval_suggester, sweep_rz, train_classifier, train_suggester, write_classifier_report_csv,
    write_confusion_csv, write_curve_csv, write_suggester_csv, write_sweep_csv, write_trace_csv,
    ClassifierTrainConfig, FixedScorer, SuggesterTrainConfig, TemplateScorer,
};
use unisynth::templates::{TemplateFamily, TemplateSpec};

#[derive(Parser)]
#[command(name = "unisynth", version, about = "Template-based unitary synthesis over CZ + ZSX rotations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List a template family and its hash.
    Templates(TemplatesArgs),
    /// Train a template classifier on freshly sampled unitaries.
    TrainClassifier(TrainClassifierArgs),
    /// Train a parameter suggester for one template.
    TrainSuggester(TrainSuggesterArgs),
    /// Accuracy, top-k, confusion and expected visits of a classifier.
    EvalClassifier(EvalClassifierArgs),
    /// Start fidelities of a suggester against random starts.
    EvalSuggester(EvalSuggesterArgs),
    /// Classify, suggest and refine a target unitary.
    Synthesize(SynthesizeArgs),
    /// Classifier output along the CX·RZ(θ)·CX sweep.
    SweepRz(SweepArgs),
    /// Minimal CZ count by the multi-restart optimization ladder.
    Oracle(OracleArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct FamilyArgs {
    #[arg(long, default_value_t = 2)]
    qubits: usize,
    #[arg(long, default_value_t = 3)]
    max_cz: usize,
}

impl FamilyArgs {
    fn family(&self) -> Result<TemplateFamily> {
        Ok(TemplateFamily::new(self.qubits, self.max_cz)?)
    }
}

#[derive(Args)]
struct TemplatesArgs {
    #[command(flatten)]
    family: FamilyArgs,
    /// Show the layered suggester template with this many CZ layers instead.
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainClassifierArgs {
    #[command(flatten)]
    family: FamilyArgs,
    #[arg(long, default_value_t = 20_000)]
    steps: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long)]
    seed: u64,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "256,256")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    log_every: usize,
    /// Rotate each input so its largest entry is real and positive.
    #[arg(long)]
    canonicalize_phase: bool,
    /// Train on inputs multiplied by random d-th roots of unity.
    #[arg(long)]
    phase_augment: bool,
    /// Anneal the learning rate to zero along a half cosine.
    #[arg(long)]
    cosine_decay: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainSuggesterArgs {
    #[command(flatten)]
    family: FamilyArgs,
    #[arg(long, conflicts_with = "layers")]
    template_id: Option<usize>,
    /// Train for the layered template with this many CZ layers.
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long, default_value_t = 20_000)]
    steps: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "256,256")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    log_every: usize,
    /// Anneal the learning rate to zero along a half cosine.
    #[arg(long)]
    cosine_decay: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalClassifierArgs {
    #[arg(long)]
    model: PathBuf,
    /// Fresh samples per template.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalSuggesterArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 500)]
    samples: usize,
    #[arg(long)]
    seed: u64,
    /// Also refine from each suggested start.
    #[arg(long)]
    refine: bool,
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1.0 - 1e-8)]
    threshold: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthesizeArgs {
    /// Builtin name or JSON matrix file.
    #[arg(long)]
    target: String,
    #[command(flatten)]
    family: FamilyArgs,
    /// Use only the layered template with this many CZ layers.
    #[arg(long)]
    layers: Option<usize>,
    /// Classifier model; without one templates are tried in id order.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Suggester models, repeatable.
    #[arg(long)]
    suggester: Vec<PathBuf>,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    #[arg(long, default_value_t = 1.0 - 1e-8)]
    threshold: f64,
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    /// Skip templates with more CZ gates than this.
    #[arg(long)]
    cz_limit: Option<usize>,
    #[arg(long)]
    max_templates: Option<usize>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 201)]
    resolution: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    target: String,
    #[command(flatten)]
    family: FamilyArgs,
    #[arg(long, default_value_t = 20)]
    restarts: usize,
    #[arg(long, default_value_t = 1.0 - 1e-6)]
    threshold: f64,
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: u64,
    /// Random triples per template.
    #[arg(long, default_value_t = 5)]
    samples: usize,
    /// Perturb the analytic gradient; the check must then fail.
    #[arg(long, hide = true)]
    inject_bug: bool,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes `<payload>.meta.json` with provenance that varies between runs.
fn write_meta(payload: &Path, seed: Option<u64>, started: Instant, extra: serde_json::Value) -> Result<()> {
    let mut name = payload.file_stem().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    let meta = json!({
        "tool": "unisynth",
        "version": env!("CARGO_PKG_VERSION"),
        "command_line": std::env::args().collect::<Vec<_>>(),
        "seed": seed,
        "wall_time_s": started.elapsed().as_secs_f64(),
        "extra": extra,
    });
    write_json(&payload.with_file_name(name), &meta)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn refine_config(max_iters: usize, threshold: f64) -> Result<RefineConfig> {
    if !(threshold > 0.0 && threshold < 1.0) {
        bail!("--threshold must lie in (0, 1)");
    }
    let cfg = RefineConfig {
        max_iters,
        target_error: 1.0 - threshold,
        ..RefineConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn suggester_template(family: &FamilyArgs, template_id: Option<usize>, layers: Option<usize>) -> Result<(TemplateFamily, TemplateSpec)> {
    let fam = match layers {
        Some(l) => TemplateFamily::layered(family.qubits, l)?,
        None => family.family()?,
    };
    let t = match (layers, template_id) {
        (Some(_), _) => fam.templates[0].clone(),
        (None, Some(id)) => fam
            .get(id)
            .cloned()
            .with_context(|| format!("template {id} is not in the {}-qubit ≤{}-CZ family", family.qubits, family.max_cz))?,
        (None, None) => bail!("give --template-id or --layers"),
    };
    Ok((fam, t))
}

fn cmd_templates(a: TemplatesArgs) -> Result<()> {
    let fam = match a.layers {
        Some(l) => TemplateFamily::layered(a.family.qubits, l)?,
        None => a.family.family()?,
    };
    println!("id\tcz\tparams\tsequence");
    for t in &fam.templates {
        let seq: Vec<String> = t.cz_sequence.iter().map(|(x, y)| format!("{x}-{y}")).collect();
        println!("{}\t{}\t{}\t{}", t.id, t.cz_count(), t.param_count(), seq.join(" "));
    }
    println!("hash\t{}", fam.hash());
    if let Some(dir) = a.out_dir {
        ensure_dir(&dir)?;
        fs::write(dir.join("family.json"), fam.to_json() + "\n")?;
    }
    Ok(())
}

fn cmd_train_classifier(a: TrainClassifierArgs) -> Result<()> {
    let started = Instant::now();
    let fam = a.family.family()?;
    ensure_dir(&a.out_dir)?;
    let cfg = ClassifierTrainConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        seed: a.seed,
        hidden: a.hidden,
        lr: a.lr,
        log_every: a.log_every,
        canonicalize_phase: a.canonicalize_phase,
        phase_augment: a.phase_augment,
        cosine_decay: a.cosine_decay,
    };
    let (net, curve) = train_classifier(&fam, &cfg, |p| eprintln!("step {} loss {:.5}", p.step, p.value))?;
    let final_loss = curve.last().map_or(f64::NAN, |p| p.value);
    let model = a.out_dir.join("classifier.json");
    let meta = TrainingMetadata {
        seed: a.seed,
        steps: a.steps,
        final_metric: final_loss,
    };
    save_classifier(&net, &meta, &model)?;
    write_curve_csv(a.out_dir.join("classifier_curve.csv"), "loss", &curve)?;
    write_meta(&model, Some(a.seed), started, json!({ "config": cfg }))?;
    println!("final loss {final_loss:.6} after {} steps -> {}", a.steps, model.display());
    Ok(())
}

fn cmd_train_suggester(a: TrainSuggesterArgs) -> Result<()> {
    let started = Instant::now();
    let (fam, t) = suggester_template(&a.family, a.template_id, a.layers)?;
    ensure_dir(&a.out_dir)?;
    let cfg = SuggesterTrainConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        seed: a.seed,
        hidden: a.hidden,
        lr: a.lr,
        log_every: a.log_every,
        cosine_decay: a.cosine_decay,
    };
    let (enc, curve) = train_suggester(FamilyRef::of(&fam), &t, &cfg, |p| {
        eprintln!("step {} fidelity {:.5}", p.step, p.value)
    })?;
    let final_f = curve.last().map_or(f64::NAN, |p| p.value);
    let model = a.out_dir.join(format!("suggester_t{}.json", t.id));
    let meta = TrainingMetadata {
        seed: a.seed,
        steps: a.steps,
        final_metric: final_f,
    };
    save_encoder(&enc, &meta, &model)?;
    write_curve_csv(a.out_dir.join(format!("suggester_t{}_curve.csv", t.id)), "fidelity", &curve)?;
    write_meta(&model, Some(a.seed), started, json!({ "config": cfg }))?;
    println!("final mean fidelity {final_f:.6} after {} steps -> {}", a.steps, model.display());
    Ok(())
}

fn cmd_eval_classifier(a: EvalClassifierArgs) -> Result<()> {
    let started = Instant::now();
    let (net, _) = load_classifier(&a.model, None)?;
    let fam = TemplateFamily::new(net.family.n_qubits, net.family.max_cz)?;
    if fam.hash() != net.family.hash {
        bail!("model family hash does not match the canonical family");
    }
    ensure_dir(&a.out_dir)?;
    let report = eval_classifier(&net, &fam, a.samples, a.seed)?;
    let out = a.out_dir.join("classifier_eval.json");
    write_json(&out, &report)?;
    write_classifier_report_csv(a.out_dir.join("classifier_eval.csv"), &report)?;
    write_confusion_csv(a.out_dir.join("confusion.csv"), &report.confusion)?;
    write_meta(&out, Some(a.seed), started, json!({}))?;
    let top2 = report.top_k_accuracy.get(&2).copied().unwrap_or(1.0);
    println!(
        "accuracy {:.4} top2 {:.4} expected_visits {:.3} over {} samples",
        report.accuracy, top2, report.expected_visits, report.n_samples
    );
    Ok(())
}

fn cmd_eval_suggester(a: EvalSuggesterArgs) -> Result<()> {
    let started = Instant::now();
    let (enc, _) = load_encoder(&a.model, None)?;
    ensure_dir(&a.out_dir)?;
    let rcfg = refine_config(a.max_iters, a.threshold)?;
    let report = eval_suggester(&enc, a.samples, a.refine.then_some(&rcfg), a.seed)?;
    let out = a.out_dir.join(format!("suggester_t{}_eval.json", enc.template.id));
    write_json(&out, &report)?;
    write_suggester_csv(a.out_dir.join(format!("suggester_t{}_eval.csv", enc.template.id)), &report)?;
    write_meta(&out, Some(a.seed), started, json!({}))?;
    println!(
        "model start mean {:.4} random start mean {:.4} over {} samples",
        report.model_stats.mean, report.random_stats.mean, report.n_samples
    );
    Ok(())
}

/// Returns whether synthesis succeeded.
fn cmd_synthesize(a: SynthesizeArgs) -> Result<bool> {
    let started = Instant::now();
    let n = a.family.qubits;
    let target = target::resolve(&a.target, n)?;
    let fam = match a.layers {
        Some(l) => TemplateFamily::layered(n, l)?,
        None => a.family.family()?,
    };
    let classifier = match &a.model {
        Some(p) => Some(load_classifier(p, Some(&fam.hash()))?.0),
        None => None,
    };
    let encoders: Vec<EncoderModel> = a
        .suggester
        .iter()
        .map(|p| load_encoder(p, Some(&fam.hash())).map(|(e, _)| e))
        .collect::<unisynth::Result<_>>()?;
    let uniform = FixedScorer::new(n, vec![1.0; fam.len()]);
    let scorer: &dyn TemplateScorer = match &classifier {
        Some(c) => c,
        None => &uniform,
    };
    let synth = Synthesizer::new(&fam, scorer, encoders.iter())?;
    let cfg = SynthConfig {
        refine: RefineConfig {
            log_every: 10,
            ..refine_config(a.max_iters, a.threshold)?
        },
        restarts: a.restarts,
        max_cz: a.cz_limit,
        max_templates: a.max_templates,
        seed: a.seed,
    };
    let report = synth.synthesize(&target, &cfg)?;
    ensure_dir(&a.out_dir)?;
    let out = a.out_dir.join("synthesis.json");
    write_json(&out, &report)?;
    write_trace_csv(a.out_dir.join("synthesis_trace.csv"), &report.trace)?;
    write_meta(&out, Some(a.seed), started, json!({ "timings": report.timings }))?;
    match report.template_id {
        Some(id) if report.success => println!(
            "success: template {id} ({} CZ), error {:.3e}, {} template(s) visited",
            report.cz_count.unwrap_or(0),
            1.0 - report.fidelity,
            report.templates_visited.len()
        ),
        _ => println!(
            "failed: best error {:.3e} after {} template(s)",
            1.0 - report.fidelity,
            report.templates_visited.len()
        ),
    }
    Ok(report.success)
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let started = Instant::now();
    let (net, _) = load_classifier(&a.model, None)?;
    ensure_dir(&a.out_dir)?;
    let rows = sweep_rz(&net, a.resolution)?;
    let out = a.out_dir.join("sweep_rz.csv");
    write_sweep_csv(&out, &rows)?;
    write_meta(&out, None, started, json!({}))?;
    let mut counts = vec![0usize; net.family.n_templates];
    for r in &rows {
        counts[r.argmax] += 1;
    }
    println!("argmax counts per template {counts:?} -> {}", out.display());
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> Result<()> {
    let started = Instant::now();
    let target = target::resolve(&a.target, a.family.qubits)?;
    let cfg = OracleConfig {
        restarts: a.restarts,
        threshold: a.threshold,
        max_cz: a.family.max_cz,
        seed: a.seed,
        max_iters: a.max_iters,
    };
    let result = oracle_ladder(&target, a.family.qubits, &cfg)?;
    for r in &result.rungs {
        eprintln!("{} CZ: best fidelity {:.10} (template {})", r.cz_count, r.best_fidelity, r.best_template);
    }
    if let Some(dir) = a.out_dir {
        ensure_dir(&dir)?;
        let out = dir.join("oracle.json");
        write_json(&out, &result)?;
        write_meta(&out, Some(a.seed), started, json!({}))?;
    }
    println!("min_cz {}", result.min_cz);
    Ok(())
}

/// Returns whether every check passed.
fn cmd_gradcheck(a: GradcheckArgs) -> Result<bool> {
    let circuit = gradcheck_suite(a.seed, a.samples, a.inject_bug)?;
    println!(
        "circuit gradients: {} triples, {} components, max rel err {:.3e} (tol {:.0e}) {}",
        circuit.triples,
        circuit.components,
        circuit.max_rel_err,
        circuit.tolerance,
        if circuit.passed { "ok" } else { "FAILED" }
    );
    let nets = backprop_check(a.seed)?;
    println!(
        "backprop: classifier {:.3e}, encoder {:.3e} (tol {:.0e}) {}",
        nets.classifier_max_rel_err,
        nets.encoder_max_rel_err,
        nets.tolerance,
        if nets.passed { "ok" } else { "FAILED" }
    );
    Ok(circuit.passed && nets.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Templates(a) => cmd_templates(a).map(|_| true),
        Command::TrainClassifier(a) => cmd_train_classifier(a).map(|_| true),
        Command::TrainSuggester(a) => cmd_train_suggester(a).map(|_| true),
        Command::EvalClassifier(a) => cmd_eval_classifier(a).map(|_| true),
        Command::EvalSuggester(a) => cmd_eval_suggester(a).map(|_| true),
        Command::Synthesize(a) => cmd_synthesize(a),
        Command::SweepRz(a) => cmd_sweep(a).map(|_| true),
        Command::Oracle(a) => cmd_oracle(a).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
