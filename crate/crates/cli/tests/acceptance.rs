//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Trained models land in the test tmp dir. Set `UNISYNTH_ACCEPTANCE_REUSE=1`
//! to reuse models from a previous run with the same configs.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::Rng;

use unisynth::gradsim::gradcheck_suite;
use unisynth::neural::{
    backprop_check, load_classifier, load_encoder, save_classifier, save_encoder, ClassifierNet, EncoderModel,
    FamilyRef, TrainingMetadata,
};
use unisynth::qmat::{standard_gate, CMatrix, GateName};
use unisynth::synth::{oracle_min_cz, refine, OracleConfig, RefineConfig, SynthConfig, Synthesizer};
use unisynth::tasks::{
    eval_classifier, eval_suggester, sample_rng, sweep_rz, sweep_unitary, train_classifier, train_suggester,
    write_confusion_csv, ClassifierTrainConfig, Stream, SuggesterEvalReport, SuggesterTrainConfig,
};
use unisynth::templates::{assemble, enumerate_templates, sample_params, slots_to_params, TemplateFamily, TemplateSpec};

fn classifier_2q() -> ClassifierTrainConfig {
    ClassifierTrainConfig {
        steps: 20_000,
        batch_size: 256,
        seed: 0,
        hidden: vec![256, 256],
        phase_augment: true,
        ..Default::default()
    }
}

fn classifier_3q3() -> ClassifierTrainConfig {
    ClassifierTrainConfig {
        steps: 100_000,
        batch_size: 256,
        seed: 0,
        hidden: vec![512, 512],
        ..Default::default()
    }
}

fn classifier_3q5() -> ClassifierTrainConfig {
    ClassifierTrainConfig {
        steps: 100_000,
        batch_size: 256,
        seed: 0,
        hidden: vec![256, 256],
        ..Default::default()
    }
}

fn suggester_2q(t: &TemplateSpec) -> SuggesterTrainConfig {
    let (steps, width) = if t.cz_count() == 2 { (100_000, 512) } else { (20_000, 256) };
    SuggesterTrainConfig {
        steps,
        batch_size: 64,
        seed: 0,
        hidden: vec![width, width],
        cosine_decay: true,
        ..Default::default()
    }
}

fn suggester_6_layer() -> SuggesterTrainConfig {
    SuggesterTrainConfig {
        steps: 100_000,
        batch_size: 64,
        seed: 0,
        hidden: vec![512, 512],
        cosine_decay: true,
        ..Default::default()
    }
}

fn suggester_10_layer() -> SuggesterTrainConfig {
    SuggesterTrainConfig {
        steps: 20_000,
        batch_size: 64,
        seed: 0,
        hidden: vec![256, 256],
        cosine_decay: true,
        ..Default::default()
    }
}

struct Gate {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

struct Work {
    dir: PathBuf,
    reuse: bool,
}

impl Work {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Trains (or reloads) a classifier; returns it with its training seconds.
    fn classifier(&self, name: &str, fam: &TemplateFamily, cfg: &ClassifierTrainConfig) -> (ClassifierNet, f64) {
        let model = self.path(&format!("{name}.json"));
        let secs = self.path(&format!("{name}.train_s"));
        if self.reuse && model.exists() && secs.exists() {
            if let Ok((net, _)) = load_classifier(&model, Some(&fam.hash())) {
                return (net, read_secs(&secs));
            }
        }
        let started = Instant::now();
        let (net, curve) = train_classifier(fam, cfg, |_| {}).expect("classifier training");
        let elapsed = started.elapsed().as_secs_f64();
        let meta = TrainingMetadata {
            seed: cfg.seed,
            steps: cfg.steps,
            final_metric: curve.last().map_or(f64::NAN, |p| p.value),
        };
        save_classifier(&net, &meta, &model).expect("save classifier");
        fs::write(&secs, format!("{elapsed}")).expect("write timing");
        (net, elapsed)
    }

    fn suggester(&self, name: &str, fam: &TemplateFamily, t: &TemplateSpec, cfg: &SuggesterTrainConfig) -> (EncoderModel, f64) {
        let model = self.path(&format!("{name}.json"));
        let secs = self.path(&format!("{name}.train_s"));
        if self.reuse && model.exists() && secs.exists() {
            if let Ok((enc, _)) = load_encoder(&model, Some(&fam.hash())) {
                return (enc, read_secs(&secs));
            }
        }
        let started = Instant::now();
        let (enc, curve) = train_suggester(FamilyRef::of(fam), t, cfg, |_| {}).expect("suggester training");
        let elapsed = started.elapsed().as_secs_f64();
        let meta = TrainingMetadata {
            seed: cfg.seed,
            steps: cfg.steps,
            final_metric: curve.last().map_or(f64::NAN, |p| p.value),
        };
        save_encoder(&enc, &meta, &model).expect("save suggester");
        fs::write(&secs, format!("{elapsed}")).expect("write timing");
        (enc, elapsed)
    }
}

fn read_secs(path: &Path) -> f64 {
    fs::read_to_string(path).ok().and_then(|s| s.trim().parse().ok()).unwrap_or(f64::NAN)
}

fn gate(id: usize, name: &'static str, passed: bool, detail: String) -> Gate {
    let g = Gate { id, name, passed, detail };
    println!("{} {:>2} {}: {}", if g.passed { "PASS" } else { "FAIL" }, g.id, g.name, g.detail);
    g
}

fn gradients() -> Gate {
    let started = Instant::now();
    let circuit = gradcheck_suite(0, 1, false).expect("gradcheck");
    let nets = backprop_check(0).expect("backprop check");
    let secs = started.elapsed().as_secs_f64();
    let passed = circuit.triples >= 50 && circuit.max_rel_err <= 1e-5 && nets.passed && secs < 60.0;
    gate(
        1,
        "gradient correctness",
        passed,
        format!(
            "{} triples max rel err {:.2e}; classifier {:.2e} encoder {:.2e}; {secs:.1}s",
            circuit.triples, circuit.max_rel_err, nets.classifier_max_rel_err, nets.encoder_max_rel_err
        ),
    )
}

fn enumeration() -> Gate {
    let counts: Vec<usize> = [(2, 3), (3, 3), (3, 5)]
        .iter()
        .map(|&(n, k)| enumerate_templates(n, k).map_or(0, |v| v.len()))
        .collect();
    gate(2, "enumeration counts", counts == [4, 15, 63], format!("{counts:?}"))
}

fn param_counts() -> Gate {
    let two: Vec<usize> = enumerate_templates(2, 3).unwrap().iter().map(|t| t.param_count()).collect();
    let six = TemplateSpec::layered(3, 6).unwrap().param_count();
    let ten = TemplateSpec::layered(3, 10).unwrap().param_count();
    let passed = two == [6, 12, 16, 20] && six == 45 && ten == 69;
    gate(3, "parameter counts", passed, format!("2q {two:?}, 6-layer {six}, 10-layer {ten}"))
}

fn oracle() -> Gate {
    let started = Instant::now();
    let g = |name| standard_gate(name, None).unwrap();
    let local = standard_gate(GateName::Rz, Some(0.7)).unwrap().kron(&g(GateName::H));
    let cases: Vec<(&str, CMatrix, usize)> = vec![
        ("identity", CMatrix::identity(4), 0),
        ("local", local, 0),
        ("cx", g(GateName::Cx), 1),
        ("cz", g(GateName::Cz), 1),
        ("zz(pi/2)", sweep_unitary(PI / 2.0), 1),
        ("zz(0.3pi)", sweep_unitary(0.3 * PI), 2),
        ("swap", g(GateName::Swap), 3),
    ];
    let mut wrong = Vec::new();
    for seed in 0..3 {
        let cfg = OracleConfig { seed, ..Default::default() };
        for (name, u, want) in &cases {
            let got = oracle_min_cz(u, 2, &cfg).map_or(usize::MAX, |k| k);
            if got != *want {
                wrong.push(format!("{name} seed {seed} -> {got}"));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let detail = if wrong.is_empty() {
        format!("{} cases x 3 seeds; {secs:.1}s", cases.len())
    } else {
        wrong.join(", ")
    };
    gate(4, "oracle ground truth", wrong.is_empty() && secs < 600.0, detail)
}

fn classifier_2q_gate(work: &Work) -> (Gate, ClassifierNet) {
    let fam = TemplateFamily::new(2, 3).unwrap();
    let cfg = classifier_2q();
    let (net, secs) = work.classifier("classifier_2q", &fam, &cfg);
    let r = eval_classifier(&net, &fam, 1000, 1).expect("eval");
    let passed = r.n_samples == 4000 && r.accuracy >= 0.90 && secs <= 1800.0;
    let g = gate(
        5,
        "2-qubit classifier",
        passed,
        format!("accuracy {:.4} on {} samples; trained {} steps in {secs:.0}s", r.accuracy, r.n_samples, cfg.steps),
    );
    (g, net)
}

fn classifier_3q3_gate(work: &Work) -> (Gate, ClassifierNet) {
    let fam = TemplateFamily::new(3, 3).unwrap();
    let cfg = classifier_3q3();
    let (net, secs) = work.classifier("classifier_3q3", &fam, &cfg);
    let r = eval_classifier(&net, &fam, 1000, 1).expect("eval");
    let csv = work.path("confusion_3q3.csv");
    write_confusion_csv(&csv, &r.confusion).expect("confusion csv");
    let top2 = r.top_k_accuracy.get(&2).copied().unwrap_or(0.0);
    let passed = r.n_samples == 15_000 && r.accuracy >= 0.60 && top2 >= 0.90 && secs <= 7200.0 && csv.exists();
    let g = gate(
        6,
        "3-qubit 3-CZ classifier",
        passed,
        format!(
            "top-1 {:.4} top-2 {top2:.4} on {} samples; trained in {secs:.0}s; confusion {}",
            r.accuracy,
            r.n_samples,
            csv.display()
        ),
    );
    (g, net)
}

fn classifier_3q5_gate(work: &Work) -> Gate {
    let fam = TemplateFamily::new(3, 5).unwrap();
    let cfg = classifier_3q5();
    let (net, secs) = work.classifier("classifier_3q5", &fam, &cfg);
    let r = eval_classifier(&net, &fam, 200, 1).expect("eval");
    let passed = r.n_samples == 63 * 200 && r.expected_visits <= 16.0;
    gate(
        7,
        "3-qubit 5-CZ ranking",
        passed,
        format!(
            "expected visits {:.3} (exhaustive 31.5), top-1 {:.4} on {} samples; trained in {secs:.0}s",
            r.expected_visits, r.accuracy, r.n_samples
        ),
    )
}

fn suggester_summary(r: &SuggesterEvalReport) -> String {
    format!("t{} model {:.4} random {:.4}", r.template_id, r.model_stats.mean, r.random_stats.mean)
}

fn suggesters_2q_gate(work: &Work) -> Gate {
    let fam = TemplateFamily::new(2, 3).unwrap();
    let mut passed = true;
    let mut parts = Vec::new();
    for t in &fam.templates {
        let (enc, secs) = work.suggester(&format!("suggester_2q_t{}", t.id), &fam, t, &suggester_2q(t));
        let r = eval_suggester(&enc, 500, None, 1).expect("eval");
        let floor = if t.cz_count() == 0 { 0.90 } else { 0.80 };
        let gap = r.model_stats.mean - r.random_stats.mean;
        passed &= r.model_stats.mean >= floor && gap >= 0.3 && secs <= 1800.0;
        parts.push(format!("{} ({secs:.0}s)", suggester_summary(&r)));
    }
    gate(8, "2-qubit suggesters", passed, parts.join("; "))
}

fn suggester_6_layer_gate(work: &Work) -> Gate {
    let fam = TemplateFamily::layered(3, 6).unwrap();
    let t = &fam.templates[0];
    let (enc, secs) = work.suggester("suggester_l6", &fam, t, &suggester_6_layer());
    let r = eval_suggester(&enc, 100, None, 1).expect("eval");
    let passed = r.model_stats.mean >= 0.30 && r.model_stats.mean >= r.random_stats.mean + 0.15;
    gate(9, "3-qubit 6-layer suggester", passed, format!("{} ({secs:.0}s)", suggester_summary(&r)))
}

fn toffoli_gate(work: &Work) -> Gate {
    let started = Instant::now();
    let fam = TemplateFamily::layered(3, 10).unwrap();
    let t = &fam.templates[0];
    let target = standard_gate(GateName::Toffoli, None).unwrap();
    let cfg = RefineConfig {
        max_iters: 5000,
        target_error: 1e-4,
        ..Default::default()
    };
    let mut random_hits = Vec::new();
    for i in 0..5 {
        let mut rng = sample_rng(0, Stream::RandomStart, i);
        let run = refine(t, &sample_params(t, &mut rng), &target, &cfg).expect("refine");
        if run.converged {
            random_hits.push(run.iterations);
        }
    }
    let (enc, train_s) = work.suggester("suggester_l10", &fam, t, &suggester_10_layer());
    let resumed = Instant::now();
    let p0 = slots_to_params(t, &enc.forward(&target).expect("forward").slots).expect("projection");
    let cfg = RefineConfig { max_iters: 2500, ..cfg };
    let run = refine(t, &p0, &target, &cfg).expect("refine");
    let secs = (resumed - started).as_secs_f64() + resumed.elapsed().as_secs_f64();
    let passed = !random_hits.is_empty() && run.converged && 1.0 - run.fidelity <= 1e-4 && secs < 900.0;
    gate(
        10,
        "Toffoli compilation",
        passed,
        format!(
            "random starts converged {}/5 (iterations {random_hits:?}); suggested start {:.4} -> error {:.2e} in {} iterations; {secs:.0}s compiling, {train_s:.0}s training",
            random_hits.len(),
            run.start_fidelity,
            1.0 - run.fidelity,
            run.iterations
        ),
    )
}

fn sweep_gate(net: &ClassifierNet) -> Gate {
    let rows = sweep_rz(net, 201).expect("sweep");
    let zero_cz = |theta: f64| rows.iter().find(|r| (r.theta - theta).abs() < 1e-12).map(|r| r.argmax) == Some(0);
    let ends = zero_cz(-PI) && zero_cz(0.0) && zero_cz(PI);
    let band: Vec<_> = rows
        .iter()
        .filter(|r| {
            let x = (r.theta / PI).abs();
            (0.1..=0.4).contains(&x) || (0.6..=0.9).contains(&x)
        })
        .collect();
    let two = band.iter().filter(|r| r.argmax == 2).count();
    let frac = two as f64 / band.len() as f64;
    let shape: String = rows.iter().map(|r| char::from(b'0' + r.argmax as u8)).collect();
    gate(
        11,
        "RZ sweep",
        ends && frac >= 0.70,
        format!("0-CZ at -pi/0/pi: {ends}; 2-CZ in band {two}/{} ({frac:.3}); argmax {shape}", band.len()),
    )
}

fn pipeline_gate(net: &ClassifierNet) -> Gate {
    let started = Instant::now();
    let fam = TemplateFamily::new(3, 3).unwrap();
    let synth = Synthesizer::new(&fam, net, []).expect("synthesizer");
    let cfg = SynthConfig {
        refine: RefineConfig {
            target_error: 1e-6,
            ..Default::default()
        },
        restarts: 8,
        max_templates: Some(5),
        seed: 12,
        ..Default::default()
    };
    let mut failures = Vec::new();
    let mut visits = 0;
    for i in 0..50 {
        let mut rng = sample_rng(12, Stream::Init, i);
        let source = &fam.templates[rng.gen_range(0..fam.len())];
        let target = assemble(source, &sample_params(source, &mut rng)).unwrap();
        let r = synth.synthesize(&target, &cfg).expect("synthesize");
        visits += r.templates_visited.len();
        let ok = r.success
            && r.fidelity >= 1.0 - 1e-6
            && r.templates_visited.len() <= 5
            && r.cz_count.is_some_and(|k| k <= source.cz_count());
        if !ok {
            failures.push(format!("#{i} t{} -> {:?} F {:.2e}", source.id, r.template_id, 1.0 - r.fidelity));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    gate(
        12,
        "pipeline self-consistency",
        failures.is_empty(),
        format!(
            "{}/50 ok, mean visits {:.2}, {secs:.0}s{}",
            50 - failures.len(),
            visits as f64 / 50.0,
            if failures.is_empty() { String::new() } else { format!("; failed {}", failures.join(", ")) }
        ),
    )
}

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_unisynth"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism_gate(work: &Work) -> Gate {
    let runs = [work.path("rerun_a"), work.path("rerun_b")];
    let mut ran = true;
    for dir in &runs {
        let _ = fs::remove_dir_all(dir);
        let out = dir.to_str().unwrap();
        let classifier = dir.join("classifier.json");
        let suggester = dir.join("suggester_t2.json");
        let (c, s) = (classifier.to_str().unwrap(), suggester.to_str().unwrap());
        let small = ["--steps", "200", "--batch-size", "32", "--hidden", "16", "--log-every", "20"];
        let mut train_c = vec!["train-classifier", "--seed", "4", "--phase-augment", "--out-dir", out];
        train_c.extend(small);
        let mut train_s = vec!["train-suggester", "--template-id", "2", "--seed", "4", "--out-dir", out];
        train_s.extend(small);
        ran &= cli(&train_c);
        ran &= cli(&train_s);
        ran &= cli(&["eval-classifier", "--model", c, "--samples", "50", "--seed", "5", "--out-dir", out]);
        ran &= cli(&["eval-suggester", "--model", s, "--samples", "20", "--refine", "--max-iters", "300", "--seed", "5", "--out-dir", out]);
        ran &= cli(&["sweep-rz", "--model", c, "--out-dir", out]);
        ran &= cli(&["synthesize", "--target", "iswap", "--model", c, "--suggester", s, "--seed", "6", "--out-dir", out]);
        ran &= cli(&["oracle", "--target", "zz:0.3pi", "--seed", "6", "--out-dir", out]);
    }
    let mut names: Vec<String> = fs::read_dir(&runs[0])
        .map(|it| it.filter_map(|e| e.ok()?.file_name().into_string().ok()).collect())
        .unwrap_or_default();
    names.retain(|n| !n.ends_with(".meta.json"));
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| fs::read(runs[0].join(n.as_str())).ok() != fs::read(runs[1].join(n.as_str())).ok())
        .collect();
    gate(
        13,
        "determinism",
        ran && names.len() >= 12 && differing.is_empty(),
        format!("{} payload files compared, differing {differing:?}, all commands ok: {ran}", names.len()),
    )
}

fn main() -> ExitCode {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&dir).expect("work dir");
    let work = Work {
        dir,
        reuse: std::env::var_os("UNISYNTH_ACCEPTANCE_REUSE").is_some(),
    };
    let started = Instant::now();
    let mut gates = vec![gradients(), enumeration(), param_counts(), oracle()];
    let (g5, net2) = classifier_2q_gate(&work);
    gates.push(g5);
    let (g6, net3) = classifier_3q3_gate(&work);
    gates.push(g6);
    gates.push(classifier_3q5_gate(&work));
    gates.push(suggesters_2q_gate(&work));
    gates.push(suggester_6_layer_gate(&work));
    gates.push(toffoli_gate(&work));
    gates.push(sweep_gate(&net2));
    gates.push(pipeline_gate(&net3));
    gates.push(determinism_gate(&work));
    let failed = gates.iter().filter(|g| !g.passed).count();
    println!(
        "acceptance: {}/{} passed in {:.0}s (work dir {})",
        gates.len() - failed,
        gates.len(),
        started.elapsed().as_secs_f64(),
        work.dir.display()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
