use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use osdiag::checkpoint::Checkpoint;
use osdiag::dataset::{file_sha256, filter_classes, DataFormat, Dataset};
use osdiag::discriminators::Calibration;
use osdiag::dvec::{
    accuracy, gradcheck_loss, init_model, train, EpochRecord, LabeledSet, LossCheckSetup,
    TrainConfig,
};
use osdiag::mission::{
    build_custom_mission, build_missions, evaluate, sweep, DvecOpenSet, MissionReport, SweepReport,
};
use osdiag::nn::{GradCheckConfig, GradCheckReport};
use osdiag::signal::{FeaturePipeline, RawSignal};
use osdiag::synth::generate_dataset;
use serde::{Deserialize, Serialize};

use crate::config::{output_path, RunConfig};
use crate::provenance::Provenance;
use crate::{
    CalibrateArgs, Cli, CliError, Command, EvalArgs, Format, GenArgs, GradcheckArgs, ReportArgs,
    SweepArgs, TrainArgs,
};

#[derive(Debug, Serialize, Deserialize)]
struct HistoryFile {
    provenance: Provenance,
    checkpoint_sha256: String,
    best_epoch: Option<usize>,
    history: Vec<EpochRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalFile {
    provenance: Provenance,
    report: MissionReport,
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepFile {
    provenance: Provenance,
    sweep: SweepReport,
}

#[derive(Debug, Serialize)]
struct GradcheckFile {
    provenance: Provenance,
    setup: LossCheckSetup,
    passed: bool,
    max_rel_err: f64,
    report: GradCheckReport,
}

struct Ctx {
    cfg: RunConfig,
    verbose: u8,
}

impl Ctx {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose > 0 {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn ready(&self) -> Result<(), CliError> {
        self.cfg.validate()?;
        if self.verbose > 1 {
            eprintln!("effective configuration:\n{}", to_toml(&self.cfg)?);
        }
        Ok(())
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    let mut ctx = Ctx {
        cfg,
        verbose: cli.verbose,
    };
    match cli.command {
        Command::Gen(a) => gen(&mut ctx, a),
        Command::Train(a) => train_cmd(&mut ctx, a),
        Command::Calibrate(a) => calibrate(&mut ctx, a),
        Command::Eval(a) => eval(&mut ctx, a),
        Command::Sweep(a) => sweep_cmd(&mut ctx, a),
        Command::Gradcheck(a) => gradcheck(&mut ctx, a),
        Command::Report(a) => report(a),
        Command::Config => {
            ctx.cfg.validate()?;
            print!("{}", to_toml(&ctx.cfg)?);
            Ok(())
        }
    }
}

fn to_toml<T: Serialize>(v: &T) -> Result<String, CliError> {
    toml::to_string(v).map_err(|e| CliError::Domain(osdiag::Error::Format(e.to_string())))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Domain(osdiag::Error::io(path, e))
}

fn require_file(flag: &str, p: &Path) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{flag} {}: no such file",
            p.display()
        )))
    }
}

fn require_dir(flag: &str, p: &Path) -> Result<(), CliError> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{flag} {}: no such directory",
            p.display()
        )))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn inputs(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

fn labeled(
    pipeline: &FeaturePipeline,
    records: &[RawSignal],
    known: &[u32],
) -> Result<LabeledSet, CliError> {
    Ok(LabeledSet::from_signals(
        pipeline,
        &filter_classes(records, known),
        known,
    )?)
}

fn gen(ctx: &mut Ctx, a: GenArgs) -> Result<(), CliError> {
    let g = &mut ctx.cfg.generator;
    if let Some(s) = a.seed {
        g.seed = s;
    }
    if let Some(k) = a.records_per_class {
        g.records_per_class = k;
    }
    ctx.ready()?;
    let out = output_path(&a.out);
    let format = match a.format {
        Format::Csv => DataFormat::Csv,
        Format::Bin => DataFormat::Bin,
    };
    ctx.log(format!("generating into {}", out.display()));
    let mut manifest = generate_dataset(&ctx.cfg.generator, &out, format)?.manifest;
    let prov = Provenance::new("gen", ctx.cfg.generator.seed, &ctx.cfg, BTreeMap::new());
    manifest
        .provenance
        .get_or_insert_with(Default::default)
        .insert("run".into(), toml::Value::Table(prov.to_table()));
    manifest.write(&out)?;
    let total: usize = manifest.splits.iter().map(|s| s.records).sum();
    println!("wrote {total} records to {}", out.display());
    Ok(())
}

fn train_cmd(ctx: &mut Ctx, a: TrainArgs) -> Result<(), CliError> {
    require_dir("--data", &a.data)?;
    let m = &mut ctx.cfg.mission;
    if let Some(e) = a.epochs {
        m.train.epochs = e;
    }
    if let Some(s) = a.seed {
        m.seed = s;
    }
    ctx.ready()?;
    let data = Dataset::load(&a.data)?;
    let mut known = a.known.clone();
    known.sort_unstable();
    known.dedup();
    if let Some(&bad) = known
        .iter()
        .find(|&&c| c as usize >= data.manifest.n_classes())
    {
        return Err(CliError::Usage(format!(
            "--known: class {bad} is not in the dataset ({} classes)",
            data.manifest.n_classes()
        )));
    }
    let m = &ctx.cfg.mission;
    let pipeline = FeaturePipeline::fit(m.fusion, &filter_classes(&data.train, &known))?;
    let train_set = labeled(&pipeline, &data.train, &known)?;
    let val_set = labeled(&pipeline, &data.val, &known)?;
    let tcfg = TrainConfig {
        seed: m.seed,
        ..m.train.clone()
    };
    ctx.log(format!(
        "training on {} records of classes {known:?} for {} epochs",
        train_set.len(),
        tcfg.epochs
    ));
    let model = init_model(pipeline.fusion.dim(), known, &tcfg)?;
    let outcome = train(model, &train_set, &val_set, &tcfg)?;
    let prov = Provenance::new(
        "train",
        m.seed,
        &ctx.cfg,
        inputs(&[("data", data.content_hash())]),
    );
    let ck = Checkpoint {
        model: outcome.model,
        pipeline,
        train: tcfg,
        seed: m.seed,
        best_epoch: outcome.best_epoch,
        provenance: Some(prov.to_table()),
    };
    let out = output_path(&a.out);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let hash = ck.write(&out)?;
    let history_path = a
        .history
        .map(|p| output_path(&p))
        .unwrap_or_else(|| out.with_extension("history.toml"));
    let val_acc = outcome
        .best_epoch
        .and_then(|b| outcome.history.get(b))
        .map(|r| r.val_accuracy);
    write_file(
        &history_path,
        &to_toml(&HistoryFile {
            provenance: prov,
            checkpoint_sha256: hash.clone(),
            best_epoch: outcome.best_epoch,
            history: outcome.history,
        })?,
    )?;
    match val_acc {
        Some(acc) => println!(
            "best epoch {} val accuracy {acc:.4}",
            outcome.best_epoch.unwrap()
        ),
        None => println!("no epochs run; wrote the initial model"),
    }
    println!("checkpoint {} sha256 {hash}", out.display());
    Ok(())
}

fn calibrate(ctx: &mut Ctx, a: CalibrateArgs) -> Result<(), CliError> {
    require_file("--model", &a.model)?;
    require_dir("--data", &a.data)?;
    let m = &mut ctx.cfg.mission;
    if let Some(v) = a.alpha {
        m.alpha = v;
    }
    if let Some(v) = a.tail {
        m.tail_fraction = v;
    }
    ctx.ready()?;
    let ck = Checkpoint::read(&a.model)?;
    let data = Dataset::load(&a.data)?;
    let known = ck.model.known_class_ids.clone();
    let train_set = labeled(&ck.pipeline, &data.train, &known)?;
    let val_set = labeled(&ck.pipeline, &data.val, &known)?;
    let m = &ctx.cfg.mission;
    let mut cal = Calibration::fit(&ck.model, &train_set, &val_set, m.tail_fraction, m.alpha)?;
    let prov = Provenance::new(
        "calibrate",
        ck.seed,
        &ctx.cfg,
        inputs(&[
            ("model", file_sha256(&a.model)?),
            ("data", data.content_hash()),
        ]),
    );
    cal.provenance = Some(prov.to_table());
    let out = output_path(&a.out);
    write_file(&out, &cal.to_toml()?)?;
    if cal.entropy.is_none() {
        println!("one known class: entropy discriminator not applicable");
    }
    println!(
        "calibration for classes {known:?} written to {}",
        out.display()
    );
    Ok(())
}

fn eval(ctx: &mut Ctx, a: EvalArgs) -> Result<(), CliError> {
    require_file("--model", &a.model)?;
    require_file("--calibration", &a.calibration)?;
    require_dir("--data", &a.data)?;
    if let Some(g) = a.gate {
        ctx.cfg.mission.gate = g;
    }
    ctx.ready()?;
    let ck = Checkpoint::read(&a.model)?;
    let cal_text = fs::read_to_string(&a.calibration).map_err(|e| io_err(&a.calibration, e))?;
    let cal = Calibration::from_toml(&cal_text)?;
    let data = Dataset::load(&a.data)?;
    let known = ck.model.known_class_ids.clone();
    let mission = build_custom_mission(0, &known, data.manifest.n_classes())?;
    let policy = ctx.cfg.mission.policy(&a.policy, mission.openness)?;
    let test = filter_classes(&data.test, &mission.test_class_ids());
    let x = ck.pipeline.transform(&test)?;
    let truths: Vec<u32> = test.iter().filter_map(|r| r.label).collect();
    let predictor = DvecOpenSet {
        model: &ck.model,
        calibration: &cal,
        policy,
    };
    let scores = evaluate(&predictor, x.view(), &truths, &known)?;
    let val_accuracy = accuracy(&ck.model, &labeled(&ck.pipeline, &data.val, &known)?)?;
    let report = MissionReport {
        mission,
        policy: policy.name().to_string(),
        branch: policy.branch(),
        seed: ck.seed,
        best_epoch: ck.best_epoch,
        val_accuracy,
        scores,
    };
    let prov = Provenance::new(
        "eval",
        ck.seed,
        &ctx.cfg,
        inputs(&[
            ("model", file_sha256(&a.model)?),
            ("calibration", file_sha256(&a.calibration)?),
            ("data", data.content_hash()),
        ]),
    );
    let text = to_toml(&EvalFile {
        provenance: prov,
        report,
    })?;
    match a.out {
        Some(p) => {
            let out = output_path(&p);
            write_file(&out, &text)?;
            println!("report written to {}", out.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn sweep_cmd(ctx: &mut Ctx, a: SweepArgs) -> Result<(), CliError> {
    require_dir("--data", &a.data)?;
    let m = &mut ctx.cfg.mission;
    if let Some(v) = a.alpha {
        m.alpha = v;
    }
    if let Some(v) = a.tail {
        m.tail_fraction = v;
    }
    if let Some(v) = a.gate {
        m.gate = v;
    }
    if let Some(v) = a.seed {
        m.seed = v;
    }
    if let Some(v) = a.epochs {
        m.train.epochs = v;
    }
    ctx.ready()?;
    let data = Dataset::load(&a.data)?;
    let mut missions = build_missions(&data.manifest)?;
    if a.missions != "benchmark" {
        let ids: Vec<u32> = a
            .missions
            .split(',')
            .map(|s| s.trim().parse::<u32>())
            .collect::<Result<_, _>>()
            .map_err(|_| {
                CliError::Usage(format!(
                    "--missions: expected 'benchmark' or ids, got {:?}",
                    a.missions
                ))
            })?;
        if let Some(bad) = ids.iter().find(|id| !missions.iter().any(|m| m.id == **id)) {
            return Err(CliError::Usage(format!("--missions: no mission {bad}")));
        }
        missions.retain(|m| ids.contains(&m.id));
    }
    ctx.log(format!(
        "sweeping {} missions x {:?} on {} thread(s)",
        missions.len(),
        a.policies,
        ctx.cfg.threads
    ));
    let report = sweep(
        &missions,
        (&data).into(),
        &a.policies,
        &ctx.cfg.mission,
        ctx.cfg.threads,
    )?;
    let prov = Provenance::new(
        "sweep",
        ctx.cfg.mission.seed,
        &ctx.cfg,
        inputs(&[("data", data.content_hash())]),
    );

    let dir = output_path(&a.report);
    let csv = report.to_csv();
    write_file(
        &dir.join("table.csv"),
        &format!("# {}\n{csv}", prov.summary()),
    )?;
    if !a.no_plot {
        write_file(
            &dir.join("plot.svg"),
            &with_metadata(&report.to_svg(), &prov.summary()),
        )?;
    }
    let trend = &report.trend;
    write_file(
        &dir.join("report.toml"),
        &to_toml(&SweepFile {
            provenance: prov,
            sweep: report.clone(),
        })?,
    )?;
    print!("{csv}");
    println!(
        "trend: {} of {} comparable missions non-decreasing ({})",
        trend.satisfied,
        trend.points.len(),
        if trend.holds {
            "holds"
        } else {
            "does not hold"
        }
    );
    println!("report written to {}", dir.display());
    Ok(())
}

/// Inserts a `<metadata>` element right after the opening `<svg>` tag.
fn with_metadata(svg: &str, text: &str) -> String {
    let escaped = text
        .replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;");
    match svg
        .find("<svg")
        .and_then(|i| svg[i..].find('>').map(|j| i + j + 1))
    {
        Some(at) => format!(
            "{}\n<metadata>{escaped}</metadata>{}",
            &svg[..at],
            &svg[at..]
        ),
        None => svg.to_string(),
    }
}

fn gradcheck(ctx: &mut Ctx, a: GradcheckArgs) -> Result<(), CliError> {
    ctx.ready()?;
    let mut setup = LossCheckSetup::default();
    if let Some(s) = a.seed {
        setup.seed = s;
    }
    let gc = GradCheckConfig {
        probes_per_tensor: a.probes,
        ..GradCheckConfig::default()
    };
    let (report, breakdown) = gradcheck_loss(&setup, &gc)?;
    let mut names: Vec<&str> = report.probes.iter().map(|p| p.param.as_str()).collect();
    names.dedup();
    for name in &names {
        let (n, worst, fails) = report
            .probes
            .iter()
            .filter(|p| p.param == *name)
            .fold((0, 0.0f64, 0), |(n, w, f), p| {
                (n + 1, w.max(p.rel_err), f + usize::from(!p.pass))
            });
        println!("{name:<16} probes {n:>3}  max rel err {worst:.2e}  failures {fails}");
    }
    println!(
        "loss {:.6} (cross-entropy {:.6}, kl {:.6}, {} of {} items gated in)",
        breakdown.loss, breakdown.cross_entropy, breakdown.kl, breakdown.correct, setup.batch
    );
    let passed = report.passed();
    if let Some(p) = a.out {
        let prov = Provenance::new("gradcheck", setup.seed, &ctx.cfg, BTreeMap::new());
        let file = GradcheckFile {
            provenance: prov,
            setup,
            passed,
            max_rel_err: report.max_rel_err(),
            report,
        };
        write_file(&output_path(&p), &to_toml(&file)?)?;
    }
    if passed {
        println!("gradient check passed");
        Ok(())
    } else {
        Err(CliError::Domain(osdiag::Error::Domain(
            "gradient check failed".into(),
        )))
    }
}

fn report(a: ReportArgs) -> Result<(), CliError> {
    require_file("--input", &a.input)?;
    let text = fs::read_to_string(&a.input).map_err(|e| io_err(&a.input, e))?;
    let parse_err = |e: toml::de::Error| {
        CliError::Domain(osdiag::Error::Format(format!("{}: {e}", a.input.display())))
    };
    let table: toml::Table = toml::from_str(&text).map_err(parse_err)?;
    let out = if table.contains_key("sweep") {
        render_sweep(&toml::from_str::<SweepFile>(&text).map_err(parse_err)?)
    } else if table.contains_key("report") {
        render_eval(&toml::from_str::<EvalFile>(&text).map_err(parse_err)?)
    } else {
        return Err(CliError::Usage(format!(
            "--input {}: not a sweep or eval report",
            a.input.display()
        )));
    };
    print!("{out}");
    Ok(())
}

fn render_sweep(f: &SweepFile) -> String {
    let r = &f.sweep;
    let mut s = String::new();
    writeln!(
        s,
        "sweep seed {} ({} {})",
        f.provenance.seed, f.provenance.tool, f.provenance.version
    )
    .unwrap();
    write!(s, "| policy |").unwrap();
    for m in &r.missions {
        write!(s, " {} |", m.name()).unwrap();
    }
    write!(s, "\n|---|").unwrap();
    s.push_str(&"---|".repeat(r.missions.len()));
    write!(s, "\n| openness |").unwrap();
    for m in &r.missions {
        write!(s, " {:.4} |", m.openness).unwrap();
    }
    s.push('\n');
    for p in &r.policies {
        write!(s, "| {p} |").unwrap();
        for m in &r.missions {
            let cell = r.cell(m.id, p).map(|c| match c.outcome.a0() {
                Some(a0) => format!("{a0:.4}"),
                None => "/".into(),
            });
            write!(s, " {} |", cell.unwrap_or_default()).unwrap();
        }
        s.push('\n');
    }
    for pt in &r.trend.points {
        let mark = match pt.non_decreasing {
            None => "first",
            Some(true) => "ok",
            Some(false) => "drop",
        };
        writeln!(s, "gap {}: {:+.4} ({mark})", pt.mission_id, pt.gap).unwrap();
    }
    writeln!(
        s,
        "trend {} ({} of {})",
        if r.trend.holds {
            "holds"
        } else {
            "does not hold"
        },
        r.trend.satisfied,
        r.trend.points.len()
    )
    .unwrap();
    s
}

fn render_eval(f: &EvalFile) -> String {
    let r = &f.report;
    let sc = &r.scores;
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    let mut s = String::new();
    writeln!(
        s,
        "known {:?}, policy {}, openness {:.4}",
        r.mission.known_class_ids, r.policy, r.mission.openness
    )
    .unwrap();
    writeln!(s, "A0 {:.4} over {} samples", sc.a0, sc.total).unwrap();
    writeln!(s, "known accuracy {}", opt(sc.known_accuracy)).unwrap();
    writeln!(s, "unknown detection {}", opt(sc.unknown_detection_rate)).unwrap();
    writeln!(s, "false unknown {}", opt(sc.false_unknown_rate)).unwrap();
    s
}
