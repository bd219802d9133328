use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Parser;
use dera_core::estimation::{calibrate, CalibrationResult, FilterKind, JacobianSource, RunSpec};
use dera_core::io::{read_measurements, write_measurements};
use dera_core::model::{DeraParameters, ParamId};
use dera_core::observability::{analyze, select_estimable, ObservabilityOptions, SelectOptions, Trajectory};
use dera_core::scenario::{pq_rmse, simulate, synthesize, MeasurementRecord, ScenarioConfig};
use dera_core::system::DeraSystem;
use dera_core::{Error, Result};

use crate::config::{load_params, load_scenario, load_spec};
use crate::manifest::RunManifest;
use crate::{CalibrateArgs, Cli, Command, CompareArgs, FilterChoice, JacobianChoice, ObserveArgs, SimulateArgs};

struct Context {
    args: Vec<String>,
    overrides: BTreeMap<String, String>,
}

impl Context {
    fn manifest(&self, command: &str, configs: &[&Path], seed: u64, params: &DeraParameters, outputs: &[PathBuf]) -> RunManifest {
        RunManifest {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            args: self.args.clone(),
            config_paths: configs.iter().map(|p| p.display().to_string()).collect(),
            overrides: self.overrides.clone(),
            seed,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            resolved: ParamId::ALL
                .iter()
                .map(|id| (id.key().to_string(), params.get(*id)))
                .collect(),
        }
    }
}

pub fn run(command: Command, args: Vec<String>, overrides: BTreeMap<String, String>) -> Result<()> {
    let ctx = Context { args, overrides };
    match command {
        Command::Simulate(a) => cmd_simulate(&ctx, &a),
        Command::Observe(a) => cmd_observe(&ctx, &a),
        Command::Calibrate(a) => cmd_calibrate(&ctx, &a),
        Command::Compare(a) => cmd_compare(&ctx, &a),
        Command::Replay(a) => {
            let m = RunManifest::read(&a.manifest)?;
            let mut args = m.args.clone();
            if let Some(out) = &a.out {
                replace_out(&mut args, out)?;
            }
            let cli = Cli::try_parse_from(std::iter::once("dera".to_string()).chain(args.iter().cloned()))
                .map_err(|e| Error::Config(format!("manifest arguments do not parse: {e}")))?;
            if matches!(cli.command, Command::Replay(_)) {
                return Err(Error::Config("a manifest cannot record a replay".into()));
            }
            run(cli.command, args, m.overrides)
        }
    }
}

fn replace_out(args: &mut [String], out: &Path) -> Result<()> {
    let out = out.display().to_string();
    for i in 0..args.len() {
        if args[i] == "--out" && i + 1 < args.len() {
            args[i + 1] = out;
            return Ok(());
        }
        if args[i].starts_with("--out=") {
            args[i] = format!("--out={out}");
            return Ok(());
        }
    }
    Err(Error::Config("manifest arguments have no --out".into()))
}

fn prepare(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

fn scenario_with_seed(ctx: &Context, path: &Path, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut s = load_scenario(path, &ctx.overrides)?;
    if let Some(v) = seed {
        s.seed = v;
    }
    Ok(s)
}

fn cmd_simulate(ctx: &Context, a: &SimulateArgs) -> Result<()> {
    let s = scenario_with_seed(ctx, &a.scenario, a.seed)?;
    let syn = synthesize(&s)?;
    prepare(&a.out)?;
    let meas = a.out.join("measurements.csv");
    let truth = a.out.join("truth.csv");
    write_measurements(&meas, &syn.records)?;
    write_measurements(&truth, &syn.truth_records())?;
    ctx.manifest("simulate", &[&a.scenario], s.seed, &s.params, &[meas.clone(), truth])
        .write(&a.out)?;
    println!("wrote {} samples to {}", syn.records.len(), a.out.display());
    Ok(())
}

fn cmd_observe(ctx: &Context, a: &ObserveArgs) -> Result<()> {
    let s = load_scenario(&a.scenario, &ctx.overrides)?;
    let spec = load_spec(&a.spec, a.measurement_set)?;
    if spec.flags != s.flags {
        return Err(Error::Contract(format!(
            "spec flags {} differ from scenario flags {}",
            spec.flags, s.flags
        )));
    }
    let traj = Trajectory::from_scenario(&s)?;
    let sys = DeraSystem::new(spec, s.params, traj.points[0].0, s.smoothing());
    let opts = ObservabilityOptions::default();
    let report = analyze(&sys, &traj, &opts)?;
    let mut text = report.to_text();
    let _ = writeln!(text, "\n[selection]");
    match select_estimable(&sys, &traj, &opts, &SelectOptions::default()) {
        Ok(sel) => {
            for line in &sel.audit {
                let _ = writeln!(text, "{line}");
            }
            let _ = writeln!(text, "estimable = [{}]", sel.spec.labels().join(", "));
            let _ = writeln!(text, "estimable_verdict = \"{}\"", sel.report.verdict());
        }
        Err(e) => {
            let _ = writeln!(text, "failed = \"{e}\"");
        }
    }
    prepare(&a.out)?;
    let path = a.out.join("observability.txt");
    std::fs::write(&path, text)?;
    ctx.manifest("observe", &[&a.scenario, &a.spec], s.seed, &s.params, &[path])
        .write(&a.out)?;
    println!("{}: {}", sys.spec, report.verdict());
    Ok(())
}

fn estimated_params(r: &CalibrationResult) -> String {
    let mut s = String::new();
    for (label, v) in r.labels.iter().zip(r.final_estimate().iter()).skip(r.n_states) {
        let _ = writeln!(s, "{label} = {v:?}");
    }
    s
}

fn cmd_calibrate(ctx: &Context, a: &CalibrateArgs) -> Result<()> {
    let s = scenario_with_seed(ctx, &a.scenario, a.seed)?;
    let spec = load_spec(&a.spec, a.measurement_set)?;
    let records = read_measurements(&a.measurements)?;
    let kinds: &[FilterKind] = match a.filter {
        FilterChoice::Ekf => &[FilterKind::Ekf],
        FilterChoice::Ukf => &[FilterKind::Ukf],
        FilterChoice::Both => &[FilterKind::Ekf, FilterKind::Ukf],
    };
    prepare(&a.out)?;
    let mut outputs = Vec::new();
    let mut finals = Vec::new();
    for kind in kinds {
        let mut run = RunSpec::new(spec.clone(), s.clone(), s.params, *kind);
        run.jacobian = match a.jacobian {
            JacobianChoice::Ad => JacobianSource::Ad,
            JacobianChoice::Analytic => JacobianSource::Analytic,
        };
        if let Some(p) = a.passes {
            run.schedule.passes = p;
            run.schedule.settle = run.schedule.settle.min(p.saturating_sub(1));
        }
        let (r, z0) = calibrate(&run, &records)?;
        let name = match kind {
            FilterKind::Ekf => "ekf",
            FilterKind::Ukf => "ukf",
        };
        for (file, body) in [
            (format!("{name}_estimates.csv"), r.to_csv()),
            (format!("{name}_summary.csv"), r.summary(&z0)),
            (format!("{name}_parameters.toml"), estimated_params(&r)),
        ] {
            let p = a.out.join(file);
            std::fs::write(&p, body)?;
            outputs.push(p);
        }
        print!("{name}\n{}", r.summary(&z0));
        finals.push(r);
    }
    if let [e, u] = finals.as_slice() {
        let mut s = String::from("parameter,ekf,ukf,relative_difference\n");
        for i in e.n_states..e.labels.len() {
            let (x, y) = (e.final_estimate()[i], u.final_estimate()[i]);
            let _ = writeln!(s, "{},{x},{y},{}", e.labels[i], (x - y).abs() / (0.5 * (x.abs() + y.abs())));
        }
        let p = a.out.join("agreement.csv");
        std::fs::write(&p, s)?;
        outputs.push(p);
    }
    ctx.manifest(
        "calibrate",
        &[&a.measurements, &a.scenario, &a.spec],
        s.seed,
        &s.params,
        &outputs,
    )
    .write(&a.out)?;
    Ok(())
}

fn replay_records(s: &ScenarioConfig, params: DeraParameters) -> Result<Vec<MeasurementRecord>> {
    let mut cfg = s.clone();
    cfg.params = params;
    Ok(simulate(&cfg)?.iter().map(|t| t.record).collect())
}

fn cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn cmd_compare(ctx: &Context, a: &CompareArgs) -> Result<()> {
    let measured = read_measurements(&a.measurements)?;
    let s = load_scenario(&a.scenario, &ctx.overrides)?;
    let cal = load_params(&a.calibrated, &s.params)?;
    let guide = load_params(&a.guideline, &s.params)?;
    let rc = replay_records(&s, cal)?;
    let rg = replay_records(&s, guide)?;
    let (pc, qc) = pq_rmse(&rc, &measured)?;
    let (pg, qg) = pq_rmse(&rg, &measured)?;
    prepare(&a.out)?;
    let mut csv = String::from("t,P_measured,Q_measured,P_calibrated,Q_calibrated,P_guideline,Q_guideline\n");
    for ((m, c), g) in measured.iter().zip(&rc).zip(&rg) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            m.t,
            cell(m.p),
            cell(m.q),
            cell(c.p),
            cell(c.q),
            cell(g.p),
            cell(g.q)
        );
    }
    let series = a.out.join("comparison.csv");
    std::fs::write(&series, csv)?;
    let rmse = a.out.join("rmse.csv");
    std::fs::write(&rmse, format!("parameters,rmse_p,rmse_q\ncalibrated,{pc},{qc}\nguideline,{pg},{qg}\n"))?;
    ctx.manifest(
        "compare",
        &[&a.measurements, &a.scenario, &a.calibrated, &a.guideline],
        s.seed,
        &s.params,
        &[series, rmse],
    )
    .write(&a.out)?;
    println!("RMSE P: calibrated {pc:e}, guideline {pg:e}");
    println!("RMSE Q: calibrated {qc:e}, guideline {qg:e}");
    Ok(())
}
