use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rakeflow::auxinfo::{
    deviation_bound_raw, draw_learned, hoeffding_tail, size_condition, zero_cell_tail_from_margins, BoundInputs,
};
use rakeflow::budget::{allocate, BudgetSpec, Regime, Strategy};
use rakeflow::config::{Model, ModelConfig, RakingSettings, SourceSize};
use rakeflow::gaussian::{CovarianceModel, TwoByTwoSpec};
use rakeflow::harness::{
    appendix_a_scenario, rate_fit, rate_fit_deviations, read_deviation_csv, variance_convergence, write_json,
    write_simulation, ExperimentConfig, Manifest,
};
use rakeflow::model::{load_sample, PartitionSequence, SampleSchema};
use rakeflow::raking::RakedMeasure;
use rakeflow::rng::stream;
use rakeflow::stattests::{
    chi_square_test, level_and_power_mc, plug_in_sample_variance, z_from_estimate, DofConvention, McConfig, Variant,
    ZSpec,
};
use rakeflow::{Error, Result};
use serde_json::{json, Value};

use crate::{AuxCommand, ChisqArgs, Cli, Command, RakingFlags, SampleFlags};

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::ZeroCell { .. } => 3,
        Error::Validation(_)
        | Error::Parse { .. }
        | Error::Degenerate(_)
        | Error::Config(_)
        | Error::Csv(_)
        | Error::Json(_) => 2,
        Error::NotPositiveSemidefinite(_) | Error::Io(_) => 1,
    }
}

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let out_dir = cli.out_dir.as_path();
    match &cli.command {
        Command::Rake(args) => rake(out_dir, &args.input, &args.raking, args.out.as_deref()),
        Command::Variance(args) => variance(args),
        Command::Ztest(args) => ztest(args),
        Command::Chisq(args) => chisq(args),
        Command::McPower(args) => mc_power(cli, &args.config),
        Command::Aux { command } => match command {
            AuxCommand::Draw {
                config,
                partition,
                size,
            } => aux_draw(cli, config, partition, *size),
            AuxCommand::Bounds {
                config,
                n,
                lambda,
                t,
                sizes,
                threshold,
            } => aux_bounds(config, *n, lambda, *t, sizes, *threshold),
        },
        Command::Budget(args) => {
            let regime: Regime = args.regime.parse()?;
            let strategy: Strategy = args.strategy.parse()?;
            let spec = BudgetSpec::new(args.total, args.unit_cost, args.source_cost, regime)?;
            let allocation = allocate(&spec, strategy)?;
            emit(&json!({ "spec": spec, "allocation": allocation }))
        }
        Command::Simulate(args) => simulate(cli, &args.config),
        Command::RateFit(args) => rate_fit_cmd(&args.input, args.n),
        Command::AppendixA(args) => {
            let report = appendix_a_scenario()?;
            let pass = report.all_pass();
            emit(&serde_json::to_value(&report)?)?;
            if args.strict && !pass {
                for c in report.checks.iter().filter(|c| !c.pass) {
                    eprintln!("not reproduced: {} (expected {:?}, got {:?})", c.name, c.expected, c.actual);
                }
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn emit(value: &Value) -> Result<ExitCode> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(ExitCode::SUCCESS)
}

fn load_model(path: &Path) -> Result<(ModelConfig, Model)> {
    let config = ModelConfig::load(path)?;
    let model = config.build()?;
    Ok((config, model))
}

fn settings(base: &RakingSettings, flags: &RakingFlags) -> RakingSettings {
    let mut s = base.clone();
    if let Some(c) = flags.cycles {
        s.cycles = c;
        s.to_stability = false;
    }
    if flags.to_stability {
        s.to_stability = true;
    }
    if let Some(t) = flags.tol {
        s.tol = t;
    }
    if let Some(m) = flags.max_cycles {
        s.max_cycles = m;
    }
    s
}

struct Raked {
    model: Model,
    plain: RakedMeasure<f64>,
    raked: RakedMeasure<f64>,
    variant: Variant,
    converged: bool,
    cycles: usize,
    residual: f64,
}

fn rake_sample(input: &SampleFlags, flags: &RakingFlags) -> Result<Raked> {
    let (_, model) = load_model(&input.margins)?;
    let columns: Vec<&str> = model.join.columns().iter().map(String::as_str).collect();
    let loaded = load_sample::<f64>(&input.sample, &SampleSchema::new(input.value.clone(), &columns))?;
    let sample = model.join.assign(&loaded)?;
    let plain = RakedMeasure::from_sample(sample);
    let seq = model.sequence()?;
    let margins = model.margins();
    let s = settings(&model.raking, flags);
    if s.max_cycles == 0 || s.tol.is_nan() || s.tol <= 0.0 {
        return Err(Error::validation("raking needs tol > 0 and max_cycles >= 1"));
    }
    let (raked, converged, cycles, residual) = if s.to_stability {
        let st = plain.rake_to_stability(&seq, &margins, s.tol, s.max_cycles)?;
        (st.measure, st.converged, st.cycles, st.residual)
    } else {
        let m = plain.rake(&seq, &margins, s.cycles)?;
        let r = m.margin_violation(&seq, &margins);
        (m, r <= s.tol, s.cycles, r)
    };
    let learned = model.sources.iter().any(|src| src.source_size().is_some());
    let variant = if s.to_stability {
        Variant::RakedStable
    } else if learned {
        Variant::RakedLearned(raked.stage())
    } else {
        Variant::Raked(raked.stage())
    };
    Ok(Raked {
        model,
        plain,
        raked,
        variant,
        converged,
        cycles,
        residual,
    })
}

fn rake(out_dir: &Path, input: &SampleFlags, flags: &RakingFlags, out: Option<&Path>) -> Result<ExitCode> {
    let r = rake_sample(input, flags)?;
    let sample = r
        .raked
        .weighted_sample()
        .ok_or_else(|| Error::validation("raked measure lost its observations"))?;
    fs::create_dir_all(out_dir)?;
    let weights_path = out.map(Path::to_path_buf).unwrap_or_else(|| out_dir.join("weights.csv"));
    let mut w = csv_writer(&weights_path)?;
    writeln!(w, "row,value,cell,weight")?;
    for (i, o) in sample.observations().iter().enumerate() {
        writeln!(w, "{},{},{},{}", i + 1, o.value, csv_field(&sample.cells()[o.cell]), o.weight)?;
    }
    w.flush()?;

    let cells: Vec<Value> = sample
        .cells()
        .iter()
        .enumerate()
        .map(|(k, id)| {
            json!({
                "cell": id,
                "count": r.raked.cell_counts()[k],
                "mass": r.raked.cell_mass()[k],
                "individual_weight": r.raked.individual_weight(k),
            })
        })
        .collect();
    let margins: Vec<Value> = r
        .model
        .order
        .iter()
        .zip(r.model.margins())
        .map(|(p, target)| {
            json!({
                "partition": p.name(),
                "labels": p.labels(),
                "target": target,
                "achieved": r.raked.block_totals(p),
            })
        })
        .collect();
    let summary = json!({
        "n": r.raked.n(),
        "stage": r.raked.stage(),
        "variant": r.variant.to_string(),
        "converged": r.converged,
        "cycles": r.cycles,
        "residual": r.residual,
        "plain_mean": r.plain.mean_of_values(),
        "weighted_mean": r.raked.mean_of_values(),
        "cells": cells,
        "margins": margins,
        "weights": weights_path,
    });
    write_json(out_dir.join("rake_summary.json"), &summary)?;
    emit(&summary)
}

fn csv_writer(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(std::io::BufWriter::new(fs::File::create(path)?))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn variance(args: &crate::VarianceArgs) -> Result<ExitCode> {
    if let Some(spec) = &args.spec {
        let f = args
            .f
            .as_ref()
            .ok_or_else(|| Error::validation("--spec needs --f"))?;
        if spec.len() != 3 || f.len() != 4 {
            return Err(Error::validation("--spec takes p_A,p_B,p_AB and --f takes four cell values"));
        }
        let spec = TwoByTwoSpec::<f64>::new(spec[0], spec[1], spec[2])?;
        let f: [f64; 4] = [f[0], f[1], f[2], f[3]];
        let layout = spec.layout()?;
        let seq = layout.sequence()?;
        let func = layout.function("f", &f);
        let bridge = CovarianceModel::brownian_bridge(&layout.space);
        let trajectory = bridge.variance_trajectory(&seq, &func, args.stages)?;
        let stable = bridge.stabilized_variance(&seq, &func, 1e-12, 10_000)?;
        return emit(&json!({
            "spec": spec,
            "cells": layout.space.cells(),
            "f": f,
            "moments": spec.moments(&f),
            "trajectory": trajectory,
            "closed_form": {
                "sigma0": spec.moments(&f).variance,
                "sigma1": spec.sigma1_closed(&f),
                "sigma2": spec.sigma2_closed(&f),
                "sigma_inf": spec.sigma_inf_closed(&f),
            },
            "stabilized": stable,
            "limit": spec.appendix_b(&f),
        }));
    }
    let path = args
        .cells
        .as_ref()
        .ok_or_else(|| Error::validation("variance needs --spec or --cells"))?;
    let (_, model) = load_model(path)?;
    let truth = model.truth()?;
    let seq = match &args.order {
        Some(names) => {
            let parts = names
                .iter()
                .map(|n| model.partition(n).cloned())
                .collect::<Result<Vec<_>>>()?;
            PartitionSequence::new(truth, parts)?
        }
        None => model.sequence()?,
    };
    if model.functions.is_empty() {
        return Err(Error::validation("model file declares no [[function]]"));
    }
    let bridge = CovarianceModel::brownian_bridge(truth);
    let mut functions = Vec::with_capacity(model.functions.len());
    for f in &model.functions {
        functions.push(json!({
            "function": f.name(),
            "mean": truth.expectation(f),
            "trajectory": bridge.variance_trajectory(&seq, f, args.stages)?,
            "stabilized": bridge.stabilized_variance(&seq, f, 1e-12, 10_000)?,
        }));
    }
    let order: Vec<&str> = seq.partitions().iter().map(|p| p.name()).collect();
    emit(&json!({ "order": order, "stages": args.stages, "functions": functions }))
}

fn ztest(args: &crate::ZtestArgs) -> Result<ExitCode> {
    let r = rake_sample(&args.input, &args.raking)?;
    let estimate = |m: &RakedMeasure<f64>| {
        m.mean_of_values()
            .ok_or_else(|| Error::validation("measure has no observations attached"))
    };
    let partitions = r.model.join.partitions();
    let sigma0 = match args.sigma0 {
        Some(s) => s,
        None => plug_in_sample_variance(&r.plain, partitions)?.sqrt(),
    };
    let sigma = match args.sigma {
        Some(s) => s,
        None => plug_in_sample_variance(&r.raked, partitions)?.sqrt(),
    };
    let plain = z_from_estimate(estimate(&r.plain)?, r.plain.n(), args.p0, sigma0, args.alpha, Variant::Plain)?;
    let raked = z_from_estimate(estimate(&r.raked)?, r.raked.n(), args.p0, sigma, args.alpha, r.variant)?;
    emit(&json!({
        "n": r.raked.n(),
        "p0": args.p0,
        "sigma0": sigma0,
        "sigma": sigma,
        "sigma_plug_in": args.sigma.is_none(),
        "sigma0_plug_in": args.sigma0.is_none(),
        "converged": r.converged,
        "plain": plain,
        "raked": raked,
    }))
}

fn chisq(args: &ChisqArgs) -> Result<ExitCode> {
    let convention: DofConvention = args.dof_convention.parse()?;
    let r = rake_sample(&args.input, &args.raking)?;
    let partition = r.model.partition(&args.test)?.clone();
    let plain = chi_square_test(&r.plain, &partition, &args.p0, args.alpha, convention, Variant::Plain)?;
    let raked = chi_square_test(&r.raked, &partition, &args.p0, args.alpha, convention, r.variant)?;
    emit(&json!({
        "n": r.raked.n(),
        "partition": args.test,
        "p0": args.p0,
        "dof_convention": convention,
        "converged": r.converged,
        "plain": plain,
        "raked": raked,
    }))
}

fn mc_power(cli: &Cli, path: &Path) -> Result<ExitCode> {
    let (config, model) = load_model(path)?;
    let test = config
        .test
        .as_ref()
        .ok_or_else(|| Error::validation("mc-power needs a [test] section"))?;
    if test.n.is_empty() {
        return Err(Error::validation("[test] n grid is empty"));
    }
    let seed = cli.seed.unwrap_or(test.seed);
    let truth = model.truth()?.clone();
    let rake = model.sequence()?;
    let z = match &test.function {
        Some(name) => Some(ZSpec {
            function: model.function(name)?.clone(),
            p0_f: test
                .p0_f
                .ok_or_else(|| Error::validation("[test] function needs p0_f"))?,
        }),
        None => None,
    };
    let mut reports = Vec::with_capacity(test.n.len());
    for &n in &test.n {
        let mc = McConfig {
            truth: truth.clone(),
            rake: rake.clone(),
            stages: test.stages.unwrap_or(rake.len()),
            test_partition: model.partition(&test.partition)?.clone(),
            p0_margin: test.p0.clone(),
            z: z.clone(),
            n,
            source_size: test.source_size,
            replicates: test.replicates,
            alpha: test.alpha,
            dof: test.dof,
            seed,
        };
        reports.push(level_and_power_mc(&mc)?);
    }

    let out_dir = cli.out_dir.as_path();
    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("mc_power.csv");
    let mut w = csv_writer(&csv_path)?;
    writeln!(w, "n,statistic,variant,rate,std_error,rejections,used,excluded")?;
    for rep in &reports {
        for r in &rep.rates {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                rep.n, r.statistic, r.variant, r.rate, r.std_error, r.rejections, r.used, rep.excluded
            )?;
        }
    }
    w.flush()?;
    let json_path = out_dir.join("mc_power.json");
    let ratios: Vec<Value> = reports
        .iter()
        .map(|r| json!({ "n": r.n, "beta_risk_ratio": r.beta_risk_ratio() }))
        .collect();
    let body = json!({ "reports": reports, "beta_risk_ratios": ratios });
    write_json(&json_path, &body)?;
    let mut manifest = Manifest::new("mc-power", seed, &config)?;
    manifest.outputs = vec![path_string(&csv_path), path_string(&json_path)];
    write_json(out_dir.join("manifest.json"), &manifest)?;
    emit(&body)
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

fn aux_draw(cli: &Cli, path: &Path, name: &str, size: u64) -> Result<ExitCode> {
    let (_, model) = load_model(path)?;
    let truth = model.truth()?;
    let partition = model.partition(name)?;
    let seed = cli.seed.unwrap_or(0);
    let mut rng = stream(seed, &[partition.id() as u64, size]);
    let source = draw_learned(truth, partition, size, &mut rng)?;
    let estimate = source.margin();
    let exact = truth.margins(partition);
    let sup = estimate
        .iter()
        .zip(&exact)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    emit(&json!({
        "partition": name,
        "labels": partition.labels(),
        "source_size": size,
        "seed": seed,
        "source": source,
        "margin": estimate,
        "exact_margin": exact,
        "lambda_prime": (size as f64).sqrt() * sup,
    }))
}

fn aux_bounds(path: &Path, n: u64, lambda: &[f64], t: f64, sizes: &[u64], threshold: f64) -> Result<ExitCode> {
    let (_, model) = load_model(path)?;
    let seq = model.sequence()?;
    let n0 = seq.len();
    let m_max = seq.m_max();
    let p_min = *seq.p_min();
    let margins = match &model.truth {
        Some(space) => seq.partitions().iter().map(|p| space.margins(p)).collect(),
        None => model.margins(),
    };
    let hoeffding: Vec<Value> = lambda
        .iter()
        .map(|&l| json!({ "lambda": l, "bound": hoeffding_tail(n0, m_max, l) }))
        .collect();
    let k_f = model
        .functions
        .iter()
        .map(|f| f.k_f())
        .fold(1.0, f64::max);
    let sizes: Vec<u64> = if sizes.is_empty() {
        model.sources.iter().filter_map(|s| s.source_size()).collect()
    } else {
        sizes.to_vec()
    };
    let (size_report, deviation) = if sizes.is_empty() {
        (None, None)
    } else {
        let report = size_condition(n, &sizes, threshold)?;
        let inputs = BoundInputs {
            n0,
            p_min,
            m_max,
            k_f,
            n,
            source_min: report.source_min,
        };
        (Some(report), Some(json!({ "inputs": inputs, "bound": deviation_bound_raw(t, &inputs)? })))
    };
    emit(&json!({
        "n": n,
        "n0": n0,
        "m_max": m_max,
        "p_min": p_min,
        "k_f": k_f,
        "hoeffding": hoeffding,
        "zero_cell": zero_cell_tail_from_margins(n, &margins),
        "size_condition": size_report,
        "deviation": deviation,
    }))
}

fn simulate(cli: &Cli, path: &Path) -> Result<ExitCode> {
    let (config, model) = load_model(path)?;
    let exp = config
        .experiment
        .as_ref()
        .ok_or_else(|| Error::validation("simulate needs an [experiment] section"))?;
    let seed = cli.seed.unwrap_or(exp.seed);
    let truth = model.truth()?.clone();
    let sequence = model.sequence()?;
    let ec = ExperimentConfig {
        truth: truth.clone(),
        stages: exp.stages.unwrap_or(sequence.len()),
        sequence: sequence.clone(),
        functions: model.functions.clone(),
        n_grid: exp.n.clone(),
        source_sizes: exp.source_sizes.clone(),
        replicates: exp.replicates,
        seed,
    };
    let sim = rakeflow::harness::simulate_processes(&ec)?;
    let out_dir = cli.out_dir.as_path();
    fs::create_dir_all(out_dir)?;
    let outputs = write_simulation(out_dir, &sim)?;
    let mut manifest = Manifest::new("simulate", seed, &config)?;
    manifest.outputs = outputs.iter().map(|p| path_string(p)).collect();
    write_json(out_dir.join("manifest.json"), &manifest)?;

    let mut grid = Vec::new();
    for &n in &exp.n {
        for &size in &exp.source_sizes {
            let rows: Vec<_> = sim.at(n, size).collect();
            let mean = |g: &dyn Fn(&&rakeflow::harness::ReplicateRecord) -> f64| {
                if rows.is_empty() {
                    None
                } else {
                    Some(rows.iter().map(g).sum::<f64>() / rows.len() as f64)
                }
            };
            grid.push(json!({
                "n": n,
                "source_size": size.to_string(),
                "replicates": rows.len(),
                "excluded": sim.excluded_at(n, size),
                "mean_sup_deviation": mean(&|r| r.sup_deviation),
                "mean_lambda": mean(&|r| r.lambda),
                "mean_lambda_prime": mean(&|r| r.lambda_prime),
            }));
        }
    }
    let finite = exp
        .source_sizes
        .iter()
        .filter(|s| matches!(s, SourceSize::Finite(_)))
        .count();
    let mut fits = BTreeMap::new();
    if finite >= 3 {
        for &n in &exp.n {
            match rate_fit(&sim, n) {
                Ok(r) => fits.insert(n, json!(r)),
                Err(e) => fits.insert(n, json!({ "error": e.to_string() })),
            };
        }
    }
    let variance = if exp.replicates >= rakeflow::harness::MIN_VARIANCE_REPLICATES {
        let report = variance_convergence(&sim, &truth, &sequence, &model.functions)?;
        Some(json!({ "max_rel_error": report.max_rel_error(), "rows": report.rows }))
    } else {
        None
    };
    emit(&json!({
        "seed": seed,
        "outputs": manifest.outputs,
        "grid": grid,
        "rate_fits": fits,
        "variance": variance,
    }))
}

fn rate_fit_cmd(input: &PathBuf, n: Option<u64>) -> Result<ExitCode> {
    let rows = read_deviation_csv(input)?;
    let mut ns: Vec<u64> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let n = match n {
        Some(n) => n,
        None if ns.len() == 1 => ns[0],
        None if ns.is_empty() => return Err(Error::validation("deviation file has no rows")),
        None => return Err(Error::validation(format!("several sample sizes {ns:?}; pick one with --n"))),
    };
    let mut points = Vec::new();
    for r in rows.iter().filter(|r| r.n == n) {
        match r.n_source.parse::<SourceSize>()? {
            SourceSize::Finite(size) => points.push((size, r.sup_deviation)),
            SourceSize::Exact => {}
        }
    }
    let report = rate_fit_deviations(n, &points)?;
    emit(&serde_json::to_value(&report)?)
}
