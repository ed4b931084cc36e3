use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path as FsPath;

use kernval_core::diagnostics::{
    clt_experiment, quantile, robustness_check, BoundContext, BoundSetup,
};
use kernval_core::experiment::{
    best_estimator, grid_search, run_figures, run_payoff, test_set, training_set, write_grid_csv,
};
use kernval_core::krr::{fit_dual_sorted, fit_dual_unsorted};
use kernval_core::rng::derive_seed;
use kernval_core::valuation::{
    nested_mc_repeats, training_seed, write_table2_csv, write_trajectories_csv,
};
use kernval_core::{
    draw_paths, BsPayoff, CountingFn, Error, Estimator, ExperimentConfig, KernelSpec, MeasureSpec,
    Result, SamplingDesign, TrainingSet, ValueEvaluator,
};
use serde::Serialize;

use crate::manifest::Manifest;
use crate::{Command, Common};

struct Out<'a> {
    dir: &'a FsPath,
    manifest: Manifest,
}

impl Out<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.manifest.output(name);
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let s = serde_json::to_string_pretty(value)?;
        self.manifest.output(name);
        fs::write(self.dir.join(name), s + "\n")?;
        Ok(())
    }

    fn text(&mut self, name: &str, s: &str) -> Result<()> {
        self.manifest.output(name);
        fs::write(self.dir.join(name), s)?;
        Ok(())
    }
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Simulate { .. } => "simulate",
        Command::Fit { .. } => "fit",
        Command::GridSearch => "grid-search",
        Command::Value { .. } => "value",
        Command::Table2 => "table2",
        Command::Figures => "figures",
        Command::NestedMc => "nested-mc",
        Command::Diagnostics { .. } => "diagnostics",
    }
}

pub fn run(cmd: &Command, common: &Common, cfg: &ExperimentConfig) -> Result<String> {
    fs::create_dir_all(&cfg.output_dir)?;
    let mut out = Out {
        dir: &cfg.output_dir,
        manifest: Manifest::new(
            name(cmd),
            common.config.as_deref(),
            cfg.to_toml_string()?,
            cfg.master_seed,
        ),
    };
    let summary = match cmd {
        Command::Simulate { repeat } => simulate(cfg, *repeat, &mut out)?,
        Command::Fit {
            alpha,
            beta,
            lambda,
            training,
            sorted,
        } => fit(
            cfg,
            *alpha,
            *beta,
            *lambda,
            training.as_deref(),
            *sorted,
            &mut out,
        )?,
        Command::GridSearch => grid(cfg, &mut out)?,
        Command::Value { estimator, n_paths } => value(cfg, estimator, *n_paths, &mut out)?,
        Command::Table2 => table2(cfg, &mut out)?,
        Command::Figures => figures(cfg, &mut out)?,
        Command::NestedMc => nested(cfg, &mut out)?,
        Command::Diagnostics {
            n,
            lambda,
            alpha,
            beta,
            repeats,
            epsilon,
        } => diagnostics(
            cfg, *n, *lambda, *alpha, *beta, *repeats, *epsilon, &mut out,
        )?,
    };
    let manifest = std::mem::take(&mut out.manifest);
    out.json("manifest.json", &manifest)?;
    Ok(summary)
}

fn simulate(cfg: &ExperimentConfig, repeat: usize, out: &mut Out) -> Result<String> {
    let mut lines = Vec::new();
    for &id in &cfg.payoffs {
        let f = CountingFn::new(BsPayoff::new(cfg.market, id));
        let ts = training_set(cfg, repeat, &f)?;
        out.manifest.seed(
            format!("train/{repeat}"),
            training_seed(cfg.master_seed, repeat),
        );
        out.manifest.evaluations(id.as_str(), f.calls());
        let file = format!("training_{id}.csv");
        ts.write_csv(out.create(&file)?)?;
        lines.push(format!("{id}: {} paths -> {file}", ts.len()));
    }
    Ok(lines.join("\n"))
}

fn fit(
    cfg: &ExperimentConfig,
    alpha: f64,
    beta: f64,
    lambda: f64,
    training: Option<&FsPath>,
    sorted: bool,
    out: &mut Out,
) -> Result<String> {
    let kernel = KernelSpec::gauss_exp(alpha, beta, 1, cfg.market.steps, cfg.gamma)?;
    let mut lines = Vec::new();
    for &id in &cfg.payoffs {
        let seed = training_seed(cfg.master_seed, 0);
        let ts = match training {
            Some(p) => {
                let design =
                    SamplingDesign::Tilted(MeasureSpec::new(cfg.gamma, 1, cfg.market.steps, seed)?);
                let file = File::open(p)
                    .map_err(|e| Error::Input(format!("cannot open {}: {e}", p.display())))?;
                TrainingSet::read_csv(file, design, id.as_str())?
            }
            None => {
                let f = CountingFn::new(BsPayoff::new(cfg.market, id));
                let ts = training_set(cfg, 0, &f)?;
                out.manifest.evaluations(id.as_str(), f.calls());
                out.manifest.seed("train/0", seed);
                ts
            }
        };
        let est = if sorted {
            fit_dual_sorted(&ts, &kernel, lambda)?
        } else {
            fit_dual_unsorted(&ts, &kernel, lambda)?
        }
        .with_training_hash(ts.content_hash()?);
        let file = format!("estimator_{id}.json");
        out.text(&file, &(est.to_json()? + "\n"))?;
        lines.push(format!("{id}: fitted on {} paths -> {file}", ts.len()));
    }
    Ok(lines.join("\n"))
}

fn record_grid_seeds(cfg: &ExperimentConfig, out: &mut Out) {
    out.manifest
        .seed("train/0", training_seed(cfg.master_seed, 0));
    out.manifest
        .seed("validation", derive_seed(cfg.master_seed, "validation", 0));
}

fn grid(cfg: &ExperimentConfig, out: &mut Out) -> Result<String> {
    record_grid_seeds(cfg, out);
    let mut lines = Vec::new();
    for &id in &cfg.payoffs {
        let g = grid_search(cfg, id)?;
        out.manifest.evaluations(id.as_str(), g.payoff_evaluations);
        write_grid_csv(&g.points, out.create(&format!("grid_{id}.csv"))?)?;
        let est = best_estimator(cfg, id, &g)?;
        out.text(&format!("estimator_{id}.json"), &(est.to_json()? + "\n"))?;
        let b = g.best_point();
        lines.push(format!(
            "{id}: alpha* = {}, beta* = {}, lambda* = {:e}, validation error = {:.4}%",
            b.alpha,
            b.beta,
            b.lambda,
            100.0 * b.error.unwrap_or(f64::NAN)
        ));
    }
    Ok(lines.join("\n"))
}

fn value(
    cfg: &ExperimentConfig,
    estimator: &FsPath,
    n_paths: usize,
    out: &mut Out,
) -> Result<String> {
    let s = fs::read_to_string(estimator)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", estimator.display())))?;
    let est = Estimator::from_json(&s)?;
    let seed = derive_seed(cfg.master_seed, "value", 0);
    out.manifest.seed("value", seed);
    let paths = draw_paths(
        &MeasureSpec::nominal(est.kernel.dim(), est.kernel.steps(), seed),
        n_paths,
    )?;
    let series = ValueEvaluator::new(&est).evaluate_many(&paths)?;
    write_trajectories_csv(&series, out.create("values.csv")?)?;
    Ok(format!(
        "V_0 = {:.8}; {} paths -> values.csv",
        series.first().map_or(f64::NAN, |s| s[0]),
        n_paths
    ))
}

fn record_test_seeds(cfg: &ExperimentConfig, out: &mut Out) {
    record_grid_seeds(cfg, out);
    out.manifest
        .seed("test", derive_seed(cfg.master_seed, "test", 0));
}

fn table2(cfg: &ExperimentConfig, out: &mut Out) -> Result<String> {
    record_test_seeds(cfg, out);
    for r in 0..cfg.n_repeats {
        out.manifest
            .seed(format!("train/{r}"), training_seed(cfg.master_seed, r));
        out.manifest.seed(
            format!("nested/{r}"),
            derive_seed(cfg.master_seed, "nested", r as u64),
        );
    }
    let mut reports = Vec::new();
    let mut runs = Vec::new();
    let mut lines = Vec::new();
    for &id in &cfg.payoffs {
        let test = test_set(cfg, id)?;
        let run = run_payoff(cfg, id, &test)?;
        out.manifest.evaluations(
            format!("{id}/kernel"),
            run.kernel.payoff_evaluations * cfg.n_repeats,
        );
        out.manifest.evaluations(
            format!("{id}/nested_mc"),
            run.nested.payoff_evaluations * cfg.n_repeats,
        );
        write_grid_csv(&run.grid.points, out.create(&format!("grid_{id}.csv"))?)?;
        let est = best_estimator(cfg, id, &run.grid)?;
        out.text(&format!("estimator_{id}.json"), &(est.to_json()? + "\n"))?;
        let pct = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{:.2}", 100.0 * x))
                .collect::<Vec<_>>()
                .join(" ")
        };
        lines.push(format!(
            "{id}: kernel [{}] nested [{}]",
            pct(&run.kernel.mean),
            pct(&run.nested.mean)
        ));
        reports.push(run.kernel.clone());
        reports.push(run.nested.clone());
        runs.push(run);
    }
    write_table2_csv(&reports, out.create("table2.csv")?)?;
    out.json("table2.json", &runs)?;
    Ok(lines.join("\n"))
}

fn figures(cfg: &ExperimentConfig, out: &mut Out) -> Result<String> {
    record_test_seeds(cfg, out);
    let mut lines = Vec::new();
    for &id in &cfg.payoffs {
        let test = test_set(cfg, id)?;
        let fig = run_figures(cfg, id, &test)?;
        out.manifest
            .evaluations(id.as_str(), fig.grid.payoff_evaluations);
        let b = fig.grid.best_point().clone();
        write_grid_csv(
            fig.grid.alpha_beta_section(b.lambda),
            out.create(&format!("fig1_{id}.csv"))?,
        )?;
        write_grid_csv(
            fig.grid.lambda_section(b.alpha, b.beta),
            out.create(&format!("fig2_{id}.csv"))?,
        )?;
        write_trajectories_csv(&fig.trajectories, out.create(&format!("fig3_{id}.csv"))?)?;
        lines.push(format!(
            "{id}: fig1/fig2/fig3 written ({} trajectories)",
            fig.trajectories.len()
        ));
    }
    Ok(lines.join("\n"))
}

fn nested(cfg: &ExperimentConfig, out: &mut Out) -> Result<String> {
    let mut reports = Vec::new();
    for r in 0..cfg.n_repeats {
        out.manifest.seed(
            format!("nested/{r}"),
            derive_seed(cfg.master_seed, "nested", r as u64),
        );
    }
    for &id in &cfg.payoffs {
        let rep = nested_mc_repeats(
            &cfg.market,
            id,
            cfg.nested.n_outer,
            cfg.nested.n_inner,
            cfg.n_repeats,
            cfg.master_seed,
            &cfg.ground_truth,
        )?;
        out.manifest
            .evaluations(id.as_str(), rep.payoff_evaluations * cfg.n_repeats);
        reports.push(rep);
    }
    write_table2_csv(&reports, out.create("nested_mc.csv")?)?;
    Ok(reports
        .iter()
        .map(|r| {
            format!(
                "{}: nested [{:.2} {:.2}]%",
                r.payoff,
                100.0 * r.mean[0],
                100.0 * r.mean[1]
            )
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

#[derive(Serialize)]
struct DiagnosticsOutput {
    mse: kernval_core::diagnostics::BoundReport,
    concentration: kernval_core::diagnostics::ConcentrationReport,
    clt: kernval_core::diagnostics::CltReport,
    robustness: kernval_core::diagnostics::RobustnessReport,
}

#[allow(clippy::too_many_arguments)]
fn diagnostics(
    cfg: &ExperimentConfig,
    n: usize,
    lambda: f64,
    alpha: f64,
    beta: f64,
    repeats: usize,
    epsilon: f64,
    out: &mut Out,
) -> Result<String> {
    let mut lines = Vec::new();
    for &id in &cfg.payoffs {
        let setup = BoundSetup {
            market: cfg.market,
            payoff: id,
            kernel: KernelSpec::gauss_exp(alpha, beta, 1, cfg.market.steps, cfg.gamma)?,
            lambda,
            n,
            n_ref: 4 * n,
            n_probe: 100_000,
            n_probe_gram: 2000,
            master_seed: cfg.master_seed,
        };
        let ctx = BoundContext::new(&setup)?;
        let errors = ctx.repeated_errors(repeats)?;
        let mse = ctx.mse_bound_check(&errors, false);
        let h: Vec<f64> = errors.iter().map(|e| e.h_error).collect();
        let concentration =
            ctx.concentration_check(&errors, &[quantile(&h, 0.5), quantile(&h, 0.9)]);
        let z = draw_paths(
            &MeasureSpec::nominal(
                1,
                cfg.market.steps,
                derive_seed(cfg.master_seed, "clt-probe", 0),
            ),
            1,
        )?
        .remove(0);
        let clt = clt_experiment(&ctx, 10 * repeats, &z)?;
        let robustness = robustness_check(&ctx, epsilon, repeats)?;
        out.manifest
            .evaluations(id.as_str(), setup.n_ref + setup.n_probe + n * 12 * repeats);
        lines.push(format!(
            "{id}: mse {} (rms {:.3e} <= {:.3e}), concentration {}, clt mean {} normal {}, robustness {}",
            ok(!mse.violated),
            mse.empirical_rms_h,
            mse.mse_bound,
            ok(concentration.holds),
            ok(clt.mean_ok),
            ok(clt.normal_ok),
            ok(robustness.holds)
        ));
        out.json(
            &format!("diagnostics_{id}.json"),
            &DiagnosticsOutput {
                mse,
                concentration,
                clt,
                robustness,
            },
        )?;
    }
    Ok(lines.join("\n"))
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAILED"
    }
}
