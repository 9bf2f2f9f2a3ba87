use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use demma_core::autodiff::Primitive;
use demma_core::data_io::{
    build_windows, generate_synthetic, load_csv, random_offset, split_and_standardize, write_csv, SeriesDataset,
    SplitConfig,
};
use demma_core::mixture::{fit_mixture, MixtureParams};
use demma_core::pipeline::{
    evaluate, gradcheck_fixture, log_csv, model_gradient_check, predict, train, DemmaModel, Hyperparameters,
    TrainConfig,
};
use demma_core::threshold_scan::{scan_thresholds, ScanConfig, ScanResult, StabilityRule};
use demma_core::{Error, Result};

use crate::args::*;
use crate::diagnostics::{cdf_table, survival_table};

/// Runs one subcommand and returns the process exit code.
pub fn run(command: Command) -> Result<u8> {
    match command {
        Command::Scan(a) => scan(a),
        Command::FitMixture(a) => fit(a),
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn echo_config(command: &str, config: &impl Serialize) -> Result<()> {
    let doc = json!({ "command": command, "config": config });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

/// `<path without extension>.<suffix>`
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn scan_config(o: &ScanOptions) -> ScanConfig {
    ScanConfig {
        quantile_lo: o.quantile_lo,
        quantile_hi: o.quantile_hi,
        grid_count: o.grid,
        stability_window: o.window,
        dispersion_tol: o.tol,
        min_exceedances: o.min_exceedances,
        rule: match o.rule {
            RuleArg::StandardError => StabilityRule::StandardError,
            RuleArg::Relative => StabilityRule::RelativeDispersion,
        },
        se_multiplier: o.se_multiplier,
    }
}

fn load_target(path: &Path, column: &str) -> Result<Vec<f64>> {
    Ok(load_csv(path, column, Some(&[]))?.target)
}

fn load_dataset(path: &Path, cols: &DataOptions) -> Result<SeriesDataset> {
    load_csv(path, &cols.target_col, cols.predictor_cols.as_deref())
}

fn scan(a: ScanArgs) -> Result<u8> {
    let cfg = scan_config(&a.scan);
    echo_config("scan", &json!({ "args": &a, "scan": cfg }))?;
    cfg.validate()?;
    let y = load_target(&a.input, &a.target_col)?;
    let result = scan_thresholds(&y, &cfg)?;
    write(&a.out, &(serde_json::to_string_pretty(&result)? + "\n"))?;
    if let Some(t) = &a.table_out {
        write(t, &result.candidates_tsv())?;
    }
    if !result.stable {
        eprintln!("warning: no window met the stability rule; using the most stable window");
    }
    println!(
        "{}",
        json!({ "u_star": result.u_star, "stable": result.stable, "params": result.params })
    );
    Ok(0)
}

fn fit(a: FitMixtureArgs) -> Result<u8> {
    let cdf_path = a.cdf_table.clone().unwrap_or_else(|| sibling(&a.out, "cdf.tsv"));
    let surv_path = a.survival_table.clone().unwrap_or_else(|| sibling(&a.out, "survival.tsv"));
    let cfg = scan_config(&a.scan_options);
    echo_config(
        "fit-mixture",
        &json!({ "args": &a, "scan": cfg, "cdf_table": cdf_path, "survival_table": surv_path }),
    )?;
    let y = load_target(&a.input, &a.target_col)?;
    let scan: ScanResult = match &a.scan {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => scan_thresholds(&y, &cfg)?,
    };
    let m = fit_mixture(&y, &scan)?;
    m.save(&a.out)?;
    let mut sorted = y;
    sorted.sort_by(f64::total_cmp);
    write(&cdf_path, &cdf_table(&sorted, &m))?;
    write(&surv_path, &survival_table(&sorted, &m))?;
    println!("{}", m.to_json()?);
    Ok(0)
}

fn simulate(mut a: SimulateArgs) -> Result<u8> {
    let m = MixtureParams::load(&a.model)?;
    let noise = *a.noise.get_or_insert(0.2 * m.gp.scale0);
    echo_config("simulate", &a)?;
    let ds = generate_synthetic(&m, a.n, a.predictors, noise, a.seed)?;
    write_csv(&ds, &a.out)?;
    Ok(0)
}

fn parse_ratios(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("ratios must look like 7:2:1, got '{text}'")))?;
    let [a, b, c] = parts[..] else {
        return Err(Error::Config(format!("ratios need three parts, got '{text}'")));
    };
    let total = a + b + c;
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Config(format!("ratios must have a positive sum, got '{text}'")));
    }
    Ok([a / total, b / total, c / total])
}

fn train_cmd(a: TrainArgs) -> Result<u8> {
    let ratios = parse_ratios(&a.ratios)?;
    let ds = load_dataset(&a.data, &a.columns)?;
    let offset = if a.random_split {
        random_offset(ds.len(), a.seed)
    } else {
        a.split_offset
    };
    let mixture_out = match &a.mixture {
        Some(_) => None,
        None => Some(a.mixture_out.clone().unwrap_or_else(|| sibling(&a.out, "mixture.json"))),
    };
    let hyper = Hyperparameters {
        n_predictors: ds.n_predictors(),
        window: a.window,
        hidden: a.hidden,
        heads: a.heads,
        tau: a.tau,
        w: a.w,
    };
    let split = SplitConfig {
        ratios,
        window: a.window,
        offset,
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        seed: a.seed,
    };
    echo_config(
        "train",
        &json!({
            "args": &a,
            "predictor_columns": ds.predictor_names,
            "hyperparameters": hyper,
            "split": split,
            "train": cfg,
            "mixture_out": mixture_out,
        }),
    )?;
    hyper.validate()?;
    cfg.validate()?;

    let splits = split_and_standardize(&ds, &split)?;
    for w in &splits.warnings {
        eprintln!("warning: {w}");
    }
    let mixture = match (&a.mixture, &mixture_out) {
        (Some(p), _) => MixtureParams::load(p)?,
        (None, Some(out)) => {
            let scan = scan_thresholds(&splits.train_targets, &ScanConfig::default())?;
            let m = fit_mixture(&splits.train_targets, &scan)?;
            m.save(out)?;
            m
        }
        (None, None) => unreachable!("a mixture path is always resolved"),
    };
    let outcome = train(
        hyper,
        &splits.train.windows,
        &splits.validation.windows,
        &mixture,
        &cfg,
    )?;
    let mut model = outcome.model;
    model.standardization = Some(splits.train.stats.clone());
    model.split = Some(splits.info.clone());
    model.save(&a.out)?;
    if let Some(log) = &a.log {
        write(log, &log_csv(&outcome.log))?;
    }
    println!(
        "{}",
        json!({ "best_epoch": outcome.best_epoch, "best_val_loss": outcome.best_val_loss })
    );
    Ok(0)
}

fn predict_cmd(a: PredictArgs) -> Result<u8> {
    echo_config("predict", &a)?;
    let model = DemmaModel::load(&a.model)?;
    let mixture = MixtureParams::load(&a.mixture)?;
    let ds = load_dataset(&a.data, &a.columns)?;
    if ds.n_predictors() != model.hyper.n_predictors {
        return Err(Error::shape(
            "predictor columns",
            &[ds.n_predictors()],
            &[model.hyper.n_predictors],
        ));
    }
    let stats = model
        .standardization
        .as_ref()
        .ok_or_else(|| Error::Contract("model carries no standardization statistics".into()))?;
    let ranges = match a.part {
        PartArg::All => vec![(0, ds.len())],
        part => {
            let info = model
                .split
                .as_ref()
                .ok_or_else(|| Error::Contract("model carries no split; use --part all".into()))?;
            if info.n_rows != ds.len() {
                return Err(Error::Contract(format!(
                    "model was split over {} rows but the data has {}",
                    info.n_rows,
                    ds.len()
                )));
            }
            match part {
                PartArg::Train => info.train.clone(),
                PartArg::Validation => info.validation.clone(),
                _ => info.test.clone(),
            }
        }
    };
    let windows = build_windows(&ds, &ranges, stats, model.hyper.window);
    let preds = predict(&model, &mixture, &windows.windows)?;
    let mut out = String::from("row,y,q_hat,y_hat\n");
    for (w, p) in windows.windows.iter().zip(&preds) {
        out.push_str(&format!(
            "{},{},{},{}\n",
            w.start + model.hyper.window,
            w.y,
            p.q_hat,
            p.y_hat
        ));
    }
    write(&a.out, &out)?;
    Ok(0)
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<u8> {
    echo_config("evaluate", &a)?;
    let ds = load_csv(&a.preds, "y", Some(&["y_hat".to_string()]))?;
    let y_hat: Vec<f64> = ds.predictors.iter().map(|r| r[0]).collect();
    let report = evaluate(&y_hat, &ds.target, a.split_quantile)?;
    let text = serde_json::to_string_pretty(&report)?;
    write(&a.out, &(text.clone() + "\n"))?;
    println!("{text}");
    Ok(0)
}

fn primitive(p: PrimitiveArg) -> Primitive {
    match p {
        PrimitiveArg::Add => Primitive::Add,
        PrimitiveArg::Sub => Primitive::Sub,
        PrimitiveArg::Mul => Primitive::Mul,
        PrimitiveArg::Matmul => Primitive::MatMul,
        PrimitiveArg::Concat => Primitive::Concat,
        PrimitiveArg::Slice => Primitive::Slice,
        PrimitiveArg::Transpose => Primitive::Transpose,
        PrimitiveArg::Sigmoid => Primitive::Sigmoid,
        PrimitiveArg::Tanh => Primitive::Tanh,
        PrimitiveArg::Relu => Primitive::Relu,
        PrimitiveArg::Softmax => Primitive::Softmax,
        PrimitiveArg::LayerNorm => Primitive::LayerNorm,
        PrimitiveArg::Mse => Primitive::Mse,
        PrimitiveArg::Pinball => Primitive::Pinball,
        PrimitiveArg::Scale => Primitive::Scale,
        PrimitiveArg::RowSum => Primitive::RowSum,
        PrimitiveArg::Sum => Primitive::Sum,
    }
}

fn gradcheck(a: GradcheckArgs) -> Result<u8> {
    echo_config("gradcheck", &a)?;
    let (model, windows, q) = gradcheck_fixture(a.seed)?;
    let fault = a.inject_fault.map(|p| (primitive(p), a.fault_factor));
    let report = model_gradient_check(&model, &windows, &q, a.step, a.tol, fault)?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(out) = &a.out {
        write(out, &(text.clone() + "\n"))?;
    }
    let summary: Value = json!({
        "passed": report.passed,
        "worst_relative_error": report.worst(),
        "parameters": report.params.len(),
        "failed": report.params.iter().filter(|p| !p.passed).map(|p| p.name.as_str()).collect::<Vec<_>>(),
    });
    println!("{summary}");
    Ok(if report.passed { 0 } else { 3 })
}
