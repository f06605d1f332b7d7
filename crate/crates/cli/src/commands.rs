use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::net::TcpListener;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;

use curvescan::backend::server::serve;
use curvescan::backend::{BackendClient, SyntheticBackend};
use curvescan::curvature::{builtin_field, neg_hessian_trace, symmetric_discrepancy};
use curvescan::detector::{decide, Method};
use curvescan::harness::{
    build_paired_corpus, cross_model_matrix, export_results, length_binned_auroc, paraphrase_sweep,
    perturbation_count_sweep, score_passage, ExperimentConfig, Label, SynthBenchOptions,
    SCHEMA_VERSION,
};
use curvescan::seed::{derive_seed, stream};
use curvescan::synthetic::ChainFamily;
use curvescan::Passage;
use serde_json::json;

use crate::render;
use crate::settings::{connect, load_config_file, load_dataset, open_cache, CliError};
use crate::{
    CrossMatrixArgs, CurvatureArgs, DatasetArgs, DetectArgs, EvaluateArgs, ServeArgs, SweepKArgs,
    SweepParaphraseArgs, SynthBenchArgs,
};

/// Estimator disagreement (in standard errors) that fails `curvature-check`.
const CURVATURE_Z_LIMIT: f64 = 5.0;

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json serializes"));
}

fn read_input(path: Option<&Path>) -> Result<String, CliError> {
    let mut text = String::new();
    match path {
        Some(p) if p != Path::new("-") => {
            text = fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
        }
        _ => {
            std::io::stdin().read_to_string(&mut text)?;
        }
    }
    Ok(text)
}

pub fn detect(a: DetectArgs) -> Result<ExitCode, CliError> {
    let (target, client) = connect(&a.backend)?;
    let mut config = load_config_file(a.config.as_deref(), target.base_config())?;
    if let Some(m) = a.model {
        config.source_model = m;
        config.scorer_model = None;
    }
    if let Some(f) = a.filler_model {
        config.filler_model = f;
    }
    if let Some(k) = a.k {
        config.k = k;
    }
    if let Some(r) = a.mask_rate {
        config.mask_spec.mask_rate = r;
    }
    if let Some(s) = a.span_length {
        config.mask_spec.span_length = s;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.methods = if a.all_methods {
        Method::ALL.to_vec()
    } else {
        vec![Method::Detectgpt]
    };
    config.validate()?;
    if !a.epsilon.is_finite() {
        return Err(CliError::Config("epsilon must be finite".into()));
    }

    let passage = Passage::new("input", &read_input(a.input.as_deref())?);
    let min_words = config.effective_mask_spec().min_words();
    if passage.len_words() < min_words {
        return Err(CliError::Input(format!(
            "passage has {} words; at least {min_words} are needed",
            passage.len_words()
        )));
    }
    let scores = score_passage(&config, &passage, Label::Human, &client)?;
    let est = scores.discrepancy.expect("detectgpt always runs");
    let machine = decide(&est, a.epsilon);
    let verdict = if machine { "machine" } else { "human" };
    let baselines: BTreeMap<&str, f64> = scores
        .scores
        .iter()
        .filter(|(m, _)| m.is_baseline())
        .map(|(m, s)| (m.as_str(), *s))
        .collect();

    if a.json {
        print_json(&json!({
            "schema_version": SCHEMA_VERSION,
            "command": "detect",
            "n_words": scores.n_words,
            "epsilon": a.epsilon,
            "normalized": est.normalized,
            "discrepancy": est,
            "verdict": verdict,
            "baselines": baselines,
            "config": config,
        }));
    } else {
        println!("words            {}", scores.n_words);
        println!("perturbations    {}", est.k);
        println!("log p(x)         {:.4}", est.logp_x);
        println!("mean perturbed   {:.4}", est.mu_tilde);
        println!("discrepancy      {:.4}", est.d_hat);
        println!("std perturbed    {:.4}", est.sigma2_tilde.sqrt());
        println!("normalized       {:.4}", est.normalized);
        for (m, s) in &baselines {
            println!("{m:<16} {s:.4}");
        }
        println!("verdict          {verdict} (epsilon {})", a.epsilon);
    }
    Ok(ExitCode::SUCCESS)
}

fn prepare(
    backend: &crate::BackendArgs,
    experiment: &crate::ExperimentArgs,
    data: &DatasetArgs,
) -> Result<(BackendClient, ExperimentConfig, Vec<curvescan::harness::PassagePair>), CliError> {
    let (target, client) = connect(backend)?;
    let config = experiment.resolve(target.base_config())?;
    let dataset = load_dataset(&data.dataset)?;
    fs::create_dir_all(&data.out_dir)?;
    let pairs = build_paired_corpus(&dataset, &config, &client)?;
    Ok((client, config, pairs))
}

pub fn evaluate(a: EvaluateArgs) -> Result<ExitCode, CliError> {
    let (client, config, pairs) = prepare(&a.backend, &a.experiment, &a.data)?;
    let result = curvescan::harness::run_detection(&config, &pairs, &client)?;
    let paths = export_results(&result, &a.data.out_dir)?;
    let bins = if a.length_bins {
        let bins = length_binned_auroc(&result)?;
        let path = a.data.out_dir.join("length_bins.json");
        let doc = json!({"schema_version": SCHEMA_VERSION, "bins": bins});
        fs::write(&path, serde_json::to_string_pretty(&doc).expect("json") + "\n")?;
        Some(bins)
    } else {
        None
    };
    if a.data.json {
        print_json(&json!({
            "schema_version": SCHEMA_VERSION,
            "command": "evaluate",
            "n_pairs": pairs.len(),
            "aggregate": result.aggregate,
            "length_bins": bins,
            "rows_file": paths.rows,
            "aggregate_file": paths.aggregate,
        }));
    } else {
        print!("{}", render::aggregate_table(&result.aggregate));
        println!("wrote {}", a.data.out_dir.display());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn sweep_k(a: SweepKArgs) -> Result<ExitCode, CliError> {
    let (client, config, pairs) = prepare(&a.backend, &a.experiment, &a.data)?;
    let mut k_values = a.k_values.clone();
    k_values.sort_unstable();
    k_values.dedup();
    let rows = perturbation_count_sweep(&config, &pairs, &k_values, &client)?;
    let csv = render::k_sweep_csv(&rows);
    fs::write(a.data.out_dir.join("sweep_k.csv"), &csv)?;
    if a.data.json {
        print_json(&json!({"schema_version": SCHEMA_VERSION, "command": "sweep-k", "rows": rows}));
    } else {
        print!("{csv}");
    }
    Ok(ExitCode::SUCCESS)
}

pub fn sweep_paraphrase(a: SweepParaphraseArgs) -> Result<ExitCode, CliError> {
    let (client, config, pairs) = prepare(&a.backend, &a.experiment, &a.data)?;
    let rows = paraphrase_sweep(&config, &pairs, &a.r_values, &client)?;
    let csv = render::paraphrase_csv(&rows);
    fs::write(a.data.out_dir.join("sweep_paraphrase.csv"), &csv)?;
    if a.data.json {
        print_json(&json!({"schema_version": SCHEMA_VERSION, "command": "sweep-paraphrase", "rows": rows}));
    } else {
        print!("{csv}");
    }
    Ok(ExitCode::SUCCESS)
}

pub fn cross_matrix(a: CrossMatrixArgs) -> Result<ExitCode, CliError> {
    let (target, client) = connect(&a.backend)?;
    let config = a.experiment.resolve(target.base_config())?;
    let dataset = load_dataset(&a.data.dataset)?;
    fs::create_dir_all(&a.data.out_dir)?;
    let scorers = if a.scorers.is_empty() { a.sources.clone() } else { a.scorers.clone() };
    let matrix = cross_model_matrix(&a.sources, &scorers, &config, &dataset, &client)?;
    let csv = render::cross_matrix_csv(&matrix);
    fs::write(a.data.out_dir.join("cross_matrix.csv"), &csv)?;
    if a.data.json {
        print_json(&json!({"schema_version": SCHEMA_VERSION, "command": "cross-matrix", "matrix": matrix}));
    } else {
        print!("{csv}");
    }
    Ok(ExitCode::SUCCESS)
}

pub fn curvature_check(a: CurvatureArgs) -> Result<ExitCode, CliError> {
    let field = builtin_field(&a.field, a.dim).map_err(|e| CliError::Config(e.to_string()))?;
    let x = vec![0.0; a.dim];
    let truth = -field.hessian_trace(&x).expect("builtin fields have analytic traces");
    let bad = |e: curvescan::curvature::CurvatureError| CliError::Config(e.to_string());
    let est = neg_hessian_trace(field.as_ref(), &x, a.probes, a.h, &mut stream(a.seed)).map_err(bad)?;
    let one_sided = symmetric_discrepancy(
        field.as_ref(),
        &x,
        a.probes,
        a.h,
        &mut stream(derive_seed(a.seed, "one-sided")),
    )
    .map_err(bad)?;
    let z = est.z_score(truth);

    // one-sided / h^2 should match half the two-sided estimate
    let h2 = a.h * a.h;
    let scaled = one_sided.value / h2;
    let half = est.value / 2.0;
    let se = ((one_sided.standard_error / h2).powi(2) + (est.standard_error / 2.0).powi(2)).sqrt();
    let diff = scaled - half;
    // agreement to rounding precision counts as exact, whatever the noise-level error says
    let z_one_sided = if diff.abs() <= 1e-9 * half.abs().max(1.0) {
        0.0
    } else if se > 0.0 {
        diff / se
    } else {
        diff.signum() * f64::INFINITY
    };

    let pass = z.abs() <= CURVATURE_Z_LIMIT;
    if a.json {
        print_json(&json!({
            "schema_version": SCHEMA_VERSION,
            "command": "curvature-check",
            "field": a.field,
            "dim": a.dim,
            "probes": a.probes,
            "h": a.h,
            "estimate": est.value,
            "truth": truth,
            "standard_error": est.standard_error,
            "z_score": z,
            "one_sided_scaled": scaled,
            "one_sided_z_score": z_one_sided,
            "pass": pass,
        }));
    } else {
        println!("field            {} (dim {})", a.field, a.dim);
        println!("estimate -tr H   {:.10}", est.value);
        println!("truth            {truth:.10}");
        println!("standard error   {:.3e}", est.standard_error);
        println!("z-score          {z:.4}");
        println!("one-sided / h^2  {scaled:.10} (z vs half estimate {z_one_sided:.4})");
        println!("{}", if pass { "ok" } else { "MISMATCH" });
    }
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

pub fn synth_bench(a: SynthBenchArgs) -> Result<ExitCode, CliError> {
    let options = SynthBenchOptions {
        seed: a.seed,
        n_pairs: a.n_pairs,
        k: a.k,
        length: a.length,
        family: ChainFamily::default(),
    };
    let world = options.world()?;
    let client = BackendClient::new(Arc::new(world), open_cache(a.cache_dir.as_deref())?);
    let report = curvescan::harness::synth_bench(&options, &client)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let result = report.result.as_ref().expect("synth bench keeps its result");
    if let Some(dir) = &a.out_dir {
        export_results(result, dir)?;
    }
    if a.json {
        print_json(&json!({
            "schema_version": SCHEMA_VERSION,
            "command": "synth-bench",
            "report": report,
            "normalized_gap": report.normalized_gap(),
        }));
    } else {
        print!("{}", render::aggregate_table(&result.aggregate));
        for label in [Label::Human, Label::Machine] {
            println!(
                "{label:<8} mean normalized {:>9.4}   mean raw discrepancy {:>9.4}",
                report.mean_normalized[&label], report.mean_raw_discrepancy[&label]
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn serve_synthetic(a: ServeArgs) -> Result<ExitCode, CliError> {
    let world = SyntheticBackend::twin_world(a.seed, &ChainFamily::default(), crate::settings::SYNTHETIC_SIBLINGS)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let listener = TcpListener::bind((a.host.as_str(), a.port))
        .map_err(|e| CliError::Config(format!("bind {}:{}: {e}", a.host, a.port)))?;
    eprintln!(
        "serving {} on http://{}",
        world.model_ids().join(", "),
        listener.local_addr()?
    );
    serve(listener, Arc::new(world))?;
    Ok(ExitCode::SUCCESS)
}
