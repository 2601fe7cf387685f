use std::path::Path;

use gapchannel::analysis::{self, GapProbe, SpinBackend};
use gapchannel::config::{format_f64, KeyValues};
use gapchannel::mps::{self, GroundStateSettings, TrotterPlan, Truncation};
use gapchannel::trace::{self, TransferTrace};
use gapchannel::{ed, gaussian, master, Error, HarmonicConfig, SpinConfig};

pub enum RunError {
    Usage(anyhow::Error),
    Failed(anyhow::Error),
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::ConfigKey { .. } => RunError::Usage(e.into()),
            other => RunError::Failed(other.into()),
        }
    }
}

pub struct Outcome {
    pub report: KeyValues,
    pub passed: bool,
}

const SPIN_RUN_KEYS: [&str; 7] = ["t_final", "dt_record", "backend", "chi_max", "cutoff", "dt", "max_energy_drift"];
const HARMONIC_RUN_KEYS: [&str; 3] = ["t_final", "dt_record", "max_energy_drift"];
const MASTER_KEYS: [&str; 2] = ["t_final", "dt_record"];
const COMPARE_KEYS: [&str; 4] = ["t_final", "dt_record", "threshold", "tolerance"];
const ENTANGLEMENT_KEYS: [&str; 3] = ["t_final", "dt_record", "tolerance"];
const SWEEP_KEYS: [&str; 12] = [
    "backend",
    "low",
    "high",
    "resolution",
    "expected_threshold",
    "t_final",
    "dt_record",
    "chi_max",
    "cutoff",
    "dt",
    "samples",
    "t_max",
];

fn allowed<'a>(model: &[&'a str], run: &[&'a str]) -> Vec<&'a str> {
    model.iter().chain(run).copied().collect()
}

fn spin_config(kv: &KeyValues, run: &[&str]) -> Result<SpinConfig, RunError> {
    kv.reject_unknown(&allowed(&SpinConfig::KEYS, run))?;
    let cfg = SpinConfig::from_kv(kv)?;
    for w in cfg.warnings() {
        log::warn!("{w}");
    }
    Ok(cfg)
}

fn harmonic_config(kv: &KeyValues, run: &[&str]) -> Result<HarmonicConfig, RunError> {
    kv.reject_unknown(&allowed(&HarmonicConfig::KEYS, run))?;
    Ok(HarmonicConfig::from_kv(kv)?)
}

fn truncation(kv: &KeyValues) -> Result<Truncation, RunError> {
    let default = Truncation::default();
    Ok(Truncation {
        chi_max: kv.get_or("chi_max", default.chi_max)?,
        cutoff: kv.get_or("cutoff", default.cutoff)?,
    })
}

fn write_trace(trace: &TransferTrace, out: &Path, report: &mut KeyValues) -> Result<(), RunError> {
    trace.write(out)?;
    report.insert("trace", out.display());
    report.insert("backend", &trace.backend);
    report.insert("samples", trace.len());
    for (k, v) in trace.diagnostics.iter() {
        report.insert(format!("diagnostics.{k}"), v);
    }
    Ok(())
}

/// Adds the exchange fit to the report when the trace supports one.
fn add_fit(trace: &TransferTrace, report: &mut KeyValues) {
    match analysis::fit_transfer(trace) {
        Ok(m) => {
            report.insert("max_received", format_f64(m.max_received));
            report.insert("t_peak", format_f64(m.t_peak));
            report.insert("fitted_frequency", format_f64(m.fitted_frequency));
            report.insert("fitted_decay_rate", format_f64(m.fitted_decay_rate));
            report.insert("fitted_cosh_rate", format_f64(m.fitted_cosh_rate));
            report.insert("regime", m.regime.as_str());
            report.insert("fit_residual", format_f64(m.fit_residual));
        }
        Err(e) => report.insert("fit", format!("unavailable: {e}")),
    }
}

fn check_max(report: &mut KeyValues, name: &str, value: f64, limit: Option<f64>) -> bool {
    report.insert(name, format_f64(value));
    match limit {
        Some(limit) => {
            let ok = value <= limit;
            report.insert(format!("{name}.limit"), format_f64(limit));
            report.insert(format!("{name}.pass"), ok);
            ok
        }
        None => true,
    }
}

fn relative_drift(values: &[f64]) -> f64 {
    let Some(&e0) = values.first() else {
        return 0.0;
    };
    values
        .iter()
        .map(|e| ((e - e0) / e0).abs())
        .fold(0.0, f64::max)
}

pub fn spin_run(kv: &KeyValues, out: &Path) -> Result<Outcome, RunError> {
    let cfg = spin_config(kv, &SPIN_RUN_KEYS)?;
    let t_final: f64 = kv.require("t_final")?;
    let dt_record: f64 = kv.require("dt_record")?;
    let backend = kv.raw("backend").unwrap_or("mps");
    let trace = match backend {
        "ed" => ed::evolve_exact(&ed::initial_transfer_state(&cfg)?, &cfg, t_final, dt_record)?,
        "mps" => {
            let plan = TrotterPlan::for_system(&cfg, kv.optional("dt")?, truncation(kv)?)?;
            let psi = mps::initial_transfer_state(&cfg, &plan.layout, &GroundStateSettings::default())?;
            mps::tebd_run(&psi, &cfg, &plan, t_final, dt_record)?
        }
        other => {
            return Err(RunError::Usage(anyhow::anyhow!(
                "config key `backend`: expected `mps` or `ed`, got `{other}`"
            )))
        }
    };
    let mut report = KeyValues::new();
    write_trace(&trace, out, &mut report)?;
    add_fit(&trace, &mut report);
    let drift = relative_drift(trace.require(trace::ENERGY)?);
    let passed = check_max(&mut report, "energy_drift", drift, kv.optional("max_energy_drift")?);
    Ok(Outcome { report, passed })
}

pub fn harmonic_run(kv: &KeyValues, out: &Path) -> Result<Outcome, RunError> {
    let cfg = harmonic_config(kv, &HARMONIC_RUN_KEYS)?;
    let trace = gaussian::transfer_run(&cfg, kv.require("t_final")?, kv.require("dt_record")?)?;
    let mut report = KeyValues::new();
    write_trace(&trace, out, &mut report)?;
    add_fit(&trace, &mut report);
    if cfg.is_resonant() {
        report.insert("revival_time", format_f64(cfg.revival_time()));
    }
    let drift = relative_drift(trace.require(trace::ENERGY)?);
    let passed = check_max(&mut report, "energy_drift", drift, kv.optional("max_energy_drift")?);
    Ok(Outcome { report, passed })
}

pub fn master_solve(kv: &KeyValues, out: &Path) -> Result<Outcome, RunError> {
    let cfg = harmonic_config(kv, &MASTER_KEYS)?;
    let trace = master::closed_form_run(&cfg, kv.require("t_final")?, kv.require("dt_record")?)?;
    let coeffs = master::asymptotic_coefficients(&master::CorrelationKernel::from_config(&cfg))?;
    let mut report = KeyValues::new();
    write_trace(&trace, out, &mut report)?;
    if !coeffs.resonant && cfg.j_ancilla > 0.0 {
        report.insert("oscillation_frequency", format_f64(master::oscillation_frequency(&coeffs, cfg.j_ancilla)?));
        if let Ok(t1) = master::perfect_transfer_time(&coeffs, cfg.j_ancilla) {
            report.insert("perfect_transfer_time", format_f64(t1));
        }
    }
    Ok(Outcome { report, passed: true })
}

pub fn compare(kv: &KeyValues, out: &Path) -> Result<Outcome, RunError> {
    let cfg = harmonic_config(kv, &COMPARE_KEYS)?;
    let t_final = kv.get_or("t_final", analysis::comparison_window(&cfg))?;
    let dt_record = kv.get_or("dt_record", t_final / 2000.0)?;
    let threshold = kv.get_or("threshold", 0.05)?;
    let cmp = analysis::compare_with_master(&cfg, t_final, dt_record, threshold)?;
    let mut report = KeyValues::new();
    write_trace(&cmp.trace, out, &mut report)?;
    report.insert("compared_samples", cmp.compared);
    report.insert("t_worst", format_f64(cmp.t_worst));
    let passed = check_max(
        &mut report,
        "max_relative_deviation",
        cmp.max_relative_deviation,
        Some(kv.get_or("tolerance", 0.05)?),
    );
    Ok(Outcome { report, passed })
}

pub fn entanglement_run(kv: &KeyValues, out: &Path) -> Result<Outcome, RunError> {
    let cfg = spin_config(kv, &ENTANGLEMENT_KEYS)?;
    let trace = analysis::entanglement_run(&cfg, kv.require("t_final")?, kv.require("dt_record")?)?;
    let mut report = KeyValues::new();
    write_trace(&trace, out, &mut report)?;
    let exact = trace.require(trace::E_N)?;
    let approx = trace.require(trace::E_N_APPROX)?;
    let dev = exact
        .iter()
        .zip(approx)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    report.insert("max_E_N", format_f64(exact.iter().copied().fold(0.0, f64::max)));
    let passed = check_max(&mut report, "max_negativity_deviation", dev, kv.optional("tolerance")?);
    Ok(Outcome { report, passed })
}

pub fn sweep(kv: &KeyValues, out: &Path) -> Result<Outcome, RunError> {
    let backend = kv.raw("backend").unwrap_or("ed").to_string();
    let low: f64 = kv.require("low")?;
    let high: f64 = kv.require("high")?;
    let resolution: f64 = kv.require("resolution")?;
    // the swept parameter may be left out of the file
    let mut base = kv.clone();
    let probe = match backend.as_str() {
        "harmonic" => {
            if !base.contains("omega_ancilla") {
                base.insert("omega_ancilla", format_f64(low));
            }
            GapProbe::Harmonic {
                config: harmonic_config(&base, &SWEEP_KEYS)?,
                samples: kv.get_or("samples", 600)?,
                t_max: kv.get_or("t_max", 1e7)?,
            }
        }
        "ed" | "mps" => {
            if !base.contains("b_ancilla") {
                base.insert("b_ancilla", format_f64(low));
            }
            let spin_backend = if backend == "ed" {
                SpinBackend::Ed
            } else {
                SpinBackend::Mps {
                    truncation: truncation(kv)?,
                    dt: kv.optional("dt")?,
                }
            };
            GapProbe::Spin {
                config: spin_config(&base, &SWEEP_KEYS)?,
                backend: spin_backend,
                t_final: kv.require("t_final")?,
                dt_record: kv.require("dt_record")?,
            }
        }
        other => {
            return Err(RunError::Usage(anyhow::anyhow!(
                "config key `backend`: expected `ed`, `mps` or `harmonic`, got `{other}`"
            )))
        }
    };
    let est = analysis::gap_probe_sweep(&probe, low, high, resolution)?;
    let mut table = TransferTrace::new("sweep", kv.clone(), &["damped"]);
    for &(x, regime) in &est.samples {
        let damped = if regime == analysis::Regime::Damped { 1.0 } else { 0.0 };
        table.push(x, &[damped])?;
    }
    table.diagnostics.insert("parameter", probe.parameter_name());
    let mut report = KeyValues::new();
    write_trace(&table, out, &mut report)?;
    report.insert("threshold_parameter", format_f64(est.threshold_parameter));
    report.insert("bracket_low", format_f64(est.bracket.0));
    report.insert("bracket_high", format_f64(est.bracket.1));
    let passed = match kv.optional::<f64>("expected_threshold")? {
        Some(expected) => check_max(
            &mut report,
            "threshold_error",
            (est.threshold_parameter - expected).abs(),
            Some(resolution),
        ),
        None => true,
    };
    Ok(Outcome { report, passed })
}
