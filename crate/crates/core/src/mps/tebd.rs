use std::collections::HashMap;

use super::layout::ExtendedLayout;
use super::trotter::{energy, GateSet, TrotterPlan};
use super::{MatrixProductState, Truncation};
use crate::config::format_f64;
use crate::ed::{chain_spectrum, record_times, MAX_SPINS};
use crate::error::{Error, Result};
use crate::model::SpinSystemConfig;
use crate::scalar::{Complex, Real};
use crate::trace::{self, TransferTrace};

pub const DEFAULT_STABILITY_TOL: f64 = 1e-2;

/// Gap below which a configuration counts as critical.
const CRITICAL_GAP: f64 = 1e-3;

/// Imaginary-time evolution schedule for the chain ground state.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundStateSettings {
    pub truncation: Truncation,
    /// First imaginary time step of the cascade.
    pub dtau: f64,
    /// Converged when the energy changes by less than this per step.
    pub tolerance: f64,
    /// Cascade ends when two consecutive step sizes give energies closer
    /// than this, relative.
    pub stage_tolerance: f64,
    pub max_halvings: usize,
    pub check_every: usize,
    pub max_steps_per_stage: usize,
}

impl Default for GroundStateSettings {
    fn default() -> Self {
        Self {
            truncation: Truncation::default(),
            dtau: 0.1,
            tolerance: 1e-10,
            stage_tolerance: 1e-8,
            max_halvings: 10,
            check_every: 10,
            max_steps_per_stage: 200_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ItebdResult<T: Real> {
    pub state: MatrixProductState<T>,
    pub energy: T,
    /// Final imaginary time step.
    pub dtau: T,
    pub steps: usize,
}

/// Chain ground state by imaginary-time TEBD from a slightly tilted product
/// state, halving the step until the energy no longer moves.
pub fn ground_state_itebd<T: Real>(config: &SpinSystemConfig<T>, settings: &GroundStateSettings) -> Result<ItebdResult<T>> {
    if settings.truncation.chi_max < 2 {
        return Err(Error::InvalidArgument("ground-state search needs chi_max >= 2".into()));
    }
    let plan = TrotterPlan::for_chain(config, T::c(settings.dtau), settings.truncation)?;
    let n = config.n_sites;
    // tilt towards the field-aligned state so every symmetry sector is reached
    let theta = T::c(0.3);
    let (major, minor) = (theta.cos(), theta.sin());
    let down_first = config.b_field >= T::zero();
    let mut state = MatrixProductState::product(&vec![false; n])?;
    let tilt = {
        let (a, b) = if down_first { (major, minor) } else { (minor, major) };
        let mut g = super::CMatrix::zeros(2, 2);
        g[(0, 0)] = Complex::new(a, T::zero());
        g[(1, 0)] = Complex::new(b, T::zero());
        g
    };
    for p in 0..n {
        state.apply_one_site(p, &tilt);
    }
    let mut dtau = T::c(settings.dtau);
    let mut e = energy(&mut state, &plan);
    let mut stage_energy: Option<T> = None;
    let mut steps = 0usize;
    for _ in 0..=settings.max_halvings {
        let gates = GateSet::imaginary_time(&plan, dtau);
        let mut stage_steps = 0usize;
        loop {
            for _ in 0..settings.check_every {
                gates.step(&mut state, &plan)?;
            }
            stage_steps += settings.check_every;
            let e_new = energy(&mut state, &plan);
            let per_step = (e_new - e).abs() / T::from_count(settings.check_every);
            e = e_new;
            if per_step < T::c(settings.tolerance) * e.abs().max(T::one()) {
                break;
            }
            if stage_steps >= settings.max_steps_per_stage {
                return Err(Error::NoConvergence {
                    what: "imaginary-time TEBD",
                    detail: format!("no stationary energy after {stage_steps} steps at dtau = {dtau}"),
                });
            }
        }
        steps += stage_steps;
        if let Some(prev) = stage_energy {
            if (e - prev).abs() < T::c(settings.stage_tolerance) * e.abs().max(T::one()) {
                return Ok(ItebdResult {
                    state,
                    energy: e,
                    dtau,
                    steps,
                });
            }
        }
        stage_energy = Some(e);
        dtau /= T::c(2.0);
    }
    Err(Error::NoConvergence {
        what: "imaginary-time TEBD",
        detail: format!("energy still changing after {} step halvings", settings.max_halvings),
    })
}

/// Chain ground state with the sender inserted up and the receiver down.
pub fn initial_transfer_state<T: Real>(
    config: &SpinSystemConfig<T>,
    layout: &ExtendedLayout,
    settings: &GroundStateSettings,
) -> Result<MatrixProductState<T>> {
    let mut psi = ground_state_itebd(config, settings)?.state;
    let (s, r) = layout
        .ancilla_positions()
        .ok_or_else(|| Error::InvalidArgument("layout has no ancillas".into()))?;
    psi.insert_site(s, true)?;
    psi.insert_site(r, false)?;
    Ok(psi)
}

/// Density-matrix channels plus energy and accumulated truncation weight.
pub fn trace_channels() -> Vec<String> {
    let mut c = trace::density_channels();
    c.push(trace::ENERGY.to_string());
    c.push(trace::TRUNCATION.to_string());
    c
}

/// Real-time TEBD of `initial` under `plan`, recorded every `dt_record`.
/// Record intervals that are not a multiple of `plan.dt` use the largest step
/// not exceeding it that divides the interval.
pub fn tebd_run<T: Real>(
    initial: &MatrixProductState<T>,
    config: &SpinSystemConfig<T>,
    plan: &TrotterPlan<T>,
    t_final: f64,
    dt_record: f64,
) -> Result<TransferTrace> {
    if initial.len() != plan.layout.len() {
        return Err(Error::InvalidArgument(format!(
            "state has {} sites, layout {}",
            initial.len(),
            plan.layout.len()
        )));
    }
    let (ps, pr) = plan
        .layout
        .ancilla_positions()
        .ok_or_else(|| Error::InvalidArgument("plan has no ancillas".into()))?;
    if let Ok(gap) = critical_gap_estimate(config) {
        if gap < T::c(CRITICAL_GAP) {
            log::warn!("chain gap estimate {gap} is below {CRITICAL_GAP}: configuration is at a critical point");
        }
    }
    let times = record_times(t_final, dt_record)?;
    let mut kv = config.to_kv();
    kv.insert("t_final", format_f64(t_final));
    kv.insert("dt_record", format_f64(dt_record));
    kv.insert("dt", format_f64(plan.dt.as_f64()));
    kv.insert("chi_max", plan.truncation.chi_max);
    kv.insert("cutoff", format_f64(plan.truncation.cutoff));
    let mut out = TransferTrace::new("mps", kv, &trace_channels());
    let mut psi = initial.clone();
    let mut gate_cache: HashMap<u64, GateSet<T>> = HashMap::new();
    let mut discarded = T::zero();
    let mut t_prev = 0.0;
    let mut steps = 0usize;
    let mut e0: Option<f64> = None;
    let mut drift = 0.0f64;
    let mut defect = T::zero();
    let mut max_bond = psi.max_bond();
    for &t in &times {
        let span = t - t_prev;
        if span > 0.0 {
            let n = (span / plan.dt.as_f64() - 1e-9).ceil().max(1.0) as usize;
            let tau = span / n as f64;
            let gates = gate_cache
                .entry(tau.to_bits())
                .or_insert_with(|| GateSet::real_time(plan, T::c(tau)));
            for _ in 0..n {
                discarded += gates.step(&mut psi, plan)?;
            }
            steps += n;
        }
        t_prev = t;
        max_bond = max_bond.max(psi.max_bond());
        defect = defect.max(psi.isometry_defect());
        let rho = psi.reduced_density(ps, pr);
        let mut arr = [[Complex::new(0.0, 0.0); 4]; 4];
        for (i, row) in arr.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = Complex::new(rho[(i, j)].re.as_f64(), rho[(i, j)].im.as_f64());
            }
        }
        let e = energy(&mut psi, plan).as_f64();
        let e_ref = *e0.get_or_insert(e);
        drift = drift.max(((e - e_ref) / e_ref).abs());
        let mut values = trace::density_values(&arr);
        values.push(e);
        values.push(discarded.as_f64());
        out.push(t, &values)?;
    }
    out.diagnostics.insert("steps", steps);
    out.diagnostics.insert("max_bond", max_bond);
    out.diagnostics.insert("energy_drift", format_f64(drift));
    out.diagnostics.insert("isometry_defect", format_f64(defect.as_f64()));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// Largest |ΔP| over time for each probability channel.
    pub deviations: Vec<(String, f64)>,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares the probability channels of two runs recorded on the same grid,
/// typically at (χ, dt) and (2χ, dt/2).
pub fn stability_check(a: &TransferTrace, b: &TransferTrace, tolerance: f64) -> Result<StabilityReport> {
    if a.times().len() != b.times().len()
        || a.times().iter().zip(b.times()).any(|(x, y)| (x - y).abs() > 1e-9 * x.abs().max(1.0))
    {
        return Err(Error::GridMismatch(format!(
            "{} vs {} samples",
            a.times().len(),
            b.times().len()
        )));
    }
    let mut deviations = Vec::new();
    for name in [trace::P_DD, trace::P_UD, trace::P_DU, trace::P_UU] {
        let (x, y) = (a.require(name)?, b.require(name)?);
        let d = x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        deviations.push((name.to_string(), d));
    }
    let max_deviation = deviations.iter().map(|(_, d)| *d).fold(0.0, f64::max);
    Ok(StabilityReport {
        deviations,
        max_deviation,
        tolerance,
        pass: max_deviation < tolerance,
    })
}

/// Excitation gap of the chain. With `J_z = 0` the chain maps to free
/// fermions with `ε_k = 2·sqrt((B − (J_x+J_y) cos k)² + (J_x−J_y)² sin² k)`
/// and the infinite-chain minimum is returned; otherwise the gap is measured
/// by exact diagonalization of a chain of at most 12 sites.
pub fn critical_gap_estimate<T: Real>(config: &SpinSystemConfig<T>) -> Result<T> {
    if config.j_z == T::zero() {
        let (b, jp, jm) = (config.b_field, config.j_x + config.j_y, config.j_x - config.j_y);
        let samples = 4096;
        let mut gap = T::max_value().unwrap_or(T::c(f64::MAX));
        for i in 0..=samples {
            let k = T::pi() * T::from_count(i) / T::from_count(samples);
            let a = b - jp * k.cos();
            let c = jm * k.sin();
            gap = gap.min(T::c(2.0) * (a * a + c * c).sqrt());
        }
        return Ok(gap);
    }
    let n = config.n_sites.min(MAX_SPINS - 2);
    let small = SpinSystemConfig {
        n_sites: n,
        m_sender: 1,
        m_receiver: n.max(2),
        allow_off_centre: true,
        ..config.clone()
    };
    Ok(chain_spectrum(&small, 2)?.gap)
}
