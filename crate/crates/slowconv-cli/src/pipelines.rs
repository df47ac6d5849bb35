//! Glue between the configuration file and the library pipelines.
//!
//! Each `run_*` function builds the configured model, executes one
//! pipeline, and leaves behind [`Products`]: the certificate list, the
//! realized-plan lines for the report, deviation-versus-rate plot rows, and
//! enough retained state to re-verify any certificate row from scratch
//! (the spot-check harness re-derives both sides of a sampled fraction of
//! rows and demands agreement within [`SPOT_TOL`]).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use slowconv::adversary::{
    theorem1_construct, theorem2_run, theorem3_construct, Theorem1Run, Theorem2Run,
    Theorem3Options, Theorem3Run,
};
use slowconv::averaging::{
    cesaro, flow_measure_average, kernel_average, telescope_gap, truncated_average,
    weighted_group_average, Kernel, TimeMeasure,
};
use slowconv::certificate::{CertKind, CertTest, Certificate};
use slowconv::measure::{MSet, Obs, ProbSpace};
use slowconv::rates::RateSeq;
use slowconv::systems::{
    box_window, cyclic_system, odometer_system, Automorphism, DiscreteFlow, ZdAction,
};
use slowconv::towers::{check_invariance_flow, check_invariance_group};

use crate::config::{
    Config, ConfigError, Model, ObsKind, ObservableConfig, RateKind, RatesConfig, ScanFamily,
    SystemConfig,
};
use crate::plotdata::{sweep_indices, PlotRow};

/// Everything that can go wrong in a run, ordered by exit code severity.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Lib(#[from] slowconv::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// Process exit code: 0 pass, 1 certificate failure, 2 config error,
    /// 3 infeasibility, 4 i/o failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Lib(slowconv::Error::Infeasible(_)) => 3,
            CliError::Lib(slowconv::Error::CertificateFailure(_)) => 1,
            CliError::Lib(_) => 2,
            CliError::Io(_) => 4,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(ConfigError(msg.into()))
}

/// Agreement tolerance between a certificate's recorded sides and the
/// spot-check's re-derivation. Re-derivations walk the same deterministic
/// code paths (plus plain instead of compensated sums over a handful of
/// stage terms), so anything beyond this is a real reproducibility bug.
pub const SPOT_TOL: f64 = 1e-12;

/// Tolerance for the telescoping identity `gap(f, N) · (N+1) = ‖f‖₁`.
const TELESCOPE_TOL: f64 = 1e-10;

/// Tolerance for mass preservation `∫ A f = ∫ f` of the operator families.
const MASS_CHECK_TOL: f64 = 1e-10;

/// Slack for positivity: averages of nonnegative observables may round to
/// at worst `-POSITIVITY_TOL`.
const POSITIVITY_TOL: f64 = 1e-10;

/// Sup-norm tolerance for linearity of the operator families.
const LINEARITY_TOL: f64 = 1e-12;

/// Distinct deterministic seed streams derived from the config seed.
const SEED_STREAM_OBSERVABLES: u64 = 1;
const SEED_STREAM_WEIGHTS: u64 = 2;
const SEED_STREAM_SPOT: u64 = 3;

fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

/// What a finished run leaves behind for reporting, emission, and row
/// re-verification.
pub struct Products {
    pub plan_lines: Vec<String>,
    pub certificates: Vec<Certificate>,
    pub exceedance: Option<usize>,
    pub plot: Vec<PlotRow>,
    pub pass: bool,
    checker: Checker,
}

// ---------------------------------------------------------------------------
// Model, rate, and observable builders.
// ---------------------------------------------------------------------------

fn build_rates(cfg: &RatesConfig) -> Result<RateSeq, CliError> {
    let rates = match cfg.kind {
        RateKind::Power => RateSeq::power(
            cfg.alpha
                .ok_or_else(|| config_err("rates.alpha is required for power rates"))?,
        )?,
        RateKind::Logpow => RateSeq::log_pow(
            cfg.alpha
                .ok_or_else(|| config_err("rates.alpha is required for logpow rates"))?,
        )?,
        RateKind::Table => RateSeq::table(
            cfg.values
                .clone()
                .ok_or_else(|| config_err("rates.values is required for table rates"))?,
        )?,
    };
    Ok(rates)
}

fn describe_rates(cfg: &RatesConfig) -> String {
    match cfg.kind {
        RateKind::Power => format!("a_n = n^-{}", cfg.alpha.unwrap_or(f64::NAN)),
        RateKind::Logpow => format!("a_n = log(n+2)^-{}", cfg.alpha.unwrap_or(f64::NAN)),
        RateKind::Table => format!(
            "a_n from a {}-entry table (clamped at the last value)",
            cfg.values.as_ref().map_or(0, Vec::len)
        ),
    }
}

/// Cyclic and odometer models share everything downstream of the map.
fn build_single_map(sys: &SystemConfig) -> Result<(ProbSpace, Automorphism), CliError> {
    match sys.model {
        Model::Cyclic => {
            let size = sys
                .size
                .ok_or_else(|| config_err("system.size is required for model = \"cyclic\""))?;
            Ok(cyclic_system(size)?)
        }
        Model::Odometer => {
            let base = sys
                .base
                .ok_or_else(|| config_err("system.base is required for model = \"odometer\""))?;
            let digits = sys
                .digits
                .ok_or_else(|| config_err("system.digits is required for model = \"odometer\""))?;
            Ok(odometer_system(base, digits)?)
        }
        Model::Torus => Err(config_err(
            "this subcommand needs a single-map model (cyclic or odometer), not torus",
        )),
    }
}

fn build_torus(sys: &SystemConfig) -> Result<ZdAction, CliError> {
    match sys.model {
        Model::Torus => {
            let side = sys
                .side
                .ok_or_else(|| config_err("system.side is required for model = \"torus\""))?;
            Ok(ZdAction::torus(side, sys.dim())?)
        }
        other => Err(config_err(format!(
            "this subcommand needs model = \"torus\", not {}",
            other.as_str()
        ))),
    }
}

/// The lowest `fraction` of the atoms (at least one).
fn lower_fraction(space: &ProbSpace, fraction: f64) -> MSet {
    let n = space.len();
    let count = ((n as f64 * fraction).floor() as usize).clamp(1, n);
    MSet::from_pred(space, |x| x < count)
}

fn build_observable(cfg: &ObservableConfig, space: &ProbSpace) -> Result<Obs, CliError> {
    let n = space.len();
    let obs = match cfg.kind {
        ObsKind::Constant => Obs::constant(space, cfg.value.unwrap_or(1.0))?,
        ObsKind::Alternating => {
            Obs::new(space, (0..n).map(|x| 1.0 + (x % 2) as f64).collect())?
        }
        ObsKind::Fractional => {
            Obs::new(space, (0..n).map(|x| 1.0 + x as f64 / n as f64).collect())?
        }
        ObsKind::Indicator => lower_fraction(space, cfg.fraction.unwrap_or(0.5)).indicator(),
    };
    Ok(obs)
}

fn describe_observable(cfg: &ObservableConfig) -> String {
    match cfg.kind {
        ObsKind::Constant => format!("f = {}", cfg.value.unwrap_or(1.0)),
        ObsKind::Alternating => "f(x) = 1 + (x mod 2)".into(),
        ObsKind::Fractional => "f(x) = 1 + x/n".into(),
        ObsKind::Indicator => format!(
            "f = indicator of the lowest {} of the atoms",
            cfg.fraction.unwrap_or(0.5)
        ),
    }
}

/// Uniform time measure on the integer points of `[-n, n]`, the window
/// family every flow run uses.
fn uniform_nu(n: u64) -> slowconv::Result<TimeMeasure> {
    TimeMeasure::uniform_on_integer_interval(-(n as i64), n as i64)
}

/// A point of the probability simplex drawn via sorted uniform cuts.
fn simplex_weights(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    if len <= 1 {
        return vec![1.0; len];
    }
    let mut cuts: Vec<f64> = (0..len - 1).map(|_| rng.gen::<f64>()).collect();
    cuts.sort_by(f64::total_cmp);
    let mut weights = Vec::with_capacity(len);
    let mut prev = 0.0;
    for &cut in &cuts {
        weights.push(cut - prev);
        prev = cut;
    }
    weights.push(1.0 - prev);
    weights
}

/// Weight vector for trial `t` on stage `k`: trial 0 is always the uniform
/// vector, later trials are independent simplex draws. Each (t, k) pair
/// seeds its own generator, so the draw does not depend on call order.
fn trial_weights(seed: u64, t: usize, k: usize, len: usize) -> Vec<f64> {
    if t == 0 {
        return vec![1.0 / len as f64; len];
    }
    let pair = ((t as u64) << 32) | (k as u64 & 0xFFFF_FFFF);
    let mut rng =
        ChaCha8Rng::seed_from_u64(stream_seed(seed, SEED_STREAM_WEIGHTS).wrapping_add(pair));
    simplex_weights(&mut rng, len)
}

fn random_observables(space: &ProbSpace, count: usize, seed: u64) -> Vec<Obs> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, SEED_STREAM_OBSERVABLES));
    (0..count)
        .map(|_| {
            let values: Vec<f64> = (0..space.len()).map(|_| rng.gen::<f64>()).collect();
            Obs::new(space, values).expect("uniform draws are finite")
        })
        .collect()
}

fn sup_abs_on(g: &Obs, set: &MSet) -> f64 {
    let mut sup = 0.0f64;
    for (x, &inside) in set.bits().iter().enumerate() {
        if inside {
            sup = sup.max(g.value(x).abs());
        }
    }
    sup
}

/// Sweep for the plot table: every index up to small maxima, 16
/// geometric points otherwise, always including the planned indices.
fn default_sweep(max: u64, planned: &[u64]) -> Vec<u64> {
    let points = if max <= 64 { None } else { Some(16) };
    sweep_indices(max, points, planned)
}

// ---------------------------------------------------------------------------
// Pipeline runners.
// ---------------------------------------------------------------------------

pub fn run_theorem1(config: &Config) -> Result<Products, CliError> {
    let t1 = config.require_theorem1()?;
    let rates_cfg = config.require_rates()?;
    let rates = build_rates(rates_cfg)?;
    let aprime_cfg = config.require_aprime()?;

    let (space, map) = build_single_map(&config.system)?;
    let flow = DiscreteFlow::new(map, config.system.delta())?;
    let aprime = lower_fraction(&space, aprime_cfg.fraction);

    let run = theorem1_construct(
        &flow,
        uniform_nu,
        &rates,
        &aprime,
        t1.eps,
        t1.count,
        config.eta,
    )?;

    let mut plan_lines = vec![
        format!("model: {}", config.system.describe()),
        format!("rates: {}", describe_rates(rates_cfg)),
        format!(
            "host set A': measure {:.6e} ({} atoms); final m(A) = {:.6e}",
            run.m_aprime,
            aprime.count(),
            run.m_a
        ),
        format!(
            "budget: eps = {} across {} stages (time measures: uniform on [-n, n])",
            t1.eps, t1.count
        ),
    ];
    for (k, st) in run.stages.iter().enumerate() {
        plan_lines.push(format!(
            "stage {}: n = {}, a_n = {:.6e}, L = {}, mu = {:.6e}, band = {:.6e}, \
             core ratio = {:.6}, deviation = {:.6e}, floor = {:.6e}, residual = {:.6e}{}",
            k + 1,
            st.n,
            st.rate_value,
            st.l_window,
            st.mu,
            st.cert.set_measure(),
            st.cert.ratio(),
            st.deviation,
            st.floor,
            st.residual,
            if st.escalated { " (escalated)" } else { "" },
        ));
    }

    let ind_a = run.a.indicator();
    let max_planned = run.plan.indices.iter().copied().max().unwrap_or(8);
    let mut plot = Vec::new();
    for n in default_sweep(2 * max_planned, &run.plan.indices) {
        let nu = uniform_nu(n)?;
        let dev = flow_measure_average(&flow, &nu, &ind_a)?.l1_dev(run.m_a);
        plot.push(PlotRow {
            index: n,
            l1_dev: dev,
            a_n: Some(rates.at(n as usize)),
        });
    }

    let exceedance = run
        .certificates
        .iter()
        .filter(|c| c.kind == CertKind::Deviation && c.pass)
        .count();

    Ok(Products {
        plan_lines,
        certificates: run.certificates.clone(),
        exceedance: Some(exceedance),
        plot,
        pass: run.pass,
        checker: Checker::T1 {
            flow,
            run,
            rates,
            eps: t1.eps,
            eta: config.eta,
        },
    })
}

pub fn run_theorem2(config: &Config) -> Result<Products, CliError> {
    let t2 = config.require_theorem2()?;
    let rates_cfg = config.require_rates()?;
    let rates = build_rates(rates_cfg)?;
    let aprime_cfg = config.require_aprime()?;

    let action = build_torus(&config.system)?;
    let aprime = lower_fraction(action.space(), aprime_cfg.fraction);
    let seed = config.seed;
    let trial_count = t2.trials + 1; // trial 0 is the uniform vector

    let run = theorem2_run(
        &action,
        &rates,
        t2.c,
        &aprime,
        t2.eps,
        t2.count,
        trial_count,
        |t, k, len| trial_weights(seed, t, k, len),
        config.eta,
    )?;

    let mut plan_lines = vec![
        format!("model: {}", config.system.describe()),
        format!("rates: {}", describe_rates(rates_cfg)),
        format!(
            "host set A': measure {:.6e} ({} atoms); final m(A) = {:.6e}",
            aprime.measure(),
            aprime.count(),
            run.lemma.m_a
        ),
        format!(
            "budget: eps = {} across {} radii; c = {}; {} weight trials \
             (trial 0 uniform, {} random)",
            t2.eps, t2.count, t2.c, trial_count, t2.trials
        ),
    ];
    for (k, st) in run.lemma.stages.iter().enumerate() {
        let min_dev = st.deviations.iter().copied().fold(f64::INFINITY, f64::min);
        plan_lines.push(format!(
            "stage {}: j = {}, a_j = {:.6e}, set = {:.6e}, core ratio = {:.6}, \
             vanish region = {:.6e}, min deviation across trials = {:.6e}",
            k + 1,
            run.plan.indices[k],
            run.rate_values[k],
            st.set_measure,
            st.invariance.ratio(),
            st.vanish_measure,
            min_dev,
        ));
    }

    let ind_a = run.lemma.a.indicator();
    let dim = action.grid_dim().unwrap_or(1);
    let max_planned = run.plan.indices.iter().copied().max().unwrap_or(4);
    let mut plot = Vec::new();
    for j in default_sweep(2 * max_planned, &run.plan.indices) {
        let window = box_window(dim, j as i64);
        let uniform = vec![1.0 / window.len() as f64; window.len()];
        let dev = weighted_group_average(&action, &window, &uniform, &ind_a)?
            .l1_dev(run.lemma.m_a);
        plot.push(PlotRow {
            index: j,
            l1_dev: dev,
            a_n: Some(rates.at(j as usize)),
        });
    }

    Ok(Products {
        plan_lines,
        certificates: run.certificates.clone(),
        exceedance: Some(run.exceedance),
        plot,
        pass: run.pass,
        checker: Checker::T2 {
            action,
            run,
            rates,
            eps: t2.eps,
            eta: config.eta,
        },
    })
}

pub fn run_theorem3(config: &Config) -> Result<Products, CliError> {
    let t3 = config.require_theorem3()?;
    let rates_cfg = config.require_rates()?;
    let rates = build_rates(rates_cfg)?;
    let obs_cfg = config.require_observable()?;

    let (space, map) = build_single_map(&config.system)?;
    let f = build_observable(obs_cfg, &space)?;
    let opts = Theorem3Options {
        grid_growth: t3.grid_growth.unwrap_or(1.5),
        height_factor: t3.height_factor.unwrap_or(100),
        one_sided_summary: t3.one_sided_summary.unwrap_or(false),
        eta: config.eta,
    };

    let run = theorem3_construct(&map, &f, &rates, t3.eps, t3.count, &opts)?;

    let mut plan_lines = vec![
        format!("model: {}", config.system.describe()),
        format!("rates: {}", describe_rates(rates_cfg)),
        format!("observable: {}", describe_observable(obs_cfg)),
        format!(
            "budget: eps = {} across {} stages (eps_k = eps / (3 * 2^k))",
            t3.eps, t3.count
        ),
        format!(
            "carved observable: m(Y) = {:.6e}, integral = {:.6e}",
            run.y.measure(),
            run.integral
        ),
    ];
    for (k, st) in run.stages.iter().enumerate() {
        plan_lines.push(format!(
            "stage {}: n = {}, eps_k = {:.6e}, a_n = {:.6e}, tower height = {}, \
             escalations = {}, tower measure = {:.6e}, pre-cut concentration = {:.6}",
            k + 1,
            st.n,
            st.eps_k,
            st.rate_value,
            st.height,
            st.escalations,
            st.tower_measure,
            st.provisional_fraction,
        ));
    }
    plan_lines.push(format!(
        "exceedance summary ({}): mass at all {} indices = {:.6e}, tail masses = {:?}",
        if run.summary.one_sided {
            "one-sided"
        } else {
            "two-sided"
        },
        run.summary.threshold_count,
        run.summary.mass_all_indices,
        run.summary.tail_mass,
    ));

    let max_planned = run.plan.indices.iter().copied().max().unwrap_or(8);
    let mut plot = Vec::new();
    for n in default_sweep(2 * max_planned, &run.plan.indices) {
        let dev = cesaro(&map, &run.f_tilde, n as usize)?.l1_dev(run.integral);
        plot.push(PlotRow {
            index: n,
            l1_dev: dev,
            a_n: Some(rates.at(n as usize)),
        });
    }

    let exceedance = run
        .certificates
        .iter()
        .filter(|c| c.kind == CertKind::Concentration && c.pass)
        .count();

    Ok(Products {
        plan_lines,
        certificates: run.certificates.clone(),
        exceedance: Some(exceedance),
        plot,
        pass: run.pass,
        checker: Checker::T3 {
            map,
            f,
            run,
            rates,
        },
    })
}

/// Operator families exercised by the core-checks suite, in stage order:
/// 1 = orbit (Cesàro), 2 = group window, 3 = flow measure, 4 = smoothing
/// kernel.
struct CoreState {
    map: Automorphism,
    action: ZdAction,
    flow: DiscreteFlow,
    kernel: Kernel,
    obs: Vec<Obs>,
}

/// Horizon of the Cesàro family inside core-checks.
const CORE_CESARO_HORIZON: usize = 7;
/// Box radius of the group-window family inside core-checks.
const CORE_WINDOW_RADIUS: i64 = 2;
/// Half-width of the flow family's uniform time measure.
const CORE_FLOW_HALFWIDTH: u64 = 5;
/// Time scale passed to the kernel family.
const CORE_KERNEL_TIME: f64 = 3.0;

impl CoreState {
    const FAMILY_NAMES: [&'static str; 4] =
        ["cesaro", "group-window", "flow-measure", "kernel"];

    fn build(map: Automorphism, delta: f64, obs: Vec<Obs>) -> Result<CoreState, CliError> {
        let action = ZdAction::new(vec![map.clone()])?;
        let flow = DiscreteFlow::new(map.clone(), delta)?;
        // Triangle kernel on [-1, 1] sampled every 0.25: heights sum to 4,
        // so the quadrature mass 4 * 0.25 is exactly 1.
        let heights = [0.0, 0.25, 0.5, 0.75, 1.0, 0.75, 0.5, 0.25, 0.0];
        let kernel = Kernel::new(-1.0, 0.25, &heights)?;
        Ok(CoreState {
            map,
            action,
            flow,
            kernel,
            obs,
        })
    }

    fn family_average(&self, family: usize, f: &Obs) -> Option<Obs> {
        match family {
            1 => cesaro(&self.map, f, CORE_CESARO_HORIZON).ok(),
            2 => {
                let window = box_window(1, CORE_WINDOW_RADIUS);
                let uniform = vec![1.0 / window.len() as f64; window.len()];
                weighted_group_average(&self.action, &window, &uniform, f).ok()
            }
            3 => {
                let nu = uniform_nu(CORE_FLOW_HALFWIDTH).ok()?;
                flow_measure_average(&self.flow, &nu, f).ok()
            }
            4 => kernel_average(&self.flow, &self.kernel, CORE_KERNEL_TIME, f).ok(),
            _ => None,
        }
    }

    fn linearity_gap(&self, family: usize) -> Option<f64> {
        let f = self.obs.first()?;
        let g = self.obs.get(1).unwrap_or(f);
        let combined = f.scale(0.3).ok()?.add(&g.scale(0.7).ok()?).ok()?;
        let left = self.family_average(family, &combined)?;
        let right = self
            .family_average(family, f)?
            .scale(0.3)
            .ok()?
            .add(&self.family_average(family, g)?.scale(0.7).ok()?)
            .ok()?;
        Some(left.sub(&right).ok()?.sup_norm())
    }
}

pub fn run_core_checks(config: &Config) -> Result<Products, CliError> {
    let cc = config.core_checks.clone().unwrap_or_default();
    let (space, map) = build_single_map(&config.system)?;
    let horizon = cc.max_horizon().min(space.len().saturating_sub(1)).max(1);
    let obs = random_observables(&space, cc.random_observables(), config.seed);
    let state = CoreState::build(map, config.system.delta(), obs)?;

    let mut certificates: Vec<Certificate> = Vec::new();
    for (t, f) in state.obs.iter().enumerate() {
        let norm = f.l1_norm();
        for n in 1..=horizon {
            let gap = telescope_gap(&state.map, f, n)?;
            certificates.push(
                Certificate::new(
                    CertKind::Telescope,
                    CertTest::Within,
                    gap * (n + 1) as f64,
                    norm,
                    TELESCOPE_TOL,
                )
                .at_n(n as u64)
                .at_weight_trial(t),
            );
        }
    }

    let family_obs = state.obs.len().min(3);
    for family in 1..=4usize {
        for (t, f) in state.obs.iter().take(family_obs).enumerate() {
            let avg = state
                .family_average(family, f)
                .expect("families 1-4 are always defined");
            certificates.push(
                Certificate::new(
                    CertKind::Mass,
                    CertTest::Within,
                    avg.integral(),
                    f.integral(),
                    MASS_CHECK_TOL,
                )
                .at_stage(family)
                .at_weight_trial(t),
            );
            certificates.push(
                Certificate::new(
                    CertKind::Positivity,
                    CertTest::AtLeast,
                    avg.min_value(),
                    0.0,
                    POSITIVITY_TOL,
                )
                .at_stage(family)
                .at_weight_trial(t),
            );
        }
        let gap = state
            .linearity_gap(family)
            .expect("families 1-4 are always defined");
        certificates.push(
            Certificate::new(CertKind::Linearity, CertTest::Within, gap, 0.0, LINEARITY_TOL)
                .at_stage(family),
        );
    }

    let plan_lines = vec![
        format!("model: {}", config.system.describe()),
        format!(
            "telescoping identity: {} random observables, horizons 1..={}",
            state.obs.len(),
            horizon
        ),
        format!(
            "operator families (by stage column): 1 {} (horizon {}), 2 {} (radius {}), \
             3 {} (half-width {}), 4 {} (time scale {})",
            CoreState::FAMILY_NAMES[0],
            CORE_CESARO_HORIZON,
            CoreState::FAMILY_NAMES[1],
            CORE_WINDOW_RADIUS,
            CoreState::FAMILY_NAMES[2],
            CORE_FLOW_HALFWIDTH,
            CoreState::FAMILY_NAMES[3],
            CORE_KERNEL_TIME,
        ),
        "each family checked for mass preservation, positivity, and linearity".into(),
    ];

    let pass = slowconv::certificate::all_pass(&certificates);
    Ok(Products {
        plan_lines,
        certificates,
        exceedance: None,
        plot: Vec::new(),
        pass,
        checker: Checker::Core { state },
    })
}

pub fn run_rate_scan(config: &Config) -> Result<Products, CliError> {
    let scan = config.require_rate_scan()?;
    let obs_cfg = config.require_observable()?;
    let rates = config.rates.as_ref().map(build_rates).transpose()?;

    let (space, map) = build_single_map(&config.system)?;
    let f = build_observable(obs_cfg, &space)?;
    let center = f.integral();

    let indices = sweep_indices(scan.max_index as u64, scan.points, &[]);
    let mut plot = Vec::with_capacity(indices.len());
    for n in indices {
        let dev = match scan.family {
            ScanFamily::Cesaro => cesaro(&map, &f, n as usize)?.l1_dev(center),
            ScanFamily::Flow => {
                let flow = DiscreteFlow::new(map.clone(), config.system.delta())?;
                let nu = uniform_nu(n)?;
                flow_measure_average(&flow, &nu, &f)?.l1_dev(center)
            }
        };
        plot.push(PlotRow {
            index: n,
            l1_dev: dev,
            a_n: rates.as_ref().map(|r| r.at(n as usize)),
        });
    }

    let plan_lines = vec![
        format!("model: {}", config.system.describe()),
        format!("observable: {}", describe_observable(obs_cfg)),
        format!(
            "family: {}; indices 1..={} ({})",
            match scan.family {
                ScanFamily::Cesaro => "orbit (Cesaro) averages",
                ScanFamily::Flow => "flow averages against uniform [-n, n]",
            },
            scan.max_index,
            match scan.points {
                None => "every index".to_string(),
                Some(p) => format!("{p}-point geometric sweep"),
            }
        ),
        format!("deviation center: integral = {center:.6e}"),
    ];

    Ok(Products {
        plan_lines,
        certificates: Vec::new(),
        exceedance: None,
        plot,
        pass: true,
        checker: Checker::None,
    })
}

// ---------------------------------------------------------------------------
// Spot-check: re-derive sampled certificate rows from retained state.
// ---------------------------------------------------------------------------

enum Checker {
    None,
    T1 {
        flow: DiscreteFlow,
        run: Theorem1Run,
        rates: RateSeq,
        eps: f64,
        eta: f64,
    },
    T2 {
        action: ZdAction,
        run: Theorem2Run,
        rates: RateSeq,
        eps: f64,
        eta: f64,
    },
    T3 {
        map: Automorphism,
        f: Obs,
        run: Theorem3Run,
        rates: RateSeq,
    },
    Core {
        state: CoreState,
    },
}

impl Checker {
    /// Recomputes both sides of the certificate from scratch; `None` means
    /// the checker has no route for this row (itself a spot failure).
    fn recompute(&self, cert: &Certificate) -> Option<(f64, f64)> {
        match self {
            Checker::None => None,
            Checker::T1 {
                flow,
                run,
                rates,
                eps,
                eta,
            } => recompute_t1(flow, run, rates, *eps, *eta, cert),
            Checker::T2 {
                action,
                run,
                rates,
                eps,
                eta,
            } => recompute_t2(action, run, rates, *eps, *eta, cert),
            Checker::T3 {
                map,
                f,
                run,
                rates,
            } => recompute_t3(map, f, run, rates, cert),
            Checker::Core { state } => recompute_core(state, cert),
        }
    }
}

fn recompute_t1(
    flow: &DiscreteFlow,
    run: &Theorem1Run,
    rates: &RateSeq,
    eps: f64,
    eta: f64,
    cert: &Certificate,
) -> Option<(f64, f64)> {
    if cert.stage == 0 {
        return match cert.kind {
            CertKind::Budget => {
                let spent: f64 = run.stages.iter().map(|s| s.rate_value).sum();
                Some((eps, spent))
            }
            _ => None,
        };
    }
    let st = run.stages.get(cert.stage - 1)?;
    let ind_a = run.a.indicator();
    let a_n = rates.at(st.n as usize);
    let full_deviation =
        || -> Option<f64> { Some(flow_measure_average(flow, &st.nu, &ind_a).ok()?.l1_dev(run.m_a)) };
    let residual =
        || -> Option<f64> { Some(truncated_average(flow, &st.nu, st.l_window, &ind_a).ok()?.1) };
    let fresh = || check_invariance_flow(flow, st.l_window, st.band.band(), 1.0 - eps, eta).ok();
    match cert.kind {
        CertKind::Deviation => Some((full_deviation()?, a_n)),
        CertKind::AnalyticFloor => Some((
            full_deviation()?,
            fresh()?.core_measure() * run.m_a - residual()?,
        )),
        CertKind::RateDomination => {
            Some((fresh()?.core_measure() * run.m_a - residual()?, a_n))
        }
        CertKind::Vanishing => {
            let (truncated, _) = truncated_average(flow, &st.nu, st.l_window, &ind_a).ok()?;
            Some((sup_abs_on(&truncated, fresh()?.core()), 0.0))
        }
        CertKind::Truncation => Some((eps * a_n, residual()?)),
        CertKind::Invariance => {
            let fresh = fresh()?;
            match cert.test {
                CertTest::Within => Some((fresh.ratio(), fresh.ratio())),
                _ => Some((fresh.ratio(), fresh.threshold())),
            }
        }
        CertKind::Disjoint => Some((run.a.intersect(st.band.band()).ok()?.measure(), 0.0)),
        _ => None,
    }
}

fn recompute_t2(
    action: &ZdAction,
    run: &Theorem2Run,
    rates: &RateSeq,
    eps: f64,
    eta: f64,
    cert: &Certificate,
) -> Option<(f64, f64)> {
    let lemma = &run.lemma;
    if cert.stage == 0 {
        return match cert.kind {
            CertKind::Budget => {
                let spent: f64 = run.cubes.iter().map(|c| c.set().measure()).sum();
                Some((eps, spent))
            }
            _ => None,
        };
    }
    let k = cert.stage - 1;
    let window = &lemma.stages.get(k)?.window;
    let set = run.cubes.get(k)?.set();
    let ind_a = lemma.a.indicator();
    let fresh = check_invariance_group(action, window, set, lemma.c, eta).ok()?;
    let bound = lemma.c * fresh.set_measure() * lemma.m_a;
    let trial_average = |t: usize| -> Option<Obs> {
        weighted_group_average(action, window, run.trials.get(t)?.get(k)?, &ind_a).ok()
    };
    let vanish_region = || -> Option<MSet> {
        let mut u = MSet::empty(action.space());
        for g in window {
            u = u.union(&action.translate_preimage(&lemma.a, g).ok()?).ok()?;
        }
        fresh.core().difference(&u).ok()
    };
    match cert.kind {
        CertKind::Deviation => {
            Some((trial_average(cert.weight_trial?)?.l1_dev(lemma.m_a), bound))
        }
        CertKind::Vanishing => Some((
            sup_abs_on(&trial_average(cert.weight_trial?)?, &vanish_region()?),
            0.0,
        )),
        CertKind::AnalyticFloor => Some((
            trial_average(cert.weight_trial?)?.l1_dev(lemma.m_a),
            vanish_region()?.measure() * lemma.m_a,
        )),
        CertKind::RateDomination => Some((bound, rates.at(cert.n? as usize))),
        CertKind::Invariance => match cert.test {
            CertTest::Within => Some((fresh.ratio(), fresh.ratio())),
            _ => Some((fresh.ratio(), fresh.threshold())),
        },
        CertKind::Disjoint => Some((lemma.a.intersect(set).ok()?.measure(), 0.0)),
        _ => None,
    }
}

fn recompute_t3(
    map: &Automorphism,
    f: &Obs,
    run: &Theorem3Run,
    rates: &RateSeq,
    cert: &Certificate,
) -> Option<(f64, f64)> {
    let space = map.space();
    if cert.stage == 0 {
        return match (cert.kind, cert.test) {
            (CertKind::Budget, _) => {
                let spent: f64 = run.stages.iter().map(|s| s.tower_measure).sum();
                Some((run.plan.eps, spent))
            }
            (CertKind::Mass, CertTest::StrictAbove) => {
                Some((run.y.measure(), 1.0 - run.plan.eps))
            }
            (CertKind::Mass, CertTest::AtLeast) => {
                let mut all = vec![true; space.len()];
                for st in &run.stages {
                    let avg = cesaro(map, &run.f_tilde, st.n as usize).ok()?;
                    for (x, keep) in all.iter_mut().enumerate() {
                        let dev = avg.value(x) - run.integral;
                        let exceeds = if run.summary.one_sided {
                            dev > st.rate_value
                        } else {
                            dev.abs() > st.rate_value
                        };
                        *keep = *keep && exceeds;
                    }
                }
                let mass = MSet::from_bits(space, all).ok()?.measure();
                let eps_total: f64 = run.plan.eps_k.iter().sum();
                Some((mass, 1.0 - eps_total))
            }
            _ => None,
        };
    }
    let st = run.stages.get(cert.stage - 1)?;
    match cert.kind {
        CertKind::Birkhoff => {
            // The construction evaluated this stage against the observable
            // with only the earlier towers removed.
            let mut foot = MSet::empty(space);
            for tower in run.towers.iter().take(cert.stage - 1) {
                foot = foot
                    .union(&tower.base().union(tower.body()).ok()?)
                    .ok()?;
            }
            let f_k = f.restrict(&foot.complement()).ok()?;
            let integral_k = f_k.integral();
            let avg = cesaro(map, &f_k, st.n as usize).ok()?;
            let frac = MSet::from_pred(space, |x| {
                (avg.value(x) - integral_k).abs() < st.eps_k
            })
            .measure();
            Some((frac, 1.0 - st.eps_k))
        }
        CertKind::RateDomination => Some((st.eps_k, rates.at(st.n as usize))),
        CertKind::Concentration => {
            let avg = cesaro(map, &run.f_tilde, st.n as usize).ok()?;
            let frac = MSet::from_pred(space, |x| {
                (avg.value(x) - run.integral).abs() > st.eps_k
            })
            .measure();
            Some((frac, 1.0 - st.eps_k))
        }
        _ => None,
    }
}

fn recompute_core(state: &CoreState, cert: &Certificate) -> Option<(f64, f64)> {
    match cert.kind {
        CertKind::Telescope => {
            let f = state.obs.get(cert.weight_trial?)?;
            let n = cert.n? as usize;
            let gap = telescope_gap(&state.map, f, n).ok()?;
            Some((gap * (n + 1) as f64, f.l1_norm()))
        }
        CertKind::Mass => {
            let f = state.obs.get(cert.weight_trial?)?;
            let avg = state.family_average(cert.stage, f)?;
            Some((avg.integral(), f.integral()))
        }
        CertKind::Positivity => {
            let f = state.obs.get(cert.weight_trial?)?;
            let avg = state.family_average(cert.stage, f)?;
            Some((avg.min_value(), 0.0))
        }
        CertKind::Linearity => Some((state.linearity_gap(cert.stage)?, 0.0)),
        _ => None,
    }
}

/// Result of re-verifying a sampled fraction of certificate rows.
pub struct SpotOutcome {
    pub checked: usize,
    pub total: usize,
    pub mismatches: Vec<String>,
}

impl SpotOutcome {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub fn describe(&self) -> String {
        if self.ok() {
            format!(
                "spot-check: re-derived {} of {} certificate rows; all agree within {SPOT_TOL:e}",
                self.checked, self.total
            )
        } else {
            format!(
                "spot-check: re-derived {} of {} certificate rows; {} MISMATCH(ES): {}",
                self.checked,
                self.total,
                self.mismatches.len(),
                self.mismatches.join("; ")
            )
        }
    }
}

/// Re-derives both sides of a `fraction` sample of the certificate rows
/// (always at least one row when any exist) and compares against the
/// recorded values.
pub fn spot_check(products: &Products, fraction: f64, seed: u64) -> SpotOutcome {
    let total = products.certificates.len();
    let mut outcome = SpotOutcome {
        checked: 0,
        total,
        mismatches: Vec::new(),
    };
    if total == 0 || fraction <= 0.0 {
        return outcome;
    }
    let target = ((total as f64 * fraction).ceil() as usize).clamp(1, total);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, SEED_STREAM_SPOT));
    let mut indices: Vec<usize> = (0..total).collect();
    for i in 0..target {
        let j = rng.gen_range(i..total);
        indices.swap(i, j);
    }
    let close = |a: f64, b: f64| (a - b).abs() <= SPOT_TOL || (a.is_nan() && b.is_nan());
    for &i in &indices[..target] {
        let cert = &products.certificates[i];
        outcome.checked += 1;
        match products.checker.recompute(cert) {
            Some((lhs, rhs)) => {
                if !close(lhs, cert.lhs) || !close(rhs, cert.rhs) {
                    outcome.mismatches.push(format!(
                        "row {} ({}, k={}): recorded ({:.16e}, {:.16e}) vs re-derived ({:.16e}, {:.16e})",
                        i, cert.kind, cert.stage, cert.lhs, cert.rhs, lhs, rhs
                    ));
                }
            }
            None => outcome.mismatches.push(format!(
                "row {} ({}, k={}): no re-derivation route",
                i, cert.kind, cert.stage
            )),
        }
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_draws_are_valid_weight_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for len in [1usize, 2, 5, 25] {
            let w = simplex_weights(&mut rng, len);
            assert_eq!(w.len(), len);
            assert!(w.iter().all(|&x| x >= 0.0));
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "sum = {sum}");
        }
    }

    #[test]
    fn trial_zero_is_always_uniform_and_draws_are_reproducible() {
        let w0 = trial_weights(42, 0, 3, 5);
        assert_eq!(w0, vec![0.2; 5]);
        let a = trial_weights(42, 2, 3, 7);
        let b = trial_weights(42, 2, 3, 7);
        assert_eq!(a, b);
        let c = trial_weights(42, 2, 4, 7);
        assert_ne!(a, c);
        let d = trial_weights(43, 2, 3, 7);
        assert_ne!(a, d);
    }

    #[test]
    fn lower_fraction_keeps_at_least_one_atom() {
        let space = ProbSpace::uniform(10).unwrap();
        assert_eq!(lower_fraction(&space, 0.5).count(), 5);
        assert_eq!(lower_fraction(&space, 1e-9).count(), 1);
        assert_eq!(lower_fraction(&space, 1.0).count(), 10);
    }

    #[test]
    fn random_observables_depend_on_the_seed_only() {
        let space = ProbSpace::uniform(16).unwrap();
        let a = random_observables(&space, 2, 7);
        let b = random_observables(&space, 2, 7);
        let c = random_observables(&space, 2, 8);
        assert_eq!(a[0].values(), b[0].values());
        assert_eq!(a[1].values(), b[1].values());
        assert_ne!(a[0].values(), c[0].values());
    }
}
