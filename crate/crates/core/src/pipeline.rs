//! End-to-end design run: data collection, both learners, mean-field routes,
//! social-cost comparison and output files.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmark;
use crate::dataset::{
    self, check_rank_feedback, check_rank_feedforward, FeedbackDataset, FeedforwardDataset,
    MomentSeries, Quadrature,
};
use crate::error::{Error, Result};
use crate::feedback::irl_feedback_iterate;
use crate::feedforward::irl_feedforward_iterate;
use crate::features::{svec, tri};
use crate::linalg::{self, rowmajor, Mat};
use crate::meanfield::{
    self, identify_a, identify_b, mf_from_identified, mf_monte_carlo, IdentifiedModel,
    MeanFieldMethod, MeanFieldPath,
};
use crate::model::{self, CostSpec, SystemDynamics, ValidationReport};
use crate::riccati::{
    self, FeedbackSolution, FeedforwardSolution, IterationTrace, DEFAULT_MAX_ITER, DEFAULT_XI,
};
use crate::sim::{
    self, AffinePolicy, Exploration, InitialState, Integrator, NoiseMode, NoiseSpec, PathSampler,
    SamplingPlan, Trajectory,
};

/// Offsets of the per-stage seeds from `seeds.base`.
pub const SEED_OFFSET_MEANFIELD: u64 = 1_000_000;
pub const SEED_OFFSET_COST: u64 = 3_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// RK4 when `C = D = 0`, Euler–Maruyama otherwise.
    #[default]
    Auto,
    EulerMaruyama,
    Rk4,
}

impl Scheme {
    pub fn resolve(self, dynamics: &SystemDynamics) -> Integrator {
        match self {
            Scheme::Auto if dynamics.is_deterministic() => Integrator::Rk4,
            Scheme::Auto | Scheme::EulerMaruyama => Integrator::EulerMaruyama,
            Scheme::Rk4 => Integrator::Rk4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureChoice {
    /// Corrected trapezoid when `C = D = 0`, plain trapezoid otherwise.
    #[default]
    Auto,
    Trapezoid,
    CorrectedTrapezoid,
}

impl QuadratureChoice {
    pub fn resolve(self, dynamics: &SystemDynamics) -> Quadrature {
        match self {
            QuadratureChoice::Auto if dynamics.is_deterministic() => Quadrature::CorrectedTrapezoid,
            QuadratureChoice::Auto | QuadratureChoice::Trapezoid => Quadrature::Trapezoid,
            QuadratureChoice::CorrectedTrapezoid => Quadrature::CorrectedTrapezoid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    #[serde(flatten)]
    pub plan: SamplingPlan,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub quadrature: QuadratureChoice,
    /// Cap on the window count when the rank condition forces extension.
    #[serde(default)]
    pub max_l: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningConfig {
    #[serde(rename = "K0", with = "rowmajor")]
    pub k0: Mat,
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Sample paths in the data-collection ensemble.
    #[serde(rename = "M")]
    pub paths: usize,
    /// Initial-state distribution of the learning agent.
    pub initial: InitialState,
}

fn default_xi() -> f64 {
    DEFAULT_XI
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldConfig {
    #[serde(rename = "Ns")]
    pub paths: usize,
    pub xbar0: Vec<f64>,
    #[serde(default = "default_span")]
    pub horizon: f64,
}

fn default_span() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    #[serde(rename = "N")]
    pub agents: usize,
    #[serde(rename = "M_eval", default = "default_m_eval")]
    pub replications: usize,
    #[serde(default = "default_span")]
    pub horizon: f64,
}

fn default_m_eval() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedConfig {
    pub base: u64,
}

/// Externally supplied gain estimates to evaluate the oracle at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    #[serde(rename = "K", with = "rowmajor")]
    pub k: Mat,
    #[serde(rename = "Lambda", with = "rowmajor")]
    pub lambda: Mat,
    #[serde(rename = "P", with = "rowmajor::option", default)]
    pub p: Option<Mat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Number of data-collection paths written to `trajectories.csv`.
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default)]
    pub format: OutputFormat,
}

fn default_trajectories() -> usize {
    10
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            trajectories: default_trajectories(),
            format: OutputFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dynamics: SystemDynamics,
    pub cost: CostSpec,
    pub sampling: SamplingConfig,
    pub noise: NoiseSpec,
    pub learning: LearningConfig,
    pub meanfield: MeanFieldConfig,
    pub population: PopulationConfig,
    pub seeds: SeedConfig,
    #[serde(default)]
    pub reference: Option<ReferenceConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Structural checks across sections.
    pub fn check(&self) -> Result<()> {
        self.dynamics.check()?;
        self.cost.check_against(&self.dynamics)?;
        let (n, m) = (self.dynamics.n(), self.dynamics.m());
        self.sampling.plan.validate()?;
        self.noise.validate()?;
        if self.learning.k0.shape() != (m, n) {
            return Err(Error::Dimension(format!(
                "K0 is {:?}, expected ({m}, {n})",
                self.learning.k0.shape()
            )));
        }
        if self.learning.paths == 0 || self.meanfield.paths == 0 {
            return Err(Error::Invalid("M and Ns must be positive".into()));
        }
        if !(self.learning.xi > 0.0) || self.learning.max_iter == 0 {
            return Err(Error::Invalid("xi must be positive and max_iter at least 1".into()));
        }
        self.learning.initial.validate(n)?;
        if self.meanfield.xbar0.len() != n {
            return Err(Error::Dimension("xbar0 length differs from n".into()));
        }
        if self.population.agents == 0 || self.population.replications == 0 {
            return Err(Error::Invalid("N and M_eval must be positive".into()));
        }
        if !(self.meanfield.horizon > 0.0) || !(self.population.horizon > 0.0) {
            return Err(Error::Invalid("horizons must be positive".into()));
        }
        if let Some(r) = &self.reference {
            if r.k.shape() != (m, n) || r.lambda.shape() != (m, m) {
                return Err(Error::Dimension("reference gains do not match dynamics".into()));
            }
            if r.p.as_ref().is_some_and(|p| p.shape() != (n, n)) {
                return Err(Error::Dimension("reference P does not match dynamics".into()));
            }
        }
        Ok(())
    }

    pub fn integrator(&self) -> Integrator {
        self.sampling.scheme.resolve(&self.dynamics)
    }

    pub fn quadrature(&self) -> Quadrature {
        self.sampling.quadrature.resolve(&self.dynamics)
    }

    fn span_plan(&self, horizon: f64) -> SamplingPlan {
        let dt = self.sampling.plan.dt;
        SamplingPlan {
            t1: 0.0,
            ts: dt,
            window: dt,
            l: 1,
            dt,
            horizon,
        }
    }

    /// Grid used by both mean-field routes.
    pub fn meanfield_plan(&self) -> SamplingPlan {
        self.span_plan(self.meanfield.horizon)
    }

    /// Grid of the social-cost validation ensemble.
    pub fn cost_plan(&self) -> SamplingPlan {
        self.span_plan(self.population.horizon)
    }
}

/// The two-state benchmark experiment with its default sampling and seeds.
pub fn benchmark_config() -> ExperimentConfig {
    ExperimentConfig {
        dynamics: benchmark::dynamics(),
        cost: benchmark::cost(),
        sampling: SamplingConfig {
            plan: SamplingPlan {
                t1: 0.0,
                ts: 0.001,
                window: 0.9,
                l: 10001,
                dt: 0.001,
                horizon: 10.9,
            },
            scheme: Scheme::Auto,
            quadrature: QuadratureChoice::Auto,
            max_l: None,
        },
        noise: NoiseSpec {
            mode: NoiseMode::SumOfSinusoids,
            count: 100,
            freq_lo: -100.0,
            freq_hi: 100.0,
            amplitude: 1.0,
            seed: 7,
        },
        learning: LearningConfig {
            k0: benchmark::k0(),
            xi: DEFAULT_XI,
            max_iter: DEFAULT_MAX_ITER,
            paths: 100,
            initial: InitialState::Uniform {
                lo: vec![0.0, 0.0],
                hi: vec![4.0, 4.0],
            },
        },
        meanfield: MeanFieldConfig {
            paths: 1000,
            xbar0: benchmark::XBAR0.to_vec(),
            horizon: 10.0,
        },
        population: PopulationConfig {
            agents: benchmark::POPULATION,
            replications: 50,
            horizon: 10.0,
        },
        seeds: SeedConfig { base: 2024 },
        reference: Some(ReferenceConfig {
            k: benchmark::reference_k(),
            lambda: Mat::from_element(1, 1, benchmark::REFERENCE_LAMBDA),
            p: Some(benchmark::reference_p()),
        }),
        output: OutputConfig::default(),
    }
}

/// Counts reads of the model matrices so that runs can prove the learning
/// stages never touched them.
#[derive(Debug)]
pub struct AuditedModel {
    dynamics: SystemDynamics,
    reads: AtomicUsize,
}

impl AuditedModel {
    pub fn new(dynamics: SystemDynamics) -> Self {
        Self {
            dynamics,
            reads: AtomicUsize::new(0),
        }
    }

    pub fn get(&self) -> &SystemDynamics {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.dynamics
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub feedback: FeedbackSolution,
    pub feedback_trace: IterationTrace,
    pub feedforward: FeedforwardSolution,
    pub feedforward_trace: IterationTrace,
    /// Feedforward solution conditioned on the configured reference `(K, Λ)`.
    #[serde(default)]
    pub reference_feedforward: Option<FeedforwardSolution>,
    /// `‖R(P_ref)‖₂` for a configured reference `P`.
    #[serde(default)]
    pub reference_sare_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedReport {
    pub feedback: FeedbackSolution,
    pub feedback_trace: IterationTrace,
    #[serde(default)]
    pub feedforward: Option<FeedforwardSolution>,
    #[serde(default)]
    pub feedforward_trace: Option<IterationTrace>,
    pub windows: usize,
    pub feedback_rank: usize,
    pub feedforward_rank: usize,
    /// Model-matrix reads between the end of data collection and the end of identification.
    pub model_reads_during_learning: usize,
}

/// Model-based error measures of the learned solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    /// `‖R(P̂)‖₂`.
    pub sare_residual: f64,
    /// `‖K̂ − K(P̂)‖₂`.
    pub gain_error: f64,
    /// `‖Λ̂ − DᵀP̂D‖₂`.
    pub lambda_error: f64,
    pub p_error: f64,
    pub k_error: f64,
    #[serde(default)]
    pub s_error: Option<f64>,
    #[serde(default)]
    pub ks_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldReport {
    #[serde(default)]
    pub identified: Option<IdentifiedModel>,
    #[serde(default, with = "rowmajor::option")]
    pub identified_closed_loop: Option<Mat>,
    #[serde(default)]
    pub identification_note: Option<String>,
    pub paths: Vec<MeanFieldPath>,
    /// Sup-norm gap between the two routes when both ran.
    #[serde(default)]
    pub route_discrepancy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialCostReport {
    pub learned: f64,
    pub oracle: f64,
    pub relative_gap: f64,
    pub agents: usize,
    pub replications: usize,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub validation: ValidationReport,
    #[serde(default)]
    pub oracle: Option<OracleReport>,
    #[serde(default)]
    pub learned: Option<LearnedReport>,
    #[serde(default)]
    pub metrics: Option<ErrorMetrics>,
    #[serde(default)]
    pub meanfield: Option<MeanFieldReport>,
    #[serde(default)]
    pub social_cost: Option<SocialCostReport>,
    #[serde(default)]
    pub failure: Option<StageFailure>,
}

/// Which stages a run executes after learning the gains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub meanfield: bool,
    pub social_cost: bool,
}

impl RunOptions {
    pub const FULL: RunOptions = RunOptions {
        meanfield: true,
        social_cost: true,
    };
    pub const MEANFIELD: RunOptions = RunOptions {
        meanfield: true,
        social_cost: false,
    };
    pub const GAINS: RunOptions = RunOptions {
        meanfield: false,
        social_cost: false,
    };
}

/// Bulk artifacts kept out of the report.
#[derive(Debug, Default)]
pub struct RunArtifacts {
    /// Leading data-collection paths.
    pub trajectories: Vec<Trajectory>,
    pub feedback_data: Option<FeedbackDataset>,
    pub feedforward_data: Option<FeedforwardDataset>,
    pub quadrature: Quadrature,
}

/// Model checks; errors for bad shapes, a report with flags otherwise.
pub fn validate_config(cfg: &ExperimentConfig) -> Result<ValidationReport> {
    cfg.check()?;
    model::validate(&cfg.dynamics, &cfg.cost, Some(&cfg.learning.k0))
}

fn require_valid(report: &ValidationReport) -> Result<()> {
    if report.ok() {
        Ok(())
    } else if report.ms_stabilizer_ok == Some(false) {
        Err(Error::NotStabilizer)
    } else {
        Err(Error::Invalid(report.notes.join("; ")))
    }
}

/// Model-based solutions; no data are generated.
pub fn run_oracle(cfg: &ExperimentConfig) -> Result<OracleReport> {
    let (dynamics, cost) = (&cfg.dynamics, &cfg.cost);
    let (xi, max_iter) = (cfg.learning.xi.min(1e-10), cfg.learning.max_iter.max(DEFAULT_MAX_ITER));
    let (feedback, feedback_trace) =
        riccati::pi_feedback(dynamics, cost, &cfg.learning.k0, xi, max_iter)
            .map_err(|e| e.in_stage("oracle-feedback"))?;
    let (feedforward, feedforward_trace) =
        riccati::pi_feedforward(dynamics, cost, &feedback, xi, max_iter)
            .map_err(|e| e.in_stage("oracle-feedforward"))?;
    let mut reference_feedforward = None;
    let mut reference_sare_residual = None;
    if let Some(r) = &cfg.reference {
        let fb = FeedbackSolution::from_gain(r.k.clone(), r.lambda.clone(), &cost.r);
        let (mut ff, _) = riccati::pi_feedforward(dynamics, cost, &fb, xi, max_iter)
            .map_err(|e| e.in_stage("oracle-reference"))?;
        ff.pi = r.p.as_ref().map(|p| p + &ff.s);
        reference_feedforward = Some(ff);
        if let Some(p) = &r.p {
            reference_sare_residual = Some(linalg::spectral_norm(
                &riccati::sare_residual(p, dynamics, cost).map_err(|e| e.in_stage("oracle-reference"))?,
            ));
        }
    }
    Ok(OracleReport {
        feedback,
        feedback_trace,
        feedforward,
        feedforward_trace,
        reference_feedforward,
        reference_sare_residual,
    })
}

/// Runs the behaviour policy `u = −K₀x + ℓ(t)` and keeps ensemble moments plus
/// the first paths for export.
fn collect_data(
    cfg: &ExperimentConfig,
    model: &AuditedModel,
) -> Result<(MomentSeries, Vec<Trajectory>)> {
    let dynamics = model.get();
    let exploration = Exploration::new(&cfg.noise, dynamics.m())?;
    let policy = AffinePolicy::feedback(cfg.learning.k0.clone()).with_exploration(exploration);
    let sampler = PathSampler::new(
        dynamics,
        &policy,
        &cfg.learning.initial,
        &cfg.sampling.plan,
        cfg.integrator(),
        cfg.seeds.base,
    )?;
    MomentSeries::from_sampler(&sampler, cfg.learning.paths, cfg.output.trajectories)
}

/// Builds both datasets, extending the window count within the horizon
/// until both rank conditions hold.
fn build_datasets(
    cfg: &ExperimentConfig,
    moments: &MomentSeries,
    quad: Quadrature,
) -> Result<(FeedbackDataset, FeedforwardDataset)> {
    let mut plan = cfg.sampling.plan.clone();
    let cap = cfg
        .sampling
        .max_l
        .unwrap_or(usize::MAX)
        .min(plan.max_windows())
        .max(plan.l);
    loop {
        let fb = dataset::feedback_from_moments(moments, &plan, quad)?;
        let ff = dataset::feedforward_from_mean(&moments.mean_state, &moments.mean_input, &plan, quad)?;
        let fb_ok = check_rank_feedback(&fb);
        let ff_ok = check_rank_feedforward(&ff);
        if fb_ok && ff_ok {
            return Ok((fb, ff));
        }
        if plan.l >= cap {
            let (rank, required) = if fb_ok {
                (dataset::feedforward_rank(&ff), ff.required_rank())
            } else {
                (dataset::feedback_rank(&fb), fb.required_rank())
            };
            return Err(Error::RankDeficient {
                iteration: 0,
                rank,
                required,
            });
        }
        let next = (plan.l * 2).min(cap);
        log::info!("rank condition fails with l = {}; extending to {next}", plan.l);
        plan.l = next;
    }
}

fn error_metrics(
    learned: &FeedbackSolution,
    learned_ff: Option<&FeedforwardSolution>,
    oracle: &OracleReport,
    dynamics: &SystemDynamics,
    cost: &CostSpec,
) -> Result<ErrorMetrics> {
    let p = &learned.p;
    let sare = linalg::spectral_norm(&riccati::sare_residual(p, dynamics, cost)?);
    let k_of_p = riccati::gain_from_value(p, dynamics, cost)?;
    let lambda_of_p = dynamics.d.transpose() * p * &dynamics.d;
    Ok(ErrorMetrics {
        sare_residual: sare,
        gain_error: linalg::spectral_norm(&(&learned.k - k_of_p)),
        lambda_error: linalg::spectral_norm(&(&learned.lambda - lambda_of_p)),
        p_error: linalg::spectral_norm(&(p - &oracle.feedback.p)),
        k_error: linalg::spectral_norm(&(&learned.k - &oracle.feedback.k)),
        s_error: learned_ff.map(|ff| linalg::spectral_norm(&(&ff.s - &oracle.feedforward.s))),
        ks_error: learned_ff.map(|ff| linalg::spectral_norm(&(&ff.ks - &oracle.feedforward.ks))),
    })
}

/// Gains and mean-field table of the decentralized policy
/// `u_i = −K x_i − K_s x̄(t)`.
#[derive(Debug, Clone)]
pub struct DecentralizedPolicy {
    pub k: Mat,
    pub ks: Mat,
    /// `grid × n`, on the evaluation grid.
    pub xbar: Mat,
}

/// Per-agent social cost `(1/N)·Σ_i ∫ ‖x_i − Γx_(N)‖²_Q + ‖u_i‖²_R dt`, truncated at
/// the plan horizon and averaged over `replications` independent populations.
/// Replication `r` uses path seeds `seed + r·N + i`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_social_cost(
    dynamics: &SystemDynamics,
    cost: &CostSpec,
    policy: &DecentralizedPolicy,
    init: &InitialState,
    agents: usize,
    plan: &SamplingPlan,
    replications: usize,
    seed: u64,
    integrator: Integrator,
) -> Result<f64> {
    cost.check_against(dynamics)?;
    if agents == 0 || replications == 0 {
        return Err(Error::Invalid("N and M_eval must be positive".into()));
    }
    if policy.xbar.shape() != (plan.grid_len(), dynamics.n()) {
        return Err(Error::Dimension("mean-field table does not match the evaluation grid".into()));
    }
    let table = &policy.xbar * policy.ks.transpose();
    let affine = AffinePolicy::feedback(policy.k.clone()).with_feedforward(table);
    let sampler = PathSampler::new(dynamics, &affine, init, plan, integrator, seed)?;
    let per_rep: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let paths = (0..agents)
                .map(|i| sampler.path(r * agents + i))
                .collect::<Result<Vec<_>>>()?;
            let len = plan.grid_len();
            let mut avg = Mat::zeros(len, dynamics.n());
            for p in &paths {
                avg += &p.states;
            }
            avg /= agents as f64;
            let coupled = &avg * cost.gamma.transpose();
            let mut integrand = vec![0.0; len];
            for p in &paths {
                let dev = &p.states - &coupled;
                let state_cost = (&dev * &cost.q).component_mul(&dev);
                let input_cost = (&p.inputs * &cost.r).component_mul(&p.inputs);
                for (k, v) in integrand.iter_mut().enumerate() {
                    *v += state_cost.row(k).sum() + input_cost.row(k).sum();
                }
            }
            let total: f64 = integrand
                .windows(2)
                .map(|w| 0.5 * plan.dt * (w[0] + w[1]))
                .sum();
            Ok(total / agents as f64)
        })
        .collect::<Result<_>>()?;
    Ok(per_rep.iter().sum::<f64>() / replications as f64)
}

/// Oracle decentralized policy with the model's mean-field trajectory.
pub fn oracle_policy(cfg: &ExperimentConfig, oracle: &OracleReport) -> DecentralizedPolicy {
    let closed = &cfg.dynamics.a
        - &cfg.dynamics.b * (&oracle.feedback.k + &oracle.feedforward.ks);
    let xbar0 = cfg.learning.initial.mean();
    let path = meanfield::propagate(&closed, &xbar0, &cfg.cost_plan().times(), MeanFieldMethod::Identified);
    DecentralizedPolicy {
        k: oracle.feedback.k.clone(),
        ks: oracle.feedforward.ks.clone(),
        xbar: path.xbar,
    }
}

/// Social cost of the oracle decentralized policy alone.
pub fn run_oracle_cost(cfg: &ExperimentConfig) -> Result<(OracleReport, f64)> {
    let oracle = run_oracle(cfg)?;
    let policy = oracle_policy(cfg, &oracle);
    let value = evaluate_social_cost(
        &cfg.dynamics,
        &cfg.cost,
        &policy,
        &cfg.learning.initial,
        cfg.population.agents,
        &cfg.cost_plan(),
        cfg.population.replications,
        cfg.seeds.base + SEED_OFFSET_COST,
        cfg.integrator(),
    )
    .map_err(|e| e.in_stage("social-cost"))?;
    Ok((oracle, value))
}

/// Runs the design procedure. Stage errors are recorded in the report,
/// which is returned together with the error.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    options: RunOptions,
) -> std::result::Result<(RunReport, RunArtifacts), (Box<RunReport>, Error)> {
    let validation = match validate_config(cfg) {
        Ok(v) => v,
        Err(e) => {
            let report = RunReport {
                config: cfg.clone(),
                validation: ValidationReport {
                    q_psd: false,
                    r_pd: false,
                    ms_stabilizer_ok: None,
                    notes: vec![e.to_string()],
                },
                oracle: None,
                learned: None,
                metrics: None,
                meanfield: None,
                social_cost: None,
                failure: None,
            };
            return Err(fail(report, e.in_stage("validation")));
        }
    };
    let mut report = RunReport {
        config: cfg.clone(),
        validation,
        oracle: None,
        learned: None,
        metrics: None,
        meanfield: None,
        social_cost: None,
        failure: None,
    };
    let mut artifacts = RunArtifacts {
        quadrature: cfg.quadrature(),
        ..Default::default()
    };
    if let Err(e) = require_valid(&report.validation) {
        return Err(fail(report, e.in_stage("validation")));
    }
    match run_stages(cfg, options, &mut report, &mut artifacts) {
        Ok(()) => Ok((report, artifacts)),
        Err(e) => Err(fail(report, e)),
    }
}

fn fail(mut report: RunReport, err: Error) -> (Box<RunReport>, Error) {
    let (stage, message) = match &err {
        Error::Stage { stage, source } => (stage.to_string(), source.to_string()),
        other => ("unknown".to_string(), other.to_string()),
    };
    report.failure = Some(StageFailure { stage, message });
    (Box::new(report), err)
}

fn run_stages(
    cfg: &ExperimentConfig,
    options: RunOptions,
    report: &mut RunReport,
    artifacts: &mut RunArtifacts,
) -> Result<()> {
    let oracle = run_oracle(cfg)?;
    report.oracle = Some(oracle.clone());
    let model = AuditedModel::new(cfg.dynamics.clone());

    // Data collection: the only stage that drives the plant.
    let (moments, kept) = collect_data(cfg, &model).map_err(|e| e.in_stage("data-collection"))?;
    let quad = artifacts.quadrature;
    let (fb_data, ff_data) =
        build_datasets(cfg, &moments, quad).map_err(|e| e.in_stage("data-collection"))?;
    drop(moments);
    artifacts.trajectories = kept;
    let reads_after_collection = model.reads();

    let (feedback, feedback_trace) = irl_feedback_iterate(
        &fb_data,
        &cfg.learning.k0,
        &cfg.cost,
        cfg.learning.xi,
        cfg.learning.max_iter,
    )
    .map_err(|e| e.in_stage("feedback-learning"))?;
    let mut learned = LearnedReport {
        feedback: feedback.clone(),
        feedback_trace,
        feedforward: None,
        feedforward_trace: None,
        windows: fb_data.rows(),
        feedback_rank: dataset::feedback_rank(&fb_data),
        feedforward_rank: dataset::feedforward_rank(&ff_data),
        model_reads_during_learning: 0,
    };
    let upsilon_hat = feedback.upsilon(&cfg.cost.r);
    let q_gamma = model::gamma_weight(&cfg.cost).q_gamma;
    let ff_result = irl_feedforward_iterate(
        &ff_data,
        &feedback.k,
        &upsilon_hat,
        &q_gamma,
        Some(&feedback.p),
        cfg.learning.xi,
        cfg.learning.max_iter,
    );
    let (feedforward, ff_trace) = match ff_result {
        Ok(v) => v,
        Err(e) => {
            report.learned = Some(learned);
            report.metrics = error_metrics(&feedback, None, &oracle, &cfg.dynamics, &cfg.cost).ok();
            return Err(e.in_stage("feedforward-learning"));
        }
    };
    learned.feedforward = Some(feedforward.clone());
    learned.feedforward_trace = Some(ff_trace);

    // Identification route, from learned quantities and the feedforward data.
    let mut mf = MeanFieldReport {
        identified: None,
        identified_closed_loop: None,
        identification_note: None,
        paths: Vec::new(),
        route_discrepancy: None,
    };
    if options.meanfield {
        match identify_b(&feedforward.s, &feedforward.ks, &upsilon_hat)
            .and_then(|b| identify_a(&ff_data, &b))
        {
            Ok(id) => {
                mf.identified_closed_loop =
                    Some(meanfield::closed_loop(&id, &feedback.k, &feedforward.ks));
                mf.identified = Some(id);
            }
            Err(e) => mf.identification_note = Some(e.to_string()),
        }
    }
    learned.model_reads_during_learning = model.reads() - reads_after_collection;
    report.metrics = Some(
        error_metrics(&feedback, Some(&feedforward), &oracle, &cfg.dynamics, &cfg.cost)
            .map_err(|e| e.in_stage("metrics"))?,
    );
    report.learned = Some(learned);
    artifacts.feedback_data = Some(fb_data);
    artifacts.feedforward_data = Some(ff_data);

    if options.meanfield {
        let mf_plan = cfg.meanfield_plan();
        let times = mf_plan.times();
        let xbar0 = &cfg.meanfield.xbar0;
        if let Some(id) = &mf.identified {
            let path = mf_from_identified(id, &feedback.k, &feedforward.ks, xbar0, &times)
                .map_err(|e| e.in_stage("meanfield"))?;
            mf.paths.push(path);
        }
        let mc = mf_monte_carlo(
            model.get(),
            &feedback.k,
            &feedforward.ks,
            xbar0,
            cfg.meanfield.paths,
            &mf_plan,
            cfg.seeds.base + SEED_OFFSET_MEANFIELD,
        )
        .map_err(|e| e.in_stage("meanfield"))?;
        if let Some(first) = mf.paths.first() {
            mf.route_discrepancy = Some(
                first
                    .sup_distance(&mc, mf_plan.horizon)
                    .map_err(|e| e.in_stage("meanfield"))?,
            );
        }
        mf.paths.push(mc);
        report.meanfield = Some(mf);
    }

    if options.social_cost {
        let cost_plan = cfg.cost_plan();
        let xbar0 = cfg.learning.initial.mean();
        let learned_xbar = match report.meanfield.as_ref().and_then(|m| m.identified.as_ref()) {
            Some(id) => mf_from_identified(id, &feedback.k, &feedforward.ks, &xbar0, &cost_plan.times())
                .map_err(|e| e.in_stage("social-cost"))?
                .xbar,
            None => mf_monte_carlo(
                model.get(),
                &feedback.k,
                &feedforward.ks,
                &xbar0,
                cfg.meanfield.paths,
                &cost_plan,
                cfg.seeds.base + SEED_OFFSET_MEANFIELD,
            )
            .map_err(|e| e.in_stage("social-cost"))?
            .xbar,
        };
        let learned_policy = DecentralizedPolicy {
            k: feedback.k.clone(),
            ks: feedforward.ks.clone(),
            xbar: learned_xbar,
        };
        let oracle_policy = oracle_policy(cfg, &oracle);
        let eval = |policy: &DecentralizedPolicy| {
            evaluate_social_cost(
                model.get(),
                &cfg.cost,
                policy,
                &cfg.learning.initial,
                cfg.population.agents,
                &cost_plan,
                cfg.population.replications,
                cfg.seeds.base + SEED_OFFSET_COST,
                cfg.integrator(),
            )
            .map_err(|e| e.in_stage("social-cost"))
        };
        let learned_cost = eval(&learned_policy)?;
        let oracle_cost = eval(&oracle_policy)?;
        report.social_cost = Some(SocialCostReport {
            learned: learned_cost,
            oracle: oracle_cost,
            relative_gap: (learned_cost - oracle_cost).abs() / oracle_cost.abs().max(f64::MIN_POSITIVE),
            agents: cfg.population.agents,
            replications: cfg.population.replications,
            horizon: cfg.population.horizon,
        });
    }
    Ok(())
}

fn trace_rows(
    w: &mut csv::Writer<fs::File>,
    stage: &str,
    trace: &IterationTrace,
    n: usize,
    m: usize,
) -> Result<()> {
    for e in &trace.entries {
        let mut rec = vec![
            stage.to_string(),
            e.k.to_string(),
            e.update_norm.to_string(),
            e.residual_norm.to_string(),
        ];
        rec.extend(svec(&e.value).iter().map(|v| v.to_string()));
        rec.extend(linalg::vec_col(&e.gain).iter().map(|v| v.to_string()));
        match &e.lambda {
            Some(l) => rec.extend(svec(l).iter().map(|v| v.to_string())),
            None => rec.extend(std::iter::repeat_n(String::new(), tri(m))),
        }
        debug_assert_eq!(rec.len(), 4 + tri(n) + n * m + tri(m));
        w.write_record(&rec)?;
    }
    Ok(())
}

/// Iteration traces of every stage as `stage,k,update_norm,residual_norm,value…,gain…,lambda…`.
pub fn write_convergence_csv(path: &Path, report: &RunReport) -> Result<()> {
    let (n, m) = (report.config.dynamics.n(), report.config.dynamics.m());
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["stage", "k", "update_norm", "residual_norm"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=tri(n)).map(|i| format!("value{i}")));
    header.extend((1..=n * m).map(|i| format!("gain{i}")));
    header.extend((1..=tri(m)).map(|i| format!("lambda{i}")));
    w.write_record(&header)?;
    if let Some(o) = &report.oracle {
        trace_rows(&mut w, "oracle-feedback", &o.feedback_trace, n, m)?;
        trace_rows(&mut w, "oracle-feedforward", &o.feedforward_trace, n, m)?;
    }
    if let Some(l) = &report.learned {
        trace_rows(&mut w, "learned-feedback", &l.feedback_trace, n, m)?;
        if let Some(t) = &l.feedforward_trace {
            trace_rows(&mut w, "learned-feedforward", t, n, m)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_json(path: &Path, report: &RunReport) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

/// Writes every available output of a run into `dir`.
pub fn write_outputs(dir: &Path, report: &RunReport, artifacts: &RunArtifacts) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_report_json(&dir.join("report.json"), report)?;
    write_convergence_csv(&dir.join("convergence.csv"), report)?;
    if !artifacts.trajectories.is_empty() {
        sim::write_trajectories_file(&dir.join("trajectories.csv"), &artifacts.trajectories)?;
    }
    if let (Some(fb), Some(ff)) = (&artifacts.feedback_data, &artifacts.feedforward_data) {
        dataset::write_datasets(&dir.join("datasets"), fb, ff, artifacts.quadrature)?;
    }
    if let Some(mf) = &report.meanfield {
        meanfield::write_meanfield_file(&dir.join("meanfield.csv"), &mf.paths)?;
    }
    Ok(())
}
