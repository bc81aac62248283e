//! Sample paths of the agent SDE under affine policies, exploration signals,
//! and ensembles whose averages stand in for expectations.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::model::SystemDynamics;

/// States with a larger Euclidean norm abort the simulation.
pub const DIVERGENCE_LIMIT: f64 = 1e9;
const GRID_TOL: f64 = 1e-9;

/// Time grid and data windows `[t_j, t_j + T)` with `t_j = t1 + (j−1)·Ts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub t1: f64,
    #[serde(rename = "Ts")]
    pub ts: f64,
    #[serde(rename = "T")]
    pub window: f64,
    pub l: usize,
    pub dt: f64,
    pub horizon: f64,
}

fn steps_of(value: f64, dt: f64, what: &str) -> Result<usize> {
    let ratio = value / dt;
    let rounded = ratio.round();
    if rounded < 0.0 || (ratio - rounded).abs() > GRID_TOL * rounded.max(1.0) {
        return Err(Error::Invalid(format!(
            "{what} = {value} is not an integer multiple of dt = {dt}"
        )));
    }
    Ok(rounded as usize)
}

impl SamplingPlan {
    /// Checks grid alignment and that every window fits before the horizon.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Invalid("dt must be positive".into()));
        }
        if !(self.window > 0.0) || !(self.ts > 0.0) || self.t1 < 0.0 {
            return Err(Error::Invalid("T and Ts must be positive, t1 non-negative".into()));
        }
        if self.l == 0 {
            return Err(Error::Invalid("at least one window is required".into()));
        }
        steps_of(self.window, self.dt, "T")?;
        steps_of(self.ts, self.dt, "Ts")?;
        steps_of(self.t1, self.dt, "t1")?;
        let last_end = self.t1 + (self.l - 1) as f64 * self.ts + self.window;
        if last_end > self.horizon * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::Invalid(format!(
                "last window ends at {last_end} beyond horizon {}",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Fails when fewer windows than `required` are planned.
    pub fn require_windows(&self, required: usize) -> Result<()> {
        if self.l < required {
            return Err(Error::Invalid(format!(
                "l = {} windows, at least {required} needed",
                self.l
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt + GRID_TOL).floor() as usize
    }

    pub fn grid_len(&self) -> usize {
        self.steps() + 1
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.grid_len()).map(|k| k as f64 * self.dt).collect()
    }

    /// Grid index pair `(start, end)` of window `j` (zero based).
    pub fn window_indices(&self, j: usize) -> (usize, usize) {
        let start = ((self.t1 + j as f64 * self.ts) / self.dt).round() as usize;
        let len = (self.window / self.dt).round() as usize;
        (start, start + len)
    }

    /// Largest window count that still fits before the horizon.
    pub fn max_windows(&self) -> usize {
        let span = self.horizon - self.t1 - self.window;
        if span < 0.0 {
            0
        } else {
            (span / self.ts + GRID_TOL).floor() as usize + 1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    SumOfSinusoids,
    None,
}

/// Sum-of-sinusoids exploration `ℓ(t) = a Σ_j sin(w_j t)` per input channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default = "default_noise_mode")]
    pub mode: NoiseMode,
    #[serde(rename = "J")]
    pub count: usize,
    pub freq_lo: f64,
    pub freq_hi: f64,
    pub amplitude: f64,
    pub seed: u64,
}

fn default_noise_mode() -> NoiseMode {
    NoiseMode::SumOfSinusoids
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            mode: NoiseMode::None,
            count: 0,
            freq_lo: 0.0,
            freq_hi: 1.0,
            amplitude: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == NoiseMode::SumOfSinusoids {
            if self.count == 0 {
                return Err(Error::Invalid("exploration needs J >= 1 sinusoids".into()));
            }
            if !(self.freq_lo < self.freq_hi) {
                return Err(Error::Invalid("exploration needs freq_lo < freq_hi".into()));
            }
        }
        Ok(())
    }
}

/// Exploration signal with its frequencies drawn once from the noise seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Exploration {
    pub amplitude: f64,
    /// One frequency list per input channel.
    pub frequencies: Vec<Vec<f64>>,
}

impl Exploration {
    pub fn new(spec: &NoiseSpec, m: usize) -> Result<Self> {
        spec.validate()?;
        let frequencies = match spec.mode {
            NoiseMode::None => vec![Vec::new(); m],
            NoiseMode::SumOfSinusoids => {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                (0..m)
                    .map(|_| {
                        (0..spec.count)
                            .map(|_| rng.random_range(spec.freq_lo..spec.freq_hi))
                            .collect()
                    })
                    .collect()
            }
        };
        Ok(Self {
            amplitude: spec.amplitude,
            frequencies,
        })
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        for (o, freqs) in out.iter_mut().zip(&self.frequencies) {
            *o = self.amplitude * freqs.iter().map(|w| (w * t).sin()).sum::<f64>();
        }
    }

    pub fn eval(&self, t: f64) -> Vector {
        let mut out = vec![0.0; self.frequencies.len()];
        self.eval_into(t, &mut out);
        Vector::from_vec(out)
    }
}

/// `ℓ(t)` for an `m`-input system.
pub fn exploration_noise(spec: &NoiseSpec, m: usize, t: f64) -> Result<Vector> {
    Ok(Exploration::new(spec, m)?.eval(t))
}

/// Policy `u = −K x − u_ff(t) + ℓ(t)`. The feedforward term, when present,
/// is tabulated on the simulation grid (`grid_len × m`).
#[derive(Debug, Clone)]
pub struct AffinePolicy {
    pub gain: Mat,
    pub feedforward: Option<Mat>,
    pub exploration: Option<Exploration>,
}

impl AffinePolicy {
    pub fn feedback(gain: Mat) -> Self {
        Self {
            gain,
            feedforward: None,
            exploration: None,
        }
    }

    pub fn with_exploration(mut self, exploration: Exploration) -> Self {
        self.exploration = Some(exploration);
        self
    }

    pub fn with_feedforward(mut self, table: Mat) -> Self {
        self.feedforward = Some(table);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// Strong order 1/2, weak order 1.
    EulerMaruyama,
    /// Classical Runge–Kutta; only valid when `C = D = 0`.
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialState {
    Fixed { x0: Vec<f64> },
    /// Independent uniform coordinates on the box `[lo, hi]`.
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
}

impl InitialState {
    pub fn dim(&self) -> usize {
        match self {
            InitialState::Fixed { x0 } => x0.len(),
            InitialState::Uniform { lo, .. } => lo.len(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            InitialState::Fixed { x0 } => x0.clone(),
            InitialState::Uniform { lo, hi } => {
                lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect()
            }
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.dim() != n {
            return Err(Error::Dimension(format!(
                "initial state has dimension {}, expected {n}",
                self.dim()
            )));
        }
        if let InitialState::Uniform { lo, hi } = self {
            if hi.len() != n || lo.iter().zip(hi).any(|(a, b)| !(a <= b)) {
                return Err(Error::Invalid("uniform initial box needs lo <= hi".into()));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            InitialState::Fixed { x0 } => x0.clone(),
            InitialState::Uniform { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| if a == b { *a } else { rng.random_range(*a..*b) })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `grid_len × n`.
    pub states: Mat,
    /// `grid_len × m`.
    pub inputs: Mat,
    pub path_id: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub times: Vec<f64>,
    pub paths: Vec<Trajectory>,
    pub mean_state: Mat,
    pub mean_input: Mat,
}

/// Row-major copies of the model for allocation-free stepping.
struct Plant {
    n: usize,
    m: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    stochastic: bool,
}

fn row_major(m: &Mat) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl Plant {
    fn new(dynamics: &SystemDynamics) -> Self {
        Self {
            n: dynamics.n(),
            m: dynamics.m(),
            a: row_major(&dynamics.a),
            b: row_major(&dynamics.b),
            c: row_major(&dynamics.c),
            d: row_major(&dynamics.d),
            stochastic: !dynamics.is_deterministic(),
        }
    }

    /// `out = M1 x + M2 u` for row-major `M1` (n×n) and `M2` (n×m).
    fn affine(&self, m1: &[f64], m2: &[f64], x: &[f64], u: &[f64], out: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += m1[i * n + j] * x[j];
            }
            for j in 0..m {
                acc += m2[i * m + j] * u[j];
            }
            out[i] = acc;
        }
    }

    fn drift(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.affine(&self.a, &self.b, x, u, out);
    }

    fn diffusion(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.affine(&self.c, &self.d, x, u, out);
    }
}

/// Open-loop part of the input, `−u_ff(t) + ℓ(t)`, cached on the grid and
/// (for RK4) at half steps.
struct InputSchedule {
    m: usize,
    gain: Vec<f64>,
    at_grid: Vec<f64>,
    at_mid: Vec<f64>,
}

impl InputSchedule {
    fn new(policy: &AffinePolicy, plan: &SamplingPlan, n: usize, m: usize, mid: bool) -> Result<Self> {
        if policy.gain.shape() != (m, n) {
            return Err(Error::Dimension(format!(
                "policy gain is {:?}, expected ({m}, {n})",
                policy.gain.shape()
            )));
        }
        let len = plan.grid_len();
        if let Some(ff) = &policy.feedforward {
            if ff.shape() != (len, m) {
                return Err(Error::Dimension(format!(
                    "feedforward table is {:?}, expected ({len}, {m})",
                    ff.shape()
                )));
            }
        }
        if let Some(ex) = &policy.exploration {
            if ex.frequencies.len() != m {
                return Err(Error::Dimension("exploration channel count differs from m".into()));
            }
        }
        let dt = plan.dt;
        let mut at_grid = vec![0.0; len * m];
        let mut at_mid = if mid { vec![0.0; len * m] } else { Vec::new() };
        let mut buf = vec![0.0; m];
        for k in 0..len {
            if let Some(ex) = &policy.exploration {
                ex.eval_into(k as f64 * dt, &mut buf);
                at_grid[k * m..(k + 1) * m].copy_from_slice(&buf);
                if mid && k + 1 < len {
                    ex.eval_into((k as f64 + 0.5) * dt, &mut buf);
                    at_mid[k * m..(k + 1) * m].copy_from_slice(&buf);
                }
            }
            if let Some(ff) = &policy.feedforward {
                for j in 0..m {
                    at_grid[k * m + j] -= ff[(k, j)];
                    if mid && k + 1 < len {
                        at_mid[k * m + j] -= 0.5 * (ff[(k, j)] + ff[(k + 1, j)]);
                    }
                }
            }
        }
        Ok(Self {
            m,
            gain: row_major(&policy.gain),
            at_grid,
            at_mid,
        })
    }

    fn input(&self, open_loop: &[f64], x: &[f64], out: &mut [f64]) {
        let n = x.len();
        for i in 0..self.m {
            let row = &self.gain[i * n..(i + 1) * n];
            out[i] = open_loop[i] - row.iter().zip(x).map(|(g, v)| g * v).sum::<f64>();
        }
    }

    fn grid(&self, k: usize) -> &[f64] {
        &self.at_grid[k * self.m..(k + 1) * self.m]
    }

    fn mid(&self, k: usize) -> &[f64] {
        &self.at_mid[k * self.m..(k + 1) * self.m]
    }
}

fn run_path(
    plant: &Plant,
    schedule: &InputSchedule,
    x0: &[f64],
    plan: &SamplingPlan,
    rng: &mut ChaCha8Rng,
    integrator: Integrator,
    path_id: usize,
) -> Result<(Mat, Mat)> {
    let (n, m) = (plant.n, plant.m);
    let len = plan.grid_len();
    let dt = plan.dt;
    let sqrt_dt = dt.sqrt();
    let mut states = vec![0.0; len * n];
    let mut inputs = vec![0.0; len * m];
    let mut x = x0.to_vec();
    let mut u = vec![0.0; m];
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    // RK4 stage buffers.
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut xs = vec![0.0; n];
    let mut us = vec![0.0; m];

    for k in 0..len {
        schedule.input(schedule.grid(k), &x, &mut u);
        states[k * n..(k + 1) * n].copy_from_slice(&x);
        inputs[k * m..(k + 1) * m].copy_from_slice(&u);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= DIVERGENCE_LIMIT) {
            return Err(Error::Diverged {
                t: k as f64 * dt,
                path_id,
            });
        }
        if k + 1 == len {
            break;
        }
        match integrator {
            Integrator::EulerMaruyama => {
                plant.drift(&x, &u, &mut f);
                if plant.stochastic {
                    plant.diffusion(&x, &u, &mut g);
                    let z: f64 = rng.sample(StandardNormal);
                    let dw = sqrt_dt * z;
                    for i in 0..n {
                        x[i] += f[i] * dt + g[i] * dw;
                    }
                } else {
                    for i in 0..n {
                        x[i] += f[i] * dt;
                    }
                }
            }
            Integrator::Rk4 => {
                plant.drift(&x, &u, &mut k1);
                for i in 0..n {
                    xs[i] = x[i] + 0.5 * dt * k1[i];
                }
                schedule.input(schedule.mid(k), &xs, &mut us);
                plant.drift(&xs, &us, &mut k2);
                for i in 0..n {
                    xs[i] = x[i] + 0.5 * dt * k2[i];
                }
                schedule.input(schedule.mid(k), &xs, &mut us);
                plant.drift(&xs, &us, &mut k3);
                for i in 0..n {
                    xs[i] = x[i] + dt * k3[i];
                }
                schedule.input(schedule.grid(k + 1), &xs, &mut us);
                plant.drift(&xs, &us, &mut k4);
                for i in 0..n {
                    x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
    }
    Ok((
        Mat::from_row_slice(len, n, &states),
        Mat::from_row_slice(len, m, &inputs),
    ))
}

fn check_integrator(dynamics: &SystemDynamics, integrator: Integrator) -> Result<()> {
    if integrator == Integrator::Rk4 && !dynamics.is_deterministic() {
        return Err(Error::Invalid(
            "RK4 integration requires C = D = 0; use Euler–Maruyama".into(),
        ));
    }
    Ok(())
}

/// Simulates one path with Euler–Maruyama.
pub fn simulate_path(
    dynamics: &SystemDynamics,
    policy: &AffinePolicy,
    x0: &[f64],
    plan: &SamplingPlan,
    seed: u64,
) -> Result<Trajectory> {
    simulate_path_with(dynamics, policy, x0, plan, seed, Integrator::EulerMaruyama)
}

pub fn simulate_path_with(
    dynamics: &SystemDynamics,
    policy: &AffinePolicy,
    x0: &[f64],
    plan: &SamplingPlan,
    seed: u64,
    integrator: Integrator,
) -> Result<Trajectory> {
    dynamics.check()?;
    check_integrator(dynamics, integrator)?;
    if x0.len() != dynamics.n() {
        return Err(Error::Dimension("x0 length differs from n".into()));
    }
    let plant = Plant::new(dynamics);
    let schedule = InputSchedule::new(
        policy,
        plan,
        plant.n,
        plant.m,
        integrator == Integrator::Rk4,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (states, inputs) = run_path(&plant, &schedule, x0, plan, &mut rng, integrator, 0)?;
    Ok(Trajectory {
        times: plan.times(),
        states,
        inputs,
        path_id: 0,
        seed,
    })
}

/// Everything needed to draw independent, individually reproducible paths.
pub struct PathSampler<'a> {
    plant: Plant,
    schedule: InputSchedule,
    init: &'a InitialState,
    plan: &'a SamplingPlan,
    integrator: Integrator,
    base_seed: u64,
}

impl<'a> PathSampler<'a> {
    pub fn new(
        dynamics: &SystemDynamics,
        policy: &AffinePolicy,
        init: &'a InitialState,
        plan: &'a SamplingPlan,
        integrator: Integrator,
        base_seed: u64,
    ) -> Result<Self> {
        dynamics.check()?;
        check_integrator(dynamics, integrator)?;
        init.validate(dynamics.n())?;
        let plant = Plant::new(dynamics);
        let schedule = InputSchedule::new(
            policy,
            plan,
            plant.n,
            plant.m,
            integrator == Integrator::Rk4,
        )?;
        Ok(Self {
            plant,
            schedule,
            init,
            plan,
            integrator,
            base_seed,
        })
    }

    pub fn grid_len(&self) -> usize {
        self.plan.grid_len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.plan.times()
    }

    pub fn n(&self) -> usize {
        self.plant.n
    }

    pub fn m(&self) -> usize {
        self.plant.m
    }

    /// Path `i` uses seed `base_seed + i`; its initial state is drawn first
    /// from the same stream.
    pub fn path(&self, i: usize) -> Result<Trajectory> {
        let seed = self.base_seed.wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = self.init.sample(&mut rng);
        let (states, inputs) = run_path(
            &self.plant,
            &self.schedule,
            &x0,
            self.plan,
            &mut rng,
            self.integrator,
            i,
        )?;
        Ok(Trajectory {
            times: Vec::new(),
            states,
            inputs,
            path_id: i,
            seed,
        })
    }

    /// Sum of `count` paths starting at `first`, accumulated in path order.
    fn chunk_sum(&self, first: usize, count: usize) -> Result<(Mat, Mat)> {
        let paths: Vec<Trajectory> = (first..first + count)
            .into_par_iter()
            .map(|i| self.path(i))
            .collect::<Result<_>>()?;
        let mut states = Mat::zeros(self.plan.grid_len(), self.plant.n);
        let mut inputs = Mat::zeros(self.plan.grid_len(), self.plant.m);
        for p in &paths {
            states += &p.states;
            inputs += &p.inputs;
        }
        Ok((states, inputs))
    }

    /// Ensemble means without keeping the paths, reduced in a fixed order.
    pub fn mean(&self, count: usize) -> Result<(Mat, Mat)> {
        const CHUNK: usize = 64;
        let mut states = Mat::zeros(self.plan.grid_len(), self.plant.n);
        let mut inputs = Mat::zeros(self.plan.grid_len(), self.plant.m);
        let mut first = 0;
        while first < count {
            let size = CHUNK.min(count - first);
            let (s, u) = self.chunk_sum(first, size)?;
            states += s;
            inputs += u;
            first += size;
        }
        let inv = 1.0 / count as f64;
        Ok((states * inv, inputs * inv))
    }
}

/// `count` paths with seeds `base_seed + 0 .. base_seed + count − 1`, simulated in
/// parallel and averaged in path order.
pub fn simulate_ensemble(
    dynamics: &SystemDynamics,
    policy: &AffinePolicy,
    init: &InitialState,
    plan: &SamplingPlan,
    count: usize,
    base_seed: u64,
) -> Result<Ensemble> {
    simulate_ensemble_with(
        dynamics,
        policy,
        init,
        plan,
        count,
        base_seed,
        Integrator::EulerMaruyama,
    )
}

pub fn simulate_ensemble_with(
    dynamics: &SystemDynamics,
    policy: &AffinePolicy,
    init: &InitialState,
    plan: &SamplingPlan,
    count: usize,
    base_seed: u64,
    integrator: Integrator,
) -> Result<Ensemble> {
    if count == 0 {
        return Err(Error::Invalid("ensemble needs at least one path".into()));
    }
    let sampler = PathSampler::new(dynamics, policy, init, plan, integrator, base_seed)?;
    let times = plan.times();
    let mut paths: Vec<Trajectory> = (0..count)
        .into_par_iter()
        .map(|i| sampler.path(i))
        .collect::<Result<_>>()?;
    let mut mean_state = Mat::zeros(plan.grid_len(), dynamics.n());
    let mut mean_input = Mat::zeros(plan.grid_len(), dynamics.m());
    for p in paths.iter_mut() {
        mean_state += &p.states;
        mean_input += &p.inputs;
        p.times = times.clone();
    }
    let inv = 1.0 / count as f64;
    Ok(Ensemble {
        times,
        paths,
        mean_state: mean_state * inv,
        mean_input: mean_input * inv,
    })
}

impl Trajectory {
    pub fn n(&self) -> usize {
        self.states.ncols()
    }

    pub fn m(&self) -> usize {
        self.inputs.ncols()
    }
}

pub fn trajectory_header(n: usize, m: usize) -> Vec<String> {
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.push("path_id".into());
    header
}

/// Writes paths as CSV rows `t,x1..xn,u1..um,path_id`.
pub fn write_trajectories_csv<W: Write>(out: W, paths: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (n, m) = paths
        .first()
        .map(|p| (p.n(), p.m()))
        .unwrap_or((0, 0));
    w.write_record(trajectory_header(n, m))?;
    for p in paths {
        for k in 0..p.states.nrows() {
            let mut rec = Vec::with_capacity(n + m + 2);
            rec.push(p.times.get(k).copied().unwrap_or(f64::NAN).to_string());
            rec.extend(p.states.row(k).iter().map(|v| v.to_string()));
            rec.extend(p.inputs.row(k).iter().map(|v| v.to_string()));
            rec.push(p.path_id.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectories_file(path: &Path, paths: &[Trajectory]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_trajectories_csv(std::io::BufWriter::new(file), paths)
}
