//! Random small instances and independent reference computations shared by
//! the integration suites.

#![allow(dead_code)]

use mflqg::features::{quad_features, svec, tri};
use mflqg::linalg::{self, Mat};
use mflqg::meanfield::identify_b;
use mflqg::riccati::{self, FeedbackSolution};
use mflqg::sim::{Exploration, SamplingPlan};
use mflqg::{CostSpec, FeedbackDataset, FeedforwardDataset, SystemDynamics};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const MONOTONE_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Instance {
    pub dynamics: SystemDynamics,
    pub cost: CostSpec,
    pub k0: Mat,
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Mat {
    let l = gaussian(rng, n, n, 1.0 / (n as f64).sqrt());
    &l * l.transpose() + Mat::identity(n, n) * floor
}

/// Random `n`-state, `m`-input population with an open-loop Hurwitz drift
/// shifted close to the imaginary axis, so that `K₀ = 0` mean-square
/// stabilizes. `stochastic = false` zeroes `C` and `D`.
pub fn random_instance(seed: u64, n: usize, m: usize, stochastic: bool) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let g = gaussian(&mut rng, n, n, 1.0);
        let shift = linalg::spectral_abscissa(&g) + rng.random_range(0.05..0.6);
        let a = g - Mat::identity(n, n) * shift;
        let b = gaussian(&mut rng, n, m, 1.0);
        let (c, d) = if stochastic {
            (gaussian(&mut rng, n, n, 0.15), gaussian(&mut rng, n, m, 0.15))
        } else {
            (Mat::zeros(n, n), Mat::zeros(n, m))
        };
        let dynamics = SystemDynamics::new(a, b, c, d).unwrap();
        let k0 = Mat::zeros(m, n);
        if !riccati::is_ms_stabilizer(&k0, &dynamics) {
            continue;
        }
        let q = random_pd(&mut rng, n, 0.2);
        let r = random_pd(&mut rng, m, 0.5);
        let gamma = Mat::identity(n, n) * rng.random_range(0.3..1.5) + gaussian(&mut rng, n, n, 0.05);
        let cost = CostSpec::new(q, r, gamma).unwrap();
        return Instance { dynamics, cost, k0 };
    }
}

/// Solves `AᵀX + XA + CᵀXC + W = 0` entry by entry, without Kronecker helpers.
pub fn lyapunov_brute_force(a: &Mat, c: &Mat, w: &Mat) -> Mat {
    let n = a.nrows();
    let idx = |i: usize, j: usize| i + j * n;
    let mut op = Mat::zeros(n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            let row = idx(i, j);
            for k in 0..n {
                op[(row, idx(k, j))] += a[(k, i)];
                op[(row, idx(i, k))] += a[(k, j)];
                for l in 0..n {
                    op[(row, idx(k, l))] += c[(k, i)] * c[(l, j)];
                }
            }
        }
    }
    let rhs = DVector::from_fn(n * n, |r, _| -w[(r % n, r / n)]);
    let x = op.full_piv_lu().solve(&rhs).expect("brute-force operator is singular");
    Mat::from_fn(n, n, |i, j| x[idx(i, j)])
}

/// Stabilizing solution of `AᵀP + PA − PBR⁻¹BᵀP + Q = 0` by the matrix sign
/// function of the Hamiltonian.
pub fn care_sign_function(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Mat {
    let n = a.nrows();
    let g = b * r.clone().try_inverse().unwrap() * b.transpose();
    let mut h = Mat::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let mut z = h;
    for _ in 0..100 {
        let zi = z.clone().try_inverse().unwrap();
        let scale = (zi.norm() / z.norm()).sqrt();
        let next = (&z * scale + zi / scale) * 0.5;
        let delta = (&next - &z).norm() / next.norm();
        z = next;
        if delta < 1e-14 {
            break;
        }
    }
    let w11 = z.view((0, 0), (n, n)).into_owned();
    let w12 = z.view((0, n), (n, n)).into_owned();
    let w21 = z.view((n, 0), (n, n)).into_owned();
    let w22 = z.view((n, n), (n, n)).into_owned();
    let eye = Mat::identity(n, n);
    let mut lhs = Mat::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w12);
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w22 + &eye));
    let mut rhs = Mat::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(w11 + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w21));
    let p = lhs.svd(true, true).solve(&rhs, 1e-14).unwrap();
    (&p + p.transpose()) * 0.5
}

/// Truncated Taylor series with scaling and squaring, for reference only.
pub fn expm_series(m: &Mat) -> Mat {
    let n = m.nrows();
    let norm = m.norm();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = m / 2f64.powi(squarings);
    let mut term = Mat::identity(n, n);
    let mut sum = Mat::identity(n, n);
    for k in 1..40 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

fn min_eig(m: &Mat) -> f64 {
    linalg::min_sym_eigenvalue(&linalg::symmetrize(m))
}

/// `P_k ⪰ P_{k+1} ⪰ P` along the model-based feedback iteration.
pub fn check_feedback_monotone(inst: &Instance) -> Result<FeedbackSolution, String> {
    let (fb, trace) = riccati::pi_feedback(&inst.dynamics, &inst.cost, &inst.k0, 1e-10, 100)
        .map_err(|e| format!("feedback iteration failed: {e}"))?;
    for pair in trace.entries.windows(2) {
        let gap = min_eig(&(&pair[0].value - &pair[1].value));
        if gap < -MONOTONE_TOL {
            return Err(format!("P_{} − P_{} has eigenvalue {gap:e}", pair[0].k, pair[1].k));
        }
    }
    for e in &trace.entries {
        let gap = min_eig(&(&e.value - &fb.p));
        if gap < -MONOTONE_TOL {
            return Err(format!("P_{} − P has eigenvalue {gap:e}", e.k));
        }
        if !riccati::is_ms_stabilizer(&e.gain, &inst.dynamics) {
            return Err(format!("K_{} is not a mean-square stabilizer", e.k));
        }
    }
    Ok(fb)
}

/// `S ⪯ S_{k+1} ⪯ S_k` with every `A − B(K + K_sᵏ)` Hurwitz, and exact
/// recovery of `B` from the converged pair.
pub fn check_feedforward(inst: &Instance, fb: &FeedbackSolution) -> Result<(), String> {
    let (ff, trace) = riccati::pi_feedforward(&inst.dynamics, &inst.cost, fb, 1e-10, 100)
        .map_err(|e| format!("feedforward iteration failed: {e}"))?;
    let (a, b) = (&inst.dynamics.a, &inst.dynamics.b);
    let mut ks_prev = Mat::zeros(b.ncols(), a.nrows());
    for e in &trace.entries {
        if !linalg::is_hurwitz(&(a - b * (&fb.k + &ks_prev))) {
            return Err(format!("closed loop before S_{} is not Hurwitz", e.k));
        }
        let gap = min_eig(&(&e.value - &ff.s));
        if gap < -MONOTONE_TOL {
            return Err(format!("S_{} − S has eigenvalue {gap:e}", e.k));
        }
        ks_prev = e.gain.clone();
    }
    for pair in trace.entries.windows(2) {
        let gap = min_eig(&(&pair[0].value - &pair[1].value));
        if gap < -MONOTONE_TOL {
            return Err(format!("S_{} − S_{} has eigenvalue {gap:e}", pair[0].k, pair[1].k));
        }
    }
    let b_hat = identify_b(&ff.s, &ff.ks, &fb.upsilon(&inst.cost.r))
        .map_err(|e| format!("identify_b failed: {e}"))?;
    let err = (&b_hat - b).amax();
    if err > 1e-10 {
        return Err(format!("identified B off by {err:e}"));
    }
    Ok(())
}

/// Library Lyapunov solve against [`lyapunov_brute_force`] at `K₀`.
pub fn check_lyapunov(inst: &Instance, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = &inst.dynamics;
    let n = d.n();
    let acl = &d.a - &d.b * &inst.k0;
    let ccl = &d.c - &d.d * &inst.k0;
    let w = gaussian(&mut rng, n, n, 1.0);
    let w = &w + w.transpose();
    let x = riccati::solve_generalized_lyapunov(&acl, &ccl, &w).map_err(|e| e.to_string())?;
    let reference = lyapunov_brute_force(&acl, &ccl, &w);
    let err = (&x - &reference).amax() / reference.amax().max(1.0);
    if err > 1e-10 {
        return Err(format!("Lyapunov solve differs from brute force by {err:e}"));
    }
    Ok(())
}

/// `quad_features(x)ᵀ svec(P) = xᵀPx` for random symmetric `P`.
pub fn check_pairing(seed: u64, n: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = gaussian(&mut rng, n, n, 1.0);
    let p = &p + p.transpose();
    let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let xv = DVector::from_column_slice(&x);
    let direct = (xv.transpose() * &p * &xv)[(0, 0)];
    let paired = quad_features(&x).dot(&svec(&p));
    let err = (direct - paired).abs() / direct.abs().max(1.0);
    if err > 1e-12 {
        return Err(format!("pairing identity off by {err:e}"));
    }
    Ok(())
}

/// Runs every property check on one instance.
pub fn check_instance(seed: u64, n: usize, m: usize) -> Result<(), String> {
    let inst = random_instance(seed, n, m, true);
    check_lyapunov(&inst, seed ^ 0x5eed)?;
    let fb = check_feedback_monotone(&inst)?;
    check_feedforward(&inst, &fb)?;
    check_pairing(seed, n)
}

/// Linear augmented model `ż = Fz` of a deterministic agent under
/// `u = −K₀x + ℓ(t)`, with each exploration sinusoid carried by a
/// `(sin, cos)` oscillator pair.
pub struct AugmentedModel {
    pub f: Mat,
    /// `x = X z`.
    pub x_map: Mat,
    /// `u = U z`.
    pub u_map: Mat,
    pub z0: DVector<f64>,
}

impl AugmentedModel {
    pub fn new(a: &Mat, b: &Mat, k0: &Mat, exploration: &Exploration, x0: &[f64]) -> Self {
        let (n, m) = b.shape();
        let freqs: Vec<(usize, f64)> = exploration
            .frequencies
            .iter()
            .enumerate()
            .flat_map(|(i, fs)| fs.iter().map(move |w| (i, *w)))
            .collect();
        let d = n + 2 * freqs.len();
        let mut ell = Mat::zeros(m, 2 * freqs.len());
        let mut osc = Mat::zeros(2 * freqs.len(), 2 * freqs.len());
        for (k, (channel, w)) in freqs.iter().enumerate() {
            ell[(*channel, 2 * k)] = exploration.amplitude;
            osc[(2 * k, 2 * k + 1)] = *w;
            osc[(2 * k + 1, 2 * k)] = -w;
        }
        let mut f = Mat::zeros(d, d);
        f.view_mut((0, 0), (n, n)).copy_from(&(a - b * k0));
        f.view_mut((0, n), (n, d - n)).copy_from(&(b * &ell));
        f.view_mut((n, n), (d - n, d - n)).copy_from(&osc);
        let mut x_map = Mat::zeros(n, d);
        x_map.view_mut((0, 0), (n, n)).copy_from(&Mat::identity(n, n));
        let mut u_map = Mat::zeros(m, d);
        u_map.view_mut((0, 0), (m, n)).copy_from(&(-k0));
        u_map.view_mut((0, n), (m, d - n)).copy_from(&ell);
        let mut z0 = DVector::zeros(d);
        z0.rows_mut(0, n).copy_from_slice(x0);
        for k in 0..freqs.len() {
            z0[n + 2 * k + 1] = 1.0;
        }
        Self { f, x_map, u_map, z0 }
    }

    pub fn state_at(&self, t: f64) -> DVector<f64> {
        &self.x_map * expm_series(&(&self.f * t)) * &self.z0
    }

    /// Window Gram matrices `∫_{t_j}^{t_j+T} z zᵀ dt` and window endpoints,
    /// from the moment ODE `Ẏ = FY + YFᵀ` integrated in closed form.
    fn window_grams(&self, plan: &SamplingPlan) -> Vec<(Mat, DVector<f64>, DVector<f64>)> {
        let d = self.f.nrows();
        let dd = d * d;
        let eye = Mat::identity(d, d);
        let lift = linalg::kron(&eye, &self.f) + linalg::kron(&self.f, &eye);
        let mut g = Mat::zeros(2 * dd, 2 * dd);
        g.view_mut((0, dd), (dd, dd)).copy_from(&Mat::identity(dd, dd));
        g.view_mut((dd, dd), (dd, dd)).copy_from(&lift);
        let integral = expm_series(&(g * plan.window)).view((0, dd), (dd, dd)).into_owned();
        let step = expm_series(&(&self.f * plan.ts));
        let across = expm_series(&(&self.f * plan.window));
        let mut z = expm_series(&(&self.f * plan.t1)) * &self.z0;
        let mut out = Vec::with_capacity(plan.l);
        for _ in 0..plan.l {
            let y0 = &z * z.transpose();
            let w = linalg::unvec(&(&integral * linalg::vec_col(&y0)), d, d);
            out.push((w, z.clone(), &across * &z));
            z = &step * z;
        }
        out
    }

    /// Exact feedback and feedforward datasets of the single path.
    pub fn datasets(&self, plan: &SamplingPlan) -> (FeedbackDataset, FeedforwardDataset) {
        let (n, m) = (self.x_map.nrows(), self.u_map.nrows());
        let l = plan.l;
        let mut delta = Mat::zeros(l, tri(n));
        let mut ixx = Mat::zeros(l, n * n);
        let mut ixu = Mat::zeros(l, n * m);
        let mut iuu = Mat::zeros(l, tri(m));
        for (row, (w, start, end)) in self.window_grams(plan).into_iter().enumerate() {
            let xa: Vec<f64> = (&self.x_map * start).iter().copied().collect();
            let xb: Vec<f64> = (&self.x_map * end).iter().copied().collect();
            delta.set_row(row, &(quad_features(&xb) - quad_features(&xa)).transpose());
            let xx = &self.x_map * &w * self.x_map.transpose();
            let xu = &self.x_map * &w * self.u_map.transpose();
            let uu = &self.u_map * &w * self.u_map.transpose();
            for i in 0..n {
                for j in 0..n {
                    ixx[(row, i * n + j)] = xx[(i, j)];
                }
                for j in 0..m {
                    ixu[(row, i * m + j)] = xu[(i, j)];
                }
            }
            let mut col = 0;
            for i in 0..m {
                for j in i..m {
                    iuu[(row, col)] = uu[(i, j)];
                    col += 1;
                }
            }
        }
        let fb = FeedbackDataset::new(delta.clone(), ixx.clone(), ixu.clone(), iuu, plan.clone()).unwrap();
        let ff = FeedforwardDataset::new(delta, ixx, ixu, plan.clone()).unwrap();
        (fb, ff)
    }
}
