//! Windowed integral data matrices built from one ensemble: second moments
//! for the feedback regression, mean-path products for the feedforward one.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{kron_into, quad_features, tri};
use crate::linalg::{self, Mat};
use crate::sim::{Ensemble, PathSampler, SamplingPlan, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    /// Composite trapezoid rule on the simulation grid.
    #[default]
    Trapezoid,
    /// Trapezoid with the Euler–Maclaurin endpoint term `−dt²/12·(f′(b) − f′(a))`,
    /// derivatives from second-order finite differences. Fourth order on smooth data.
    CorrectedTrapezoid,
}

/// Rows are windows; `Δx̂`, `E∫x⊗x`, `E∫x⊗u` and `E∫û` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackDataset {
    pub delta_xhat: Mat,
    pub ixx: Mat,
    pub ixu: Mat,
    pub iuhat: Mat,
    pub plan: SamplingPlan,
}

/// Rows are windows; `Δx̄̂`, `∫x̄⊗x̄` and `∫x̄⊗ū` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardDataset {
    pub delta_xbarhat: Mat,
    pub ixbarxbar: Mat,
    pub ixbarubar: Mat,
    pub plan: SamplingPlan,
}

fn check_block(name: &str, block: &Mat, rows: usize, cols: usize) -> Result<()> {
    if block.shape() != (rows, cols) {
        return Err(Error::Dimension(format!(
            "{name} is {:?}, expected ({rows}, {cols})",
            block.shape()
        )));
    }
    if !linalg::all_finite(block) {
        return Err(Error::Invalid(format!("{name} has non-finite entries")));
    }
    Ok(())
}

impl FeedbackDataset {
    pub fn new(
        delta_xhat: Mat,
        ixx: Mat,
        ixu: Mat,
        iuhat: Mat,
        plan: SamplingPlan,
    ) -> Result<Self> {
        let ds = Self {
            delta_xhat,
            ixx,
            ixu,
            iuhat,
            plan,
        };
        ds.check()?;
        Ok(ds)
    }

    pub fn check(&self) -> Result<()> {
        let l = self.rows();
        let n = self.n();
        let m = self.m();
        if n * n != self.ixx.ncols() || n == 0 || m == 0 {
            return Err(Error::Dimension("feedback dataset block widths are inconsistent".into()));
        }
        check_block("delta_xhat", &self.delta_xhat, l, tri(n))?;
        check_block("Ixx", &self.ixx, l, n * n)?;
        check_block("Ixu", &self.ixu, l, n * m)?;
        check_block("Iuhat", &self.iuhat, l, tri(m))
    }

    pub fn rows(&self) -> usize {
        self.ixx.nrows()
    }

    pub fn n(&self) -> usize {
        (self.ixx.ncols() as f64).sqrt().round() as usize
    }

    pub fn m(&self) -> usize {
        self.ixu.ncols().checked_div(self.n()).unwrap_or(0)
    }

    /// `n(n+1)/2 + mn + m(m+1)/2`.
    pub fn required_rank(&self) -> usize {
        let (n, m) = (self.n(), self.m());
        tri(n) + m * n + tri(m)
    }
}

impl FeedforwardDataset {
    pub fn new(delta_xbarhat: Mat, ixbarxbar: Mat, ixbarubar: Mat, plan: SamplingPlan) -> Result<Self> {
        let ds = Self {
            delta_xbarhat,
            ixbarxbar,
            ixbarubar,
            plan,
        };
        ds.check()?;
        Ok(ds)
    }

    pub fn check(&self) -> Result<()> {
        let l = self.rows();
        let n = self.n();
        let m = self.m();
        if n * n != self.ixbarxbar.ncols() || n == 0 || m == 0 {
            return Err(Error::Dimension("feedforward dataset block widths are inconsistent".into()));
        }
        check_block("delta_xbarhat", &self.delta_xbarhat, l, tri(n))?;
        check_block("Ixbarxbar", &self.ixbarxbar, l, n * n)?;
        check_block("Ixbarubar", &self.ixbarubar, l, n * m)
    }

    pub fn rows(&self) -> usize {
        self.ixbarxbar.nrows()
    }

    pub fn n(&self) -> usize {
        (self.ixbarxbar.ncols() as f64).sqrt().round() as usize
    }

    pub fn m(&self) -> usize {
        self.ixbarubar.ncols().checked_div(self.n()).unwrap_or(0)
    }

    /// `n(n+1)/2 + mn`.
    pub fn required_rank(&self) -> usize {
        tri(self.n()) + self.m() * self.n()
    }
}

/// Cumulative integral of every column of `f` (grid × features) from `t = 0`.
fn cumulative(f: &Mat, dt: f64, quad: Quadrature) -> Mat {
    let (len, cols) = f.shape();
    let mut c = Mat::zeros(len, cols);
    for j in 0..cols {
        for k in 1..len {
            c[(k, j)] = c[(k - 1, j)] + 0.5 * dt * (f[(k - 1, j)] + f[(k, j)]);
        }
    }
    if quad == Quadrature::CorrectedTrapezoid && len >= 3 {
        let w = dt * dt / 12.0;
        for j in 0..cols {
            for k in 0..len {
                let d = if k == 0 {
                    (-3.0 * f[(0, j)] + 4.0 * f[(1, j)] - f[(2, j)]) / (2.0 * dt)
                } else if k == len - 1 {
                    (3.0 * f[(k, j)] - 4.0 * f[(k - 1, j)] + f[(k - 2, j)]) / (2.0 * dt)
                } else {
                    (f[(k + 1, j)] - f[(k - 1, j)]) / (2.0 * dt)
                };
                c[(k, j)] -= w * d;
            }
        }
    }
    c
}

fn window_rows(plan: &SamplingPlan, grid_len: usize) -> Result<Vec<(usize, usize)>> {
    plan.validate()?;
    let rows: Vec<(usize, usize)> = (0..plan.l).map(|j| plan.window_indices(j)).collect();
    if let Some(&(_, end)) = rows.last() {
        if end >= grid_len {
            return Err(Error::WindowOutsideGrid(format!(
                "window ends at grid index {end}, grid has {grid_len} points"
            )));
        }
    }
    Ok(rows)
}

/// `l × features` window integrals of a per-grid series.
fn window_integrals(series: &Mat, windows: &[(usize, usize)], dt: f64, quad: Quadrature) -> Mat {
    let c = cumulative(series, dt, quad);
    Mat::from_fn(windows.len(), series.ncols(), |r, j| {
        let (a, b) = windows[r];
        c[(b, j)] - c[(a, j)]
    })
}

fn window_deltas(series: &Mat, windows: &[(usize, usize)]) -> Mat {
    Mat::from_fn(windows.len(), series.ncols(), |r, j| {
        let (a, b) = windows[r];
        series[(b, j)] - series[(a, j)]
    })
}

/// Path averages on the simulation grid of the state, the input and the
/// products `x̂`, `x⊗x`, `x⊗u`, `û`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSeries {
    pub count: usize,
    pub mean_state: Mat,
    pub mean_input: Mat,
    pub xhat: Mat,
    pub xx: Mat,
    pub xu: Mat,
    pub uhat: Mat,
}

impl MomentSeries {
    fn zeros(len: usize, n: usize, m: usize) -> Self {
        Self {
            count: 0,
            mean_state: Mat::zeros(len, n),
            mean_input: Mat::zeros(len, m),
            xhat: Mat::zeros(len, tri(n)),
            xx: Mat::zeros(len, n * n),
            xu: Mat::zeros(len, n * m),
            uhat: Mat::zeros(len, tri(m)),
        }
    }

    /// Adds one path to the running sums.
    fn add_path(&mut self, states: &Mat, inputs: &Mat) {
        let (n, m) = (states.ncols(), inputs.ncols());
        let mut xx = vec![0.0; n * n];
        let mut xu = vec![0.0; n * m];
        for k in 0..states.nrows() {
            let x: Vec<f64> = states.row(k).iter().copied().collect();
            let u: Vec<f64> = inputs.row(k).iter().copied().collect();
            kron_into(&x, &x, &mut xx);
            kron_into(&x, &u, &mut xu);
            for (j, v) in x.iter().enumerate() {
                self.mean_state[(k, j)] += v;
            }
            for (j, v) in u.iter().enumerate() {
                self.mean_input[(k, j)] += v;
            }
            for (j, v) in quad_features(&x).iter().enumerate() {
                self.xhat[(k, j)] += v;
            }
            for (j, v) in xx.iter().enumerate() {
                self.xx[(k, j)] += v;
            }
            for (j, v) in xu.iter().enumerate() {
                self.xu[(k, j)] += v;
            }
            for (j, v) in quad_features(&u).iter().enumerate() {
                self.uhat[(k, j)] += v;
            }
        }
        self.count += 1;
    }

    fn add_sums(&mut self, other: &MomentSeries) {
        self.mean_state += &other.mean_state;
        self.mean_input += &other.mean_input;
        self.xhat += &other.xhat;
        self.xx += &other.xx;
        self.xu += &other.xu;
        self.uhat += &other.uhat;
        self.count += other.count;
    }

    fn normalize(mut self) -> Self {
        let inv = 1.0 / self.count as f64;
        for block in [
            &mut self.mean_state,
            &mut self.mean_input,
            &mut self.xhat,
            &mut self.xx,
            &mut self.xu,
            &mut self.uhat,
        ] {
            *block *= inv;
        }
        self
    }

    pub fn grid_len(&self) -> usize {
        self.mean_state.nrows()
    }

    pub fn from_ensemble(ens: &Ensemble) -> Result<Self> {
        let first = ens
            .paths
            .first()
            .ok_or_else(|| Error::Invalid("empty ensemble".into()))?;
        let mut sums = Self::zeros(first.states.nrows(), first.n(), first.m());
        for path in &ens.paths {
            sums.add_path(&path.states, &path.inputs);
        }
        Ok(sums.normalize())
    }

    /// Streams `count` paths through the sums in chunks, reducing in path
    /// order, and returns the first `keep` paths alongside.
    pub fn from_sampler(
        sampler: &PathSampler<'_>,
        count: usize,
        keep: usize,
    ) -> Result<(Self, Vec<Trajectory>)> {
        const CHUNK: usize = 64;
        if count == 0 {
            return Err(Error::Invalid("ensemble needs at least one path".into()));
        }
        let (len, n, m) = (sampler.grid_len(), sampler.n(), sampler.m());
        let mut sums = Self::zeros(len, n, m);
        let mut kept = Vec::new();
        let mut first = 0;
        while first < count {
            let size = CHUNK.min(count - first);
            let parts: Vec<(MomentSeries, Option<Trajectory>)> = (first..first + size)
                .into_par_iter()
                .map(|i| -> Result<_> {
                    let mut path = sampler.path(i)?;
                    let mut one = Self::zeros(len, n, m);
                    one.add_path(&path.states, &path.inputs);
                    let stored = (i < keep).then(|| {
                        path.times = sampler.times();
                        path
                    });
                    Ok((one, stored))
                })
                .collect::<Result<_>>()?;
            for (one, stored) in parts {
                sums.add_sums(&one);
                kept.extend(stored);
            }
            first += size;
        }
        Ok((sums.normalize(), kept))
    }
}

/// Feedback data with trapezoid quadrature.
pub fn build_feedback_dataset(ens: &Ensemble, plan: &SamplingPlan) -> Result<FeedbackDataset> {
    build_feedback_dataset_with(ens, plan, Quadrature::Trapezoid)
}

/// Expectations are path averages; `E[x̂]` is averaged before differencing.
pub fn build_feedback_dataset_with(
    ens: &Ensemble,
    plan: &SamplingPlan,
    quad: Quadrature,
) -> Result<FeedbackDataset> {
    feedback_from_moments(&MomentSeries::from_ensemble(ens)?, plan, quad)
}

pub fn feedback_from_moments(
    moments: &MomentSeries,
    plan: &SamplingPlan,
    quad: Quadrature,
) -> Result<FeedbackDataset> {
    let windows = window_rows(plan, moments.grid_len())?;
    FeedbackDataset::new(
        window_deltas(&moments.xhat, &windows),
        window_integrals(&moments.xx, &windows, plan.dt, quad),
        window_integrals(&moments.xu, &windows, plan.dt, quad),
        window_integrals(&moments.uhat, &windows, plan.dt, quad),
        plan.clone(),
    )
}

/// Feedforward data with trapezoid quadrature.
pub fn build_feedforward_dataset(ens: &Ensemble, plan: &SamplingPlan) -> Result<FeedforwardDataset> {
    build_feedforward_dataset_with(ens, plan, Quadrature::Trapezoid)
}

pub fn build_feedforward_dataset_with(
    ens: &Ensemble,
    plan: &SamplingPlan,
    quad: Quadrature,
) -> Result<FeedforwardDataset> {
    feedforward_from_mean(&ens.mean_state, &ens.mean_input, plan, quad)
}

/// Feedforward data from a mean state/input pair on the simulation grid.
pub fn feedforward_from_mean(
    mean_state: &Mat,
    mean_input: &Mat,
    plan: &SamplingPlan,
    quad: Quadrature,
) -> Result<FeedforwardDataset> {
    let (len, n) = mean_state.shape();
    let m = mean_input.ncols();
    if mean_input.nrows() != len {
        return Err(Error::Dimension("mean state and input grids differ".into()));
    }
    let windows = window_rows(plan, len)?;
    let mut prod = MomentSeries::zeros(len, n, m);
    prod.add_path(mean_state, mean_input);
    FeedforwardDataset::new(
        window_deltas(&prod.xhat, &windows),
        window_integrals(&prod.xx, &windows, plan.dt, quad),
        window_integrals(&prod.xu, &windows, plan.dt, quad),
        plan.clone(),
    )
}

fn hstack(blocks: &[&Mat]) -> Mat {
    let rows = blocks[0].nrows();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.columns_mut(c, b.ncols()).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// Numerical rank of `[Ixx | Ixu | Iû]` reaches `n(n+1)/2 + mn + m(m+1)/2`.
///
/// `Ixx` has repeated columns (`x_i x_j` twice), so its distinct columns
/// carry the rank.
pub fn check_rank_feedback(ds: &FeedbackDataset) -> bool {
    feedback_rank(ds) >= ds.required_rank()
}

pub fn feedback_rank(ds: &FeedbackDataset) -> usize {
    let sym = upper_columns(&ds.ixx, ds.n());
    linalg::numerical_rank(&hstack(&[&sym, &ds.ixu, &ds.iuhat]))
}

/// Numerical rank of `[Ix̄x̄ | Ix̄ū]` reaches `n(n+1)/2 + mn`.
pub fn check_rank_feedforward(ds: &FeedforwardDataset) -> bool {
    feedforward_rank(ds) >= ds.required_rank()
}

pub fn feedforward_rank(ds: &FeedforwardDataset) -> usize {
    let sym = upper_columns(&ds.ixbarxbar, ds.n());
    linalg::numerical_rank(&hstack(&[&sym, &ds.ixbarubar]))
}

/// Keeps the `i ≤ j` columns of an `x ⊗ x` block.
fn upper_columns(block: &Mat, n: usize) -> Mat {
    let idx: Vec<usize> = (0..n)
        .flat_map(|i| (i..n).map(move |j| i * n + j))
        .collect();
    Mat::from_fn(block.nrows(), idx.len(), |r, c| block[(r, idx[c])])
}

/// Describes the CSV block files written by [`write_datasets`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub l: usize,
    pub n: usize,
    pub m: usize,
    pub plan: SamplingPlan,
    pub quadrature: Quadrature,
    pub feedback: Vec<String>,
    pub feedforward: Vec<String>,
}

fn block_headers(prefix: &str, cols: usize) -> Vec<String> {
    (1..=cols).map(|i| format!("{prefix}{i}")).collect()
}

fn write_block_csv(path: &Path, blocks: &[(&str, &Mat)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = Vec::new();
    for (name, b) in blocks {
        header.extend(block_headers(&format!("{name}_"), b.ncols()));
    }
    w.write_record(&header)?;
    let rows = blocks[0].1.nrows();
    for r in 0..rows {
        let rec: Vec<String> = blocks
            .iter()
            .flat_map(|(_, b)| b.row(r).iter().map(|v| format!("{v:e}")).collect::<Vec<_>>())
            .collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_block_csv(path: &Path, widths: &[usize]) -> Result<Vec<Mat>> {
    let mut r = csv::Reader::from_path(path)?;
    let total: usize = widths.iter().sum();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != total {
            return Err(Error::Dimension(format!(
                "{}: row has {} fields, expected {total}",
                path.display(),
                rec.len()
            )));
        }
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        rows.push(vals);
    }
    let mut out = Vec::new();
    let mut start = 0;
    for &w in widths {
        out.push(Mat::from_fn(rows.len(), w, |i, j| rows[i][start + j]));
        start += w;
    }
    Ok(out)
}

/// Writes `feedback.csv`, `feedforward.csv` and `manifest.json` into `dir`.
pub fn write_datasets(
    dir: &Path,
    fb: &FeedbackDataset,
    ff: &FeedforwardDataset,
    quadrature: Quadrature,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_block_csv(
        &dir.join("feedback.csv"),
        &[
            ("dxhat", &fb.delta_xhat),
            ("ixx", &fb.ixx),
            ("ixu", &fb.ixu),
            ("iuhat", &fb.iuhat),
        ],
    )?;
    write_block_csv(
        &dir.join("feedforward.csv"),
        &[
            ("dxbarhat", &ff.delta_xbarhat),
            ("ixbarxbar", &ff.ixbarxbar),
            ("ixbarubar", &ff.ixbarubar),
        ],
    )?;
    let manifest = DatasetManifest {
        l: fb.rows(),
        n: fb.n(),
        m: fb.m(),
        plan: fb.plan.clone(),
        quadrature,
        feedback: vec!["feedback.csv".into()],
        feedforward: vec!["feedforward.csv".into()],
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Reads datasets written by [`write_datasets`].
pub fn read_datasets(dir: &Path) -> Result<(FeedbackDataset, FeedforwardDataset, DatasetManifest)> {
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let (n, m) = (manifest.n, manifest.m);
    let fb = read_block_csv(
        &dir.join(&manifest.feedback[0]),
        &[tri(n), n * n, n * m, tri(m)],
    )?;
    let ff = read_block_csv(&dir.join(&manifest.feedforward[0]), &[tri(n), n * n, n * m])?;
    let mut fb = fb.into_iter();
    let mut ff = ff.into_iter();
    let fbd = FeedbackDataset::new(
        fb.next().unwrap(),
        fb.next().unwrap(),
        fb.next().unwrap(),
        fb.next().unwrap(),
        manifest.plan.clone(),
    )?;
    let ffd = FeedforwardDataset::new(
        ff.next().unwrap(),
        ff.next().unwrap(),
        ff.next().unwrap(),
        manifest.plan.clone(),
    )?;
    if fbd.rows() != manifest.l || ffd.rows() != manifest.l {
        return Err(Error::Dimension("dataset row count differs from manifest".into()));
    }
    Ok((fbd, ffd, manifest))
}
