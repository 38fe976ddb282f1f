//! Sampling of the explicit control law: states paired with their local
//! affine laws, extracted from pointwise QP solutions.
//!
//! Stored sample points must sit in the interior of a unique-order region:
//! no two pooled laws may take (numerically) equal values there. Points that
//! land on a boundary, either by a value tie or by a degenerate/weakly active
//! constraint set, are nudged by a small random perturbation until the tie
//! clears. A second pass re-checks every stored point against the final
//! literal pool, since a law discovered late can tie a point sampled early.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::independent_rows;
use crate::model::{CondensedQp, MpcProblem};
use crate::rng::RngStream;
use crate::solvers::qp::{solve_qp_warm, QpSolution, QpStatus};

/// Coefficient-distance tolerance for collapsing two laws into one literal.
pub const DEDUP_TOL: f64 = 1e-6;
/// Perturbation radius as a fraction of the smallest grid step.
const PERTURB_SCALE: f64 = 1e-3;
const PERTURB_RETRIES: usize = 10;

/// Scale-aware tie tolerance for unique-order checks.
pub fn tie_tol(u: f64) -> f64 {
    1e-9 * u.abs().max(1.0)
}

/// Axis-aligned box, the sampling domain.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Hyperbox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Hyperbox {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch("hyperbox lo/hi".into()));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| l >= h) {
            return Err(Error::InvalidBounds("hyperbox needs lo < hi".into()));
        }
        Ok(Hyperbox { lo: lo.iter().copied().collect(), hi: hi.iter().copied().collect() })
    }

    pub fn from_slices(lo: &[f64], hi: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(lo), DVector::from_column_slice(hi))
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .all(|(v, (l, h))| *v >= *l - 1e-12 && *v <= *h + 1e-12)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(self.hi.iter())) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        self.lo.iter().zip(self.hi.iter()).map(|(l, h)| rng.uniform(*l, *h)).collect()
    }

    pub fn min_extent(&self) -> f64 {
        self.lo
            .iter()
            .zip(self.hi.iter())
            .map(|(l, h)| h - l)
            .fold(f64::INFINITY, f64::min)
    }
}

/// One affine piece `u(x) = a'x + b` of the control law.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AffineLaw {
    pub a: Vec<f64>,
    pub b: f64,
    /// Gain/offset for the full input sequence `U(x) = K x + k`; the scalar
    /// law is its first row.
    #[serde(skip)]
    pub full_gain: Option<Vec<Vec<f64>>>,
    #[serde(skip)]
    pub full_offset: Option<Vec<f64>>,
    /// Reduced active set this law was first extracted from.
    #[serde(default)]
    pub active_set: Vec<usize>,
}

impl AffineLaw {
    pub fn new(a: Vec<f64>, b: f64) -> Self {
        AffineLaw { a, b, full_gain: None, full_offset: None, active_set: Vec::new() }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + self.b
    }

    pub fn coefficient_distance(&self, other: &AffineLaw) -> f64 {
        let da = self
            .a
            .iter()
            .zip(&other.a)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        da + (self.b - other.b).abs()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Grid,
    Perturbed,
    Resampled,
    Trajectory,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplePoint {
    pub x: Vec<f64>,
    pub law: usize,
    pub u: f64,
    pub source: SampleSource,
}

/// Sampled states, the pool of distinct laws, and the domain they live in.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleDataset {
    pub points: Vec<SamplePoint>,
    pub literals: Vec<AffineLaw>,
    pub domain: Hyperbox,
}

impl SampleDataset {
    pub fn new(domain: Hyperbox) -> Self {
        SampleDataset { points: Vec::new(), literals: Vec::new(), domain }
    }

    pub fn law_values(&self, x: &[f64]) -> Vec<f64> {
        self.literals.iter().map(|l| l.eval(x)).collect()
    }

    /// Find-or-insert a law in the literal pool.
    pub fn dedup_law(&mut self, candidate: AffineLaw) -> usize {
        match find_law(&self.literals, &candidate) {
            Some(i) => i,
            None => {
                self.literals.push(candidate);
                self.literals.len() - 1
            }
        }
    }

    /// Would `candidate` both tie-check cleanly at `x`? Checks all pairwise
    /// values of the pool plus the candidate if it is new.
    pub fn uo_interior(&self, x: &[f64], u: f64, candidate: Option<&AffineLaw>) -> bool {
        let mut vals = self.law_values(x);
        if let Some(c) = candidate {
            if find_law(&self.literals, c).is_none() {
                vals.push(c.eval(x));
            }
        }
        if vals.len() < 2 {
            return true;
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let tol = tie_tol(u);
        vals.windows(2).all(|w| w[1] - w[0] > tol)
    }

    pub fn point_exists(&self, x: &[f64]) -> bool {
        self.points.iter().any(|p| {
            p.x.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) <= 1e-12
        })
    }
}

/// Index of the pool law matching `candidate` within [`DEDUP_TOL`].
pub fn find_law(pool: &[AffineLaw], candidate: &AffineLaw) -> Option<usize> {
    pool.iter().position(|l| l.coefficient_distance(candidate) <= DEDUP_TOL)
}

/// A resolved optimal-control query at one state.
#[derive(Clone, Debug)]
pub struct ResolvedPoint {
    pub law: AffineLaw,
    pub u: f64,
    /// The state sits on a critical-region boundary (degenerate or weakly
    /// active constraint set); a perturbation is required even without a
    /// value tie in the current pool.
    pub on_boundary: bool,
    /// Active set usable as a warm-start hint for neighboring queries.
    pub active_set: Vec<usize>,
}

/// Anything that can produce the optimal control and its local affine law.
pub trait ControlOracle: Sync {
    fn dim(&self) -> usize;
    /// `Ok(None)` marks an infeasible state.
    fn resolve(&self, x: &[f64]) -> Result<Option<ResolvedPoint>> {
        self.resolve_warm(x, &[])
    }
    fn resolve_warm(&self, x: &[f64], hint: &[usize]) -> Result<Option<ResolvedPoint>>;
}

/// Extract the affine law `U(x) = z*(x) - H^{-1}F'x` from a QP solution via
/// the reduced active set.
pub fn extract_affine_law(qp: &CondensedQp, sol: &QpSolution) -> AffineLaw {
    let m = qp.h.nrows();
    let nx = qp.n_x;

    let reduced: Vec<usize> = if sol.active_set.is_empty() {
        Vec::new()
    } else {
        let sub = qp.g.select_rows(sol.active_set.iter());
        independent_rows(&sub).into_iter().map(|i| sol.active_set[i]).collect()
    };

    // K_z, k_z with z*(x) = K_z x + k_z
    let (kz, kz0) = if reduced.is_empty() {
        (nalgebra::DMatrix::zeros(m, nx), DVector::zeros(m))
    } else {
        let ga = qp.g.select_rows(reduced.iter());
        let sa = qp.s.select_rows(reduced.iter());
        let wa = DVector::from_iterator(reduced.len(), reduced.iter().map(|&j| qp.w[j]));
        let gram = &ga * &qp.hinv * ga.transpose();
        let gram_inv = gram.lu().try_inverse().expect("reduced active rows are independent");
        let t = &qp.hinv * ga.transpose() * gram_inv;
        (&t * sa, t * wa)
    };
    let ku = kz - &qp.hinv_ft;
    let full_gain: Vec<Vec<f64>> =
        (0..m).map(|i| (0..nx).map(|j| ku[(i, j)]).collect()).collect();
    let full_offset: Vec<f64> = (0..m).map(|i| kz0[i]).collect();

    AffineLaw {
        a: full_gain[0].clone(),
        b: full_offset[0],
        full_gain: Some(full_gain),
        full_offset: Some(full_offset),
        active_set: reduced,
    }
}

/// QP-backed oracle for the condensed MPC law.
pub struct QpOracle<'a> {
    pub qp: &'a CondensedQp,
}

impl<'a> QpOracle<'a> {
    pub fn new(qp: &'a CondensedQp) -> Self {
        QpOracle { qp }
    }
}

impl ControlOracle for QpOracle<'_> {
    fn dim(&self) -> usize {
        self.qp.n_x
    }

    fn resolve_warm(&self, x: &[f64], hint: &[usize]) -> Result<Option<ResolvedPoint>> {
        let xv = DVector::from_column_slice(x);
        let sol = solve_qp_warm(self.qp, &xv, hint)?;
        if sol.status == QpStatus::Infeasible {
            return Ok(None);
        }
        let law = extract_affine_law(self.qp, &sol);
        let u = self.qp.first_input(&sol.z, &xv);
        Ok(Some(ResolvedPoint {
            law,
            u,
            on_boundary: sol.degenerate || sol.weakly_active,
            active_set: sol.active_set,
        }))
    }
}

/// Explicit piecewise-affine oracle over box pieces; used for hand-built
/// one-dimensional fixtures and synthetic cases.
pub struct PwaOracle {
    pub pieces: Vec<(AffineLaw, Hyperbox)>,
}

impl PwaOracle {
    /// Convenience constructor for a 1-D function given `(a, b, lo, hi)` rows.
    pub fn from_intervals(rows: &[(f64, f64, f64, f64)]) -> Self {
        let pieces = rows
            .iter()
            .map(|&(a, b, lo, hi)| {
                (AffineLaw::new(vec![a], b), Hyperbox { lo: vec![lo], hi: vec![hi] })
            })
            .collect();
        PwaOracle { pieces }
    }
}

impl ControlOracle for PwaOracle {
    fn dim(&self) -> usize {
        self.pieces[0].1.dim()
    }

    fn resolve_warm(&self, x: &[f64], _hint: &[usize]) -> Result<Option<ResolvedPoint>> {
        for (law, region) in &self.pieces {
            if region.contains(x) {
                return Ok(Some(ResolvedPoint {
                    law: law.clone(),
                    u: law.eval(x),
                    on_boundary: false,
                    active_set: Vec::new(),
                }));
            }
        }
        Ok(None)
    }
}

/// Point skipped by the sampler, with the reason.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub x: Vec<f64>,
    pub reason: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SampleStats {
    /// Points that needed at least one perturbation (either pass).
    pub perturbed: usize,
    pub skipped: Vec<SkippedPoint>,
    pub infeasible: usize,
    /// Infeasible trajectory initial states that were redrawn.
    pub resampled: usize,
}

fn perturb_to_interior(
    oracle: &dyn ControlOracle,
    ds: &SampleDataset,
    x0: &[f64],
    delta: f64,
    keep_in: &Hyperbox,
    rng: &mut RngStream,
) -> Option<(Vec<f64>, ResolvedPoint)> {
    for _ in 0..PERTURB_RETRIES {
        let dir = rng.unit_vector(x0.len());
        let mut x: Vec<f64> = x0.iter().zip(&dir).map(|(v, d)| v + delta * d).collect();
        keep_in.clamp(&mut x);
        if let Ok(Some(r)) = oracle.resolve(&x) {
            if !r.on_boundary && ds.uo_interior(&x, r.u, Some(&r.law)) {
                return Some((x, r));
            }
        }
    }
    None
}

/// Store one resolved point, perturbing first if it sits on a boundary.
/// Returns true if a perturbation was needed.
fn admit_point(
    oracle: &dyn ControlOracle,
    ds: &mut SampleDataset,
    x: Vec<f64>,
    resolved: ResolvedPoint,
    delta: f64,
    keep_in: &Hyperbox,
    rng: &mut RngStream,
    source: SampleSource,
    stats: &mut SampleStats,
) {
    let clean = !resolved.on_boundary && ds.uo_interior(&x, resolved.u, Some(&resolved.law));
    let (x, resolved, perturbed) = if clean {
        (x, resolved, false)
    } else {
        stats.perturbed += 1;
        match perturb_to_interior(oracle, ds, &x, delta, keep_in, rng) {
            Some((px, pr)) => (px, pr, true),
            None => {
                stats.skipped.push(SkippedPoint {
                    x,
                    reason: format!("perturbation failed after {PERTURB_RETRIES} retries"),
                });
                return;
            }
        }
    };
    let law = ds.dedup_law(resolved.law);
    let source = if perturbed { SampleSource::Perturbed } else { source };
    ds.points.push(SamplePoint { x, law, u: resolved.u, source });
}

/// Re-check all stored points against the final pool and re-perturb any that
/// a late literal has tied.
fn recheck_pass(
    oracle: &dyn ControlOracle,
    ds: &mut SampleDataset,
    delta: f64,
    keep_in: &Hyperbox,
    rng: &mut RngStream,
    stats: &mut SampleStats,
) {
    for i in 0..ds.points.len() {
        let (x, u) = (ds.points[i].x.clone(), ds.points[i].u);
        if ds.uo_interior(&x, u, None) {
            continue;
        }
        stats.perturbed += 1;
        if let Some((px, pr)) = perturb_to_interior(oracle, ds, &x, delta, keep_in, rng) {
            let law = ds.dedup_law(pr.law);
            ds.points[i] = SamplePoint { x: px, law, u: pr.u, source: SampleSource::Perturbed };
        } else {
            stats.skipped.push(SkippedPoint {
                x,
                reason: "re-check perturbation failed".into(),
            });
        }
    }
}

/// Uniform-grid sampling (Algorithm 1 shape): solve each grid point, extract
/// and deduplicate laws, perturb boundary points into UO interiors.
pub fn sample_grid(
    oracle: &dyn ControlOracle,
    grid: &Hyperbox,
    counts: &[usize],
    seed: u64,
) -> Result<(SampleDataset, SampleStats)> {
    let nx = oracle.dim();
    if counts.len() != nx || grid.dim() != nx {
        return Err(Error::DimensionMismatch("grid counts/domain".into()));
    }
    if counts.iter().any(|&c| c < 2) {
        return Err(Error::Config("need at least 2 grid points per dimension".into()));
    }
    let steps: Vec<f64> = (0..nx)
        .map(|d| (grid.hi[d] - grid.lo[d]) / (counts[d] - 1) as f64)
        .collect();
    let delta = PERTURB_SCALE * steps.iter().copied().fold(f64::INFINITY, f64::min);

    let total: usize = counts.iter().product();
    let coords = |linear: usize| -> Vec<f64> {
        // last dimension fastest
        let mut rem = linear;
        let mut idx = vec![0usize; nx];
        for d in (0..nx).rev() {
            idx[d] = rem % counts[d];
            rem /= counts[d];
        }
        (0..nx).map(|d| grid.lo[d] + steps[d] * idx[d] as f64).collect()
    };

    // parallel solve in slabs; each slab warm-starts along its own run
    let slab = counts[nx - 1].max(1);
    let raw: Vec<Result<Option<ResolvedPoint>>> = (0..total.div_ceil(slab))
        .into_par_iter()
        .flat_map_iter(|s| {
            let start = s * slab;
            let end = (start + slab).min(total);
            let mut hint: Vec<usize> = Vec::new();
            let mut out = Vec::with_capacity(end - start);
            for linear in start..end {
                let x = coords(linear);
                let r = oracle.resolve_warm(&x, &hint);
                if let Ok(Some(rp)) = &r {
                    hint = rp.active_set.clone();
                }
                out.push(r);
            }
            out
        })
        .collect();

    let mut ds = SampleDataset::new(grid.clone());
    let mut stats = SampleStats::default();
    let mut rng = RngStream::new(seed, 0);
    for (linear, r) in raw.into_iter().enumerate() {
        match r? {
            None => stats.infeasible += 1,
            Some(res) => {
                admit_point(oracle, &mut ds, coords(linear), res, delta, grid, &mut rng, SampleSource::Grid, &mut stats);
            }
        }
    }
    let mut rng2 = RngStream::new(seed, 1);
    recheck_pass(oracle, &mut ds, delta, grid, &mut rng2, &mut stats);
    Ok((ds, stats))
}

/// Closed-loop trajectory sampling: random feasible initial states rolled
/// forward under the optimal control; every visited state becomes a sample.
pub fn sample_trajectories(
    problem: &MpcProblem,
    qp: &CondensedQp,
    domain: &Hyperbox,
    n_init: usize,
    steps: usize,
    seed: u64,
) -> Result<(SampleDataset, SampleStats)> {
    let oracle = QpOracle::new(qp);
    let nx = oracle.dim();
    if domain.dim() != nx {
        return Err(Error::DimensionMismatch("trajectory domain".into()));
    }
    if qp.n_u != 1 {
        return Err(Error::Config("trajectory sampling assumes a scalar input".into()));
    }
    let delta = PERTURB_SCALE * domain.min_extent() / 10.0;

    // resolve trajectories in parallel, merge in trajectory order
    struct RawStep {
        x: Vec<f64>,
        resolved: ResolvedPoint,
    }
    let trajectories: Vec<Result<(Vec<RawStep>, usize)>> = (0..n_init)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::new(seed, 100 + t as u64);
            let mut resampled = 0usize;
            let mut x = domain.sample(&mut rng);
            let mut first = loop {
                match oracle.resolve(&x)? {
                    Some(r) => break r,
                    None => {
                        resampled += 1;
                        if resampled > 10_000 {
                            return Err(Error::InfeasiblePoint(
                                "could not draw a feasible initial state".into(),
                            ));
                        }
                        x = domain.sample(&mut rng);
                    }
                }
            };
            let mut out = Vec::with_capacity(steps + 1);
            for _ in 0..=steps {
                // roll with the exact optimal input of the unperturbed state
                let u = first.u;
                out.push(RawStep { x: x.clone(), resolved: first.clone() });
                let xv = DVector::from_column_slice(&x);
                let uv = DVector::from_element(1, u);
                let next = problem.step(&xv, &uv);
                x = next.iter().copied().collect();
                match oracle.resolve_warm(&x, &out.last().unwrap().resolved.active_set)? {
                    Some(r) => first = r,
                    None => break,
                }
            }
            Ok((out, resampled))
        })
        .collect();

    let mut ds = SampleDataset::new(domain.clone());
    let mut stats = SampleStats::default();
    let mut rng = RngStream::new(seed, 1);
    for tr in trajectories {
        let (steps_vec, resampled) = tr?;
        stats.resampled += resampled;
        for step in steps_vec {
            admit_point(
                &oracle,
                &mut ds,
                step.x,
                step.resolved,
                delta,
                domain,
                &mut rng,
                SampleSource::Trajectory,
                &mut stats,
            );
        }
    }
    let mut rng2 = RngStream::new(seed, 2);
    recheck_pass(&oracle, &mut ds, delta, domain, &mut rng2, &mut stats);
    Ok((ds, stats))
}
