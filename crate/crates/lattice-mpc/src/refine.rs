//! Pairwise sample-condition checking and line-segment re-sampling.
//!
//! The lattice construction interpolates the optimal law at every sample
//! point only if, for each ordered pair of samples `(i, k)`, the term built
//! at `i` under-estimates at `x_k` (disjunctive) and over-estimates
//! (conjunctive). Violated pairs are repaired by recursively bisecting the
//! segment between the two points: whenever two consecutive segment samples
//! carry different laws whose difference has the same sign at both ends, a
//! piece in between is missing and the midpoint is sampled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::sampler::{tie_tol, ControlOracle, SampleDataset, SamplePoint, SampleSource};

/// Gap above this counts as a violated pair.
pub const TOL_VIOLATION: f64 = 1e-7;
/// Outer refinement rounds before giving up.
pub const MAX_ROUNDS: usize = 50;
/// Bisection stops once a sub-segment's parameter width drops below 2^-40.
const MIN_GAP: f64 = 1.0 / (1u64 << 40) as f64;
const SWEEP_CAP: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Disjunctive,
    Conjunctive,
}

/// Pair `(i, k)` whose term condition fails, with the signed gap.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub kind: ViolationKind,
    /// Sample index owning the term.
    pub owner: usize,
    /// Sample index at which the condition fails.
    pub point: usize,
    pub gap: f64,
}

/// Check both inequalities of the pairwise sample condition for every
/// ordered pair; distinct term sets are evaluated once and expanded back to
/// all owners sharing them.
pub fn check_assumption(ds: &SampleDataset) -> Vec<ViolationRecord> {
    let n = ds.points.len();
    let m = ds.literals.len();
    if n == 0 || m == 0 {
        return Vec::new();
    }
    // values[j][k] = u_j(x_k)
    let mut values = vec![vec![0.0f64; n]; m];
    for (k, p) in ds.points.iter().enumerate() {
        for (j, lit) in ds.literals.iter().enumerate() {
            values[j][k] = lit.eval(&p.x);
        }
    }
    let u_own: Vec<f64> = ds.points.iter().map(|p| p.u).collect();

    use std::collections::HashMap;
    let mut ge_sets: HashMap<Vec<u32>, Vec<usize>> = HashMap::new();
    let mut le_sets: HashMap<Vec<u32>, Vec<usize>> = HashMap::new();
    for (i, p) in ds.points.iter().enumerate() {
        let tol = tie_tol(p.u);
        let mut ge: Vec<u32> = Vec::new();
        let mut le: Vec<u32> = Vec::new();
        for j in 0..m {
            let v = values[j][i];
            if j == p.law || v > p.u + tol {
                ge.push(j as u32);
            }
            if j == p.law || v < p.u - tol {
                le.push(j as u32);
            }
        }
        ge_sets.entry(ge).or_default().push(i);
        le_sets.entry(le).or_default().push(i);
    }

    let mut out = Vec::new();
    let mut ge_items: Vec<(&Vec<u32>, &Vec<usize>)> = ge_sets.iter().collect();
    ge_items.sort_by_key(|(_, owners)| owners[0]);
    for (set, owners) in ge_items {
        for k in 0..n {
            let min = set
                .iter()
                .map(|&j| values[j as usize][k])
                .fold(f64::INFINITY, f64::min);
            let gap = min - u_own[k];
            if gap > TOL_VIOLATION {
                for &i in owners {
                    if i != k {
                        out.push(ViolationRecord {
                            kind: ViolationKind::Disjunctive,
                            owner: i,
                            point: k,
                            gap,
                        });
                    }
                }
            }
        }
    }
    let mut le_items: Vec<(&Vec<u32>, &Vec<usize>)> = le_sets.iter().collect();
    le_items.sort_by_key(|(_, owners)| owners[0]);
    for (set, owners) in le_items {
        for k in 0..n {
            let max = set
                .iter()
                .map(|&j| values[j as usize][k])
                .fold(f64::NEG_INFINITY, f64::max);
            let gap = u_own[k] - max;
            if gap > TOL_VIOLATION {
                for &i in owners {
                    if i != k {
                        out.push(ViolationRecord {
                            kind: ViolationKind::Conjunctive,
                            owner: i,
                            point: k,
                            gap,
                        });
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| (a.owner, a.point).cmp(&(b.owner, b.point)));
    out
}

fn sign_with_tol(v: f64, tol: f64) -> i8 {
    if v.abs() <= tol {
        0
    } else if v > 0.0 {
        1
    } else {
        -1
    }
}

/// Recursively bisect the segment between two existing sample points and add
/// every newly discovered sample to the dataset. Returns the indices of the
/// inserted points.
pub fn refine_segment(
    ds: &mut SampleDataset,
    oracle: &dyn ControlOracle,
    from: usize,
    to: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    let xa = ds.points[from].x.clone();
    let xb = ds.points[to].x.clone();
    let dir: Vec<f64> = xb.iter().zip(&xa).map(|(b, a)| b - a).collect();
    let mut segment: Vec<(f64, usize)> = vec![(0.0, from), (1.0, to)];
    let mut inserted = Vec::new();

    for _ in 0..SWEEP_CAP {
        let mut any = false;
        let mut k = 0;
        while k + 1 < segment.len() {
            let (t0, i0) = segment[k];
            let (t1, i1) = segment[k + 1];
            let (l0, l1) = (ds.points[i0].law, ds.points[i1].law);
            if l0 == l1 || (t1 - t0) < MIN_GAP {
                k += 1;
                continue;
            }
            let law0 = ds.literals[l0].clone();
            let law1 = ds.literals[l1].clone();
            let x0 = ds.points[i0].x.clone();
            let x1 = ds.points[i1].x.clone();
            let s0 = sign_with_tol(law0.eval(&x0) - law1.eval(&x0), tie_tol(ds.points[i0].u));
            let s1 = sign_with_tol(law0.eval(&x1) - law1.eval(&x1), tie_tol(ds.points[i1].u));
            // a zero sign means the two laws cross at a sampled point: the
            // pair already connects continuously, no piece is missing
            if s0 == 0 || s0 != s1 {
                k += 1;
                continue;
            }
            let mut tm = 0.5 * (t0 + t1);
            let at = |t: f64| -> Vec<f64> { xa.iter().zip(&dir).map(|(a, d)| a + t * d).collect() };
            let mut xm = at(tm);
            let mut resolved = match oracle.resolve(&xm)? {
                Some(r) => r,
                None => {
                    return Err(Error::SegmentAborted(format!(
                        "midpoint at t={tm} is infeasible"
                    )))
                }
            };
            // perturb along the segment until the midpoint is UO-interior;
            // staying on the segment keeps the bisection argument intact
            let mut tries = 0;
            while tries < 10
                && (resolved.on_boundary || !ds.uo_interior(&xm, resolved.u, Some(&resolved.law)))
            {
                let jitter = (t1 - t0) * 1e-3 * (rng.next_unit() - 0.5);
                let t_try = (tm + jitter).clamp(t0 + MIN_GAP, t1 - MIN_GAP);
                let x_try = at(t_try);
                if let Some(r) = oracle.resolve(&x_try)? {
                    tm = t_try;
                    xm = x_try;
                    resolved = r;
                }
                tries += 1;
            }
            if ds.point_exists(&xm) {
                k += 1;
                continue;
            }
            let law = ds.dedup_law(resolved.law);
            ds.points.push(SamplePoint {
                x: xm,
                law,
                u: resolved.u,
                source: SampleSource::Resampled,
            });
            let idx = ds.points.len() - 1;
            inserted.push(idx);
            segment.insert(k + 1, (tm, idx));
            any = true;
            k += 1;
        }
        if !any {
            break;
        }
    }
    Ok(inserted)
}

/// Outcome of the refinement loop.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefinementReport {
    pub rounds: usize,
    pub points_added: usize,
    pub literals_added: usize,
}

/// Re-check and re-sample until the pairwise conditions hold everywhere or
/// the round cap is hit.
pub fn refine_until_valid(
    ds: &mut SampleDataset,
    oracle: &dyn ControlOracle,
    seed: u64,
) -> Result<RefinementReport> {
    let start_points = ds.points.len();
    let start_lits = ds.literals.len();
    let mut rng = RngStream::new(seed, 7);
    for round in 0..MAX_ROUNDS {
        let violations = check_assumption(ds);
        if violations.is_empty() {
            return Ok(RefinementReport {
                rounds: round,
                points_added: ds.points.len() - start_points,
                literals_added: ds.literals.len() - start_lits,
            });
        }
        // one segment per unordered pair per round
        let mut seen = std::collections::HashSet::new();
        for v in &violations {
            let key = (v.owner.min(v.point), v.owner.max(v.point));
            if seen.insert(key) {
                refine_segment(ds, oracle, v.owner, v.point, &mut rng)?;
            }
        }
    }
    let remaining = check_assumption(ds);
    if remaining.is_empty() {
        return Ok(RefinementReport {
            rounds: MAX_ROUNDS,
            points_added: ds.points.len() - start_points,
            literals_added: ds.literals.len() - start_lits,
        });
    }
    Err(Error::RefinementStalled { remaining: remaining.len() })
}

/// Repair driven by a negative verification witness `x_gamma` for the term
/// pair (disjunctive owner, conjunctive owner): test which side the witness
/// violates and re-sample toward it. The witness itself joins the dataset.
pub fn repair_from_witness(
    ds: &mut SampleDataset,
    oracle: &dyn ControlOracle,
    x_gamma: &[f64],
    disj_owner: usize,
    conj_owner: usize,
    seed: u64,
) -> Result<usize> {
    let resolved = match oracle.resolve(x_gamma)? {
        Some(r) => r,
        None => {
            return Err(Error::InfeasiblePoint(
                "verification witness is outside the feasible domain".into(),
            ))
        }
    };
    let u_star = resolved.u;

    // J-sets of the two owners against the current pool
    let owner_sets = |idx: usize, ge: bool| -> Vec<usize> {
        let p = &ds.points[idx];
        let tol = tie_tol(p.u);
        (0..ds.literals.len())
            .filter(|&j| {
                if j == p.law {
                    return true;
                }
                let v = ds.literals[j].eval(&p.x);
                if ge {
                    v > p.u + tol
                } else {
                    v < p.u - tol
                }
            })
            .collect()
    };
    let ge = owner_sets(disj_owner, true);
    let le = owner_sets(conj_owner, false);
    let min_ge = ge
        .iter()
        .map(|&j| ds.literals[j].eval(x_gamma))
        .fold(f64::INFINITY, f64::min);
    let max_le = le
        .iter()
        .map(|&j| ds.literals[j].eval(x_gamma))
        .fold(f64::NEG_INFINITY, f64::max);

    let disj_violated = min_ge > u_star + TOL_VIOLATION;
    let conj_violated = max_le < u_star - TOL_VIOLATION;
    if !disj_violated && !conj_violated {
        // witness already consistent; nothing to repair
        if max_le >= min_ge - TOL_VIOLATION {
            return Ok(0);
        }
        return Err(Error::RepairInconsistency(format!(
            "witness violates the pair condition (gap {:.3e}) but neither side test fires",
            min_ge - max_le
        )));
    }

    let mut rng = RngStream::new(seed, 13);
    // admit the witness as a sample point, perturbed into a UO interior
    let mut added = 0;
    let gamma_idx = if ds.point_exists(x_gamma) {
        ds.points
            .iter()
            .position(|p| {
                p.x.iter().zip(x_gamma).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) <= 1e-12
            })
            .unwrap()
    } else {
        let mut x = x_gamma.to_vec();
        let mut res = resolved.clone();
        let delta = 1e-4 * ds.domain.min_extent();
        let mut tries = 0;
        while tries < 10 && (res.on_boundary || !ds.uo_interior(&x, res.u, Some(&res.law))) {
            let dir = rng.unit_vector(x.len());
            let mut x_try: Vec<f64> =
                x_gamma.iter().zip(&dir).map(|(v, d)| v + delta * d).collect();
            ds.domain.clamp(&mut x_try);
            if let Ok(Some(r)) = oracle.resolve(&x_try) {
                x = x_try;
                res = r;
            }
            tries += 1;
        }
        let law = ds.dedup_law(res.law);
        ds.points.push(SamplePoint { x, law, u: res.u, source: SampleSource::Resampled });
        added += 1;
        ds.points.len() - 1
    };

    if disj_violated {
        added += refine_segment(ds, oracle, disj_owner, gamma_idx, &mut rng)?.len();
    }
    if conj_violated {
        added += refine_segment(ds, oracle, gamma_idx, conj_owner, &mut rng)?.len();
    }
    Ok(added)
}
