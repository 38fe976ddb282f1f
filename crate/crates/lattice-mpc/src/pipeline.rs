//! End-to-end construction pipeline, closed-loop simulation, and the
//! evaluation micro-benchmark.
//!
//! Stage order: sample, re-sample until the pairwise conditions hold, build
//! both lattice forms, simplify, LP-scan the term pairs (repairing from
//! negative witnesses and rebuilding, a bounded number of rounds), validate
//! statistically, and check the sandwich bounds against the QP.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{build_lattice, simplify, storage_stats, LatticeFile, LatticeForm, LatticeKind, StorageStats};
use crate::model::{condense, CondensedQp, CondensedQpFile, MpcProblem, ProblemSpec};
use crate::refine::{refine_until_valid, repair_from_witness, RefinementReport};
use crate::rng::CounterRng;
use crate::sampler::{
    sample_grid, sample_trajectories, ControlOracle, Hyperbox, QpOracle, SampleDataset,
    SampleStats,
};
use crate::verify::{hoeffding_validate, lp_scan, sandwich_check, VerificationReport};

const REPAIR_ROUNDS: usize = 10;

/// Sampling strategy for stage 1.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingSpec {
    Grid {
        counts: Vec<usize>,
        /// Sampling box; defaults to the problem domain.
        #[serde(default)]
        boxed: Option<Hyperbox>,
    },
    Trajectories {
        n_init: usize,
        steps: usize,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub problem: PathBuf,
    pub sampling: SamplingSpec,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_nv")]
    pub n_v: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_sandwich")]
    pub sandwich_points: usize,
    pub output_dir: PathBuf,
}

fn default_seed() -> u64 {
    1
}
fn default_nv() -> usize {
    100_000
}
fn default_epsilon() -> f64 {
    5e-3
}
fn default_sandwich() -> usize {
    10_000
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        if cfg.epsilon <= 0.0 || cfg.n_v == 0 {
            return Err(Error::Config("n_v and epsilon must be positive".into()));
        }
        match &cfg.sampling {
            SamplingSpec::Grid { counts, .. } if counts.is_empty() => {
                Err(Error::Config("grid sampling needs counts".into()))
            }
            SamplingSpec::Trajectories { n_init: 0, .. } => {
                Err(Error::Config("trajectory sampling needs n_init >= 1".into()))
            }
            _ => Ok(cfg),
        }
    }
}

/// Per-stage wall times, informational only.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StageTimes {
    pub condense_s: f64,
    pub sample_s: f64,
    pub refine_s: f64,
    pub build_s: f64,
    pub scan_s: f64,
    pub validate_s: f64,
    pub sandwich_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub n_literals: usize,
    pub n_points: usize,
    pub n_terms_disjunctive: usize,
    pub n_terms_conjunctive: usize,
    pub storage_disjunctive: StorageStats,
    pub storage_conjunctive: StorageStats,
    pub refinement: RefinementReport,
    pub repair_rounds: usize,
    pub i_bar: f64,
    pub confidence: f64,
    pub sample_stats: SampleStats,
    pub times: StageTimes,
    pub verification_clean: bool,
}

pub struct PipelineArtifacts {
    pub problem: MpcProblem,
    pub qp: CondensedQp,
    pub domain: Hyperbox,
    pub dataset: SampleDataset,
    pub disjunctive: LatticeForm,
    pub conjunctive: LatticeForm,
    pub verification: VerificationReport,
    pub summary: PipelineSummary,
}

/// Run every stage and, when `output_dir` is set, write the artifacts.
pub fn run_pipeline(cfg: &PipelineConfig, write_artifacts: bool) -> Result<PipelineArtifacts> {
    let text = std::fs::read_to_string(&cfg.problem)?;
    let spec = ProblemSpec::from_json(&text)?;
    let (problem, domain) = spec.build()?;

    let mut times = StageTimes::default();
    let t = Instant::now();
    let qp = condense(&problem)?;
    times.condense_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (mut dataset, sample_stats) = match &cfg.sampling {
        SamplingSpec::Grid { counts, boxed } => {
            let grid = boxed.clone().unwrap_or_else(|| domain.clone());
            let oracle = QpOracle::new(&qp);
            sample_grid(&oracle, &grid, counts, cfg.seed)?
        }
        SamplingSpec::Trajectories { n_init, steps } => {
            sample_trajectories(&problem, &qp, &domain, *n_init, *steps, cfg.seed)?
        }
    };
    // verification stages run over the problem domain even when the grid box
    // differs
    dataset.domain = domain.clone();
    times.sample_s = t.elapsed().as_secs_f64();

    let oracle = QpOracle::new(&qp);
    let t = Instant::now();
    let refinement = refine_until_valid(&mut dataset, &oracle, cfg.seed)?;
    times.refine_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut disj = simplify(&build_lattice(&dataset, LatticeKind::Disjunctive)?, &domain);
    let mut conj = simplify(&build_lattice(&dataset, LatticeKind::Conjunctive)?, &domain);
    times.build_s = t.elapsed().as_secs_f64();

    // LP scan with witness-driven repair
    let t = Instant::now();
    let mut repair_rounds = 0usize;
    let mut scan = lp_scan(&conj, &disj, &domain)?;
    while !scan.witnesses.is_empty() && repair_rounds < REPAIR_ROUNDS {
        repair_rounds += 1;
        for w in &scan.witnesses {
            // witnesses carry the anchor sample indices of their terms
            if let (Some(d_anchor), Some(c_anchor)) = (w.disj_anchor, w.conj_anchor) {
                match repair_from_witness(&mut dataset, &oracle, &w.x, d_anchor, c_anchor, cfg.seed) {
                    Ok(_) => {}
                    Err(Error::InfeasiblePoint(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
        }
        refine_until_valid(&mut dataset, &oracle, cfg.seed)?;
        disj = simplify(&build_lattice(&dataset, LatticeKind::Disjunctive)?, &domain);
        conj = simplify(&build_lattice(&dataset, LatticeKind::Conjunctive)?, &domain);
        scan = lp_scan(&conj, &disj, &domain)?;
    }
    times.scan_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let validation = hoeffding_validate(&disj, &conj, &domain, cfg.n_v, cfg.epsilon, cfg.seed)?;
    times.validate_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let sandwich = sandwich_check(&disj, &conj, &oracle, &domain, cfg.sandwich_points, cfg.seed)?;
    times.sandwich_s = t.elapsed().as_secs_f64();

    let verification = VerificationReport {
        lp_pairs_checked: scan.pairs_checked,
        lp_min_objective: scan.min_objective,
        lp_witnesses: scan.witnesses.clone(),
        sandwich_max_lower_violation: sandwich.max_lower_violation,
        sandwich_max_upper_violation: sandwich.max_upper_violation,
        epsilon_hat: sandwich.epsilon_hat,
        validation: validation.clone(),
    };
    let verification_clean = scan.witnesses.is_empty()
        && validation.n_mismatch == 0
        && sandwich.max_lower_violation <= 1e-7
        && sandwich.max_upper_violation <= 1e-7;

    let summary = PipelineSummary {
        n_literals: dataset.literals.len(),
        n_points: dataset.points.len(),
        n_terms_disjunctive: disj.n_terms(),
        n_terms_conjunctive: conj.n_terms(),
        storage_disjunctive: storage_stats(&disj),
        storage_conjunctive: storage_stats(&conj),
        refinement,
        repair_rounds,
        i_bar: validation.i_bar,
        confidence: validation.confidence,
        sample_stats,
        times,
        verification_clean,
    };

    let artifacts = PipelineArtifacts {
        problem,
        qp,
        domain,
        dataset,
        disjunctive: disj,
        conjunctive: conj,
        verification,
        summary,
    };
    if write_artifacts {
        write_all(cfg, &artifacts)?;
    }
    Ok(artifacts)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text)?;
    Ok(())
}

fn write_all(cfg: &PipelineConfig, art: &PipelineArtifacts) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let dir = &cfg.output_dir;
    write_json(&dir.join("condensed.json"), &CondensedQpFile::from_qp(&art.qp))?;
    write_json(&dir.join("dataset.json"), &art.dataset)?;
    write_json(&dir.join("lattice_d.json"), &LatticeFile::from_form(&art.disjunctive))?;
    write_json(&dir.join("lattice_c.json"), &LatticeFile::from_form(&art.conjunctive))?;
    write_json(&dir.join("verification.json"), &art.verification)?;
    write_json(&dir.join("summary.json"), &art.summary)?;
    Ok(())
}

/// Render the summary as a fixed-width table.
pub fn summary_table(s: &PipelineSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<28}{:>12}\n", "literals (M)", s.n_literals));
    out.push_str(&format!("{:<28}{:>12}\n", "sample points", s.n_points));
    out.push_str(&format!("{:<28}{:>12}\n", "terms (disjunctive)", s.n_terms_disjunctive));
    out.push_str(&format!("{:<28}{:>12}\n", "terms (conjunctive)", s.n_terms_conjunctive));
    out.push_str(&format!(
        "{:<28}{:>12}\n",
        "params d (exact/worst)",
        format!("{}/{}", s.storage_disjunctive.total_params, s.storage_disjunctive.worst_case_params)
    ));
    out.push_str(&format!(
        "{:<28}{:>12}\n",
        "params c (exact/worst)",
        format!("{}/{}", s.storage_conjunctive.total_params, s.storage_conjunctive.worst_case_params)
    ));
    out.push_str(&format!("{:<28}{:>12}\n", "refinement rounds", s.refinement.rounds));
    out.push_str(&format!("{:<28}{:>12}\n", "repair rounds", s.repair_rounds));
    out.push_str(&format!("{:<28}{:>12.6}\n", "I-bar", s.i_bar));
    out.push_str(&format!("{:<28}{:>12.6}\n", "confidence", s.confidence));
    out.push_str(&format!(
        "{:<28}{:>12}\n",
        "verification",
        if s.verification_clean { "clean" } else { "FAILED" }
    ));
    let t = &s.times;
    out.push_str(&format!(
        "stage seconds: condense {:.2}  sample {:.2}  refine {:.2}  build {:.2}  scan {:.2}  validate {:.2}  sandwich {:.2}\n",
        t.condense_s, t.sample_s, t.refine_s, t.build_s, t.scan_s, t.validate_s, t.sandwich_s
    ));
    out
}

// ---------------------------------------------------------------------------
// closed-loop simulation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerTag {
    LatticeD,
    LatticeC,
    OnlineQp,
}

pub enum Controller<'a> {
    Lattice(&'a LatticeForm),
    OnlineQp(&'a CondensedQp),
}

impl Controller<'_> {
    fn tag(&self) -> ControllerTag {
        match self {
            Controller::Lattice(f) if f.kind == LatticeKind::Disjunctive => ControllerTag::LatticeD,
            Controller::Lattice(_) => ControllerTag::LatticeC,
            Controller::OnlineQp(_) => ControllerTag::OnlineQp,
        }
    }

    /// Control value at a state; `None` when the QP is infeasible there.
    pub fn control(&self, x: &[f64]) -> Result<Option<f64>> {
        match self {
            Controller::Lattice(f) => Ok(Some(f.evaluate(x))),
            Controller::OnlineQp(qp) => {
                let oracle = QpOracle::new(qp);
                Ok(oracle.resolve(x)?.map(|r| r.u))
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<f64>,
    pub costs: Vec<f64>,
    pub controller: ControllerTag,
    /// True when an infeasible state cut the roll short.
    pub truncated: bool,
}

impl Trajectory {
    /// CSV with header `k, x_1..x_n, u, cost`.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map(|s| s.len()).unwrap_or(0);
        let mut out = String::from("k");
        for i in 1..=n {
            out.push_str(&format!(",x_{i}"));
        }
        out.push_str(",u,cost\n");
        for (k, ((x, u), c)) in self.states.iter().zip(&self.inputs).zip(&self.costs).enumerate() {
            out.push_str(&k.to_string());
            for v in x {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{u},{c}\n"));
        }
        out
    }
}

/// Roll the closed loop `x+ = Ax + Bu(x)` for `steps` steps; the controller
/// output is applied as-is.
pub fn simulate(
    problem: &MpcProblem,
    controller: &Controller,
    x0: &[f64],
    steps: usize,
) -> Result<Trajectory> {
    let mut x = DVector::from_column_slice(x0);
    let mut traj = Trajectory {
        states: vec![x0.to_vec()],
        inputs: Vec::new(),
        costs: Vec::new(),
        controller: controller.tag(),
        truncated: false,
    };
    for _ in 0..steps {
        let xs: Vec<f64> = x.iter().copied().collect();
        let u = match controller.control(&xs)? {
            Some(u) => u,
            None => {
                traj.truncated = true;
                break;
            }
        };
        let uv = DVector::from_element(1, u);
        traj.costs.push(problem.stage_cost(&x, &uv));
        traj.inputs.push(u);
        x = problem.step(&x, &uv);
        traj.states.push(x.iter().copied().collect());
    }
    Ok(traj)
}

// ---------------------------------------------------------------------------
// evaluation benchmark
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchStats {
    pub n_evals: usize,
    pub lattice_mean_ns: f64,
    pub lattice_median_ns: f64,
    pub lattice_p99_ns: f64,
    pub qp_mean_ns: f64,
    pub speedup: f64,
}

/// Time lattice evaluation against online QP solves on the same random
/// points. Evaluations are timed in batches; per-call figures divide by the
/// batch size.
pub fn bench_eval(
    form: &LatticeForm,
    qp: &CondensedQp,
    domain: &Hyperbox,
    n_evals: usize,
    seed: u64,
) -> Result<BenchStats> {
    let nx = domain.dim();
    let rng = CounterRng::new(seed, 0xBE7C);
    let points: Vec<Vec<f64>> = (0..n_evals)
        .map(|i| {
            (0..nx)
                .map(|d| rng.uniform_at((i * nx + d) as u64, domain.lo[d], domain.hi[d]))
                .collect()
        })
        .collect();

    const BATCH: usize = 64;
    let mut batch_ns: Vec<f64> = Vec::new();
    let mut sink = 0.0f64;
    for chunk in points.chunks(BATCH) {
        let t = Instant::now();
        for x in chunk {
            sink += form.evaluate(x);
        }
        batch_ns.push(t.elapsed().as_nanos() as f64 / chunk.len() as f64);
    }
    std::hint::black_box(sink);
    batch_ns.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lattice_mean_ns = batch_ns.iter().sum::<f64>() / batch_ns.len() as f64;
    let lattice_median_ns = batch_ns[batch_ns.len() / 2];
    let lattice_p99_ns = batch_ns[((batch_ns.len() - 1) as f64 * 0.99) as usize];

    let oracle = QpOracle::new(qp);
    let t = Instant::now();
    let mut solved = 0usize;
    for x in &points {
        if oracle.resolve(x)?.is_some() {
            solved += 1;
        }
    }
    let qp_mean_ns = t.elapsed().as_nanos() as f64 / points.len().max(1) as f64;
    let _ = solved;

    Ok(BenchStats {
        n_evals,
        lattice_mean_ns,
        lattice_median_ns,
        lattice_p99_ns,
        qp_mean_ns,
        speedup: qp_mean_ns / lattice_mean_ns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeTerm;
    use crate::sampler::AffineLaw;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn double_integrator() -> MpcProblem {
        let ts = 0.3;
        let a = DMatrix::from_row_slice(2, 2, &[1.0, ts, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[ts * ts, ts]);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let r = DMatrix::from_element(1, 1, 1.0);
        let p = crate::model::solve_dare(&a, &b, &q, &r).unwrap();
        MpcProblem {
            a,
            b,
            q,
            r,
            p,
            horizon: 2,
            x_min: DVector::from_column_slice(&[f64::NEG_INFINITY, -0.8]),
            x_max: DVector::from_column_slice(&[f64::INFINITY, 0.8]),
            u_min: DVector::from_element(1, -1.0),
            u_max: DVector::from_element(1, 1.0),
            extra_rows: vec![],
        }
    }

    #[test]
    fn simulate_from_origin_is_identically_zero() {
        let problem = double_integrator();
        let qp = condense(&problem).unwrap();
        let controller = Controller::OnlineQp(&qp);
        let traj = simulate(&problem, &controller, &[0.0, 0.0], 10).unwrap();
        assert!(!traj.truncated);
        for x in &traj.states {
            assert!(x.iter().all(|v| v.abs() <= 1e-12));
        }
        for u in &traj.inputs {
            assert!(u.abs() <= 1e-12);
        }
    }

    #[test]
    fn trajectory_dynamics_residual_is_exact() {
        let problem = double_integrator();
        let qp = condense(&problem).unwrap();
        let controller = Controller::OnlineQp(&qp);
        let traj = simulate(&problem, &controller, &[-0.9, 0.4], 25).unwrap();
        for k in 0..traj.inputs.len() {
            let x = DVector::from_column_slice(&traj.states[k]);
            let u = DVector::from_element(1, traj.inputs[k]);
            let next = problem.step(&x, &u);
            for (i, v) in next.iter().enumerate() {
                assert_abs_diff_eq!(traj.states[k + 1][i], *v, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn csv_has_expected_header() {
        let problem = double_integrator();
        let qp = condense(&problem).unwrap();
        let traj = simulate(&problem, &Controller::OnlineQp(&qp), &[0.1, 0.1], 3).unwrap();
        let csv = traj.to_csv();
        assert!(csv.starts_with("k,x_1,x_2,u,cost\n"));
        assert_eq!(csv.lines().count(), 1 + traj.inputs.len());
    }

    #[test]
    fn bench_reports_consistent_ratio() {
        let problem = double_integrator();
        let qp = condense(&problem).unwrap();
        let form = LatticeForm {
            kind: LatticeKind::Disjunctive,
            literals: vec![AffineLaw::new(vec![1.0, 1.0], 0.0)],
            terms: vec![LatticeTerm { literals: vec![0], anchor: None }],
        };
        let domain = Hyperbox::from_slices(&[-1.0, -0.8], &[1.0, 0.8]).unwrap();
        let stats = bench_eval(&form, &qp, &domain, 2000, 1).unwrap();
        assert!(stats.lattice_mean_ns > 0.0);
        assert!(stats.qp_mean_ns > 0.0);
        assert_abs_diff_eq!(stats.speedup, stats.qp_mean_ns / stats.lattice_mean_ns, epsilon = 1e-9);
    }
}
