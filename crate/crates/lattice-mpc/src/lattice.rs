//! Lattice piecewise-affine forms: max-of-mins (disjunctive) and
//! min-of-maxes (conjunctive) over a shared pool of affine literals.
//!
//! Construction places one term per sample point. For the disjunctive form
//! the term's index set collects every literal whose value at the anchor is
//! at least the anchor's own value (the anchor's literal always included);
//! the conjunctive form is the order dual. Simplification applies the
//! distributive-lattice absorption rule at two granularities over the
//! domain box:
//!   - inside a term, a literal that pointwise dominates another member of
//!     the same term on the whole box never attains the inner min (dually,
//!     max) and is dropped; for affine literals on a box the dominance test
//!     is an exact corner evaluation;
//!   - across terms, a term whose index set strictly contains another's is
//!     absorbed by the outer max (dually, min).
//! Both reductions leave the evaluated function bit-identical on the box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::{tie_tol, AffineLaw, Hyperbox, SampleDataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeKind {
    Disjunctive,
    Conjunctive,
}

/// One term: a sorted set of literal indices plus the sample point it came from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatticeTerm {
    pub literals: Vec<u32>,
    /// Index of the originating sample point, when known.
    pub anchor: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatticeForm {
    pub kind: LatticeKind,
    pub literals: Vec<AffineLaw>,
    pub terms: Vec<LatticeTerm>,
}

impl LatticeForm {
    pub fn n_literals(&self) -> usize {
        self.literals.len()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    /// Evaluate the form; the inner scan short-circuits once a term can no
    /// longer beat the running outer value.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let vals: Vec<f64> = self.literals.iter().map(|l| l.eval(x)).collect();
        match self.kind {
            LatticeKind::Disjunctive => {
                let mut best = f64::NEG_INFINITY;
                for term in &self.terms {
                    let mut inner = f64::INFINITY;
                    for &j in &term.literals {
                        let v = vals[j as usize];
                        if v < inner {
                            inner = v;
                            if inner <= best {
                                break;
                            }
                        }
                    }
                    if inner > best {
                        best = inner;
                    }
                }
                best
            }
            LatticeKind::Conjunctive => {
                let mut best = f64::INFINITY;
                for term in &self.terms {
                    let mut inner = f64::NEG_INFINITY;
                    for &j in &term.literals {
                        let v = vals[j as usize];
                        if v > inner {
                            inner = v;
                            if inner >= best {
                                break;
                            }
                        }
                    }
                    if inner < best {
                        best = inner;
                    }
                }
                best
            }
        }
    }
}

/// Build the lattice form of the requested kind from a dataset, one term per
/// sample point with duplicate term sets collapsed immediately.
pub fn build_lattice(ds: &SampleDataset, kind: LatticeKind) -> Result<LatticeForm> {
    if ds.points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut terms: Vec<LatticeTerm> = Vec::new();
    let mut seen: std::collections::HashSet<Vec<u32>> = std::collections::HashSet::new();
    for (pi, p) in ds.points.iter().enumerate() {
        let vals = ds.law_values(&p.x);
        let tol = tie_tol(p.u);
        let mut set: Vec<u32> = Vec::new();
        for (j, &v) in vals.iter().enumerate() {
            let member = if j == p.law {
                true
            } else {
                match kind {
                    LatticeKind::Disjunctive => v > p.u + tol,
                    LatticeKind::Conjunctive => v < p.u - tol,
                }
            };
            if member {
                set.push(j as u32);
            }
        }
        if seen.insert(set.clone()) {
            terms.push(LatticeTerm { literals: set, anchor: Some(pi) });
        }
    }
    Ok(LatticeForm { kind, literals: ds.literals.clone(), terms })
}

/// `u_j >= u_k` everywhere on the box? Exact for affine functions: the
/// minimum of their difference is attained at a corner picked coordinatewise.
fn dominates_on(box_: &Hyperbox, j: &AffineLaw, k: &AffineLaw) -> bool {
    let mut min = j.b - k.b;
    for d in 0..box_.dim() {
        let c = j.a[d] - k.a[d];
        min += (c * box_.lo[d]).min(c * box_.hi[d]);
    }
    min >= 0.0
}

/// Simplify by rule R1 over the given domain box; see the module docs.
pub fn simplify(form: &LatticeForm, domain: &Hyperbox) -> LatticeForm {
    let lits = &form.literals;
    // pairwise dominance table: dom[j][k] = true iff u_j >= u_k on the box
    let m = lits.len();
    let mut dom = vec![false; m * m];
    for j in 0..m {
        for k in 0..m {
            if j != k {
                dom[j * m + k] = dominates_on(domain, &lits[j], &lits[k]);
            }
        }
    }
    // a literal never attaining the inner extremum is dropped; on mutual
    // dominance (equal on the box) the lower index wins
    let redundant = |j: u32, k: u32| -> bool {
        let (j, k) = (j as usize, k as usize);
        let (hi, lo) = match form.kind {
            LatticeKind::Disjunctive => (dom[j * m + k], dom[k * m + j]),
            LatticeKind::Conjunctive => (dom[k * m + j], dom[j * m + k]),
        };
        hi && (!lo || k < j)
    };

    let mut reduced: Vec<LatticeTerm> = Vec::new();
    let mut seen: std::collections::HashSet<Vec<u32>> = std::collections::HashSet::new();
    for term in &form.terms {
        let mut set = term.literals.clone();
        loop {
            let drop = set
                .iter()
                .position(|&j| set.iter().any(|&k| k != j && redundant(j, k)));
            match drop {
                Some(pos) => {
                    set.remove(pos);
                }
                None => break,
            }
        }
        if seen.insert(set.clone()) {
            reduced.push(LatticeTerm { literals: set, anchor: term.anchor });
        }
    }

    // superset absorption: min over a superset is pointwise <= (dually >=)
    let mut kept: Vec<LatticeTerm> = Vec::new();
    for (i, t) in reduced.iter().enumerate() {
        let absorbed = reduced
            .iter()
            .enumerate()
            .any(|(j, o)| j != i && is_strict_subset(&o.literals, &t.literals));
        if !absorbed {
            kept.push(t.clone());
        }
    }

    kept.sort_by(|a, b| {
        a.literals
            .len()
            .cmp(&b.literals.len())
            .then_with(|| a.literals.cmp(&b.literals))
    });
    LatticeForm { kind: form.kind, literals: form.literals.clone(), terms: kept }
}

fn is_strict_subset(a: &[u32], b: &[u32]) -> bool {
    a.len() < b.len() && a.iter().all(|x| b.binary_search(x).is_ok())
}

/// Storage accounting per the worst-case bound `(n_x+1)M` reals plus the
/// exact term-set integers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StorageStats {
    pub m: usize,
    pub n_terms: usize,
    pub reals: usize,
    /// Exact integer count: sum of term-set sizes.
    pub integers: usize,
    pub total_params: usize,
    /// Bound counting every term at full width `M`, the figure reported in
    /// complexity discussions.
    pub worst_case_params: usize,
}

pub fn storage_stats(form: &LatticeForm) -> StorageStats {
    let m = form.literals.len();
    let n_x = form.literals.first().map(|l| l.a.len()).unwrap_or(0);
    let reals = (n_x + 1) * m;
    let integers: usize = form.terms.iter().map(|t| t.literals.len()).sum();
    StorageStats {
        m,
        n_terms: form.terms.len(),
        reals,
        integers,
        total_params: reals + integers,
        worst_case_params: reals + m * form.terms.len(),
    }
}

// ---------------------------------------------------------------------------
// serialization per the artifact schema: indices are 0-based in files
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatticeFile {
    pub kind: LatticeKind,
    pub literals: Vec<LiteralEntry>,
    pub terms: Vec<Vec<u32>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LiteralEntry {
    pub a: Vec<f64>,
    pub b: f64,
}

impl LatticeFile {
    pub fn from_form(form: &LatticeForm) -> Self {
        LatticeFile {
            kind: form.kind,
            literals: form
                .literals
                .iter()
                .map(|l| LiteralEntry { a: l.a.clone(), b: l.b })
                .collect(),
            terms: form.terms.iter().map(|t| t.literals.clone()).collect(),
        }
    }

    pub fn into_form(self) -> LatticeForm {
        LatticeForm {
            kind: self.kind,
            literals: self
                .literals
                .into_iter()
                .map(|l| AffineLaw::new(l.a, l.b))
                .collect(),
            terms: self
                .terms
                .into_iter()
                .map(|t| LatticeTerm { literals: t, anchor: None })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{SamplePoint, SampleSource};
    use approx::assert_abs_diff_eq;

    /// The five-piece 1-D function used throughout the worked examples.
    pub(crate) fn example1_literals() -> Vec<AffineLaw> {
        vec![
            AffineLaw::new(vec![0.5], 0.5),  // l1 on [0, 1]
            AffineLaw::new(vec![2.0], -1.0), // l2 on [1, 1.5]
            AffineLaw::new(vec![0.0], 2.0),  // l3 on [1.5, 3.5]
            AffineLaw::new(vec![-2.0], 9.0), // l4 on [3.5, 4]
            AffineLaw::new(vec![-0.5], 3.0), // l5 on [4, 5]
        ]
    }

    /// Dataset with points at the given abscissae; laws resolved exactly.
    pub(crate) fn example1_dataset(xs: &[f64]) -> SampleDataset {
        let lits = example1_literals();
        let piece = |x: f64| -> usize {
            if x < 1.0 {
                0
            } else if x < 1.5 {
                1
            } else if x < 3.5 {
                2
            } else if x < 4.0 {
                3
            } else {
                4
            }
        };
        let mut ds = SampleDataset::new(Hyperbox::from_slices(&[0.0], &[5.0]).unwrap());
        // the pool keeps only the laws that are actually sampled, in order
        for &x in xs {
            let li = piece(x);
            let law = ds.dedup_law(lits[li].clone());
            ds.points.push(SamplePoint {
                x: vec![x],
                law,
                u: lits[li].eval(&[x]),
                source: SampleSource::Grid,
            });
        }
        ds
    }

    fn paper_label_map(ds: &SampleDataset) -> Vec<usize> {
        // map pool index -> 1-based paper label, by coefficient match
        let lits = example1_literals();
        ds.literals
            .iter()
            .map(|l| 1 + lits.iter().position(|p| p.coefficient_distance(l) <= 1e-9).unwrap())
            .collect()
    }

    fn labelled(ds: &SampleDataset, form: &LatticeForm) -> Vec<Vec<usize>> {
        let map = paper_label_map(ds);
        let mut out: Vec<Vec<usize>> = form
            .terms
            .iter()
            .map(|t| {
                let mut v: Vec<usize> = t.literals.iter().map(|&j| map[j as usize]).collect();
                v.sort_unstable();
                v
            })
            .collect();
        out.sort();
        out
    }

    #[test]
    fn disjunctive_term_at_x_2_4() {
        // after l2 is recovered the term anchored at x=2.4 is {l2, l3, l4}
        let ds = example1_dataset(&[0.5, 2.4, 3.75, 4.5, 1.45]);
        let form = build_lattice(&ds, LatticeKind::Disjunctive).unwrap();
        let labels = labelled(&ds, &form);
        assert!(labels.contains(&vec![2, 3, 4]));
    }

    #[test]
    fn conjunctive_term_at_x_0_5() {
        let ds = example1_dataset(&[0.5, 2.4, 3.75, 4.5, 1.45]);
        let form = build_lattice(&ds, LatticeKind::Conjunctive).unwrap();
        let labels = labelled(&ds, &form);
        assert!(labels.contains(&vec![1, 2]));
    }

    #[test]
    fn single_point_dataset_has_one_full_term() {
        let ds = example1_dataset(&[2.4]);
        let form = build_lattice(&ds, LatticeKind::Disjunctive).unwrap();
        assert_eq!(form.terms.len(), 1);
        assert_eq!(form.terms[0].literals, vec![0]);
    }

    #[test]
    fn empty_dataset_rejected() {
        let ds = SampleDataset::new(Hyperbox::from_slices(&[0.0], &[1.0]).unwrap());
        assert!(matches!(build_lattice(&ds, LatticeKind::Disjunctive), Err(Error::EmptyDataset)));
    }

    #[test]
    fn example1_simplified_forms_match_printed_sets() {
        let ds = example1_dataset(&[0.5, 2.4, 3.75, 4.5, 1.45]);
        let d = simplify(&build_lattice(&ds, LatticeKind::Disjunctive).unwrap(), &ds.domain);
        let c = simplify(&build_lattice(&ds, LatticeKind::Conjunctive).unwrap(), &ds.domain);
        assert_eq!(
            labelled(&ds, &d),
            vec![vec![1, 2, 3, 5], vec![1, 3, 4, 5], vec![2, 3, 4]]
        );
        assert_eq!(labelled(&ds, &c), vec![vec![1, 2], vec![1, 3, 5], vec![4, 5]]);
    }

    #[test]
    fn evaluate_matches_paper_samples() {
        let ds = example1_dataset(&[0.5, 2.4, 3.75, 4.5, 1.45]);
        let d = simplify(&build_lattice(&ds, LatticeKind::Disjunctive).unwrap(), &ds.domain);
        let c = simplify(&build_lattice(&ds, LatticeKind::Conjunctive).unwrap(), &ds.domain);
        assert_abs_diff_eq!(d.evaluate(&[4.5]), 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(c.evaluate(&[1.2]), 1.4, epsilon = 1e-12);
    }

    #[test]
    fn single_literal_single_term_evaluates_to_literal() {
        let form = LatticeForm {
            kind: LatticeKind::Disjunctive,
            literals: vec![AffineLaw::new(vec![2.0], -1.0)],
            terms: vec![LatticeTerm { literals: vec![0], anchor: None }],
        };
        assert_abs_diff_eq!(form.evaluate(&[1.2]), 1.4, epsilon = 0.0);
    }

    #[test]
    fn simplify_is_idempotent() {
        let ds = example1_dataset(&[0.5, 2.4, 3.75, 4.5, 1.45]);
        let d = simplify(&build_lattice(&ds, LatticeKind::Disjunctive).unwrap(), &ds.domain);
        let d2 = simplify(&d, &ds.domain);
        assert_eq!(serde_json::to_string(&d.terms).unwrap(), serde_json::to_string(&d2.terms).unwrap());
    }

    #[test]
    fn simplify_preserves_evaluation_exactly() {
        let ds = example1_dataset(&[0.5, 2.4, 3.75, 4.5, 1.45]);
        for kind in [LatticeKind::Disjunctive, LatticeKind::Conjunctive] {
            let raw = build_lattice(&ds, kind).unwrap();
            let simp = simplify(&raw, &ds.domain);
            let mut x = 0.0;
            while x <= 5.0 {
                assert_eq!(raw.evaluate(&[x]), simp.evaluate(&[x]), "at {x}");
                x += 0.0137;
            }
        }
    }

    #[test]
    fn duality_negated_dataset() {
        // conjunctive on the negated data equals the negated disjunctive form
        let ds = example1_dataset(&[0.5, 2.4, 3.75, 4.5, 1.45]);
        let mut neg = ds.clone();
        for l in &mut neg.literals {
            for c in &mut l.a {
                *c = -*c;
            }
            l.b = -l.b;
        }
        for p in &mut neg.points {
            p.u = -p.u;
        }
        let d = build_lattice(&ds, LatticeKind::Disjunctive).unwrap();
        let c_neg = build_lattice(&neg, LatticeKind::Conjunctive).unwrap();
        let mut x = 0.0;
        while x <= 5.0 {
            assert_abs_diff_eq!(c_neg.evaluate(&[x]), -d.evaluate(&[x]), epsilon = 1e-12);
            x += 0.0731;
        }
    }

    #[test]
    fn adding_a_literal_never_raises_a_disjunctive_term() {
        let lits = example1_literals();
        let base = LatticeForm {
            kind: LatticeKind::Disjunctive,
            literals: lits.clone(),
            terms: vec![LatticeTerm { literals: vec![1, 2], anchor: None }],
        };
        let wider = LatticeForm {
            kind: LatticeKind::Disjunctive,
            literals: lits,
            terms: vec![LatticeTerm { literals: vec![1, 2, 4], anchor: None }],
        };
        let mut x = 0.0;
        while x <= 5.0 {
            assert!(wider.evaluate(&[x]) <= base.evaluate(&[x]) + 1e-15);
            x += 0.1;
        }
    }

    #[test]
    fn storage_stats_example1() {
        let ds = example1_dataset(&[0.5, 2.4, 3.75, 4.5, 1.45]);
        let d = simplify(&build_lattice(&ds, LatticeKind::Disjunctive).unwrap(), &ds.domain);
        let st = storage_stats(&d);
        assert_eq!(st.m, 5);
        assert_eq!(st.reals, 10);
        assert_eq!(st.integers, 11); // term sizes 4 + 3 + 4
        assert_eq!(st.total_params, 21);
    }

    #[test]
    fn storage_stats_single() {
        let form = LatticeForm {
            kind: LatticeKind::Conjunctive,
            literals: vec![AffineLaw::new(vec![1.0, 2.0], 0.0)],
            terms: vec![LatticeTerm { literals: vec![0], anchor: None }],
        };
        let st = storage_stats(&form);
        assert_eq!(st.total_params, (2 + 1) + 1);
    }

    #[test]
    fn lattice_file_round_trip() {
        let ds = example1_dataset(&[0.5, 2.4, 3.75, 4.5, 1.45]);
        let d = simplify(&build_lattice(&ds, LatticeKind::Disjunctive).unwrap(), &ds.domain);
        let json = serde_json::to_string(&LatticeFile::from_form(&d)).unwrap();
        let back: LatticeFile = serde_json::from_str(&json).unwrap();
        let form = back.into_form();
        let mut x = 0.0;
        while x <= 5.0 {
            assert_eq!(form.evaluate(&[x]), d.evaluate(&[x]));
            x += 0.0173;
        }
    }
}
