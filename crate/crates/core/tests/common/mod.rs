//! Shared setup and independent dense-matrix oracles for integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use area_angle::area::{compute_weights, kron_reduce, validate_area, Area, WeightVector};
use area_angle::fixtures::Fixture;
use area_angle::grid::{BranchId, BusId, GridModel};
use area_angle::transfer::{injection_pattern, InjectionPattern};

pub struct Case {
    pub fixture: Fixture,
    pub area: Area,
    pub weights: WeightVector,
    pub pattern: InjectionPattern,
}

impl Case {
    pub fn new(fixture: Fixture) -> Case {
        let area = validate_area(&fixture.model, &fixture.area).expect("valid area");
        let weights = compute_weights(&kron_reduce(&fixture.model, &area).expect("reducible")).expect("weights");
        let pattern = injection_pattern(&fixture.model, &area).expect("pattern");
        Case { fixture, area, weights, pattern }
    }

    pub fn model(&self) -> &GridModel {
        &self.fixture.model
    }
}

/// Dense DC solve written from scratch: full B, slack row and column dropped.
/// Returns None when the reduced matrix is singular (islanding).
pub fn dense_angles(model: &GridModel, outages: &[BranchId], injections: &[f64]) -> Option<Vec<f64>> {
    let n = model.buses().len();
    let pos: BTreeMap<BusId, usize> = model.buses().iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let out: BTreeSet<BranchId> = outages.iter().copied().collect();
    let mut b = DMatrix::<f64>::zeros(n, n);
    for br in model.branches() {
        if !br.in_service || out.contains(&br.id) {
            continue;
        }
        let (u, v) = (pos[&br.from], pos[&br.to]);
        b[(u, u)] += br.susceptance;
        b[(v, v)] += br.susceptance;
        b[(u, v)] -= br.susceptance;
        b[(v, u)] -= br.susceptance;
    }
    let s = pos[&model.slack()];
    let keep: Vec<usize> = (0..n).filter(|&i| i != s).collect();
    let m = keep.len();
    let red = DMatrix::from_fn(m, m, |i, j| b[(keep[i], keep[j])]);
    let rhs = DVector::from_fn(m, |i, _| injections[keep[i]]);
    if connected_components(model, &out) > 1 {
        return None;
    }
    let x = red.lu().solve(&rhs)?;
    let mut theta = vec![0.0; n];
    for (i, &k) in keep.iter().enumerate() {
        theta[k] = x[i];
    }
    Some(theta)
}

fn connected_components(model: &GridModel, out: &BTreeSet<BranchId>) -> usize {
    let ids: Vec<BusId> = model.buses().iter().map(|b| b.id).collect();
    let mut parent: BTreeMap<BusId, BusId> = ids.iter().map(|&b| (b, b)).collect();
    fn find(p: &mut BTreeMap<BusId, BusId>, x: BusId) -> BusId {
        let mut r = x;
        while p[&r] != r {
            r = p[&r];
        }
        r
    }
    for br in model.branches() {
        if br.in_service && !out.contains(&br.id) {
            let (a, b) = (find(&mut parent, br.from), find(&mut parent, br.to));
            parent.insert(a, b);
        }
    }
    let roots: BTreeSet<BusId> = ids.iter().map(|&b| find(&mut parent, b)).collect();
    roots.len()
}

/// Branch flows b (theta_from - theta_to) in branch order, zero for outaged lines.
pub fn dense_flows(model: &GridModel, outages: &[BranchId], theta: &[f64]) -> Vec<f64> {
    let pos: BTreeMap<BusId, usize> = model.buses().iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    model
        .branches()
        .iter()
        .map(|br| {
            if !br.in_service || outages.contains(&br.id) {
                0.0
            } else {
                br.susceptance * (theta[pos[&br.from]] - theta[pos[&br.to]])
            }
        })
        .collect()
}

/// Pattern injections as a bus-ordered vector.
pub fn pattern_vector(model: &GridModel, pattern: &InjectionPattern) -> Vec<f64> {
    model.buses().iter().map(|b| pattern.alphas.get(&b.id).copied().unwrap_or(0.0)).collect()
}

/// Branches with both ends in the area (in service).
pub fn area_lines(case: &Case) -> Vec<usize> {
    let spec = &case.fixture.area;
    let inside = |b: BusId| spec.a_buses.contains(&b) || spec.b_buses.contains(&b) || spec.interior_buses.contains(&b);
    case.model()
        .branches()
        .iter()
        .enumerate()
        .filter(|(_, br)| br.in_service && inside(br.from) && inside(br.to))
        .map(|(k, _)| k)
        .collect()
}

/// Power leaving the a buses over area lines in the base topology.
pub fn oracle_transfer(case: &Case) -> f64 {
    let model = case.model();
    let theta = dense_angles(model, &[], &model.injections()).expect("connected base case");
    let flows = dense_flows(model, &[], &theta);
    let mut p = 0.0;
    for k in area_lines(case) {
        let br = &model.branches()[k];
        if case.fixture.area.a_buses.contains(&br.from) {
            p += flows[k];
        }
        if case.fixture.area.a_buses.contains(&br.to) {
            p -= flows[k];
        }
    }
    p
}

/// Brute-force maximum power into the area: bisection on the patterned transfer until the
/// first area line reaches its limit, using only repeated full solves.
pub fn oracle_p_max(case: &Case, outages: &[BranchId]) -> Option<f64> {
    let model = case.model();
    let base = model.injections();
    let d = pattern_vector(model, &case.pattern);
    let lines = area_lines(case);
    let flows_at = |t: f64| -> Option<Vec<f64>> {
        let inj: Vec<f64> = base.iter().zip(&d).map(|(p, a)| p + t * a).collect();
        Some(dense_flows(model, outages, &dense_angles(model, outages, &inj)?))
    };
    let f0 = flows_at(0.0)?;
    let f1 = flows_at(1.0)?;
    // direction of each line's response, from a finite difference
    let dir: Vec<(usize, f64)> = lines
        .iter()
        .filter_map(|&k| {
            let slope = f1[k] - f0[k];
            (slope.abs() > 1e-9).then(|| (k, slope.signum()))
        })
        .collect();
    if dir.is_empty() {
        return None;
    }
    let g = |t: f64| -> f64 {
        let f = flows_at(t).expect("same topology");
        dir.iter().map(|&(k, s)| s * f[k] - model.branches()[k].limit).fold(f64::NEG_INFINITY, f64::max)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while g(lo) > 0.0 {
        lo = -2.0 * (lo - 1.0).abs();
    }
    while g(hi) <= 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-14 * hi.abs().max(1.0) {
            break;
        }
    }
    Some(oracle_transfer(case) + 0.5 * (lo + hi))
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
