//! Area definition, Kron reduction to the border and the area angle.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use faer::prelude::*;
use faer::Mat;

use crate::error::{Error, Result};
use crate::grid::{AngleSolution, BranchId, BusId, GridModel};

/// Weights below this magnitude are reported as omittable.
pub const OMITTABLE_WEIGHT: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn label(self) -> &'static str {
        match self {
            Side::A => "a",
            Side::B => "b",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AreaSpec {
    pub a_buses: Vec<BusId>,
    pub b_buses: Vec<BusId>,
    pub interior_buses: BTreeSet<BusId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchRole {
    /// Both ends inside the area (border or interior).
    Interior,
    /// One border end, one exterior end.
    Tie,
    Exterior,
}

/// An area checked against a model, with every branch classified.
#[derive(Clone, Debug)]
pub struct Area {
    spec: AreaSpec,
    roles: BTreeMap<BranchId, BranchRole>,
}

impl Area {
    pub fn spec(&self) -> &AreaSpec {
        &self.spec
    }

    pub fn role(&self, id: BranchId) -> Option<BranchRole> {
        self.roles.get(&id).copied()
    }

    /// In-service branches with both ends inside the area, by id.
    pub fn area_branches(&self) -> Vec<BranchId> {
        self.roles.iter().filter(|(_, r)| **r == BranchRole::Interior).map(|(id, _)| *id).collect()
    }

    /// Border buses, a side first, in the given order.
    pub fn border(&self) -> Vec<(BusId, Side)> {
        self.spec.a_buses.iter().map(|&b| (b, Side::A)).chain(self.spec.b_buses.iter().map(|&b| (b, Side::B))).collect()
    }

    pub fn contains(&self, bus: BusId) -> bool {
        self.spec.a_buses.contains(&bus) || self.spec.b_buses.contains(&bus) || self.spec.interior_buses.contains(&bus)
    }
}

pub fn validate_area(model: &GridModel, spec: &AreaSpec) -> Result<Area> {
    if spec.a_buses.is_empty() {
        return Err(Error::EmptyBorderSide("a"));
    }
    if spec.b_buses.is_empty() {
        return Err(Error::EmptyBorderSide("b"));
    }
    let mut seen = BTreeSet::new();
    for &id in spec.a_buses.iter().chain(&spec.b_buses).chain(&spec.interior_buses) {
        if model.bus_position(id).is_none() {
            return Err(Error::UnknownBus(id));
        }
        if !seen.insert(id) {
            return Err(Error::OverlappingArea(id));
        }
    }
    let border: BTreeSet<BusId> = spec.a_buses.iter().chain(&spec.b_buses).copied().collect();
    let mut roles = BTreeMap::new();
    let mut leaks = Vec::new();
    for br in model.branches() {
        let inside = |b: BusId| seen.contains(&b);
        let role = match (inside(br.from), inside(br.to)) {
            (true, true) => BranchRole::Interior,
            (false, false) => BranchRole::Exterior,
            _ => {
                let end = if inside(br.from) { br.from } else { br.to };
                if !border.contains(&end) && br.in_service {
                    leaks.push(br.id);
                }
                BranchRole::Tie
            }
        };
        if br.in_service {
            roles.insert(br.id, role);
        }
    }
    if !leaks.is_empty() {
        return Err(Error::BorderIncomplete(leaks));
    }
    Ok(Area { spec: spec.clone(), roles })
}

/// Interior = buses reachable from `seeds` over in-service branches without entering the border.
pub fn infer_interior(model: &GridModel, a: &[BusId], b: &[BusId], seeds: &[BusId]) -> Result<BTreeSet<BusId>> {
    let border: BTreeSet<BusId> = a.iter().chain(b).copied().collect();
    let mut adj: BTreeMap<BusId, Vec<BusId>> = BTreeMap::new();
    for br in model.branches().iter().filter(|br| br.in_service) {
        adj.entry(br.from).or_default().push(br.to);
        adj.entry(br.to).or_default().push(br.from);
    }
    let mut interior = BTreeSet::new();
    let mut queue = VecDeque::new();
    for &s in seeds {
        if model.bus_position(s).is_none() {
            return Err(Error::UnknownBus(s));
        }
        if border.contains(&s) {
            return Err(Error::OverlappingArea(s));
        }
        if interior.insert(s) {
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        for &v in adj.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
            if !border.contains(&v) && interior.insert(v) {
                queue.push_back(v);
            }
        }
    }
    Ok(interior)
}

/// Rows of an area file: `bus_id,side` with side a, b or interior (seed).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AreaFile {
    pub a: Vec<BusId>,
    pub b: Vec<BusId>,
    pub seeds: Vec<BusId>,
}

impl AreaFile {
    pub fn read(path: &Path) -> Result<Self> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(text.as_bytes());
        let perr = |line: u64, column: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message,
        };
        let headers: Vec<String> =
            rdr.headers().map_err(|e| perr(1, 0, e.to_string()))?.iter().map(|h| h.to_ascii_lowercase()).collect();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| perr(1, 0, format!("missing column `{name}`")))
        };
        let (id_col, side_col) = (col("bus_id")?, col("side")?);
        let mut out = AreaFile::default();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| perr(e.position().map(|p| p.line()).unwrap_or(0), 0, e.to_string()))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let raw = rec.get(id_col).unwrap_or("");
            let id: BusId =
                raw.parse().map_err(|_| perr(line, id_col + 1, format!("cannot parse bus id from `{raw}`")))?;
            match rec.get(side_col).unwrap_or("").to_ascii_lowercase().as_str() {
                "a" => out.a.push(id),
                "b" => out.b.push(id),
                "interior" | "i" => out.seeds.push(id),
                other => return Err(perr(line, side_col + 1, format!("side must be a, b or interior, got `{other}`"))),
            }
        }
        Ok(out)
    }

    pub fn resolve(&self, model: &GridModel) -> Result<AreaSpec> {
        Ok(AreaSpec {
            a_buses: self.a.clone(),
            b_buses: self.b.clone(),
            interior_buses: infer_interior(model, &self.a, &self.b, &self.seeds)?,
        })
    }
}

/// Border-reduced susceptance matrix, rows in `border` order.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedNetwork {
    pub border: Vec<(BusId, Side)>,
    pub b_eq: Vec<Vec<f64>>,
}

/// Area-only susceptance matrix with border buses first, then interior by id.
pub(crate) fn area_matrix(model: &GridModel, area: &Area) -> (Vec<BusId>, Vec<Vec<f64>>) {
    let mut order: Vec<BusId> = area.border().into_iter().map(|(b, _)| b).collect();
    order.extend(area.spec.interior_buses.iter().copied());
    let index: BTreeMap<BusId, usize> = order.iter().enumerate().map(|(i, b)| (*b, i)).collect();
    let n = order.len();
    let mut m = vec![vec![0.0; n]; n];
    for id in area.area_branches() {
        let br = model.branch(id).expect("validated branch");
        let (i, j) = (index[&br.from], index[&br.to]);
        let b = br.susceptance;
        m[i][i] += b;
        m[j][j] += b;
        m[i][j] -= b;
        m[j][i] -= b;
    }
    (order, m)
}

pub fn kron_reduce(model: &GridModel, area: &Area) -> Result<ReducedNetwork> {
    let border = area.border();
    let nb = border.len();
    let (order, m) = area_matrix(model, area);
    let ni = order.len() - nb;
    let mut b_eq: Vec<Vec<f64>> = (0..nb).map(|i| m[i][..nb].to_vec()).collect();
    if ni > 0 {
        let bii = Mat::<f64>::from_fn(ni, ni, |i, j| m[nb + i][nb + j]);
        let bib = Mat::<f64>::from_fn(ni, nb, |i, j| m[nb + i][j]);
        let x = bii.partial_piv_lu().solve(&bib);
        for r in 0..nb {
            for c in 0..nb {
                let mut s = 0.0;
                for k in 0..ni {
                    s += m[r][nb + k] * x[(k, c)];
                }
                b_eq[r][c] -= s;
            }
        }
        let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        let bad = b_eq.iter().flatten().any(|v| !v.is_finite() || v.abs() > 1e12 * scale.max(1.0));
        if bad {
            return Err(Error::SingularInterior);
        }
    }
    Ok(ReducedNetwork { border, b_eq })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    pub entries: Vec<(BusId, Side, f64)>,
    pub b_area: f64,
}

impl WeightVector {
    pub fn weight(&self, bus: BusId) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == bus).map(|e| e.2)
    }

    pub fn sum_side(&self, side: Side) -> f64 {
        self.entries.iter().filter(|e| e.1 == side).map(|e| e.2).sum()
    }

    pub fn buses(&self) -> impl Iterator<Item = BusId> + '_ {
        self.entries.iter().map(|e| e.0)
    }
}

pub fn compute_weights(reduced: &ReducedNetwork) -> Result<WeightVector> {
    let n = reduced.border.len();
    let sigma: Vec<f64> = reduced.border.iter().map(|(_, s)| if *s == Side::A { 1.0 } else { 0.0 }).collect();
    let row: Vec<f64> = (0..n).map(|c| (0..n).map(|r| sigma[r] * reduced.b_eq[r][c]).sum()).collect();
    let b_area: f64 = (0..n).map(|c| row[c] * sigma[c]).sum();
    if !(b_area > 0.0) {
        return Err(Error::NonpositiveBulkSusceptance(b_area));
    }
    let entries = reduced.border.iter().zip(&row).map(|(&(bus, side), v)| (bus, side, v / b_area)).collect();
    Ok(WeightVector { entries, b_area })
}

/// Weighted sum of border angles in degrees.
pub fn area_angle(weights: &WeightVector, border_angles: &BTreeMap<BusId, f64>) -> Result<f64> {
    let missing: Vec<BusId> = weights.buses().filter(|b| !border_angles.contains_key(b)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingMeasurement(missing));
    }
    Ok(weighted_sum(weights, |b| border_angles[&b]))
}

pub(crate) fn weighted_sum(weights: &WeightVector, angle_deg: impl Fn(BusId) -> f64) -> f64 {
    let mut s = 0.0;
    for &(bus, _, w) in &weights.entries {
        s += w * angle_deg(bus);
    }
    s
}

/// Border angles of a solution, in degrees.
pub fn border_angles_deg(weights: &WeightVector, solution: &AngleSolution) -> BTreeMap<BusId, f64> {
    weights.buses().map(|b| (b, solution.angle(b).expect("border bus in model").to_degrees())).collect()
}

/// Area angle of a DC solution. Goes through the degree map so that it matches frame replay bit for bit.
pub fn solution_area_angle(weights: &WeightVector, solution: &AngleSolution) -> f64 {
    let deg = border_angles_deg(weights, solution);
    weighted_sum(weights, |b| deg[&b])
}
