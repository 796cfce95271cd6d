//! DC network model, case loading and the DC power flow.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BusId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BranchId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for BranchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for BusId {
    type Err = std::num::ParseIntError;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.trim().parse().map(BusId)
    }
}

impl FromStr for BranchId {
    type Err = std::num::ParseIntError;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.trim().parse().map(BranchId)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    pub id: BusId,
    /// Net injection in pu, generation positive.
    pub injection: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub id: BranchId,
    pub from: BusId,
    pub to: BusId,
    /// Susceptance b = 1/x in pu. Negative values are allowed for reduced equivalents.
    pub susceptance: f64,
    pub limit: f64,
    pub in_service: bool,
}

/// Immutable DC network. Buses and branches are kept sorted by id.
#[derive(Clone, Debug, PartialEq)]
pub struct GridModel {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    slack: BusId,
    pub base_mva: f64,
    // (from, to) positions per branch, aligned with `branches`
    ends: Vec<(usize, usize)>,
}

impl GridModel {
    /// Validates the network and assigns any injection imbalance to the slack.
    /// The slack defaults to the lowest bus id.
    pub fn new(mut buses: Vec<Bus>, mut branches: Vec<Branch>, slack: Option<BusId>) -> Result<Self> {
        buses.sort_by_key(|b| b.id);
        branches.sort_by_key(|b| b.id);
        for w in buses.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::DuplicateId { kind: "bus", id: w[0].id.0 });
            }
        }
        for w in branches.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::DuplicateId { kind: "branch", id: w[0].id.0 });
            }
        }
        if buses.is_empty() {
            return Err(Error::Config("case has no buses".into()));
        }
        for bus in &buses {
            if !bus.injection.is_finite() {
                return Err(Error::InvalidBus { id: bus.id, reason: "injection is not finite".into() });
            }
        }
        let pos = |id: BusId| buses.binary_search_by_key(&id, |b| b.id).map_err(|_| Error::UnknownBus(id));
        let mut ends = Vec::with_capacity(branches.len());
        for br in &branches {
            let (u, v) = (pos(br.from)?, pos(br.to)?);
            if u == v {
                return Err(Error::InvalidBranch { id: br.id, reason: "both ends on one bus".into() });
            }
            if !br.susceptance.is_finite() || br.susceptance == 0.0 {
                return Err(Error::InvalidBranch {
                    id: br.id,
                    reason: "susceptance must be finite and nonzero".into(),
                });
            }
            if !br.limit.is_finite() || br.limit <= 0.0 {
                return Err(Error::InvalidBranch { id: br.id, reason: "flow limit must be positive".into() });
            }
            ends.push((u, v));
        }
        let slack = slack.unwrap_or(buses[0].id);
        let slack_pos = pos(slack)?;
        let imbalance: f64 = buses.iter().map(|b| b.injection).sum();
        buses[slack_pos].injection -= imbalance;
        let model = GridModel { buses, branches, slack, base_mva: 100.0, ends };
        if let Connectivity::Islands(islands) = connectivity_check(&model, &[])? {
            return Err(Error::DisconnectedNetwork(islands));
        }
        Ok(model)
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn slack(&self) -> BusId {
        self.slack
    }

    pub fn bus_position(&self, id: BusId) -> Option<usize> {
        self.buses.binary_search_by_key(&id, |b| b.id).ok()
    }

    pub fn branch_position(&self, id: BranchId) -> Option<usize> {
        self.branches.binary_search_by_key(&id, |b| b.id).ok()
    }

    pub fn branch(&self, id: BranchId) -> Option<&Branch> {
        self.branch_position(id).map(|i| &self.branches[i])
    }

    pub fn injections(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.injection).collect()
    }

    /// Copy of the model with the given injections (bus order). Not rebalanced.
    pub(crate) fn with_injections(&self, injections: &[f64]) -> GridModel {
        let mut m = self.clone();
        for (b, &p) in m.buses.iter_mut().zip(injections) {
            b.injection = p;
        }
        m
    }

    /// Branch positions marked as outaged, or an error for unknown ids.
    pub(crate) fn outage_mask(&self, outages: &[BranchId]) -> Result<Vec<bool>> {
        let mut mask = vec![false; self.branches.len()];
        for &id in outages {
            let i = self.branch_position(id).ok_or(Error::UnknownBranch(id))?;
            mask[i] = true;
        }
        Ok(mask)
    }

    pub(crate) fn active(&self, position: usize, mask: &[bool]) -> bool {
        self.branches[position].in_service && !mask[position]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Connectivity {
    Connected,
    Islands(Vec<BTreeSet<BusId>>),
}

/// Connectivity over in-service branches not in `outages`.
pub fn connectivity_check(model: &GridModel, outages: &[BranchId]) -> Result<Connectivity> {
    let mask = model.outage_mask(outages)?;
    Ok(islands(model, &mask))
}

pub(crate) fn islands(model: &GridModel, mask: &[bool]) -> Connectivity {
    let n = model.buses.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for k in 0..model.branches.len() {
        if !model.active(k, mask) {
            continue;
        }
        let (u, v) = model.ends[k];
        let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
        if ru != rv {
            parent[ru.max(rv)] = ru.min(rv);
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<BusId>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().insert(model.buses[i].id);
    }
    if groups.len() == 1 {
        Connectivity::Connected
    } else {
        Connectivity::Islands(groups.into_values().collect())
    }
}

/// Factorized slack-reduced susceptance matrix for one outage set.
pub struct DcSystem {
    lu: Option<faer::sparse::linalg::solvers::Lu<usize, f64>>,
    // reduced index per bus position, None for the slack
    reduced: Vec<Option<usize>>,
    triplets: Vec<(usize, usize, f64)>,
    mask: Vec<bool>,
}

impl DcSystem {
    pub fn new(model: &GridModel, outages: &[BranchId]) -> Result<Self> {
        let mask = model.outage_mask(outages)?;
        Self::with_mask(model, mask)
    }

    pub(crate) fn with_mask(model: &GridModel, mask: Vec<bool>) -> Result<Self> {
        if let Connectivity::Islands(parts) = islands(model, &mask) {
            return Err(Error::IslandingDetected(parts));
        }
        let slack = model.bus_position(model.slack).expect("slack exists");
        let mut reduced = Vec::with_capacity(model.buses.len());
        let mut next = 0;
        for i in 0..model.buses.len() {
            if i == slack {
                reduced.push(None);
            } else {
                reduced.push(Some(next));
                next += 1;
            }
        }
        let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for k in 0..model.branches.len() {
            if !model.active(k, &mask) {
                continue;
            }
            let b = model.branches[k].susceptance;
            let (u, v) = model.ends[k];
            if let Some(i) = reduced[u] {
                *entries.entry((i, i)).or_insert(0.0) += b;
            }
            if let Some(j) = reduced[v] {
                *entries.entry((j, j)).or_insert(0.0) += b;
            }
            if let (Some(i), Some(j)) = (reduced[u], reduced[v]) {
                *entries.entry((i, j)).or_insert(0.0) -= b;
                *entries.entry((j, i)).or_insert(0.0) -= b;
            }
        }
        let triplets: Vec<(usize, usize, f64)> = entries.into_iter().map(|((i, j), v)| (i, j, v)).collect();
        let lu = if next == 0 {
            None
        } else {
            let t: Vec<Triplet<usize, usize, f64>> = triplets.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
            let m =
                SparseColMat::<usize, f64>::try_new_from_triplets(next, next, &t).map_err(|_| Error::SingularMatrix)?;
            Some(m.sp_lu().map_err(|_| Error::SingularMatrix)?)
        };
        Ok(DcSystem { lu, reduced, triplets, mask })
    }

    pub(crate) fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Angles in radians for the given bus injections, slack angle zero.
    pub fn solve(&self, injections: &[f64]) -> Result<Vec<f64>> {
        let n = self.reduced.len();
        let mut theta = vec![0.0; n];
        let Some(lu) = &self.lu else {
            return Ok(theta);
        };
        let m = self.reduced.iter().flatten().count();
        let mut rhs = vec![0.0; m];
        for (i, r) in self.reduced.iter().enumerate() {
            if let Some(r) = r {
                rhs[*r] = injections[i];
            }
        }
        let mut x = Mat::<f64>::from_fn(m, 1, |i, _| rhs[i]);
        lu.solve_in_place(x.as_mut());
        let mut resid = rhs.clone();
        for &(i, j, v) in &self.triplets {
            resid[i] -= v * x[(j, 0)];
        }
        let scale = 1.0 + rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let worst = resid.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !worst.is_finite() || worst > 1e-6 * scale {
            return Err(Error::SingularMatrix);
        }
        for (i, r) in self.reduced.iter().enumerate() {
            if let Some(r) = r {
                theta[i] = x[(*r, 0)];
            }
        }
        Ok(theta)
    }
}

/// Bus angles (radians) for one outage set.
#[derive(Clone, Debug, PartialEq)]
pub struct AngleSolution {
    ids: Vec<BusId>,
    angles: Vec<f64>,
    pub outages: BTreeSet<BranchId>,
}

impl AngleSolution {
    pub(crate) fn from_raw(model: &GridModel, angles: Vec<f64>, outages: &[BranchId]) -> Self {
        AngleSolution {
            ids: model.buses.iter().map(|b| b.id).collect(),
            angles,
            outages: outages.iter().copied().collect(),
        }
    }

    pub fn angle(&self, id: BusId) -> Option<f64> {
        self.ids.binary_search(&id).ok().map(|i| self.angles[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (BusId, f64)> + '_ {
        self.ids.iter().copied().zip(self.angles.iter().copied())
    }

    pub(crate) fn raw(&self) -> &[f64] {
        &self.angles
    }
}

pub fn solve_dc(model: &GridModel, outages: &[BranchId]) -> Result<AngleSolution> {
    let sys = DcSystem::new(model, outages)?;
    let theta = sys.solve(&model.injections())?;
    Ok(AngleSolution::from_raw(model, theta, outages))
}

/// Branch flows in pu, positive from `from` to `to`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowVector {
    pub flows: BTreeMap<BranchId, f64>,
}

pub fn line_flows(model: &GridModel, solution: &AngleSolution) -> FlowVector {
    let mut flows = BTreeMap::new();
    for (k, br) in model.branches.iter().enumerate() {
        if !br.in_service || solution.outages.contains(&br.id) {
            continue;
        }
        let (u, v) = model.ends[k];
        flows.insert(br.id, br.susceptance * (solution.angles[u] - solution.angles[v]));
    }
    FlowVector { flows }
}

/// Flows per branch position; inactive branches get 0.
pub(crate) fn raw_flows(model: &GridModel, mask: &[bool], theta: &[f64]) -> Vec<f64> {
    (0..model.branches.len())
        .map(|k| {
            if model.active(k, mask) {
                let (u, v) = model.ends[k];
                model.branches[k].susceptance * (theta[u] - theta[v])
            } else {
                0.0
            }
        })
        .collect()
}

fn parse_error(path: &Path, line: u64, column: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, column, message: message.into() }
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => parse_error(
            path,
            line,
            (*len).min(*expected_len) as usize + 1,
            format!("expected {expected_len} fields, found {len}"),
        ),
        _ => parse_error(path, line, 0, err.to_string()),
    }
}

struct Table {
    headers: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.iter().map(|h| h.to_ascii_lowercase()).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, rec));
    }
    Ok(Table { headers, rows })
}

impl Table {
    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, path: &Path, name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| parse_error(path, 1, 0, format!("missing column `{name}`")))
    }
}

fn field<T: FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, col: usize, what: &str) -> Result<T> {
    let raw = rec.get(col).unwrap_or("");
    raw.parse().map_err(|_| parse_error(path, line, col + 1, format!("cannot parse {what} from `{raw}`")))
}

fn parse_flag(path: &Path, line: u64, col: usize, raw: &str) -> Result<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Ok(true),
        "0" | "false" | "no" | "n" => Ok(false),
        _ => Err(parse_error(path, line, col + 1, format!("cannot parse in_service from `{raw}`"))),
    }
}

pub fn read_buses(path: &Path) -> Result<Vec<Bus>> {
    let t = read_table(path)?;
    let id = t.require(path, "bus_id")?;
    let inj = t.require(path, "injection_pu")?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let injection: f64 = field(path, *line, rec, inj, "injection")?;
        if !injection.is_finite() {
            return Err(parse_error(path, *line, inj + 1, "injection is not finite"));
        }
        out.push(Bus { id: field(path, *line, rec, id, "bus id")?, injection });
    }
    Ok(out)
}

pub fn read_branches(path: &Path) -> Result<Vec<Branch>> {
    let t = read_table(path)?;
    let id = t.require(path, "branch_id")?;
    let from = t.require(path, "from")?;
    let to = t.require(path, "to")?;
    let limit = t.require(path, "limit_pu")?;
    let (x, b) = (t.column("x_pu"), t.column("b_pu"));
    let imp = match (x, b) {
        (Some(_), Some(_)) => return Err(parse_error(path, 1, 0, "both x_pu and b_pu columns present")),
        (None, None) => return Err(parse_error(path, 1, 0, "missing column `x_pu` or `b_pu`")),
        (Some(c), None) => (c, true),
        (None, Some(c)) => (c, false),
    };
    let status = t.column("in_service");
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let line = *line;
        let value: f64 = field(path, line, rec, imp.0, if imp.1 { "reactance" } else { "susceptance" })?;
        if value == 0.0 || !value.is_finite() {
            return Err(parse_error(path, line, imp.0 + 1, "impedance value must be finite and nonzero"));
        }
        let lim: f64 = field(path, line, rec, limit, "limit")?;
        if !(lim > 0.0) || !lim.is_finite() {
            return Err(parse_error(path, line, limit + 1, "limit must be positive"));
        }
        let in_service = match status {
            Some(c) => parse_flag(path, line, c, rec.get(c).unwrap_or(""))?,
            None => true,
        };
        out.push(Branch {
            id: field(path, line, rec, id, "branch id")?,
            from: field(path, line, rec, from, "bus id")?,
            to: field(path, line, rec, to, "bus id")?,
            susceptance: if imp.1 { 1.0 / value } else { value },
            limit: lim,
            in_service,
        });
    }
    Ok(out)
}

/// Loads bus and branch CSV files. `slack` defaults to the lowest bus id.
pub fn load_case(bus_file: &Path, branch_file: &Path, slack: Option<BusId>) -> Result<GridModel> {
    GridModel::new(read_buses(bus_file)?, read_branches(branch_file)?, slack)
}
