//! Offline pipeline: contingency sweeps, exceptional outages and thresholds.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::area::{Area, Side, WeightVector};
use crate::error::{Error, Result};
use crate::grid::{BranchId, BusId, GridModel};
use crate::outlier::{isotonic_nonincreasing, mad, spearman, Curve, TIE_TOL};
use crate::par::{map_ordered, Execution};
use crate::transfer::{post_outage_area_angle, shifted, InjectionPattern, TransferContext, TransferResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowFlag {
    Ok,
    Islanding,
    Unbounded,
    Exceptional,
}

impl RowFlag {
    pub fn label(self) -> &'static str {
        match self {
            RowFlag::Ok => "ok",
            RowFlag::Islanding => "islanding",
            RowFlag::Unbounded => "unbounded",
            RowFlag::Exceptional => "exceptional",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub contingency_id: usize,
    pub outages: Vec<BranchId>,
    pub p_max: Option<f64>,
    /// Area angle in degrees at the table's evaluation level.
    pub theta_area: Option<f64>,
    pub binding_line: Option<BranchId>,
    pub flag: RowFlag,
}

impl SweepRow {
    /// Row usable for statistics: has both values and did not island.
    pub fn point(&self) -> Option<(f64, f64)> {
        match self.flag {
            RowFlag::Ok | RowFlag::Exceptional => Some((self.p_max?, self.theta_area?)),
            _ => None,
        }
    }
}

/// Contingency rows ordered by decreasing p_max, then contingency id.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub level: f64,
    pub base_p_max: f64,
    pub base_theta: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn singles(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.outages.len() == 1)
    }

    /// Flags every usable row that contains an exceptional branch.
    pub fn mark_exceptional(&mut self, set: &ExceptionalSet) {
        for row in &mut self.rows {
            if row.flag == RowFlag::Ok && row.outages.iter().any(|b| set.contains(*b)) {
                row.flag = RowFlag::Exceptional;
            }
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["contingency_id", "outaged_branches", "p_max_pu", "area_angle_deg", "binding_line", "flags"])?;
        for r in &self.rows {
            w.write_record([
                r.contingency_id.to_string(),
                join_ids(&r.outages),
                r.p_max.map(|v| v.to_string()).unwrap_or_default(),
                r.theta_area.map(|v| v.to_string()).unwrap_or_default(),
                r.binding_line.map(|v| v.to_string()).unwrap_or_default(),
                r.flag.label().to_string(),
            ])?;
        }
        w.flush()
    }
}

pub(crate) fn join_ids(ids: &[BranchId]) -> String {
    ids.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(";")
}

/// Transfer outcome of one contingency, before angles are attached.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Transfer(TransferResult),
    Islanding,
    Unbounded,
}

impl Outcome {
    pub fn p_max(&self) -> Option<f64> {
        match self {
            Outcome::Transfer(t) => Some(t.p_max),
            _ => None,
        }
    }
}

/// One single-outage contingency per in-service area branch, by branch id.
pub fn single_outage_contingencies(area: &Area) -> Vec<Vec<BranchId>> {
    area.area_branches().into_iter().map(|b| vec![b]).collect()
}

pub fn transfer_outcomes(
    model: &GridModel,
    area: &Area,
    pattern: &InjectionPattern,
    contingencies: &[Vec<BranchId>],
    exec: Execution,
) -> Result<Vec<Outcome>> {
    let ctx = TransferContext::new(model, area, pattern)?;
    map_ordered(exec, contingencies, |c| match ctx.assess(c) {
        Ok(t) => Ok(Outcome::Transfer(t)),
        Err(Error::IslandingDetected(_)) => Ok(Outcome::Islanding),
        Err(Error::Unbounded) => Ok(Outcome::Unbounded),
        Err(e) => Err(e),
    })
    .into_iter()
    .collect()
}

/// Attaches area angles at `level` to precomputed outcomes and sorts the table.
#[allow(clippy::too_many_arguments)]
pub fn sweep_with_outcomes(
    model: &GridModel,
    area: &Area,
    pattern: &InjectionPattern,
    weights: &WeightVector,
    level: f64,
    contingencies: &[Vec<BranchId>],
    outcomes: &[Outcome],
    exec: Execution,
) -> Result<SweepTable> {
    if !(level > 0.0) || !level.is_finite() {
        return Err(Error::InvalidLevel(level));
    }
    let ctx = TransferContext::new(model, area, pattern)?;
    let base = ctx.assess(&[])?;
    let at_level = shifted(model, pattern, level - ctx.p_a());
    let base_theta = post_outage_area_angle(&at_level, weights, &[])?;
    let work: Vec<(usize, &Vec<BranchId>, &Outcome)> =
        contingencies.iter().zip(outcomes).enumerate().map(|(i, (c, o))| (i + 1, c, o)).collect();
    let rows: Result<Vec<SweepRow>> = map_ordered(exec, &work, |&(id, c, o)| {
        let theta = match o {
            Outcome::Islanding => None,
            _ => Some(post_outage_area_angle(&at_level, weights, c)?),
        };
        Ok(match o {
            Outcome::Transfer(t) => SweepRow {
                contingency_id: id,
                outages: c.clone(),
                p_max: Some(t.p_max),
                theta_area: theta,
                binding_line: Some(t.binding_line),
                flag: RowFlag::Ok,
            },
            Outcome::Islanding | Outcome::Unbounded => SweepRow {
                contingency_id: id,
                outages: c.clone(),
                p_max: None,
                theta_area: theta,
                binding_line: None,
                flag: if *o == Outcome::Islanding { RowFlag::Islanding } else { RowFlag::Unbounded },
            },
        })
    })
    .into_iter()
    .collect();
    let mut rows = rows?;
    rows.sort_by(|a, b| match (a.p_max, b.p_max) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(a.contingency_id.cmp(&b.contingency_id)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.contingency_id.cmp(&b.contingency_id),
    });
    Ok(SweepTable { level, base_p_max: base.p_max, base_theta, rows })
}

#[allow(clippy::too_many_arguments)]
pub fn sweep(
    model: &GridModel,
    area: &Area,
    pattern: &InjectionPattern,
    weights: &WeightVector,
    level: f64,
    contingencies: &[Vec<BranchId>],
    exec: Execution,
) -> Result<SweepTable> {
    let outcomes = transfer_outcomes(model, area, pattern, contingencies, exec)?;
    sweep_with_outcomes(model, area, pattern, weights, level, contingencies, &outcomes, exec)
}

pub fn single_outage_sweep(
    model: &GridModel,
    area: &Area,
    pattern: &InjectionPattern,
    weights: &WeightVector,
    angle_eval_level: f64,
    exec: Execution,
) -> Result<SweepTable> {
    sweep(model, area, pattern, weights, angle_eval_level, &single_outage_contingencies(area), exec)
}

fn binomial(n: u64, k: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Lexicographic combination of rank `r` among k-subsets of 0..n.
fn unrank(mut r: u64, n: u64, k: u64) -> Vec<u64> {
    let mut out = Vec::with_capacity(k as usize);
    let mut c = 0;
    for i in 0..k {
        loop {
            let count = binomial(n - c - 1, k - i - 1).expect("fits when total fits");
            if r < count {
                out.push(c);
                c += 1;
                break;
            }
            r -= count;
            c += 1;
        }
    }
    out
}

/// Uniform sample without replacement of order-k outage sets over area branches.
/// `n = None` enumerates every set. Sets come back in lexicographic order.
pub fn sample_multi_outages(area: &Area, order: usize, n: Option<u64>, seed: u64) -> Result<Vec<Vec<BranchId>>> {
    let branches = area.area_branches();
    let m = branches.len() as u64;
    let total = binomial(m, order as u64).ok_or_else(|| Error::Config("too many combinations".into()))?;
    let want = n.unwrap_or(total);
    if want > total || order == 0 {
        return Err(Error::SampleTooLarge { order, requested: want, available: total });
    }
    let mut ranks: Vec<u64> = if want == total {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = usize::try_from(total).map_err(|_| Error::Config("too many combinations".into()))?;
        rand::seq::index::sample(&mut rng, len, want as usize).into_iter().map(|i| i as u64).collect()
    };
    ranks.sort_unstable();
    Ok(ranks
        .into_iter()
        .map(|r| unrank(r, m, order as u64).into_iter().map(|i| branches[i as usize]).collect())
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Diagnosis {
    /// Angle lower than the bulk curve predicts: severity hidden.
    Underestimates,
    Overestimates,
}

impl Diagnosis {
    pub fn label(self) -> &'static str {
        match self {
            Diagnosis::Underestimates => "underestimates",
            Diagnosis::Overestimates => "overestimates",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExceptionalEntry {
    pub branch: BranchId,
    pub diagnosis: Diagnosis,
    pub residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExceptionalSet {
    /// Sorted by branch id.
    pub entries: Vec<ExceptionalEntry>,
}

impl ExceptionalSet {
    pub fn contains(&self, id: BranchId) -> bool {
        self.entries.iter().any(|e| e.branch == id)
    }

    pub fn ids(&self) -> BTreeSet<BranchId> {
        self.entries.iter().map(|e| e.branch).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_subset_of(&self, other: &ExceptionalSet) -> bool {
        self.ids().is_subset(&other.ids())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionConfig {
    pub k_mad: f64,
    pub min_rows: usize,
    /// Residual scale floor as a fraction of the angle range; keeps a perfect fit from flagging noise.
    pub floor_fraction: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig { k_mad: 3.0, min_rows: 10, floor_fraction: 0.05 }
    }
}

fn single_points(sweep: &SweepTable) -> Vec<(BranchId, f64, f64)> {
    sweep.singles().filter_map(|r| r.point().map(|(p, t)| (r.outages[0], p, t))).collect()
}

/// Isotonic bulk curve with iterative removal of the worst MAD outlier.
pub fn detect_exceptional(sweep: &SweepTable, config: &DetectionConfig) -> Result<(ExceptionalSet, Curve)> {
    let rows = single_points(sweep);
    let thetas: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let (lo, hi) = thetas.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    if !rows.is_empty() && hi - lo <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
        let x: Vec<f64> = rows.iter().map(|r| r.1).collect();
        return Ok((ExceptionalSet::default(), Curve::from_fit(&x, &thetas)));
    }
    if rows.len() < config.min_rows {
        return Err(Error::InsufficientRows { have: rows.len(), need: config.min_rows });
    }
    let p0 = rows[0].1;
    if rows.iter().all(|r| (r.1 - p0).abs() <= TIE_TOL * p0.abs().max(1.0)) {
        return Err(Error::DegenerateFit);
    }
    let floor = config.floor_fraction * (hi - lo);
    let mut active: Vec<usize> = (0..rows.len()).collect();
    let mut flagged = Vec::new();
    loop {
        let x: Vec<f64> = active.iter().map(|&i| rows[i].1).collect();
        let y: Vec<f64> = active.iter().map(|&i| rows[i].2).collect();
        let fit = isotonic_nonincreasing(&x, &y);
        let resid: Vec<f64> = y.iter().zip(&fit).map(|(a, b)| a - b).collect();
        let threshold = config.k_mad * mad(&resid).max(floor);
        let mut worst = 0;
        for j in 1..resid.len() {
            let (a, b) = (resid[j].abs(), resid[worst].abs());
            let tol = TIE_TOL * a.max(b).max(1.0);
            let better = if (a - b).abs() <= tol {
                // equal magnitude: hidden severity first, then lowest branch id
                (resid[j] < 0.0 && resid[worst] >= 0.0)
                    || ((resid[j] < 0.0) == (resid[worst] < 0.0) && rows[active[j]].0 < rows[active[worst]].0)
            } else {
                a > b
            };
            if better {
                worst = j;
            }
        }
        if active.len() <= 2 || !(resid[worst].abs() > threshold) {
            let mut entries: Vec<ExceptionalEntry> = flagged;
            entries.sort_by_key(|e| e.branch);
            return Ok((ExceptionalSet { entries }, Curve::from_fit(&x, &fit)));
        }
        let r = resid[worst];
        flagged.push(ExceptionalEntry {
            branch: rows[active[worst]].0,
            diagnosis: if r < 0.0 { Diagnosis::Underestimates } else { Diagnosis::Overestimates },
            residual: r,
        });
        active.remove(worst);
    }
}

/// Spearman(theta, -p_max) over single-outage rows not in `exclude`.
pub fn bulk_spearman(sweep: &SweepTable, exclude: &ExceptionalSet) -> f64 {
    let pts: Vec<(f64, f64)> =
        single_points(sweep).into_iter().filter(|r| !exclude.contains(r.0)).map(|r| (-r.1, r.2)).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    spearman(&y, &x)
}

pub fn derive_power_thresholds(
    sweep: &SweepTable,
    exceptional: &ExceptionalSet,
    alarm_fraction: f64,
) -> Result<(f64, f64)> {
    let p_emergency = single_points(sweep)
        .iter()
        .filter(|r| !exceptional.contains(r.0))
        .map(|r| r.1)
        .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.min(p))))
        .ok_or(Error::AllExceptional)?;
    let p_alarm = alarm_fraction * sweep.base_p_max;
    if !(p_alarm > p_emergency) {
        return Err(Error::ThresholdInversion { alarm: p_alarm, emergency: p_emergency, unit: "pu" });
    }
    Ok((p_emergency, p_alarm))
}

/// Worst non-exceptional single outage: lowest p_max, then lowest branch id.
fn worst_single(sweep: &SweepTable, exceptional: &ExceptionalSet) -> Option<(BranchId, f64)> {
    single_points(sweep)
        .into_iter()
        .filter(|r| !exceptional.contains(r.0))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|r| (r.0, r.1))
}

/// Bulk curve over non-exceptional single rows plus the no-outage point.
pub fn bulk_curve(sweep: &SweepTable, exceptional: &ExceptionalSet) -> Curve {
    let mut x = vec![sweep.base_p_max];
    let mut y = vec![sweep.base_theta];
    for r in single_points(sweep).into_iter().filter(|r| !exceptional.contains(r.0)) {
        x.push(r.1);
        y.push(r.2);
    }
    Curve::from_fit(&x, &isotonic_nonincreasing(&x, &y))
}

/// `sweep` must hold angles evaluated at `p_emergency`.
#[allow(clippy::too_many_arguments)]
pub fn power_to_angle_thresholds(
    model: &GridModel,
    area: &Area,
    pattern: &InjectionPattern,
    weights: &WeightVector,
    p_emergency: f64,
    p_alarm: f64,
    sweep: &SweepTable,
    exceptional: &ExceptionalSet,
) -> Result<(f64, f64)> {
    let (worst, _) = worst_single(sweep, exceptional).ok_or(Error::AllExceptional)?;
    let at_level = crate::transfer::set_transfer_level(model, area, pattern, p_emergency)?;
    let theta_emergency = post_outage_area_angle(&at_level, weights, &[worst])?;
    let curve = bulk_curve(sweep, exceptional);
    let theta_alarm = curve.evaluate(p_alarm).ok_or_else(|| {
        let (lo, hi) = curve.range().unwrap_or((f64::NAN, f64::NAN));
        Error::ExtrapolationRequired { p: p_alarm, lo, hi }
    })?;
    if !(theta_alarm < theta_emergency) {
        return Err(Error::ThresholdInversion { alarm: theta_alarm, emergency: theta_emergency, unit: "deg" });
    }
    Ok((theta_emergency, theta_alarm))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Relaxation {
    /// Every outlier of the bulk curve.
    #[default]
    Full,
    /// Outliers whose angle class (safe/alarm/emergency) disagrees with their power class.
    Classification,
    /// Outliers misclassified across the emergency threshold only.
    EmergencyOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Class {
    Safe,
    Alarm,
    Emergency,
}

impl Class {
    pub fn by_power(p_max: f64, p_emergency: f64, p_alarm: f64) -> Class {
        if p_max < p_emergency {
            Class::Emergency
        } else if p_max < p_alarm {
            Class::Alarm
        } else {
            Class::Safe
        }
    }

    pub fn by_angle(theta: f64, theta_emergency: f64, theta_alarm: f64) -> Class {
        if theta > theta_emergency {
            Class::Emergency
        } else if theta > theta_alarm {
            Class::Alarm
        } else {
            Class::Safe
        }
    }
}

/// Keeps the entries of `full` that the angle would misclassify. Always a subset of `full`.
pub fn relax_exceptional(
    full: &ExceptionalSet,
    sweep: &SweepTable,
    t: &ThresholdSet,
    mode: Relaxation,
) -> ExceptionalSet {
    if mode == Relaxation::Full {
        return full.clone();
    }
    let points = single_points(sweep);
    let entries = full
        .entries
        .iter()
        .filter(|e| {
            let Some(&(_, p, theta)) = points.iter().find(|r| r.0 == e.branch) else {
                return true;
            };
            let power = Class::by_power(p, t.p_emergency, t.p_alarm);
            let angle = Class::by_angle(theta, t.theta_emergency, t.theta_alarm);
            match mode {
                Relaxation::Classification => power != angle,
                _ => (power == Class::Emergency) != (angle == Class::Emergency),
            }
        })
        .cloned()
        .collect();
    ExceptionalSet { entries }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSet {
    pub p_emergency: f64,
    pub p_alarm: f64,
    /// Degrees.
    pub theta_emergency: f64,
    /// Degrees.
    pub theta_alarm: f64,
    pub exceptional: ExceptionalSet,
    /// Free-form key/value record of inputs and parameters.
    pub provenance: Vec<(String, String)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdConfig {
    pub detection: DetectionConfig,
    pub alarm_fraction: f64,
    pub relaxation: Relaxation,
    pub exec: Execution,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            detection: DetectionConfig::default(),
            alarm_fraction: 0.96,
            relaxation: Relaxation::Full,
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub thresholds: ThresholdSet,
    /// Angles at the global worst single p_max; used for detection.
    pub pass1: SweepTable,
    /// Angles at p_emergency.
    pub pass2: SweepTable,
    /// Detection result before any relaxation.
    pub full_exceptional: ExceptionalSet,
    pub curve: Curve,
    pub detection_note: Option<String>,
}

/// Two-pass threshold derivation over single outages of the area.
pub fn run_thresholds(
    model: &GridModel,
    area: &Area,
    pattern: &InjectionPattern,
    weights: &WeightVector,
    config: &ThresholdConfig,
) -> Result<PipelineResult> {
    let singles = single_outage_contingencies(area);
    let outcomes = transfer_outcomes(model, area, pattern, &singles, config.exec)?;
    let worst = outcomes
        .iter()
        .filter_map(Outcome::p_max)
        .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.min(p))))
        .ok_or(Error::AllExceptional)?;
    let mut pass1 = sweep_with_outcomes(model, area, pattern, weights, worst, &singles, &outcomes, config.exec)?;
    let (full, note) = match detect_exceptional(&pass1, &config.detection) {
        Ok((set, _)) => (set, None),
        Err(Error::InsufficientRows { have, need }) => {
            (ExceptionalSet::default(), Some(format!("skipped: {have} usable single outages, {need} required")))
        }
        Err(e) => return Err(e),
    };
    pass1.mark_exceptional(&full);
    let (p_emergency, p_alarm) = derive_power_thresholds(&pass1, &full, config.alarm_fraction)?;
    let mut pass2 = sweep_with_outcomes(model, area, pattern, weights, p_emergency, &singles, &outcomes, config.exec)?;
    let (theta_emergency, theta_alarm) =
        power_to_angle_thresholds(model, area, pattern, weights, p_emergency, p_alarm, &pass2, &full)?;
    let mut thresholds = ThresholdSet {
        p_emergency,
        p_alarm,
        theta_emergency,
        theta_alarm,
        exceptional: full.clone(),
        provenance: vec![
            ("detection_level_pu".into(), worst.to_string()),
            ("angle_level_pu".into(), p_emergency.to_string()),
            ("k_mad".into(), config.detection.k_mad.to_string()),
            ("floor_fraction".into(), config.detection.floor_fraction.to_string()),
            ("alarm_fraction".into(), config.alarm_fraction.to_string()),
            ("base_p_max_pu".into(), pass2.base_p_max.to_string()),
            ("detection".into(), note.clone().unwrap_or_else(|| "isotonic fit with MAD residual rule".into())),
        ],
    };
    if config.relaxation != Relaxation::Full {
        let relaxed = relax_exceptional(&full, &pass2, &thresholds, config.relaxation);
        thresholds.exceptional = relaxed;
        thresholds.provenance.push(("relaxation".into(), format!("{:?}", config.relaxation)));
    }
    pass2.mark_exceptional(&thresholds.exceptional);
    let curve = bulk_curve(&pass2, &full);
    Ok(PipelineResult { thresholds, pass1, pass2, full_exceptional: full, curve, detection_note: note })
}

/// Writes thresholds, exceptional branches and weights as `key: value` lines.
pub fn write_threshold_file<W: Write>(mut out: W, t: &ThresholdSet, weights: &WeightVector) -> io::Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "# area angle thresholds; power in pu, angles in degrees");
    let _ = writeln!(s, "p_emergency_pu: {}", t.p_emergency);
    let _ = writeln!(s, "p_alarm_pu: {}", t.p_alarm);
    let _ = writeln!(s, "theta_emergency_deg: {}", t.theta_emergency);
    let _ = writeln!(s, "theta_alarm_deg: {}", t.theta_alarm);
    let ids: Vec<String> = t.exceptional.entries.iter().map(|e| e.branch.to_string()).collect();
    let _ = writeln!(s, "exceptional: {}", ids.join(" "));
    for e in &t.exceptional.entries {
        let _ = writeln!(s, "exception: {} {} {}", e.branch, e.diagnosis.label(), e.residual);
    }
    let _ = writeln!(s, "b_area_pu: {}", weights.b_area);
    for (bus, side, w) in &weights.entries {
        let _ = writeln!(s, "weight: {} {} {}", bus, side.label(), w);
    }
    for (k, v) in &t.provenance {
        let _ = writeln!(s, "{k}: {v}");
    }
    out.write_all(s.as_bytes())
}

pub fn read_threshold_file(text: &str) -> Result<(ThresholdSet, WeightVector)> {
    let bad = |line: usize, msg: &str| Error::ThresholdFile(format!("line {line}: {msg}"));
    let num = |line: usize, v: &str| v.trim().parse::<f64>().map_err(|_| bad(line, "expected a number"));
    let mut values: [Option<f64>; 5] = [None; 5];
    let mut entries = Vec::new();
    let mut listed: Option<Vec<BranchId>> = None;
    let mut weights = Vec::new();
    let mut provenance = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let (key, value) = raw.split_once(':').ok_or_else(|| bad(line, "expected `key: value`"))?;
        let value = value.trim();
        match key.trim() {
            "p_emergency_pu" => values[0] = Some(num(line, value)?),
            "p_alarm_pu" => values[1] = Some(num(line, value)?),
            "theta_emergency_deg" => values[2] = Some(num(line, value)?),
            "theta_alarm_deg" => values[3] = Some(num(line, value)?),
            "b_area_pu" => values[4] = Some(num(line, value)?),
            "exceptional" => {
                let ids: std::result::Result<Vec<BranchId>, _> = value.split_whitespace().map(str::parse).collect();
                listed = Some(ids.map_err(|_| bad(line, "expected branch ids"))?);
            }
            "exception" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                let [id, diag, r] = parts[..] else {
                    return Err(bad(line, "expected `branch diagnosis residual`"));
                };
                let diagnosis = match diag {
                    "underestimates" => Diagnosis::Underestimates,
                    "overestimates" => Diagnosis::Overestimates,
                    _ => return Err(bad(line, "unknown diagnosis")),
                };
                entries.push(ExceptionalEntry {
                    branch: id.parse().map_err(|_| bad(line, "expected a branch id"))?,
                    diagnosis,
                    residual: num(line, r)?,
                });
            }
            "weight" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                let [bus, side, w] = parts[..] else {
                    return Err(bad(line, "expected `bus side weight`"));
                };
                let side = match side {
                    "a" => Side::A,
                    "b" => Side::B,
                    _ => return Err(bad(line, "side must be a or b")),
                };
                let bus: BusId = bus.parse().map_err(|_| bad(line, "expected a bus id"))?;
                weights.push((bus, side, num(line, w)?));
            }
            k => provenance.push((k.to_string(), value.to_string())),
        }
    }
    let names = ["p_emergency_pu", "p_alarm_pu", "theta_emergency_deg", "theta_alarm_deg", "b_area_pu"];
    let mut got = [0.0; 5];
    for (i, v) in values.iter().enumerate() {
        got[i] = v.ok_or_else(|| Error::ThresholdFile(format!("missing `{}`", names[i])))?;
    }
    if weights.is_empty() {
        return Err(Error::ThresholdFile("no weights".into()));
    }
    let listed = listed.unwrap_or_default();
    for id in &listed {
        if !entries.iter().any(|e: &ExceptionalEntry| e.branch == *id) {
            return Err(Error::ThresholdFile(format!("exceptional branch {id} has no diagnosis line")));
        }
    }
    entries.retain(|e| listed.contains(&e.branch));
    entries.sort_by_key(|e| e.branch);
    let t = ThresholdSet {
        p_emergency: got[0],
        p_alarm: got[1],
        theta_emergency: got[2],
        theta_alarm: got[3],
        exceptional: ExceptionalSet { entries },
        provenance,
    };
    Ok((t, WeightVector { entries: weights, b_area: got[4] }))
}
