//! Post-contingency margins, shift factors and maximum power into the area.

use std::collections::BTreeMap;

use crate::area::{solution_area_angle, Area, BranchRole, WeightVector};
use crate::error::{Error, Result};
use crate::grid::{raw_flows, solve_dc, BranchId, BusId, DcSystem, GridModel};

/// Shift factors at or below this magnitude never bind.
pub const RHO_EPS: f64 = 1e-9;
/// Sanity cap on shift factor magnitude; larger values are flagged.
pub const DEFAULT_RHO_CAP: f64 = 50.0;

/// Border injection ratios frozen from the base case.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionPattern {
    pub alphas: BTreeMap<BusId, f64>,
    /// P_a of the base case, pu.
    pub base_transfer: f64,
}

impl InjectionPattern {
    /// Pattern as a bus-ordered injection vector.
    pub(crate) fn vector(&self, model: &GridModel) -> Vec<f64> {
        let mut d = vec![0.0; model.buses().len()];
        for (bus, a) in &self.alphas {
            d[model.bus_position(*bus).expect("border bus in model")] = *a;
        }
        d
    }
}

/// Net power each border bus sends into area branches for the given angles.
fn border_outflows(model: &GridModel, area: &Area, theta: &[f64]) -> BTreeMap<BusId, f64> {
    let mut out: BTreeMap<BusId, f64> = area.border().iter().map(|(b, _)| (*b, 0.0)).collect();
    let no_outage = vec![false; model.branches().len()];
    let flows = raw_flows(model, &no_outage, theta);
    for (k, br) in model.branches().iter().enumerate() {
        if area.role(br.id) != Some(BranchRole::Interior) {
            continue;
        }
        if let Some(v) = out.get_mut(&br.from) {
            *v += flows[k];
        }
        if let Some(v) = out.get_mut(&br.to) {
            *v -= flows[k];
        }
    }
    out
}

/// Current power entering the area through the a buses (base topology), pu.
pub fn transfer_into_area(model: &GridModel, area: &Area) -> Result<f64> {
    let sol = solve_dc(model, &[])?;
    let out = border_outflows(model, area, sol.raw());
    Ok(area.spec().a_buses.iter().map(|b| out[b]).sum())
}

/// alpha_j = P_into_j / P_a on the a side and P_into_j / P_b on the b side.
pub fn injection_pattern(model: &GridModel, area: &Area) -> Result<InjectionPattern> {
    let sol = solve_dc(model, &[])?;
    let out = border_outflows(model, area, sol.raw());
    let spec = area.spec();
    let p_a: f64 = spec.a_buses.iter().map(|b| out[b]).sum();
    let p_b: f64 = -spec.b_buses.iter().map(|b| out[b]).sum::<f64>();
    if !(p_a > 1e-12) || !(p_b > 1e-12) {
        return Err(Error::ZeroBaseTransfer);
    }
    let mut alphas = BTreeMap::new();
    for b in &spec.a_buses {
        alphas.insert(*b, out[b] / p_a);
    }
    for b in &spec.b_buses {
        alphas.insert(*b, out[b] / p_b);
    }
    Ok(InjectionPattern { alphas, base_transfer: p_a })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Margin {
    pub up: f64,
    pub down: f64,
}

pub fn line_margins(model: &GridModel, outages: &[BranchId]) -> Result<BTreeMap<BranchId, Margin>> {
    let sys = DcSystem::new(model, outages)?;
    let theta = sys.solve(&model.injections())?;
    let flows = raw_flows(model, sys.mask(), &theta);
    Ok(margins_from(model, sys.mask(), &flows, |_| true))
}

fn margins_from(
    model: &GridModel,
    mask: &[bool],
    flows: &[f64],
    keep: impl Fn(usize) -> bool,
) -> BTreeMap<BranchId, Margin> {
    let mut out = BTreeMap::new();
    for (k, br) in model.branches().iter().enumerate() {
        if model.active(k, mask) && keep(k) {
            out.insert(br.id, Margin { up: br.limit - flows[k], down: -br.limit - flows[k] });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftFactorRow {
    pub rho: BTreeMap<BranchId, f64>,
    pub outages: Vec<BranchId>,
}

impl ShiftFactorRow {
    /// Branches whose shift factor magnitude exceeds `cap`.
    pub fn flagged(&self, cap: f64) -> Vec<BranchId> {
        self.rho.iter().filter(|(_, r)| r.abs() > cap).map(|(id, _)| *id).collect()
    }
}

/// One solve of B^(i) theta = d with d the pattern at the border, then b_k (theta_u - theta_v).
pub fn shift_factors(model: &GridModel, outages: &[BranchId], pattern: &InjectionPattern) -> Result<ShiftFactorRow> {
    let sys = DcSystem::new(model, outages)?;
    let theta = sys.solve(&pattern.vector(model))?;
    let flows = raw_flows(model, sys.mask(), &theta);
    let mut rho = BTreeMap::new();
    for (k, br) in model.branches().iter().enumerate() {
        if model.active(k, sys.mask()) {
            rho.insert(br.id, flows[k]);
        }
    }
    Ok(ShiftFactorRow { rho, outages: outages.to_vec() })
}

/// Largest extra patterned injection before some line hits its limit.
/// Ties go to the lowest branch id.
pub fn max_injection(margins: &BTreeMap<BranchId, Margin>, rho: &BTreeMap<BranchId, f64>) -> Result<(f64, BranchId)> {
    let mut best: Option<(f64, BranchId)> = None;
    for (id, m) in margins {
        let r = rho.get(id).copied().unwrap_or(0.0);
        let cand = if r > RHO_EPS {
            m.up / r
        } else if r < -RHO_EPS {
            m.down / r
        } else {
            continue;
        };
        if best.is_none_or(|(v, _)| cand < v) {
            best = Some((cand, *id));
        }
    }
    best.ok_or(Error::Unbounded)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferResult {
    pub outages: Vec<BranchId>,
    pub delta_p_inj: f64,
    pub p_max: f64,
    pub binding_line: BranchId,
    pub area_angle_at_level: Option<f64>,
}

/// Precomputed pieces shared by every contingency of a sweep.
pub(crate) struct TransferContext<'a> {
    model: &'a GridModel,
    in_area: Vec<bool>,
    pattern: Vec<f64>,
    injections: Vec<f64>,
    p_a: f64,
}

impl<'a> TransferContext<'a> {
    pub(crate) fn new(model: &'a GridModel, area: &Area, pattern: &InjectionPattern) -> Result<Self> {
        let in_area = model.branches().iter().map(|br| area.role(br.id) == Some(BranchRole::Interior)).collect();
        Ok(TransferContext {
            model,
            in_area,
            pattern: pattern.vector(model),
            injections: model.injections(),
            p_a: transfer_into_area(model, area)?,
        })
    }

    pub(crate) fn p_a(&self) -> f64 {
        self.p_a
    }

    pub(crate) fn assess(&self, outages: &[BranchId]) -> Result<TransferResult> {
        let sys = DcSystem::new(self.model, outages)?;
        let flows = raw_flows(self.model, sys.mask(), &sys.solve(&self.injections)?);
        let rho = raw_flows(self.model, sys.mask(), &sys.solve(&self.pattern)?);
        let mut best: Option<(f64, usize)> = None;
        for (k, br) in self.model.branches().iter().enumerate() {
            if !self.in_area[k] || !self.model.active(k, sys.mask()) {
                continue;
            }
            let r = rho[k];
            let cand = if r > RHO_EPS {
                (br.limit - flows[k]) / r
            } else if r < -RHO_EPS {
                (-br.limit - flows[k]) / r
            } else {
                continue;
            };
            if best.is_none_or(|(v, _)| cand < v) {
                best = Some((cand, k));
            }
        }
        let (delta, k) = best.ok_or(Error::Unbounded)?;
        Ok(TransferResult {
            outages: outages.to_vec(),
            delta_p_inj: delta,
            p_max: self.p_a + delta,
            binding_line: self.model.branches()[k].id,
            area_angle_at_level: None,
        })
    }
}

/// p_max = P_a + delta_p_inj over area branches, P_a taken from the model's base topology.
pub fn max_power_into_area(
    model: &GridModel,
    area: &Area,
    pattern: &InjectionPattern,
    outages: &[BranchId],
) -> Result<TransferResult> {
    TransferContext::new(model, area, pattern)?.assess(outages)
}

/// Shifts border injections by (target - P_a) alpha_j.
pub fn set_transfer_level(
    model: &GridModel,
    area: &Area,
    pattern: &InjectionPattern,
    target: f64,
) -> Result<GridModel> {
    if !(pattern.base_transfer > 0.0) {
        return Err(Error::ZeroBaseTransfer);
    }
    let current = transfer_into_area(model, area)?;
    Ok(shifted(model, pattern, target - current))
}

pub(crate) fn shifted(model: &GridModel, pattern: &InjectionPattern, delta: f64) -> GridModel {
    let d = pattern.vector(model);
    let inj: Vec<f64> = model.injections().iter().zip(&d).map(|(p, a)| p + delta * a).collect();
    model.with_injections(&inj)
}

/// Area angle (degrees) after `outages`, base-case weights.
pub fn post_outage_area_angle(model_at_level: &GridModel, weights: &WeightVector, outages: &[BranchId]) -> Result<f64> {
    let sol = solve_dc(model_at_level, outages)?;
    Ok(solution_area_angle(weights, &sol))
}
