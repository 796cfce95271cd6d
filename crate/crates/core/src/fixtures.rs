//! Small reference networks and a seeded random grid generator.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::area::AreaSpec;
use crate::error::Result;
use crate::grid::{line_flows, solve_dc, Branch, BranchId, Bus, BusId, GridModel};

/// A case with its monitored area.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub name: String,
    pub model: GridModel,
    pub area: AreaSpec,
}

fn line(id: u32, from: u32, to: u32, susceptance: f64, limit: f64) -> Branch {
    Branch { id: BranchId(id), from: BusId(from), to: BusId(to), susceptance, limit, in_service: true }
}

fn buses(injections: &[(u32, f64)]) -> Vec<Bus> {
    injections.iter().map(|&(id, injection)| Bus { id: BusId(id), injection }).collect()
}

fn spec(a: &[u32], b: &[u32], interior: &[u32]) -> AreaSpec {
    AreaSpec {
        a_buses: a.iter().map(|&i| BusId(i)).collect(),
        b_buses: b.iter().map(|&i| BusId(i)).collect(),
        interior_buses: interior.iter().map(|&i| BusId(i)).collect(),
    }
}

/// Three parallel lines between a (bus 1) and b (bus 2): x = 0.1 pu, limit 1 pu, 1.5 pu transfer.
pub fn fixture_a() -> Fixture {
    let branches = (1..=3).map(|k| line(k, 1, 2, 1.0 / 0.1, 1.0)).collect();
    Fixture {
        name: "a".into(),
        model: GridModel::new(buses(&[(1, 1.5), (2, -1.5)]), branches, Some(BusId(2))).expect("valid fixture"),
        area: spec(&[1], &[2], &[]),
    }
}

/// Triangle a (1), b (2), c (3) with a load at c. Lines: 1 a-b, 2 a-c, 3 c-b.
/// Outages of a-b and a-c allow the same transfer but leave different angles.
pub fn fixture_b_triangle() -> Fixture {
    let branches = vec![line(1, 1, 2, 10.0, 2.5), line(2, 1, 3, 10.0, 2.5), line(3, 3, 2, 10.0, 1.5)];
    Fixture {
        name: "b-triangle".into(),
        model: GridModel::new(buses(&[(1, 2.0), (2, -1.0), (3, -1.0)]), branches, Some(BusId(2)))
            .expect("valid fixture"),
        area: spec(&[1], &[2], &[3]),
    }
}

/// The triangle with its b corner turned into a hub (bus 2) that feeds the receiving
/// border bus 4 over nine parallel circuits. Enough single outages for detection.
/// Line 1 is a-hub, line 2 is a-c (bus 3), line 3 is c-hub, lines 4..=12 are hub-4.
pub fn fixture_b() -> Fixture {
    let mut branches = vec![line(1, 1, 2, 10.0, 2.0), line(2, 1, 3, 10.0, 2.0), line(3, 3, 2, 10.0, 3.0)];
    for (k, b) in (4..=12).zip(3..=11) {
        let b = b as f64;
        branches.push(line(k, 2, 4, b, 0.04 * b));
    }
    Fixture {
        name: "b".into(),
        model: GridModel::new(buses(&[(1, 1.5), (2, 0.0), (3, -0.5), (4, -1.0)]), branches, Some(BusId(4)))
            .expect("valid fixture"),
        area: spec(&[1], &[4], &[2, 3]),
    }
}

/// Ladder bus ids.
pub mod ladder {
    pub const A1: u32 = 1;
    pub const A2: u32 = 2;
    pub const M1: u32 = 3;
    pub const M2: u32 = 4;
    pub const N1: u32 = 5;
    pub const N2: u32 = 6;
    pub const B1: u32 = 7;
    pub const B2: u32 = 8;
}

fn ladder_model(load_n1: f64) -> GridModel {
    use ladder::*;
    // rungs: (id, from, to, susceptance); each stage pair sums to 20
    let rungs =
        [(1, A1, M1, 13.0), (2, A2, M2, 7.0), (3, M1, N1, 16.0), (4, M2, N2, 4.0), (5, N1, B1, 12.0), (6, N2, B2, 8.0)];
    let mut branches: Vec<Branch> = rungs.iter().map(|&(k, f, t, b)| line(k, f, t, b, 2.0 * b / 20.0)).collect();
    for (k, (f, t)) in (7..).zip([(A1, A2), (M1, M2), (N1, N2), (B1, B2)]) {
        branches.push(line(k, f, t, 100.0, 3.0));
    }
    let inj = [
        (A1, 0.6 + 0.6 * load_n1),
        (A2, 0.4 + 0.4 * load_n1),
        (M1, 0.0),
        (M2, 0.0),
        (N1, -load_n1),
        (N2, 0.0),
        (B1, -0.5),
        (B2, -0.5),
    ];
    GridModel::new(buses(&inj), branches, Some(BusId(B1))).expect("valid fixture")
}

/// Two-rail ladder: a1/a2 send, b1/b2 receive, three stages of unequal rungs joined by stiff ties.
pub fn fixture_c() -> Fixture {
    use ladder::*;
    Fixture { name: "c".into(), model: ladder_model(0.0), area: spec(&[A1, A2], &[B1, B2], &[M1, M2, N1, N2]) }
}

/// The ladder with a 1 pu load at n1, so the n1-b1 rung feeds a large interior load.
pub fn fixture_c_loaded() -> Fixture {
    Fixture { name: "c-loaded".into(), model: ladder_model(1.0), ..fixture_c() }
}

/// Seeded random connected grid with a = {1, 2}, b = {n-1, n} and every other bus interior.
/// Limits sit 30 to 150 percent above base-case flows so every line has headroom.
pub fn random_grid(n: usize, seed: u64) -> Fixture {
    assert!(n >= 5, "random grid needs at least five buses");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n32 = n as u32;
    let mut edges: BTreeSet<(u32, u32)> = BTreeSet::new();
    // random spanning tree: each bus attaches to an earlier one
    let mut order: Vec<u32> = (1..=n32).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    for i in 1..order.len() {
        let j = order[rng.random_range(0..i)];
        let (u, v) = (order[i].min(j), order[i].max(j));
        edges.insert((u, v));
    }
    let extra = n / 2 + rng.random_range(0..=n / 2);
    let mut tries = 0;
    while edges.len() < n - 1 + extra && tries < 100 * n {
        tries += 1;
        let u = rng.random_range(1..=n32);
        let v = rng.random_range(1..=n32);
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }
    let transfer = rng.random_range(0.5..1.5);
    let share: f64 = rng.random_range(0.3..0.7);
    let mut inj = vec![0.0; n];
    inj[0] = transfer * share;
    inj[1] = transfer * (1.0 - share);
    for p in inj.iter_mut().take(n - 2).skip(2) {
        *p = rng.random_range(-0.05..0.05);
    }
    let rest: f64 = inj.iter().sum();
    inj[n - 2] = -rest / 2.0;
    inj[n - 1] = -rest / 2.0;
    let bus_list: Vec<Bus> = (1..=n32).zip(&inj).map(|(id, &injection)| Bus { id: BusId(id), injection }).collect();
    let mut branches: Vec<Branch> =
        edges.iter().zip(1..).map(|(&(u, v), k)| line(k, u, v, rng.random_range(5.0..20.0), 1.0)).collect();
    let slack = Some(BusId(n32));
    let probe = GridModel::new(bus_list.clone(), branches.clone(), slack).expect("connected by construction");
    let flows = line_flows(&probe, &solve_dc(&probe, &[]).expect("connected by construction"));
    for br in &mut branches {
        br.limit = flows.flows[&br.id].abs() * rng.random_range(1.3..2.5) + 0.05;
    }
    let interior: Vec<u32> = (3..=n32 - 2).collect();
    Fixture {
        name: format!("random-{n}-{seed}"),
        model: GridModel::new(bus_list, branches, slack).expect("connected by construction"),
        area: spec(&[1, 2], &[n32 - 1, n32], &interior),
    }
}

impl Fixture {
    /// Writes `buses.csv`, `branches.csv` and `area.csv` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(File::create(dir.join("buses.csv"))?);
        w.write_record(["bus_id", "injection_pu"])?;
        for b in self.model.buses() {
            w.write_record([b.id.to_string(), b.injection.to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_writer(File::create(dir.join("branches.csv"))?);
        w.write_record(["branch_id", "from", "to", "b_pu", "limit_pu", "in_service"])?;
        for br in self.model.branches() {
            w.write_record([
                br.id.to_string(),
                br.from.to_string(),
                br.to.to_string(),
                br.susceptance.to_string(),
                br.limit.to_string(),
                (br.in_service as u8).to_string(),
            ])?;
        }
        w.flush()?;
        let mut f = io::BufWriter::new(File::create(dir.join("area.csv"))?);
        writeln!(f, "bus_id,side")?;
        for b in &self.area.a_buses {
            writeln!(f, "{b},a")?;
        }
        for b in &self.area.b_buses {
            writeln!(f, "{b},b")?;
        }
        for b in &self.area.interior_buses {
            writeln!(f, "{b},interior")?;
        }
        f.flush()?;
        Ok(())
    }
}

pub fn by_name(name: &str) -> Option<Fixture> {
    match name {
        "a" => Some(fixture_a()),
        "b" => Some(fixture_b()),
        "b-triangle" => Some(fixture_b_triangle()),
        "c" => Some(fixture_c()),
        "c-loaded" => Some(fixture_c_loaded()),
        _ => None,
    }
}

pub const NAMES: [&str; 5] = ["a", "b", "b-triangle", "c", "c-loaded"];
