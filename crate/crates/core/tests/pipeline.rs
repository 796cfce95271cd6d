mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use area_angle::area::{validate_area, AreaSpec};
use area_angle::fixtures::{fixture_a, fixture_b, fixture_c, fixture_c_loaded, random_grid};
use area_angle::grid::{Branch, BranchId, Bus, BusId, GridModel};
use area_angle::monitor::{
    implied_state, ingest_frame, read_stream, simulate_outage_frames, MeasurementFrame, Monitor, MonitorConfig,
    StatusFeed,
};
use area_angle::thresholds::{
    bulk_spearman, detect_exceptional, relax_exceptional, run_thresholds, sample_multi_outages, single_outage_sweep,
    sweep, Diagnosis, PipelineResult, Relaxation, RowFlag, ThresholdConfig,
};
use area_angle::{Error, Execution, State};

use common::Case;

fn pipeline(case: &Case) -> area_angle::Result<PipelineResult> {
    run_thresholds(case.model(), &case.area, &case.pattern, &case.weights, &ThresholdConfig::default())
}

#[test]
fn fixture_a_thresholds() {
    let case = Case::new(fixture_a());
    let r = pipeline(&case).unwrap();
    let t = &r.thresholds;
    assert!((t.p_emergency - 2.0).abs() < 1e-12);
    assert!((t.p_alarm - 2.88).abs() < 1e-12);
    assert!((t.theta_emergency - 5.729577951308232).abs() < 1e-9);
    assert!(t.theta_alarm < t.theta_emergency);
    assert!(t.exceptional.is_empty());
    assert_eq!(r.pass1.rows.len(), 3);
    let theta0 = r.pass1.rows[0].theta_area.unwrap();
    assert!(r.pass1.rows.iter().all(|row| row.theta_area == Some(theta0) && (row.p_max.unwrap() - 2.0).abs() < 1e-12));
}

#[test]
fn fixture_b_flags_the_load_side_outage() {
    let case = Case::new(fixture_b());
    let r = pipeline(&case).unwrap();
    let set = &r.full_exceptional;
    assert_eq!(set.ids(), BTreeSet::from([BranchId(2)]));
    assert_eq!(set.entries[0].diagnosis, Diagnosis::Underestimates);
    // the emergency threshold comes from the remaining worst case, the a-hub outage
    let row = r.pass2.rows.iter().find(|row| row.outages == [BranchId(1)]).unwrap();
    assert_eq!(row.theta_area, Some(r.thresholds.theta_emergency));
}

#[test]
fn ladder_rungs_are_monotone() {
    let case = Case::new(fixture_c());
    let r = pipeline(&case).unwrap();
    assert!(r.full_exceptional.is_empty());
    let mut rungs: Vec<(f64, f64)> = r
        .pass2
        .rows
        .iter()
        .filter(|row| row.outages[0].0 <= 6)
        .map(|row| (row.p_max.unwrap(), row.theta_area.unwrap()))
        .collect();
    rungs.sort_by(|a, b| b.0.total_cmp(&a.0));
    for w in rungs.windows(2) {
        assert!(w[1].0 < w[0].0 && w[1].1 > w[0].1, "{rungs:?}");
    }
}

#[test]
fn loaded_ladder_flags_the_feeding_rung() {
    let case = Case::new(fixture_c_loaded());
    let r = pipeline(&case).unwrap();
    assert_eq!(r.full_exceptional.ids(), BTreeSet::from([BranchId(5)]));
    assert!(bulk_spearman(&r.pass2, &r.full_exceptional) >= 0.95);
}

#[test]
fn relaxed_sets_are_nested() {
    let mut cases = vec![Case::new(fixture_b()), Case::new(fixture_c_loaded())];
    cases.extend((0..30).map(|s| Case::new(random_grid(20, s))));
    for case in &cases {
        let Ok(r) = pipeline(case) else { continue };
        let full = &r.full_exceptional;
        let cls = relax_exceptional(full, &r.pass2, &r.thresholds, Relaxation::Classification);
        let emer = relax_exceptional(full, &r.pass2, &r.thresholds, Relaxation::EmergencyOnly);
        assert!(cls.is_subset_of(full) && emer.is_subset_of(&cls), "{}", case.fixture.name);
    }
}

#[test]
fn thresholds_are_ordered_on_random_grids() {
    let mut ok = 0;
    for seed in 0..40 {
        let case = Case::new(random_grid(20, seed));
        match pipeline(&case) {
            Ok(r) => {
                let t = &r.thresholds;
                assert!(t.p_alarm > t.p_emergency && t.theta_alarm < t.theta_emergency);
                ok += 1;
            }
            Err(
                Error::ThresholdInversion { .. }
                | Error::ExtrapolationRequired { .. }
                | Error::AllExceptional
                | Error::DegenerateFit,
            ) => {}
            Err(e) => panic!("seed {seed}: {e}"),
        }
    }
    assert!(ok >= 20, "only {ok} grids produced thresholds");
}

#[test]
fn detection_needs_enough_rows() {
    let case = Case::new(fixture_a());
    let table = single_outage_sweep(case.model(), &case.area, &case.pattern, &case.weights, 2.0, Execution::Sequential)
        .unwrap();
    // identical rows short-circuit before the row count matters
    assert!(detect_exceptional(&table, &Default::default()).unwrap().0.is_empty());
    let case = Case::new(fixture_c());
    let table = single_outage_sweep(case.model(), &case.area, &case.pattern, &case.weights, 1.0, Execution::Sequential)
        .unwrap();
    let cfg = area_angle::thresholds::DetectionConfig { min_rows: 11, ..Default::default() };
    assert!(matches!(detect_exceptional(&table, &cfg), Err(Error::InsufficientRows { have: 10, need: 11 })));
}

#[test]
fn parallel_and_sequential_sweeps_agree() {
    let case = Case::new(random_grid(40, 11));
    let outs = sample_multi_outages(&case.area, 2, Some(200), 5).unwrap();
    let run = |exec| {
        let t = sweep(case.model(), &case.area, &case.pattern, &case.weights, 1.0, &outs, exec).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        buf
    };
    assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
}

fn path_grid(lines: u32) -> (GridModel, AreaSpec) {
    let buses = (1..=lines + 1)
        .map(|i| Bus {
            id: BusId(i),
            injection: if i == 1 {
                1.0
            } else if i == lines + 1 {
                -1.0
            } else {
                0.0
            },
        })
        .collect();
    let branches = (1..=lines)
        .map(|k| Branch {
            id: BranchId(k),
            from: BusId(k),
            to: BusId(k + 1),
            susceptance: 10.0,
            limit: 2.0,
            in_service: true,
        })
        .collect();
    let spec = AreaSpec {
        a_buses: vec![BusId(1)],
        b_buses: vec![BusId(lines + 1)],
        interior_buses: (2..=lines).map(BusId).collect(),
    };
    (GridModel::new(buses, branches, None).unwrap(), spec)
}

#[test]
fn sampling_is_uniform_plumbing() {
    let (model, spec) = path_grid(515);
    let area = validate_area(&model, &spec).unwrap();
    let s = sample_multi_outages(&area, 3, Some(350), 42).unwrap();
    assert_eq!(s.len(), 350);
    assert_eq!(s.iter().collect::<BTreeSet<_>>().len(), 350);
    assert!(s.iter().all(|c| c.len() == 3 && c[0] < c[1] && c[1] < c[2]));
    assert_eq!(s, sample_multi_outages(&area, 3, Some(350), 42).unwrap());
    assert_ne!(s, sample_multi_outages(&area, 3, Some(350), 43).unwrap());

    let small = Case::new(fixture_a());
    let all = sample_multi_outages(&small.area, 2, None, 0).unwrap();
    assert_eq!(
        all,
        vec![vec![BranchId(1), BranchId(2)], vec![BranchId(1), BranchId(3)], vec![BranchId(2), BranchId(3)]]
    );
    assert_eq!(sample_multi_outages(&small.area, 2, Some(3), 9).unwrap(), all);
    assert!(matches!(sample_multi_outages(&small.area, 2, Some(4), 0), Err(Error::SampleTooLarge { .. })));
}

#[test]
fn fixture_a_frames() {
    let case = Case::new(fixture_a());
    let t = pipeline(&case).unwrap().thresholds;
    let dbl = [BranchId(1), BranchId(2)];
    let frames = simulate_outage_frames(case.model(), &case.area, &case.pattern, &dbl, 1.5, 3, 0, 1000).unwrap();
    assert_eq!(frames.len(), 3);
    let a = frames[0].frame.angles[&BusId(1)] - frames[0].frame.angles[&BusId(2)];
    assert!((a - 0.15f64.to_degrees()).abs() < 1e-9);

    let at_two = simulate_outage_frames(case.model(), &case.area, &case.pattern, &dbl, 2.0, 1, 0, 1).unwrap();
    let c = ingest_frame(&at_two[0].frame, &case.weights, &t, &StatusFeed::default());
    assert!((c.theta_area.unwrap() - 0.2f64.to_degrees()).abs() < 1e-9);
    assert_eq!(c.state, State::Emergency);

    let base = simulate_outage_frames(case.model(), &case.area, &case.pattern, &[], 1.5, 1, 0, 1).unwrap();
    let c = ingest_frame(&base[0].frame, &case.weights, &t, &StatusFeed::default());
    assert!((c.theta_area.unwrap() - 0.05f64.to_degrees()).abs() < 1e-9);
    assert_eq!(c.state, State::Safe);

    let case_c = Case::new(fixture_c());
    assert!(matches!(
        simulate_outage_frames(
            case_c.model(),
            &case_c.area,
            &case_c.pattern,
            &[BranchId(1), BranchId(2)],
            0.5,
            1,
            0,
            1
        ),
        Err(Error::IslandingDetected(_))
    ));
}

#[test]
fn offline_rows_and_frames_agree_on_the_loaded_ladder() {
    let case = Case::new(fixture_c_loaded());
    let r = pipeline(&case).unwrap();
    let level = r.pass2.level;
    for order in 1..=3 {
        let outs = if order == 1 {
            area_angle::thresholds::single_outage_contingencies(&case.area)
        } else {
            sample_multi_outages(&case.area, order, None, 0).unwrap()
        };
        let table =
            sweep(case.model(), &case.area, &case.pattern, &case.weights, level, &outs, Execution::Parallel).unwrap();
        for row in table.rows.iter().filter(|row| row.flag != RowFlag::Islanding) {
            let frames =
                simulate_outage_frames(case.model(), &case.area, &case.pattern, &row.outages, level, 1, 0, 1).unwrap();
            let c = ingest_frame(&frames[0].frame, &case.weights, &r.thresholds, &frames[0].status);
            assert_eq!(Some(c.state), implied_state(row, &r.thresholds), "{:?}", row.outages);
        }
    }
}

fn frame_strategy() -> impl Strategy<Value = (MeasurementFrame, bool)> {
    (-30.0f64..30.0, -30.0f64..30.0, any::<bool>()).prop_map(|(a, b, local)| {
        let frame = MeasurementFrame {
            timestamp_ms: 0,
            angles: [(BusId(1), a), (BusId(2), b)].into(),
            quality: Default::default(),
        };
        (frame, local)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn classification_ignores_frame_order(frames in prop::collection::vec(frame_strategy(), 1..20), seed in any::<u64>()) {
        let case = Case::new(fixture_a());
        let t = pipeline(&case).unwrap().thresholds;
        let mut t = t;
        t.exceptional.entries.push(area_angle::thresholds::ExceptionalEntry {
            branch: BranchId(3), diagnosis: Diagnosis::Overestimates, residual: 1.0,
        });
        let status = |local: bool| StatusFeed { outaged: if local { [BranchId(3)].into() } else { Default::default() } };
        let forward: Vec<_> = frames.iter().map(|(f, l)| ingest_frame(f, &case.weights, &t, &status(*l))).collect();
        let mut idx: Vec<usize> = (0..frames.len()).collect();
        let mut s = seed;
        for i in (1..idx.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            idx.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut monitor = Monitor::new(case.weights.clone(), t.clone(), MonitorConfig::default());
        for (n, &i) in idx.iter().enumerate() {
            let (mut f, l) = frames[i].clone();
            f.timestamp_ms = n as u64;
            let c = monitor.ingest(&f, &status(l));
            prop_assert_eq!(c.state, forward[i].state);
            prop_assert_eq!(c.theta_area, forward[i].theta_area);
            if l {
                prop_assert_eq!(c.state, State::LocalProblem);
            }
        }
    }

    #[test]
    fn stream_lines_round_trip(ts in 0u64..1_000_000, a in -180.0f64..180.0, b in -180.0f64..180.0, outs in prop::collection::btree_set(1u32..50, 0..4)) {
        let rec = area_angle::monitor::StreamRecord {
            frame: MeasurementFrame { timestamp_ms: ts, angles: [(BusId(1), a), (BusId(7), b)].into(), quality: Default::default() },
            status: StatusFeed { outaged: outs.into_iter().map(BranchId).collect() },
        };
        let line = area_angle::monitor::format_record(&rec);
        let back = read_stream(line.as_bytes()).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0].frame.angles, &rec.frame.angles);
        prop_assert_eq!(&back[0].status, &rec.status);
    }
}
