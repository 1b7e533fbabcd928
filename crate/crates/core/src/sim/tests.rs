use super::*;
use crate::profile::{static_delay, Layer, StageCosts, TierCapacities};

fn one_layer(gflop: f64) -> ModelProfile<f64> {
    ModelProfile::new(vec![Layer::new(gflop, 0.0)], 0.0)
}

fn times(log: &EventLog, pick: impl Fn(&Record) -> bool) -> Vec<f64> {
    log.records.iter().filter(|r| pick(r)).map(Record::time).collect()
}

fn assert_close(a: &[f64], b: &[f64]) {
    assert_eq!(a.len(), b.len(), "{a:?} vs {b:?}");
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
    }
}

#[test]
fn periodic_single_stage_trace() {
    // D = 10 / 500 = 0.02 s
    let mut sc = Scenario::mobile_edge(one_layer(10.0), 1, 500.0, 500.0, 1000.0);
    sc.sampling = SamplingPolicy::periodic(0.1);
    sc.horizon_s = 0.35;
    let log = run(&sc).unwrap();
    log.check().unwrap();
    assert_close(
        &times(&log, |r| matches!(r, Record::Sample { .. })),
        &[0.0, 0.1, 0.2, 0.3],
    );
    assert_close(
        &times(&log, |r| matches!(r, Record::Generated { .. })),
        &[0.02, 0.12, 0.22, 0.32],
    );
}

#[test]
fn zero_wait_two_stage_pipeline_trace() {
    // mobile 0.5 s, edge 0.5 s, nothing on the link
    let profile = ModelProfile::uniform(2, 50.0, 0.0, 0.0);
    let mut sc = Scenario::mobile_edge(profile, 1, 100.0, 100.0, 1000.0);
    sc.horizon_s = 5.0;
    let log = run(&sc).unwrap();
    log.check().unwrap();
    let samples = times(&log, |r| matches!(r, Record::Sample { .. }));
    let expected: Vec<f64> = (0..=10).map(|k| 0.5 * k as f64).collect();
    assert_close(&samples, &expected);
    let gens = times(&log, |r| matches!(r, Record::Generated { .. }));
    let expected: Vec<f64> = (0..9).map(|k| 0.5 * k as f64 + 1.0).collect();
    assert_close(&gens, &expected);
}

#[test]
fn dedup_is_a_no_op_when_everything_is_new() {
    let profile = ModelProfile::uniform(4, 10.0, 1.0, 2.0);
    let mut sc = Scenario::mobile_edge(profile, 2, 300.0, 400.0, 100.0);
    sc.sampling = SamplingPolicy::periodic(0.05);
    sc.cap_edge = RandomProcessSpec::TwoStateMarkov {
        value_hi: 700.0,
        value_lo: 300.0,
        mean_dwell_hi_s: 0.4,
        mean_dwell_lo_s: 0.4,
    };
    sc.seed = 17;
    let off = run(&sc).unwrap();
    sc.dedup_enabled = true;
    let on = run(&sc).unwrap();
    assert_eq!(off.records, on.records);
}

#[test]
fn dedup_drops_stale_samples() {
    let mut sc = Scenario::mobile_edge(one_layer(10.0), 1, 500.0, 500.0, 1000.0);
    sc.sampling = SamplingPolicy::periodic(0.1);
    sc.dedup_enabled = true;
    sc.p_semantic_change = 0.3;
    sc.seed = 5;
    let log = run(&sc).unwrap();
    let mut dropped = 0;
    for r in &log.records {
        if let Record::Sample {
            semantic_new,
            admitted,
            ..
        } = r
        {
            assert_eq!(semantic_new, admitted);
            dropped += usize::from(!admitted);
        }
    }
    assert!(dropped > 0);
    let admitted = log
        .records
        .iter()
        .filter(|r| matches!(r, Record::Sample { admitted: true, .. }))
        .count();
    assert_eq!(admitted, log.generated_count());
}

#[test]
fn zero_wait_with_dedup_needs_poll_interval() {
    let mut sc = Scenario::mobile_edge(one_layer(10.0), 1, 500.0, 500.0, 1000.0);
    sc.dedup_enabled = true;
    sc.p_semantic_change = 0.5;
    assert!(matches!(
        run(&sc),
        Err(SimError::Invalid {
            field: "sampling.dedup_poll_s",
            ..
        })
    ));
    sc.sampling = SamplingPolicy::ZeroWait {
        dedup_poll_s: Some(0.01),
    };
    let log = run(&sc).unwrap();
    log.check().unwrap();
    assert!(log.generated_count() > 10);
}

#[test]
fn same_seed_same_log() {
    let profile = ModelProfile::uniform(6, 10.0, 1.0, 2.0);
    let mut sc = Scenario::mobile_edge(profile, 3, 300.0, 400.0, 50.0);
    sc.cap_mobile = RandomProcessSpec::IidLognormal { mu: 5.7, sigma: 0.4 };
    sc.rate1 = RandomProcessSpec::TwoStateMarkov {
        value_hi: 80.0,
        value_lo: 10.0,
        mean_dwell_hi_s: 0.2,
        mean_dwell_lo_s: 0.1,
    };
    sc.p_intercept = 0.4;
    sc.p_semantic_change = 0.5;
    sc.seed = 99;
    let a = run(&sc).unwrap();
    let b = run(&sc).unwrap();
    assert_eq!(export_log(&a), export_log(&b));
    sc.seed = 100;
    let c = run(&sc).unwrap();
    assert_ne!(export_log(&a), export_log(&c));
}

#[test]
fn single_job_in_flight_matches_static_delay() {
    let profile = ModelProfile::new(
        vec![
            Layer::new(12.0, 3.0),
            Layer::new(7.5, 0.5),
            Layer::new(30.0, 2.0),
            Layer::new(4.0, 0.25),
        ],
        6.0,
    );
    for part in profile.enumerate_partitions(crate::profile::Tiers::Three) {
        let mut sc = Scenario::mobile_edge(profile.clone(), 0, 450.0, 650.0, 40.0);
        sc.partition = part;
        sc.cap_cloud = Some(RandomProcessSpec::constant(2000.0));
        sc.rate2 = RandomProcessSpec::constant(120.0);
        sc.sampling = SamplingPolicy::periodic(1.0);
        sc.queue_discipline = QueueDiscipline::Fifo;
        sc.horizon_s = 5.5;
        let costs: StageCosts<f64> = profile.partition_costs(part).unwrap();
        let d = static_delay(&costs, &TierCapacities::three_tier(450.0, 650.0, 2000.0, 40.0, 120.0))
            .unwrap();
        let log = run(&sc).unwrap();
        assert!(log.warnings.is_empty());
        let samples = times(&log, |r| matches!(r, Record::Sample { .. }));
        let mut n = 0;
        for r in &log.records {
            if let Record::Generated { t, id, inference_s, .. } = *r {
                assert!((t - samples[id as usize] - d).abs() < 1e-9);
                assert!((inference_s - d).abs() < 1e-9);
                n += 1;
            }
        }
        assert_eq!(n, 6);
    }
}

#[test]
fn keep_latest_holds_at_most_one_waiting_job() {
    let profile = ModelProfile::uniform(4, 10.0, 1.0, 1.0);
    let mut sc = Scenario::mobile_edge(profile, 1, 800.0, 100.0, 200.0);
    sc.sampling = SamplingPolicy::periodic(0.01);
    sc.horizon_s = 3.0;
    let mut engine = Engine::new(&sc).unwrap();
    engine.prime();
    while engine.step() {
        assert!(engine.stages.iter().all(|s| s.queue.len() <= 1));
    }
    let discarded = engine
        .records
        .iter()
        .filter(|r| matches!(r, Record::Discarded { .. }))
        .count();
    assert!(discarded > 0);
    // generations stay in sampling order
    let ids: Vec<u64> = engine
        .records
        .iter()
        .filter_map(|r| match r {
            Record::Generated { id, .. } => Some(*id),
            _ => None,
        })
        .collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn fifo_overload_warns_but_runs() {
    let profile = ModelProfile::uniform(2, 10.0, 0.0, 0.0);
    let mut sc = Scenario::mobile_edge(profile, 1, 1000.0, 100.0, 1000.0);
    sc.queue_discipline = QueueDiscipline::Fifo;
    sc.horizon_s = 2.0;
    let log = run(&sc).unwrap();
    assert_eq!(log.warnings.len(), 1);
    assert!(log.warnings[0].contains("edge"));
    log.check().unwrap();
}

#[test]
fn interception_extremes() {
    let profile = ModelProfile::uniform(4, 10.0, 1.0, 1.0);
    let mut sc = Scenario::mobile_edge(profile, 2, 500.0, 500.0, 100.0);
    sc.horizon_s = 4.0;
    sc.p_intercept = 0.0;
    let log = run(&sc).unwrap();
    assert!(!log.records.iter().any(|r| matches!(r, Record::Intercepted { .. })));

    sc.p_intercept = 1.0;
    let log = run(&sc).unwrap();
    let gen: Vec<(f64, u64)> = log
        .records
        .iter()
        .filter_map(|r| match *r {
            Record::Generated { t, id, .. } => Some((t, id)),
            _ => None,
        })
        .collect();
    let icp: Vec<(f64, u64)> = log
        .records
        .iter()
        .filter_map(|r| match *r {
            Record::Intercepted { t, id } => Some((t, id)),
            _ => None,
        })
        .collect();
    assert!(!gen.is_empty());
    assert_eq!(gen, icp);
}

#[test]
fn capacity_changes_rescale_remaining_work() {
    let mut sc = Scenario::mobile_edge(one_layer(100.0), 1, 500.0, 500.0, 1000.0);
    sc.cap_mobile = RandomProcessSpec::TwoStateMarkov {
        value_hi: 1000.0,
        value_lo: 250.0,
        mean_dwell_hi_s: 0.05,
        mean_dwell_lo_s: 0.05,
    };
    sc.sampling = SamplingPolicy::periodic(1.0);
    sc.horizon_s = 200.0;
    sc.seed = 3;
    let log = run(&sc).unwrap();
    let samples = times(&log, |r| matches!(r, Record::Sample { .. }));
    let mut strictly_between = 0;
    for r in &log.records {
        if let Record::Generated { t, id, .. } = *r {
            let d = t - samples[id as usize];
            assert!(d >= 0.1 - 1e-12 && d <= 0.4 + 1e-12, "{d}");
            if d > 0.1 + 1e-9 && d < 0.4 - 1e-9 {
                strictly_between += 1;
            }
        }
    }
    // with 50 ms dwells most 100-400 ms jobs straddle a switch
    assert!(strictly_between > 100);
}

#[test]
fn early_exit_skips_remaining_layers() {
    let profile = ModelProfile::new(
        vec![
            Layer::new(50.0, 1.0).with_exit(),
            Layer::new(50.0, 1.0),
        ],
        1.0,
    );
    let mut sc = Scenario::mobile_edge(profile, 1, 100.0, 100.0, 1000.0);
    sc.sampling = SamplingPolicy::periodic(2.0);
    sc.horizon_s = 3.0;
    sc.early_exit_threshold_s = Some(0.4);
    let log = run(&sc).unwrap();
    let gens: Vec<(f64, Option<usize>)> = log
        .records
        .iter()
        .filter_map(|r| match *r {
            Record::Generated { t, via_exit, .. } => Some((t, via_exit)),
            _ => None,
        })
        .collect();
    // mobile finishes at 0.5 >= 0.4, layer 1 is an exit point
    assert_eq!(gens.len(), 2);
    assert!((gens[0].0 - 0.5).abs() < 1e-12);
    assert_eq!(gens[0].1, Some(1));
    assert!(export_log(&log).contains("exit:1"));

    sc.early_exit_threshold_s = Some(0.6);
    let log = run(&sc).unwrap();
    let g = times(&log, |r| matches!(r, Record::Generated { via_exit: None, .. }));
    assert!((g[0] - 1.001).abs() < 1e-12);
}

#[test]
fn verification_schedule() {
    let mut sc = Scenario::mobile_edge(one_layer(10.0), 1, 500.0, 500.0, 1000.0);
    sc.horizon_s = 10.0;
    sc.verification = Some(VerificationSpec {
        period_s: 4.0,
        cost: 1.0,
        levels: vec![
            TrustLevel {
                name: "hi".into(),
                probability: 0.5,
                initial_age_s: 0.1,
            },
            TrustLevel {
                name: "lo".into(),
                probability: 0.5,
                initial_age_s: 1.0,
            },
        ],
    });
    let log = run(&sc).unwrap();
    let v: Vec<(f64, u64, f64)> = log
        .records
        .iter()
        .filter_map(|r| match r {
            Record::Verified { t, k, delta, trust_level } => {
                assert_eq!(*delta, if trust_level == "hi" { 0.1 } else { 1.0 });
                Some((*t, *k, *delta))
            }
            _ => None,
        })
        .collect();
    assert_eq!(v.iter().map(|x| (x.0, x.1)).collect::<Vec<_>>(), vec![(0.0, 0), (4.0, 1), (8.0, 2)]);
}

#[test]
fn rejects_bad_scenarios() {
    let base = Scenario::mobile_edge(one_layer(10.0), 1, 500.0, 500.0, 1000.0);
    let mut sc = base.clone();
    sc.p_intercept = 1.5;
    assert!(matches!(run(&sc), Err(SimError::Invalid { field: "p_intercept", .. })));
    let mut sc = base.clone();
    sc.horizon_s = 0.0;
    assert!(run(&sc).is_err());
    let mut sc = base.clone();
    sc.partition = Partition::new(0, 0);
    assert!(matches!(run(&sc), Err(SimError::Invalid { field: "cap_cloud", .. })));
    let mut sc = base;
    sc.cap_mobile = RandomProcessSpec::constant(-1.0);
    assert!(run(&sc).is_err());
}
