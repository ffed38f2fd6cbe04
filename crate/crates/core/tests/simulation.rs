use std::sync::Arc;

use platoon_core::config::{paper_s5, Representation, ScenarioConfig};
use platoon_core::output::CsvSink;
use platoon_core::simulator::{
    run_scenario, ControlLaw, ControlOrdering, RunOptions, Sample, SampleBuffer, SimError, Simulator,
};

fn noise_free(duration: f64) -> ScenarioConfig {
    let mut c = paper_s5();
    c.noise.enabled = false;
    c.integration.duration_s = duration;
    c
}

fn samples(c: &ScenarioConfig, rep: Representation, options: RunOptions) -> Vec<Sample> {
    let mut buf = SampleBuffer::default();
    Simulator::new(c, rep, options).unwrap().run(&mut buf).unwrap();
    buf.0
}

fn csv_bytes(c: &ScenarioConfig) -> Vec<u8> {
    let mut sink = CsvSink::new(Vec::new(), c.topology().unwrap().carriages_per_train()).unwrap();
    Simulator::new(c, Representation::Composite, RunOptions::default()).unwrap().run(&mut sink).unwrap();
    sink.finish().unwrap()
}

#[test]
fn identical_seed_gives_identical_record() {
    let mut c = paper_s5();
    c.integration.duration_s = 30.0;
    let a = csv_bytes(&c);
    assert_eq!(a, csv_bytes(&c));
    c.noise.seed = 1;
    assert_ne!(a, csv_bytes(&c));
}

#[test]
fn stale_front_tail_control_changes_following_trains_only() {
    let c = noise_free(60.0);
    let chain = samples(&c, Representation::Composite, RunOptions::default());
    let stale = samples(
        &c,
        Representation::Composite,
        RunOptions { ordering: ControlOrdering::StaleFrontTail, ..Default::default() },
    );
    let divergence = |range: std::ops::Range<usize>| {
        chain
            .iter()
            .zip(&stale)
            .flat_map(|(a, b)| range.clone().map(move |k| (a.carriages[k].x - b.carriages[k].x).abs()))
            .fold(0.0, f64::max)
    };
    assert_eq!(divergence(0..3), 0.0, "the lead train has no front tail");
    let later = divergence(3..9);
    assert!(later > 1e-6, "stale ordering went unnoticed: {later:e}");
}

#[test]
fn halving_the_step_barely_moves_terminal_errors() {
    let coarse = noise_free(2400.0);
    let mut fine = coarse.clone();
    fine.integration.step_s = 0.005;
    let last = |c: &ScenarioConfig| {
        let mut end = Sample::default();
        let mut keep = |s: &Sample| {
            end = s.clone();
            Ok(())
        };
        Simulator::new(c, Representation::Composite, RunOptions::default()).unwrap().run(&mut keep).unwrap();
        end
    };
    let (a, b) = (last(&coarse), last(&fine));
    assert_eq!(a.t, 2400.0);
    assert_eq!(b.t, 2400.0);
    for (p, q) in a.pairs.iter().zip(&b.pairs) {
        assert!((p.x_tilde - q.x_tilde).abs() < 1e-4, "{} vs {}", p.x_tilde, q.x_tilde);
        assert!((p.v_tilde - q.v_tilde).abs() < 1e-4, "{} vs {}", p.v_tilde, q.v_tilde);
    }
}

#[test]
fn both_representations_agree_in_closed_loop() {
    let mut c = noise_free(20.0);
    c.integration.step_s = 1e-3;
    c.integration.representation = Representation::Both;
    let mut records: Vec<(Representation, Vec<Sample>)> = Vec::new();
    let outcomes = {
        let cell = std::cell::RefCell::new(&mut records);
        run_scenario(&c, RunOptions::default(), |rep| {
            cell.borrow_mut().push((rep, Vec::new()));
            let idx = cell.borrow().len() - 1;
            let cell = &cell;
            Ok(Some(Box::new(move |s: &Sample| {
                cell.borrow_mut()[idx].1.push(s.clone());
                Ok(())
            }) as Box<dyn platoon_core::simulator::SampleSink + '_>))
        })
        .unwrap()
    };
    assert_eq!(outcomes.len(), 2);
    assert_eq!(records[0].0, Representation::Composite);
    assert_eq!(records[1].0, Representation::Plant);
    let worst = records[0]
        .1
        .iter()
        .zip(&records[1].1)
        .flat_map(|(a, b)| a.carriages.iter().zip(&b.carriages).map(|(p, q)| (p.x - q.x).abs().max((p.v - q.v).abs())))
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst:e}");
}

#[test]
fn degenerate_gain_rejected_before_stepping() {
    let mut c = noise_free(10.0);
    c.follower_gains.l1 = 0.0;
    match run_scenario(&c, RunOptions::default(), |_| Ok(None)) {
        Err(SimError::Config(e)) => assert_eq!(e.violations()[0].name, "l1 > 0"),
        other => panic!("expected a configuration error, got {other:?}"),
    }
}

fn shove_second_train() -> ControlLaw {
    ControlLaw::Custom(Arc::new(|q| if q.train == 1 { 150.0 } else { q.designed }))
}

#[test]
fn violation_aborts_or_saturates() {
    let mut c = noise_free(40.0);
    c.abort_on_violation = true;
    let options = RunOptions { control: shove_second_train(), ..Default::default() };
    match Simulator::new(&c, Representation::Composite, options.clone()).unwrap().run(&mut SampleBuffer::default()) {
        Err(SimError::ConstraintViolation { train, t, .. }) => {
            assert_eq!(train, 2);
            assert!(t > 0.0);
        }
        other => panic!("expected a constraint violation, got {other:?}"),
    }

    c.abort_on_violation = false;
    let mut sim = Simulator::new(&c, Representation::Composite, options).unwrap();
    sim.run(&mut SampleBuffer::default()).unwrap();
    let log = sim.saturation();
    assert_eq!(log.per_train[0], 0);
    assert!(log.per_train[1] > 0);
    assert!(log.first_time.unwrap() > 0.0);
}

#[test]
fn zero_disturbance_when_disabled() {
    // with noise disabled the seed must not matter
    let mut a = noise_free(5.0);
    a.noise.seed = 3;
    let mut b = a.clone();
    b.noise.seed = 99;
    assert_eq!(csv_bytes(&a), csv_bytes(&b));
}
