use kelab::ricci::{run_ricci, RicciConfig};
use kelab::{make_grid, DivisorData, FixedPoint, RadialWeight};

#[test]
fn limit_is_independent_of_the_step() {
    let grid = make_grid(30.0, 2049).unwrap();
    for divisor in [DivisorData::empty(), DivisorData::point(FixedPoint::Zero, 0.5).unwrap()] {
        let limits: Vec<RadialWeight> = [1, 2, 3]
            .iter()
            .map(|&p| {
                let cfg = RicciConfig::new(RadialWeight::fubini_study(grid, 4.0), divisor.clone(), p).unwrap();
                run_ricci(cfg, 300, 1e-10).unwrap().0.limit_candidate()
            })
            .collect();
        for l in &limits[1..] {
            assert!(l.sup_distance(&limits[0]) <= 1e-5);
        }
    }
}

#[test]
fn single_step_iteration_converges_at_once() {
    let grid = make_grid(30.0, 1025).unwrap();
    let cfg = RicciConfig::new(RadialWeight::fubini_study(grid, 4.0), DivisorData::empty(), 1).unwrap();
    let (state, trace) = run_ricci(cfg, 10, 1e-10).unwrap();
    assert!(state.m <= 2);
    assert_eq!(trace.envelope_factor(), 1.0);
}

#[test]
fn trace_csv_has_one_row_per_step() {
    let grid = make_grid(30.0, 1025).unwrap();
    let cfg = RicciConfig::new(RadialWeight::fubini_study(grid, 4.0), DivisorData::empty(), 2).unwrap();
    let (state, trace) = run_ricci(cfg, 300, 1e-10).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("m,gap,ratio,normalization,residual"));
    assert_eq!(text.lines().count(), state.m + 1);
}
