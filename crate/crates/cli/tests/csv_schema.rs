use proptest::prelude::*;

use pwcf::attacks::SolverTag;
use pwcf_cli::records::{read_csv, write_csv, CsvRow};

fn value() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("not NaN", |v| !v.is_nan()),
        Just(f64::INFINITY),
        Just(0.0),
        -1.0..1.0,
    ]
}

fn row() -> impl Strategy<Value = CsvRow> {
    (
        (0usize..10_000, prop_oneof![Just(SolverTag::Pwcf), Just(SolverTag::Pgd)]),
        (
            prop_oneof![Just("ce"), Just("margin"), Just("none")],
            prop_oneof![Just("l1"), Just("l2"), Just("l1.5"), Just("linf"), Just("pd_l2")],
        ),
        (value(), value(), value(), proptest::option::of(value())),
        (
            any::<bool>(),
            proptest::option::of(value()),
            0usize..5000,
            proptest::option::of(value()),
        ),
    )
        .prop_map(
            |((sample_id, solver_tag), (loss, metric), (eps, obj, viol, stat), (ok, sp, it, wall))| CsvRow {
                sample_id,
                solver_tag,
                loss: loss.into(),
                metric: metric.into(),
                eps,
                objective_or_radius: obj,
                violation: viol,
                stationarity: stat,
                attack_success: ok,
                sparsity: sp,
                iterations: it,
                wall_time_ms: wall,
            },
        )
}

proptest! {
    #[test]
    fn every_row_round_trips(rows in proptest::collection::vec(row(), 0..20)) {
        let mut buf = Vec::new();
        write_csv(&mut buf, rows.clone()).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, rows);
    }

    #[test]
    fn every_row_has_twelve_fields(r in row()) {
        let mut buf = Vec::new();
        write_csv(&mut buf, [r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for line in text.lines() {
            prop_assert_eq!(line.split(',').count(), 12);
        }
    }
}
