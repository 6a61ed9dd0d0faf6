//! Trajectory tables: layout, exact round trip and long-format conversion.

use proptest::prelude::*;
use rbflow::geometry::Pose;
use rbflow::output::{csv_header, csv_string, fmt_f64, long_format, write_jsonl, Sample};
use rbflow::C64;

fn sample(t: f64, x: f64) -> Sample {
    Sample {
        t,
        bodies: vec![(Pose::new(x, -x, 0.25), [0.1, 0.2, 0.3])],
        vortices: vec![C64::new(1.0 / 3.0, x)],
        energy: 0.7,
        circulations: vec![0.5],
        margin: 0.04,
    }
}

#[test]
fn header_counts_columns() {
    let h = csv_header(2, 1, 2);
    assert_eq!(h.split(',').count(), 1 + 12 + 2 + 1 + 2 + 1);
    assert!(h.starts_with("t,body0.hx"));
    assert!(h.ends_with("circ1,margin"));
}

#[test]
fn table_rows_round_trip_exactly() {
    let samples = vec![sample(0.0, 0.1), sample(0.01, -2.0 / 7.0)];
    let text = csv_string(&samples).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), csv_header(1, 1, 1));
    let row: Vec<f64> = lines.nth(1).unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(row[0], 0.01);
    assert_eq!(row[1], -2.0 / 7.0);
    assert_eq!(row[7], 1.0 / 3.0);
}

#[test]
fn inconsistent_or_empty_tables_are_refused() {
    assert!(csv_string(&[]).is_err());
    let mut b = sample(0.1, 0.0);
    b.vortices.clear();
    assert!(csv_string(&[sample(0.0, 0.0), b]).is_err());
}

#[test]
fn long_format_lists_every_cell() {
    let text = csv_string(&[sample(0.0, 0.1), sample(0.5, 0.2)]).unwrap();
    let long = long_format(&text).unwrap();
    let lines: Vec<&str> = long.lines().collect();
    assert_eq!(lines[0], "t,series,value");
    assert_eq!(lines.len(), 1 + 2 * 11);
    assert_eq!(lines[1], format!("{},body0.hx,{}", fmt_f64(0.0), fmt_f64(0.1)));
    assert!(long_format("x,y\n1,2\n").is_err());
    assert!(long_format("t,y\n1\n").is_err());
}

#[test]
fn jsonl_has_one_document_per_line() {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &[sample(0.0, 0.1), sample(1.0, 0.2)]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let docs: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(docs.len(), 2);
    assert_eq!(docs[1]["t"], 1.0);
}

proptest! {
    #[test]
    fn formatted_values_round_trip(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }
}
