use ckgan::csv_out::{fmt_num, read_points, write_points, MetricsWriter, METRICS_HEADER};
use ckgan::metrics::MetricsReport;
use ckgan::Tensor;
use proptest::prelude::*;

/// Half a unit in the twelfth significant digit.
const TWELVE_DIGITS: f64 = 5e-12;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e3f64..1e3, -1e-6f64..1e-6, -1e15f64..1e15]
}

proptest! {
    #[test]
    fn points_parse_back_to_twelve_digits(data in prop::collection::vec(finite(), 2..40)) {
        let n = data.len() / 2;
        let t = Tensor::matrix(n, 2, data[..2 * n].to_vec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_points(&path, &t).unwrap();
        let back = read_points(&path).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        for (a, b) in t.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= TWELVE_DIGITS * a.abs(), "{a} -> {b}");
        }
    }

    #[test]
    fn formatting_is_plain_ascii(v in finite()) {
        let s = fmt_num(v);
        prop_assert!(s.bytes().all(|c| c.is_ascii_digit() || b"-.e".contains(&c)), "{s}");
    }
}

#[test]
fn metrics_rows_use_lf_and_append_without_a_second_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    let report = MetricsReport {
        iteration: 0,
        modes: 8,
        hq: 97.5,
        kl: 0.001,
        loss_d: -0.25,
        loss_g: -0.5,
        xi: [1.0 / 6.0; 6],
        seconds: 0.0,
    };
    MetricsWriter::create(&path).unwrap().write(&report).unwrap();
    MetricsWriter::append(&path)
        .unwrap()
        .write(&MetricsReport { iteration: 5, ..report })
        .unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(!text.contains('\r'));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER.join(","));
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1], "0,8,97.5,0.001,-0.25,-0.5,0.166666666667,0.166666666667,0.166666666667,0.166666666667,0.166666666667,0.166666666667,0");
    assert!(lines[2].starts_with("5,8,"));
}
