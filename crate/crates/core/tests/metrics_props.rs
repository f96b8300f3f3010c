use fedchaos::metrics::{self, ExperimentTable, ExportFormat, TableRow};
use proptest::prelude::*;

fn labels(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1.0 } else { 0.0 }), n)
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..200).prop_flat_map(|n| (labels(n), labels(n)))
}

fn cell() -> impl Strategy<Value = Option<f64>> {
    prop::option::of(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO)
}

fn row(label: String) -> impl Strategy<Value = TableRow> {
    prop::collection::vec(cell(), 14).prop_map(move |c| TableRow {
        participant: label.clone(),
        size_frac: c[0],
        pos_rate: c[1],
        acc_pre_plain: c[2],
        acc_post_plain: c[3],
        f1_pre_plain: c[4],
        f1_post_plain: c[5],
        acc_pre_dp: c[6],
        acc_post_dp: c[7],
        f1_pre_dp: c[8],
        f1_post_dp: c[9],
        acc_pre_chaos: c[10],
        acc_post_chaos: c[11],
        f1_pre_chaos: c[12],
        f1_post_chaos: c[13],
    })
}

fn table() -> impl Strategy<Value = ExperimentTable> {
    (1usize..6).prop_flat_map(|n| {
        let rows: Vec<_> = (1..=n).map(|i| row(i.to_string())).collect();
        (rows, row(metrics::AVG_LABEL.to_string())).prop_map(|(rows, avg_row)| ExperimentTable { rows, avg_row })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_match_confusion_matrix((pred, truth) in pair()) {
        let mut cm = [[0usize; 2]; 2];
        for (p, t) in pred.iter().zip(&truth) {
            cm[*p as usize][*t as usize] += 1;
        }
        let (tp, fp, fn_, tn) = (cm[1][1], cm[1][0], cm[0][1], cm[0][0]);
        let n = pred.len() as f64;
        prop_assert_eq!(metrics::accuracy(&pred, &truth).unwrap(), (tp + tn) as f64 / n);
        let want_f1 = if tp + fp + fn_ == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        prop_assert!((metrics::f1(&pred, &truth).unwrap() - want_f1).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn f1_ignores_example_order((pred, truth) in pair(), k in 0usize..200) {
        let k = k % pred.len();
        let (mut p2, mut t2) = (pred.clone(), truth.clone());
        p2.rotate_left(k);
        t2.rotate_left(k);
        p2.reverse();
        t2.reverse();
        prop_assert_eq!(metrics::f1(&pred, &truth).unwrap(), metrics::f1(&p2, &t2).unwrap());
    }

    #[test]
    fn csv_export_reload_is_lossless(t in table()) {
        let dir = tempfile::tempdir().unwrap();
        for (fmt, name) in [(ExportFormat::Csv, "t.csv"), (ExportFormat::Json, "t.json")] {
            let path = dir.path().join(name);
            metrics::export(&t, fmt, &path).unwrap();
            let back = metrics::reload(fmt, &path).unwrap();
            prop_assert_eq!(&back, &t);
        }
    }
}

#[test]
fn csv_header_is_fixed() {
    let t = ExperimentTable {
        rows: vec![TableRow::empty("1")],
        avg_row: TableRow::empty("avg"),
    };
    let csv = t.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(metrics::CSV_HEADER));
    assert_eq!(lines.next(), Some("1,,,,,,,,,,,,,,"));
}

#[test]
fn rendered_table_uses_four_decimals() {
    let mut r = TableRow::empty("1");
    r.acc_pre_plain = Some(0.973_456_789);
    let t = ExperimentTable {
        rows: vec![r],
        avg_row: TableRow::empty("avg"),
    };
    assert!(t.render().contains("0.9735"));
    assert!(!t.render().contains("0.97345"));
}

#[test]
fn empty_inputs_are_domain_errors() {
    assert!(metrics::accuracy(&[], &[]).is_err());
    assert!(metrics::f1(&[1.0], &[1.0, 0.0]).is_err());
}
