//! Per-evaluation training metrics and their CSV form.

use crate::error::{Error, Result};

pub const METRICS_CSV_HEADER: &str = "iter,loss_cls,loss_adv,acc_src_f1,acc_tgt_f1,acc_tgt_f2";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub loss_cls: f64,
    pub loss_adv: f64,
    pub acc_src_f1: f64,
    pub acc_tgt_f1: f64,
    pub acc_tgt_f2: f64,
}

#[derive(Clone, Debug, Default)]
pub struct MetricsLog {
    rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn new() -> Self {
        MetricsLog { rows: Vec::new() }
    }

    pub fn push(&mut self, row: MetricsRow) {
        if let Some(last) = self.rows.last() {
            assert!(
                row.iter > last.iter,
                "metrics iterations must be strictly increasing"
            );
        }
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iter, r.loss_cls, r.loss_adv, r.acc_src_f1, r.acc_tgt_f1, r.acc_tgt_f2
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<MetricsLog> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == METRICS_CSV_HEADER => {}
            other => {
                return Err(Error::Data(format!(
                    "bad metrics header {other:?}"
                )))
            }
        }
        let mut log = MetricsLog::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::Data(format!("bad metrics row {line:?}")));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Data(format!("bad metrics value {s:?}")))
            };
            log.push(MetricsRow {
                iter: fields[0]
                    .parse()
                    .map_err(|_| Error::Data(format!("bad iteration {:?}", fields[0])))?,
                loss_cls: num(fields[1])?,
                loss_adv: num(fields[2])?,
                acc_src_f1: num(fields[3])?,
                acc_tgt_f1: num(fields[4])?,
                acc_tgt_f2: num(fields[5])?,
            });
        }
        Ok(log)
    }
}

/// Sample Pearson correlation. NaN when either sequence is degenerate.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.is_empty() {
        return f64::NAN;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut log = MetricsLog::new();
        log.push(MetricsRow {
            iter: 50,
            loss_cls: 1.25,
            loss_adv: 0.01,
            acc_src_f1: 0.9,
            acc_tgt_f1: 0.8,
            acc_tgt_f2: 0.79,
        });
        log.push(MetricsRow {
            iter: 100,
            loss_cls: 0.5,
            loss_adv: 0.005,
            acc_src_f1: 0.99,
            acc_tgt_f1: 0.97,
            acc_tgt_f2: 0.96,
        });
        let parsed = MetricsLog::from_csv(&log.to_csv()).unwrap();
        assert_eq!(parsed.rows(), log.rows());
    }

    #[test]
    fn empty_log_has_header_only() {
        let log = MetricsLog::new();
        assert_eq!(log.to_csv(), format!("{METRICS_CSV_HEADER}\n"));
    }

    #[test]
    #[should_panic(expected = "strictly increasing")]
    fn iterations_must_increase() {
        let row = MetricsRow {
            iter: 5,
            loss_cls: 0.0,
            loss_adv: 0.0,
            acc_src_f1: 0.0,
            acc_tgt_f1: 0.0,
            acc_tgt_f2: 0.0,
        };
        let mut log = MetricsLog::new();
        log.push(row);
        log.push(row);
    }

    #[test]
    fn pearson_of_a_line_is_one() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [2.0, 4.0, 6.0, 8.0];
        assert!((pearson(&xs, &ys) - 1.0).abs() < 1e-12);
        let neg = [-2.0, -4.0, -6.0, -8.0];
        assert!((pearson(&xs, &neg) + 1.0).abs() < 1e-12);
    }
}
