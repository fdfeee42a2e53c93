use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts with derived scores; `None` marks an undefined ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fscore: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Metrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let fscore = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        Metrics {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            fscore,
        }
    }

    /// Counts from `(predicted, actual)` positive flags.
    pub fn from_predictions(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (pred, actual) in pairs {
            match (pred, actual) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        Metrics::from_counts(tp, fp, fn_, tn)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Summed counts with precision, recall and F averaged over the rows
    /// where each is defined.
    pub fn macro_average<'a>(rows: impl IntoIterator<Item = &'a Metrics>) -> Metrics {
        let rows: Vec<&Metrics> = rows.into_iter().collect();
        let mean = |f: fn(&Metrics) -> Option<f64>| {
            let vals: Vec<f64> = rows.iter().filter_map(|m| f(m)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        Metrics {
            tp: rows.iter().map(|m| m.tp).sum(),
            fp: rows.iter().map(|m| m.fp).sum(),
            fn_: rows.iter().map(|m| m.fn_).sum(),
            tn: rows.iter().map(|m| m.tn).sum(),
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            fscore: mean(|m| m.fscore),
        }
    }
}

/// Harmonic mean of precision and recall from signed counts.
pub fn fscore(tp: i64, fp: i64, fn_: i64) -> Result<Metrics> {
    for (field, v) in [("tp", tp), ("fp", fp), ("fn", fn_)] {
        if v < 0 {
            return Err(Error::arg(field, format!("count {v} is negative")));
        }
    }
    Ok(Metrics::from_counts(tp as u64, fp as u64, fn_ as u64, 0))
}

/// Fixed-precision CSV cell; undefined values print as `NA`.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(fscore(10, 0, 0).unwrap().fscore, Some(1.0));
        let m = fscore(8, 2, 4).unwrap();
        assert_eq!(m.precision, Some(8.0 / 10.0));
        assert_eq!(m.recall, Some(8.0 / 12.0));
        let (p, r) = (0.8, 8.0 / 12.0);
        assert!((m.fscore.unwrap() - 2.0 * p * r / (p + r)).abs() < 1e-15);
        assert_eq!(fmt_opt(m.fscore), "0.727273");
        let d = fscore(0, 0, 5).unwrap();
        assert_eq!((d.precision, d.recall, d.fscore), (None, Some(0.0), None));
        assert!(fscore(-1, 0, 0).is_err());
        assert_eq!(fmt_opt(None), "NA");
    }

    #[test]
    fn from_predictions_counts() {
        let m = Metrics::from_predictions([(true, true), (true, false), (false, true), (false, false), (true, true)]);
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (2, 1, 1, 1));
    }

    #[test]
    fn macro_skips_undefined() {
        let a = Metrics::from_counts(1, 0, 0, 0);
        let b = Metrics::from_counts(0, 0, 0, 3);
        let avg = Metrics::macro_average([&a, &b]);
        assert_eq!(avg.fscore, Some(1.0));
        assert_eq!(avg.tn, 3);
    }

    proptest! {
        #[test]
        fn scale_invariant(tp in 0i64..50, fp in 0i64..50, fn_ in 0i64..50, k in 1i64..20) {
            let a = fscore(tp, fp, fn_).unwrap();
            let b = fscore(k * tp, k * fp, k * fn_).unwrap();
            match (a.fscore, b.fscore) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }
}
