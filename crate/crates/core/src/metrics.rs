//! Index-domain error metrics and CSV reports.

use crate::error::{Error, Result};
use crate::image::Map2;
use crate::Scalar;
use std::fmt::Write;

pub const CSV_HEADER: &str = "label,gt1,gt3,gt5,mae,rmse";

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Metrics<T> {
    pub pct_gt1: T,
    pub pct_gt3: T,
    pub pct_gt5: T,
    pub mae: T,
    pub rmse: T,
    pub valid_count: usize,
}

/// Errors `|pred − gt|` over pixels where `mask` holds; thresholds are strict.
pub fn index_error_metrics<T: Scalar>(pred: &Map2<T>, gt: &Map2<T>, mask: &[bool]) -> Result<Metrics<T>> {
    if !pred.same_shape(gt) || mask.len() != gt.len() {
        return Err(Error::Config("prediction, ground truth and mask shapes differ".into()));
    }
    let (one, three, five) = (T::one(), T::lit(3.0), T::lit(5.0));
    let (mut n1, mut n3, mut n5, mut n) = (0usize, 0usize, 0usize, 0usize);
    let (mut s, mut s2) = (T::zero(), T::zero());
    for ((&p, &g), _) in pred.values.iter().zip(&gt.values).zip(mask).filter(|(_, &m)| m) {
        let e = (p - g).abs();
        n += 1;
        n1 += usize::from(e > one);
        n3 += usize::from(e > three);
        n5 += usize::from(e > five);
        s += e;
        s2 += e * e;
    }
    if n == 0 {
        return Err(Error::InputDomain("empty valid set".into()));
    }
    let nf = T::from_usize_lossy(n);
    let pct = |k: usize| T::lit(100.0) * T::from_usize_lossy(k) / nf;
    Ok(Metrics {
        pct_gt1: pct(n1),
        pct_gt3: pct(n3),
        pct_gt5: pct(n5),
        mae: s / nf,
        rmse: (s2 / nf).sqrt(),
        valid_count: n,
    })
}

/// Pools per-sample metrics as if computed over the union of their pixels.
pub fn pool<T: Scalar>(items: &[Metrics<T>]) -> Result<Metrics<T>> {
    let n: usize = items.iter().map(|m| m.valid_count).sum();
    if n == 0 {
        return Err(Error::InputDomain("nothing to pool".into()));
    }
    let nf = T::from_usize_lossy(n);
    let wsum = |f: &dyn Fn(&Metrics<T>) -> T| {
        items
            .iter()
            .fold(T::zero(), |a, m| a + f(m) * T::from_usize_lossy(m.valid_count))
            / nf
    };
    Ok(Metrics {
        pct_gt1: wsum(&|m| m.pct_gt1),
        pct_gt3: wsum(&|m| m.pct_gt3),
        pct_gt5: wsum(&|m| m.pct_gt5),
        mae: wsum(&|m| m.mae),
        rmse: wsum(&|m| m.rmse * m.rmse).sqrt(),
        valid_count: n,
    })
}

pub fn csv_row<T: Scalar>(label: &str, m: &Metrics<T>) -> String {
    format!(
        "{label},{:.2},{:.2},{:.2},{:.4},{:.4}",
        m.pct_gt1.as_f64(),
        m.pct_gt3.as_f64(),
        m.pct_gt5.as_f64(),
        m.mae.as_f64(),
        m.rmse.as_f64()
    )
}

/// Header plus one row per entry, in input order.
pub fn compare_report<T: Scalar>(rows: &[(String, Metrics<T>)]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (label, m) in rows {
        let _ = writeln!(out, "{}", csv_row(label, m));
    }
    out
}

/// Parses a report written by [`compare_report`] back into labeled rows of
/// `[gt1, gt3, gt5, mae, rmse]`.
pub fn parse_report(text: &str) -> Result<Vec<(String, [f64; 5])>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Config("report does not start with the metrics header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let fields: Vec<&str> = l.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::Config(format!("malformed report row `{l}`")));
            }
            let mut vals = [0.0; 5];
            for (v, f) in vals.iter_mut().zip(&fields[1..]) {
                *v = f
                    .parse()
                    .map_err(|_| Error::Config(format!("bad number `{f}` in report")))?;
            }
            Ok((fields[0].to_string(), vals))
        })
        .collect()
}
