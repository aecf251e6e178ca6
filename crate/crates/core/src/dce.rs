//! Delay correlation estimation.
//!
//! Arrival timestamps of back-to-back packet pairs are turned into delay
//! offset series δ'(k) = (t_a(k) - t_a(k₀)) - (t_f(k) - t_f(k₀)). Each series
//! differs from the true path delay d_a(k) only by the constant d_a(k₀), so
//! the sample covariance of two δ' series estimates the covariance of the two
//! path delays without any clock synchronization between receivers.

use std::cell::RefCell;
use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    CovarianceMatrix, CovarianceSource, DelaySeries, IntervalMode, MeasurementLog, NodeId,
};

const US2_PER_MS2: f64 = 1e6;

/// Pair indices at which every requested receiver has an arrival.
pub fn align_pairs(log: &MeasurementLog, receivers: &[NodeId]) -> Result<Vec<usize>> {
    let mut series = Vec::with_capacity(receivers.len());
    for r in receivers {
        series.push(
            log.arrivals(r)
                .ok_or_else(|| Error::input(format!("receiver {r} not in log")))?,
        );
    }
    let aligned: Vec<usize> = (0..log.n_pairs())
        .filter(|&k| series.iter().all(|s| s[k].is_some()))
        .collect();
    if aligned.len() < 2 {
        let names: Vec<&str> = receivers.iter().map(NodeId::as_str).collect();
        return Err(Error::InsufficientData(format!(
            "only {} common pairs for receivers [{}]",
            aligned.len(),
            names.join(", ")
        )));
    }
    Ok(aligned)
}

/// δ'(k) series of one receiver over the aligned indices, relative to the
/// first aligned index.
pub fn normalize_series(
    log: &MeasurementLog,
    receiver: &NodeId,
    aligned: &[usize],
) -> Result<DelaySeries> {
    let arrivals = log
        .arrivals(receiver)
        .ok_or_else(|| Error::input(format!("receiver {receiver} not in log")))?;
    let Some(&k0) = aligned.first() else {
        return Err(Error::InsufficientData("empty aligned index set".into()));
    };
    let sent = log.sender_ts();
    let base = arrivals[k0]
        .ok_or_else(|| Error::Internal(format!("{receiver} lacks pair {k0} after alignment")))?;
    let mut values = Vec::with_capacity(aligned.len());
    for &k in aligned {
        let t = arrivals[k]
            .ok_or_else(|| Error::Internal(format!("{receiver} lacks pair {k} after alignment")))?;
        let sender_offset = match log.interval_mode() {
            IntervalMode::Fixed { delta_us } => (k - k0) as i64 * delta_us,
            IntervalMode::Timestamped => sent[k] - sent[k0],
        };
        values.push(((t - base) - sender_offset) as f64);
    }
    Ok(DelaySeries {
        receiver: receiver.clone(),
        indices: aligned.to_vec(),
        values,
    })
}

/// Unbiased sample covariance (divisor n - 1) of two equally long samples.
/// Unit-agnostic; returns `None` for fewer than two samples or mismatched
/// lengths.
pub fn sample_covariance(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    if n < 2 || b.len() != n {
        return None;
    }
    let mean_a = a.iter().sum::<f64>() / n as f64;
    let mean_b = b.iter().sum::<f64>() / n as f64;
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - mean_a) * (y - mean_b))
        .sum();
    Some(s / (n - 1) as f64)
}

/// Covariance in ms² of two δ' series sharing the same index set. Negative
/// results are returned as is.
pub fn estimate_covariance(sa: &DelaySeries, sb: &DelaySeries) -> Result<f64> {
    if sa.indices != sb.indices || sa.values.len() != sb.values.len() {
        return Err(Error::input(format!(
            "series of {} and {} are not aligned",
            sa.receiver, sb.receiver
        )));
    }
    sample_covariance(&sa.values, &sb.values)
        .map(|c| c / US2_PER_MS2)
        .ok_or_else(|| {
            Error::InsufficientData(format!(
                "{} aligned samples for ({}, {})",
                sa.values.len(),
                sa.receiver,
                sb.receiver
            ))
        })
}

/// Covariance of one receiver pair using every index both received.
pub fn pair_covariance(log: &MeasurementLog, a: &NodeId, b: &NodeId) -> Result<f64> {
    let receivers = if a == b { vec![a.clone()] } else { vec![a.clone(), b.clone()] };
    let aligned = align_pairs(log, &receivers).map_err(|e| match e {
        Error::InsufficientData(_) => Error::MeasurementGap(a.clone(), b.clone()),
        other => other,
    })?;
    let sa = normalize_series(log, a, &aligned)?;
    if a == b {
        return estimate_covariance(&sa, &sa);
    }
    let sb = normalize_series(log, b, &aligned)?;
    estimate_covariance(&sa, &sb)
}

/// Full pairwise covariance matrix. Each unordered pair is aligned on its own
/// common indices; the diagonal holds each receiver's sample variance.
pub fn build_covariance_matrix(
    log: &MeasurementLog,
    receivers: &[NodeId],
) -> Result<CovarianceMatrix> {
    if receivers.len() < 2 {
        return Err(Error::input("need at least two receivers"));
    }
    let n = receivers.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let entries: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| pair_covariance(log, &receivers[i], &receivers[j]))
        .collect();
    let mut values = vec![0.0; n * n];
    for (&(i, j), v) in pairs.iter().zip(entries) {
        let v = v?;
        values[i * n + j] = v;
        values[j * n + i] = v;
    }
    CovarianceMatrix::new(receivers.to_vec(), values)
}

/// Lazily evaluated covariances straight from a log, memoized per pair.
pub struct LogCovariance<'a> {
    log: &'a MeasurementLog,
    cache: RefCell<HashMap<(NodeId, NodeId), f64>>,
}

impl<'a> LogCovariance<'a> {
    pub fn new(log: &'a MeasurementLog) -> Self {
        LogCovariance {
            log,
            cache: RefCell::new(HashMap::new()),
        }
    }
}

impl CovarianceSource for LogCovariance<'_> {
    fn covariance(&self, a: &NodeId, b: &NodeId) -> Result<f64> {
        let key = if a <= b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
        if let Some(v) = self.cache.borrow().get(&key) {
            return Ok(*v);
        }
        for r in [a, b] {
            if !self.log.has_receiver(r) {
                return Err(Error::MeasurementGap(a.clone(), b.clone()));
            }
        }
        let v = pair_covariance(self.log, &key.0, &key.1)?;
        self.cache.borrow_mut().insert(key, v);
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn id(s: &str) -> NodeId {
        NodeId::from(s)
    }

    fn log_with(
        mode: IntervalMode,
        sent: Vec<i64>,
        rx: Vec<(&str, Vec<Option<i64>>)>,
    ) -> MeasurementLog {
        let arrivals: BTreeMap<NodeId, Vec<Option<i64>>> =
            rx.into_iter().map(|(r, s)| (id(r), s)).collect();
        MeasurementLog::new(mode, sent, arrivals).unwrap()
    }

    fn fixed(n: usize, delta: i64) -> Vec<i64> {
        (0..n as i64).map(|k| 1_000 + k * delta).collect()
    }

    #[test]
    fn align_without_losses_is_identity() {
        let sent = fixed(100, 30);
        let a: Vec<_> = sent.iter().map(|t| Some(t + 500)).collect();
        let b: Vec<_> = sent.iter().map(|t| Some(t + 700)).collect();
        let log = log_with(IntervalMode::Fixed { delta_us: 30 }, sent, vec![("a", a), ("b", b)]);
        assert_eq!(
            align_pairs(&log, &[id("a"), id("b")]).unwrap(),
            (0..100).collect::<Vec<_>>()
        );
    }

    #[test]
    fn align_intersects_losses() {
        let sent = fixed(10, 30);
        let mut a: Vec<_> = sent.iter().map(|t| Some(t + 5)).collect();
        let mut b = a.clone();
        a[3] = None;
        b[7] = None;
        let log = log_with(IntervalMode::Fixed { delta_us: 30 }, sent, vec![("a", a), ("b", b)]);
        assert_eq!(
            align_pairs(&log, &[id("a"), id("b")]).unwrap(),
            vec![0, 1, 2, 4, 5, 6, 8, 9]
        );
    }

    #[test]
    fn align_fails_when_receiver_lost_everything() {
        let sent = fixed(10, 30);
        let a: Vec<_> = sent.iter().map(|t| Some(t + 5)).collect();
        let b = vec![None; 10];
        let log = log_with(IntervalMode::Fixed { delta_us: 30 }, sent, vec![("a", a), ("b", b)]);
        assert!(matches!(
            align_pairs(&log, &[id("a"), id("b")]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn constant_delay_normalizes_to_zero() {
        let sent = fixed(50, 30_000);
        let a: Vec<_> = sent.iter().map(|t| Some(t + 12_345)).collect();
        let log = log_with(IntervalMode::Fixed { delta_us: 30_000 }, sent, vec![("a", a)]);
        let aligned = align_pairs(&log, &[id("a")]).unwrap();
        let s = normalize_series(&log, &id("a"), &aligned).unwrap();
        assert!(s.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn normalize_fixed_mode_by_hand() {
        // arrivals [100, 135, 162], δ = 30 → δ_a = [0, 35, 62], δ' = [0, 5, 2]
        let log = log_with(
            IntervalMode::Fixed { delta_us: 30 },
            vec![0, 30, 60],
            vec![("a", vec![Some(100), Some(135), Some(162)])],
        );
        let s = normalize_series(&log, &id("a"), &[0, 1, 2]).unwrap();
        assert_eq!(s.values, vec![0.0, 5.0, 2.0]);
    }

    #[test]
    fn normalize_timestamped_mode_by_hand() {
        // δ_f = [0, 40, 70], δ_a = [0, 45, 85] → δ' = [0, 5, 15]
        let log = log_with(
            IntervalMode::Timestamped,
            vec![0, 40, 70],
            vec![("a", vec![Some(10), Some(55), Some(95)])],
        );
        let s = normalize_series(&log, &id("a"), &[0, 1, 2]).unwrap();
        assert_eq!(s.values, vec![0.0, 5.0, 15.0]);
    }

    #[test]
    fn normalize_missing_arrival_is_internal_error() {
        let log = log_with(
            IntervalMode::Fixed { delta_us: 30 },
            vec![0, 30, 60],
            vec![("a", vec![Some(100), None, Some(162)])],
        );
        assert!(matches!(
            normalize_series(&log, &id("a"), &[0, 1, 2]),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn sample_covariance_hand_values() {
        assert_eq!(sample_covariance(&[1.0, 4.0, 2.0], &[0.0, 0.0, 0.0]), Some(0.0));
        let s = [0.0, 1.0, -1.0, 2.0];
        assert!((sample_covariance(&s, &s).unwrap() - 5.0 / 3.0).abs() < 1e-15);
        let up = [0.0, 1.0, 2.0, 3.0];
        let down = [3.0, 2.0, 1.0, 0.0];
        assert!((sample_covariance(&up, &down).unwrap() + 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(sample_covariance(&[1.0], &[1.0]), None);
    }

    #[test]
    fn estimate_covariance_converts_to_ms2() {
        let s = DelaySeries {
            receiver: id("a"),
            indices: vec![0, 1, 2, 3],
            values: vec![0.0, 1000.0, -1000.0, 2000.0],
        };
        assert!((estimate_covariance(&s, &s).unwrap() - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn estimate_covariance_rejects_misaligned() {
        let a = DelaySeries {
            receiver: id("a"),
            indices: vec![0, 1, 2],
            values: vec![0.0, 1.0, 2.0],
        };
        let mut b = a.clone();
        b.indices = vec![0, 1, 3];
        assert!(matches!(estimate_covariance(&a, &b), Err(Error::Input(_))));
        let short = DelaySeries {
            receiver: id("c"),
            indices: vec![0],
            values: vec![0.0],
        };
        assert!(matches!(
            estimate_covariance(&short, &short),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn identical_series_share_everything() {
        let sent = fixed(6, 1000);
        let jitter = [0, 300, -200, 800, 100, -500];
        let a: Vec<_> = sent
            .iter()
            .zip(jitter)
            .map(|(t, j)| Some(t + 5_000 + j))
            .collect();
        let b: Vec<_> = sent
            .iter()
            .zip(jitter)
            .map(|(t, j)| Some(t + 9_000 + j))
            .collect();
        let log = log_with(IntervalMode::Fixed { delta_us: 1000 }, sent, vec![("a", a), ("b", b)]);
        let m = build_covariance_matrix(&log, &[id("a"), id("b")]).unwrap();
        assert_eq!(m.at(0, 1), m.at(0, 0));
        assert_eq!(m.at(0, 1), m.at(1, 1));
    }

    #[test]
    fn matrix_names_the_failing_pair() {
        let sent = fixed(4, 10);
        let a: Vec<_> = sent.iter().map(|t| Some(t + 1)).collect();
        let b = vec![Some(sent[0] + 1), None, None, None];
        let log = log_with(IntervalMode::Fixed { delta_us: 10 }, sent, vec![("a", a), ("b", b)]);
        match build_covariance_matrix(&log, &[id("a"), id("b")]) {
            Err(Error::MeasurementGap(x, y)) => {
                assert!(x == id("a") || y == id("a") || x == id("b"));
            }
            other => panic!("expected gap error, got {other:?}"),
        }
    }

    #[test]
    fn log_oracle_matches_matrix() {
        let sent = fixed(5, 100);
        let a = vec![Some(1100), Some(1230), Some(1290), Some(1420), Some(1500)];
        let b = vec![Some(1050), Some(1190), None, Some(1370), Some(1470)];
        let log = log_with(IntervalMode::Fixed { delta_us: 100 }, sent, vec![("a", a), ("b", b)]);
        let m = build_covariance_matrix(&log, &[id("a"), id("b")]).unwrap();
        let oracle = LogCovariance::new(&log);
        assert_eq!(oracle.covariance(&id("b"), &id("a")).unwrap(), m.at(0, 1));
        assert!(matches!(
            oracle.covariance(&id("a"), &id("zz")),
            Err(Error::MeasurementGap(_, _))
        ));
    }
}
