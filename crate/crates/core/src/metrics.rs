//! Peak picking, spatial-threshold axle matching and the score stack.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Spatial threshold for an axle to count as detected at all.
pub const THRESHOLD_WIDE_CM: f64 = 200.0;
/// Spatial threshold for a detection to count as precise.
pub const THRESHOLD_TIGHT_CM: f64 = 37.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{labels} label indices but {velocities} velocities")]
    LengthMismatch { labels: usize, velocities: usize },
    #[error("mean spatial error of an empty pair list")]
    EmptyPairs,
    #[error("harmonic mean needs positive inputs, got {0}")]
    NonPositiveInput(f64),
    #[error("invalid peak config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakConfig {
    pub min_confidence: f64,
    pub min_distance: usize,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self {
            min_confidence: 0.25,
            min_distance: 20,
        }
    }
}

impl PeakConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.min_confidence > 0.0 && self.min_confidence < 1.0) || self.min_distance == 0 {
            return Err(MetricsError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Local maxima of `probs`, one index per plateau (its first sample).
/// Positions outside the series count as `-inf`.
fn local_maxima(probs: &[f64]) -> Vec<usize> {
    let n = probs.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && probs[j + 1] == probs[i] {
            j += 1;
        }
        let left_ok = i == 0 || probs[i - 1] < probs[i];
        let right_ok = j + 1 == n || probs[j + 1] < probs[i];
        if left_ok && right_ok {
            out.push(i);
        }
        i = j + 1;
    }
    out
}

/// Ascending indices of accepted peaks.
pub fn pick_peaks(probs: &[f64], cfg: &PeakConfig) -> Vec<usize> {
    let mut cand: Vec<usize> = local_maxima(probs)
        .into_iter()
        .filter(|&i| probs[i] >= cfg.min_confidence)
        .collect();
    cand.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in cand {
        if kept.iter().all(|&k| k.abs_diff(c) >= cfg.min_distance) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub label: usize,
    pub peak: usize,
    /// m/sample
    pub velocity: f64,
    pub error_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub pairs: Vec<MatchedPair>,
}

impl MatchResult {
    pub fn merge(&mut self, other: MatchResult) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.pairs.extend(other.pairs);
    }
}

/// Rectangular assignment (rows ≤ cols), returns the column of every row.
fn hungarian(cost: &[Vec<f64>], cols: usize) -> Vec<usize> {
    let rows = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            assign[owner[j] - 1] = j - 1;
        }
    }
    assign
}

/// One-to-one matching of predicted peaks to labelled crossings. Among all
/// matchings with pairs inside `threshold_cm` this picks one of maximum size,
/// and among those the smallest total spatial error.
pub fn match_axles(
    peaks: &[usize],
    label_indices: &[usize],
    velocities: &[f64],
    threshold_cm: f64,
) -> Result<MatchResult, MetricsError> {
    if label_indices.len() != velocities.len() {
        return Err(MetricsError::LengthMismatch {
            labels: label_indices.len(),
            velocities: velocities.len(),
        });
    }
    let err = |l: usize, p: usize| label_indices[l].abs_diff(peaks[p]) as f64 * velocities[l] * 100.0;
    let mut pairs = Vec::new();
    if !label_indices.is_empty() && !peaks.is_empty() {
        // Any forbidden pair costs more than every allowed matching combined,
        // so the optimum first maximises the number of allowed pairs.
        let big = threshold_cm.max(1.0) * (label_indices.len().min(peaks.len()) + 1) as f64 * 4.0;
        let labels_are_rows = label_indices.len() <= peaks.len();
        let (rows, cols) = if labels_are_rows {
            (label_indices.len(), peaks.len())
        } else {
            (peaks.len(), label_indices.len())
        };
        let cost: Vec<Vec<f64>> = (0..rows)
            .map(|r| {
                (0..cols)
                    .map(|c| {
                        let (l, p) = if labels_are_rows { (r, c) } else { (c, r) };
                        let e = err(l, p);
                        if e <= threshold_cm {
                            e
                        } else {
                            big
                        }
                    })
                    .collect()
            })
            .collect();
        for (r, c) in hungarian(&cost, cols).into_iter().enumerate() {
            let (l, p) = if labels_are_rows { (r, c) } else { (c, r) };
            let e = err(l, p);
            if e <= threshold_cm {
                pairs.push(MatchedPair {
                    label: label_indices[l],
                    peak: peaks[p],
                    velocity: velocities[l],
                    error_cm: e,
                });
            }
        }
        pairs.sort_by_key(|p| p.label);
    }
    let tp = pairs.len();
    Ok(MatchResult {
        tp,
        fp: peaks.len() - tp,
        fn_: label_indices.len() - tp,
        pairs,
    })
}

/// F1 in percent.
pub fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return if fp == 0 && fn_ == 0 { 100.0 } else { 0.0 };
    }
    200.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Mean absolute spatial error in cm.
pub fn mean_spatial_error(pairs: &[MatchedPair]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyPairs);
    }
    Ok(pairs.iter().map(|p| p.error_cm).sum::<f64>() / pairs.len() as f64)
}

/// Minimum spatial accuracy in percent.
pub fn msa(mean_spatial_error_cm: f64) -> f64 {
    (THRESHOLD_WIDE_CM - mean_spatial_error_cm) / 2.0
}

pub fn harmonic_mean(values: &[f64]) -> Result<f64, MetricsError> {
    let mut inv = 0.0;
    for &x in values {
        if !(x > 0.0) {
            return Err(MetricsError::NonPositiveInput(x));
        }
        inv += 1.0 / x;
    }
    Ok(values.len() as f64 / inv)
}

/// Counts and scores for one sensor (or one aggregate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorScores {
    pub sensor: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub f1_200: f64,
    pub f1_37: f64,
    /// `None` when nothing was matched.
    pub mean_spatial_error_cm: Option<f64>,
    pub msa: Option<f64>,
}

impl SensorScores {
    fn from_matches(sensor: &str, wide: &MatchResult, tight: &MatchResult) -> Self {
        let mse = mean_spatial_error(&wide.pairs).ok();
        Self {
            sensor: sensor.to_string(),
            tp: wide.tp,
            fp: wide.fp,
            fn_: wide.fn_,
            f1_200: f1(wide.tp, wide.fp, wide.fn_),
            f1_37: f1(tight.tp, tight.fp, tight.fn_),
            mean_spatial_error_cm: mse,
            msa: mse.map(msa),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f1_200: f64,
    pub f1_37: f64,
    pub mean_spatial_error_cm: Option<f64>,
    pub msa: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub per_sensor: Vec<SensorScores>,
}

/// Accumulates matches over passages and sensors.
#[derive(Debug, Default)]
pub struct Evaluator {
    sensors: Vec<(String, MatchResult, MatchResult)>,
}

impl Evaluator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scores one probability series against its labels.
    pub fn add(
        &mut self,
        sensor: &str,
        probs: &[f64],
        label_indices: &[usize],
        velocities: &[f64],
        cfg: &PeakConfig,
    ) -> Result<(), MetricsError> {
        let peaks = pick_peaks(probs, cfg);
        let wide = match_axles(&peaks, label_indices, velocities, THRESHOLD_WIDE_CM)?;
        let tight = match_axles(&peaks, label_indices, velocities, THRESHOLD_TIGHT_CM)?;
        match self.sensors.iter_mut().find(|s| s.0 == sensor) {
            Some(s) => {
                s.1.merge(wide);
                s.2.merge(tight);
            }
            None => self.sensors.push((sensor.to_string(), wide, tight)),
        }
        Ok(())
    }

    pub fn report(&self) -> MetricsReport {
        let mut wide = MatchResult::default();
        let mut tight = MatchResult::default();
        let mut per_sensor = Vec::new();
        for (name, w, t) in &self.sensors {
            per_sensor.push(SensorScores::from_matches(name, w, t));
            wide.merge(w.clone());
            tight.merge(t.clone());
        }
        let total = SensorScores::from_matches("all", &wide, &tight);
        MetricsReport {
            f1_200: total.f1_200,
            f1_37: total.f1_37,
            mean_spatial_error_cm: total.mean_spatial_error_cm,
            msa: total.msa,
            tp: total.tp,
            fp: total.fp,
            fn_: total.fn_,
            per_sensor,
        }
    }
}

impl MetricsReport {
    pub fn per_sensor_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        let mut out = String::from("sensor,tp,fp,fn,f1_200,f1_37,mean_spatial_error_cm,msa\n");
        for s in &self.per_sensor {
            out.push_str(&format!(
                "{},{},{},{},{:.4},{:.4},{},{}\n",
                s.sensor,
                s.tp,
                s.fp,
                s.fn_,
                s.f1_200,
                s.f1_37,
                opt(s.mean_spatial_error_cm),
                opt(s.msa)
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Qualifying local maxima by brute force, then greedy by height.
    fn peaks_oracle(probs: &[f64], cfg: &PeakConfig) -> Vec<usize> {
        let n = probs.len();
        let mut cand = Vec::new();
        for i in 0..n {
            // extend to plateau end
            let mut j = i;
            while j + 1 < n && probs[j + 1] == probs[i] {
                j += 1;
            }
            let first = i == 0 || probs[i - 1] != probs[i];
            let left = i == 0 || probs[i - 1] < probs[i];
            let right = j == n - 1 || probs[j + 1] < probs[i];
            if first && left && right && probs[i] >= cfg.min_confidence {
                cand.push(i);
            }
        }
        let mut order: Vec<usize> = cand.clone();
        order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
        let mut taken: Vec<usize> = Vec::new();
        for c in order {
            if taken
                .iter()
                .all(|&t| (t as i64 - c as i64).abs() >= cfg.min_distance as i64)
            {
                taken.push(c);
            }
        }
        taken.sort();
        taken
    }

    /// Maximum number of allowed pairs by exhaustive search.
    fn best_count(labels: &[usize], vel: &[f64], peaks: &[usize], thr: f64, li: usize, used: u32) -> usize {
        if li == labels.len() {
            return 0;
        }
        let mut best = best_count(labels, vel, peaks, thr, li + 1, used);
        for (pi, &p) in peaks.iter().enumerate() {
            if used & (1 << pi) == 0 && (labels[li] as f64 - p as f64).abs() * vel[li] * 100.0 <= thr {
                best = best.max(1 + best_count(labels, vel, peaks, thr, li + 1, used | (1 << pi)));
            }
        }
        best
    }

    #[test]
    fn pick_peaks_examples() {
        let cfg = PeakConfig::default();
        assert!(pick_peaks(&[0.0; 100], &cfg).is_empty());
        let mut x = vec![0.0; 100];
        x[50] = 0.9;
        assert_eq!(pick_peaks(&x, &cfg), vec![50]);
        let mut y = vec![0.0; 200];
        y[100] = 0.9;
        y[110] = 0.8;
        assert_eq!(pick_peaks(&y, &cfg), peaks_oracle(&y, &cfg));
        assert_eq!(pick_peaks(&y, &cfg), vec![100]);
    }

    #[test]
    fn plateau_reports_first_index() {
        let x = [0.0, 0.5, 0.5, 0.5, 0.1];
        assert_eq!(
            pick_peaks(
                &x,
                &PeakConfig {
                    min_confidence: 0.25,
                    min_distance: 1
                }
            ),
            vec![1]
        );
    }

    #[test]
    fn exact_hits() {
        let labels = [10, 60, 140];
        let r = match_axles(&labels, &labels, &[0.05; 3], 200.0).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (3, 0, 0));
        assert!(r.pairs.iter().all(|p| p.error_cm == 0.0));
    }

    #[test]
    fn threshold_example() {
        let wide = match_axles(&[130], &[100], &[0.05], 200.0).unwrap();
        assert_eq!((wide.tp, wide.fp, wide.fn_), (1, 0, 0));
        assert!((wide.pairs[0].error_cm - 30.0 * 0.05 * 100.0).abs() < 1e-9);
        let tight = match_axles(&[130], &[100], &[0.05], 37.0).unwrap();
        assert_eq!((tight.tp, tight.fp, tight.fn_), (0, 1, 1));
    }

    #[test]
    fn equidistant_peak_matches_once() {
        let r = match_axles(&[50], &[40, 60], &[0.05, 0.05], 200.0).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (1, 0, 1));
        assert_eq!(best_count(&[40, 60], &[0.05, 0.05], &[50], 200.0, 0, 0), 1);
    }

    #[test]
    fn greedy_by_error_loses_a_pair_here() {
        // Label 0 grabs the closest peak greedily and strands label 60.
        let labels = [100, 160];
        let peaks = [130, 45];
        let v = [1.0 / 30.0, 1.0 / 30.0];
        let r = match_axles(&peaks, &labels, &v, 200.0).unwrap();
        assert_eq!(r.tp, best_count(&labels, &v, &peaks, 200.0, 0, 0));
        assert_eq!(r.tp, 2);
    }

    #[test]
    fn length_mismatch() {
        assert_eq!(
            match_axles(&[1], &[1, 2], &[0.1], 200.0),
            Err(MetricsError::LengthMismatch {
                labels: 2,
                velocities: 1
            })
        );
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1(4, 0, 0), 100.0);
        assert!((f1(3, 1, 1) - 75.0).abs() < 1e-12);
        assert_eq!(f1(0, 5, 0), 0.0);
        assert_eq!(f1(0, 0, 0), 100.0);
    }

    #[test]
    fn spatial_error_examples() {
        let pair = |l: usize, p: usize, v: f64| MatchedPair {
            label: l,
            peak: p,
            velocity: v,
            error_cm: l.abs_diff(p) as f64 * v * 100.0,
        };
        assert_eq!(mean_spatial_error(&[pair(5, 5, 0.1)]).unwrap(), 0.0);
        assert!((mean_spatial_error(&[pair(20, 10, 0.02)]).unwrap() - 20.0).abs() < 1e-12);
        let a = [pair(1, 4, 0.1), pair(9, 10, 0.3), pair(40, 33, 0.05)];
        let b = [a[2].clone(), a[0].clone(), a[1].clone()];
        assert!((mean_spatial_error(&a).unwrap() - mean_spatial_error(&b).unwrap()).abs() < 1e-12);
        assert_eq!(mean_spatial_error(&[]), Err(MetricsError::EmptyPairs));
    }

    #[test]
    fn msa_examples() {
        assert_eq!(msa(0.0), 100.0);
        assert_eq!(msa(200.0), 0.0);
        assert!((msa(5.21) - 97.395).abs() < 1e-9);
    }

    #[test]
    fn harmonic_mean_examples() {
        assert!((harmonic_mean(&[7.0; 4]).unwrap() - 7.0).abs() < 1e-12);
        assert!((harmonic_mean(&[99.0, 1.0]).unwrap() - 1.98).abs() < 1e-12);
        let expect = 4.0 / (1.0 / 90.0 + 1.0 / 90.0 + 1.0 / 99.0 + 1.0);
        assert!((harmonic_mean(&[90.0, 90.0, 99.0, 1.0]).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 3.8748).abs() < 1e-4);
        assert!(matches!(
            harmonic_mean(&[1.0, 0.0]),
            Err(MetricsError::NonPositiveInput(_))
        ));
    }

    #[test]
    fn evaluator_csv_has_one_row_per_sensor() {
        let mut ev = Evaluator::new();
        let mut probs = vec![0.0; 300];
        probs[100] = 0.9;
        ev.add("s1", &probs, &[100], &[0.05], &PeakConfig::default()).unwrap();
        ev.add("s2", &probs, &[200], &[0.05], &PeakConfig::default()).unwrap();
        let r = ev.report();
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 1));
        assert_eq!(r.per_sensor_csv().lines().count(), 3);
        assert_eq!(r.mean_spatial_error_cm, Some(0.0));
    }

    fn quantized_series() -> impl Strategy<Value = Vec<f64>> {
        // Coarse levels so that plateaus and ties actually occur.
        prop::collection::vec(0u8..12, 1..1000).prop_map(|v| v.into_iter().map(|x| x as f64 / 11.0).collect())
    }

    proptest! {
        #[test]
        fn pick_peaks_matches_oracle(x in quantized_series(), d in 1usize..40) {
            let cfg = PeakConfig { min_confidence: 0.25, min_distance: d };
            let got = pick_peaks(&x, &cfg);
            prop_assert_eq!(&got, &peaks_oracle(&x, &cfg));
            for w in got.windows(2) {
                prop_assert!(w[1] - w[0] >= d);
            }
        }

        #[test]
        fn match_counts_are_optimal(
            labels in prop::collection::btree_set(0usize..400, 0..10),
            peaks in prop::collection::btree_set(0usize..400, 0..10),
            vel in prop::collection::vec(0.01f64..0.2, 10),
            thr in prop::sample::select(vec![37.0, 200.0]),
        ) {
            let labels: Vec<usize> = labels.into_iter().collect();
            let peaks: Vec<usize> = peaks.into_iter().collect();
            let v = &vel[..labels.len()];
            let r = match_axles(&peaks, &labels, v, thr).unwrap();
            prop_assert_eq!(r.tp, best_count(&labels, v, &peaks, thr, 0, 0));
            prop_assert_eq!(r.tp, r.pairs.len());
            prop_assert_eq!(r.fp + r.tp, peaks.len());
            prop_assert_eq!(r.fn_ + r.tp, labels.len());
            prop_assert!(r.pairs.iter().all(|p| p.error_cm <= thr));
            if let Ok(m) = mean_spatial_error(&r.pairs) {
                let s = msa(m);
                prop_assert!((0.0..=100.0).contains(&s));
            }
        }

        #[test]
        fn f1_monotone(tp in 1usize..50, fp in 0usize..50, fn_ in 0usize..50) {
            prop_assert!(f1(tp + 1, fp, fn_) >= f1(tp, fp, fn_));
            prop_assert!(f1(tp, fp + 1, fn_) <= f1(tp, fp, fn_));
            prop_assert!(f1(tp, fp, fn_ + 1) <= f1(tp, fp, fn_));
        }
    }
}
