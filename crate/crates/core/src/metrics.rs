//! Per-stage latency recording and distribution statistics.
//!
//! Every completed turn contributes one [`StageLatencies`] sample. Summaries
//! use the sample standard deviation (n - 1 denominator, 0 for a single
//! sample) and the nearest-rank 99th percentile: the value at 1-based index
//! `ceil(0.99 * n)` of the sorted samples.

use std::fmt::Write as _;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("latency field {field} is negative or not finite: {value}")]
    Negative { field: &'static str, value: f64 },
    #[error("total_ms {total} does not equal the sum of stage latencies {sum}")]
    TotalMismatch { total: f64, sum: f64 },
    #[error("no samples recorded")]
    NoData,
}

/// Latencies of one turn, in milliseconds.
///
/// `residual_ms` carries everything not attributed to the four backend stages
/// (speech playback, animation, orchestration), so `total_ms` is always the
/// exact sum of the parts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageLatencies {
    pub stt_ms: f64,
    pub vision_ms: f64,
    pub llm_ms: f64,
    pub tts_ms: f64,
    pub residual_ms: f64,
    pub total_ms: f64,
}

impl StageLatencies {
    /// Builds a sample whose total is the sum of the given parts.
    pub fn from_parts(stt_ms: f64, vision_ms: f64, llm_ms: f64, tts_ms: f64, residual_ms: f64) -> Self {
        Self {
            stt_ms,
            vision_ms,
            llm_ms,
            tts_ms,
            residual_ms,
            total_ms: stt_ms + vision_ms + llm_ms + tts_ms + residual_ms,
        }
    }

    pub fn get(&self, stage: MetricStage) -> f64 {
        match stage {
            MetricStage::Stt => self.stt_ms,
            MetricStage::Vision => self.vision_ms,
            MetricStage::Llm => self.llm_ms,
            MetricStage::Tts => self.tts_ms,
            MetricStage::Residual => self.residual_ms,
            MetricStage::Total => self.total_ms,
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        for stage in MetricStage::ALL {
            let value = self.get(stage);
            if !value.is_finite() || value < 0.0 {
                return Err(MetricsError::Negative { field: stage.field_name(), value });
            }
        }
        let sum = self.stt_ms + self.vision_ms + self.llm_ms + self.tts_ms + self.residual_ms;
        if (self.total_ms - sum).abs() > 1e-6 * sum.abs().max(1.0) {
            return Err(MetricsError::TotalMismatch { total: self.total_ms, sum });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricStage {
    Stt,
    Vision,
    Llm,
    Tts,
    Residual,
    Total,
}

impl MetricStage {
    pub const ALL: [MetricStage; 6] = [
        MetricStage::Stt,
        MetricStage::Vision,
        MetricStage::Llm,
        MetricStage::Tts,
        MetricStage::Residual,
        MetricStage::Total,
    ];

    pub fn field_name(self) -> &'static str {
        match self {
            MetricStage::Stt => "stt_ms",
            MetricStage::Vision => "vision_ms",
            MetricStage::Llm => "llm_ms",
            MetricStage::Tts => "tts_ms",
            MetricStage::Residual => "residual_ms",
            MetricStage::Total => "total_ms",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MetricStage::Stt => "speech recognition",
            MetricStage::Vision => "image capture",
            MetricStage::Llm => "llm response",
            MetricStage::Tts => "tts generation",
            MetricStage::Residual => "residual",
            MetricStage::Total => "total",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub n: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub p99_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Summarizes a sample set.
///
/// Samples are sorted before any arithmetic so the result is bit-identical
/// under any permutation of the input.
pub fn summarize_samples(samples: &[f64]) -> Result<StatsSummary, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::NoData);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();

    let mean = sorted.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        let ss: f64 = sorted.iter().map(|x| (x - mean) * (x - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    };
    // ceil(0.99 n) computed in integers to avoid 0.99 representation error.
    let rank = (99 * n).div_ceil(100).max(1);

    Ok(StatsSummary {
        n,
        mean_ms: mean,
        std_ms: std,
        p99_ms: sorted[rank - 1],
        min_ms: sorted[0],
        max_ms: sorted[n - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub session_id: String,
    pub latencies: StageLatencies,
}

/// Process-wide recorder shared by all sessions.
#[derive(Debug, Default)]
pub struct MetricsRecorder {
    samples: Mutex<Vec<LatencySample>>,
}

impl MetricsRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, session_id: &str, latencies: StageLatencies) -> Result<(), MetricsError> {
        latencies.validate()?;
        self.samples.lock().push(LatencySample { session_id: session_id.to_string(), latencies });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<LatencySample> {
        self.samples.lock().clone()
    }

    pub fn summarize(&self, stage: MetricStage) -> Result<StatsSummary, MetricsError> {
        let values: Vec<f64> = self.samples.lock().iter().map(|s| s.latencies.get(stage)).collect();
        summarize_samples(&values)
    }

    /// Summaries for every stage taken from one consistent snapshot.
    pub fn summarize_all(&self) -> Result<Vec<(MetricStage, StatsSummary)>, MetricsError> {
        let snapshot = self.snapshot();
        MetricStage::ALL
            .iter()
            .map(|&stage| {
                let values: Vec<f64> = snapshot.iter().map(|s| s.latencies.get(stage)).collect();
                summarize_samples(&values).map(|s| (stage, s))
            })
            .collect()
    }
}

/// Plain-text table, one row per stage: `mean ± std` and p99, in seconds.
pub fn render_table(rows: &[(MetricStage, StatsSummary)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>6} {:>18} {:>10} {:>10} {:>10}",
        "stage", "n", "mean ± std (s)", "p99 (s)", "min (s)", "max (s)"
    );
    for (stage, s) in rows {
        let _ = writeln!(
            out,
            "{:<20} {:>6} {:>18} {:>10.2} {:>10.2} {:>10.2}",
            stage.label(),
            s.n,
            format!("{:.2} ± {:.2}", s.mean_ms / 1000.0, s.std_ms / 1000.0),
            s.p99_ms / 1000.0,
            s.min_ms / 1000.0,
            s.max_ms / 1000.0,
        );
    }
    out
}

pub fn render_csv(rows: &[(MetricStage, StatsSummary)]) -> String {
    let mut out = String::from("stage,n,mean_ms,std_ms,p99_ms,min_ms,max_ms\n");
    for (stage, s) in rows {
        let _ = writeln!(
            out,
            "{},{},{:.3},{:.3},{:.3},{:.3},{:.3}",
            stage.field_name().trim_end_matches("_ms"),
            s.n,
            s.mean_ms,
            s.std_ms,
            s.p99_ms,
            s.min_ms,
            s.max_ms
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_has_zero_std() {
        let rec = MetricsRecorder::new();
        rec.record("a", StageLatencies::from_parts(1.0, 2.0, 3.0, 4.0, 5.0)).unwrap();
        let s = rec.summarize(MetricStage::Total).unwrap();
        assert_eq!(s.n, 1);
        assert_eq!(s.mean_ms, 15.0);
        assert_eq!(s.std_ms, 0.0);
        assert_eq!(s.p99_ms, 15.0);
    }

    #[test]
    fn hand_arithmetic_mean_and_std() {
        let s = summarize_samples(&[1000.0, 2000.0, 3000.0]).unwrap();
        assert_eq!(s.mean_ms, 2000.0);
        assert_eq!(s.std_ms, 1000.0);
        assert_eq!(s.min_ms, 1000.0);
        assert_eq!(s.max_ms, 3000.0);
        assert_eq!(s.p99_ms, 3000.0);
    }

    #[test]
    fn p99_of_hundred_distinct_is_99th_order_statistic() {
        let samples: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        assert_eq!(summarize_samples(&samples).unwrap().p99_ms, 99.0);
        let samples: Vec<f64> = (1..=101).map(f64::from).collect();
        // ceil(99.99) = 100
        assert_eq!(summarize_samples(&samples).unwrap().p99_ms, 100.0);
    }

    #[test]
    fn sessions_accumulate() {
        let rec = MetricsRecorder::new();
        rec.record("a", StageLatencies::from_parts(1.0, 1.0, 1.0, 1.0, 0.0)).unwrap();
        rec.record("b", StageLatencies::from_parts(2.0, 1.0, 1.0, 1.0, 0.0)).unwrap();
        assert_eq!(rec.summarize(MetricStage::Stt).unwrap().n, 2);
    }

    #[test]
    fn contract_violations() {
        let rec = MetricsRecorder::new();
        let mut bad = StageLatencies::from_parts(1.0, 1.0, 1.0, 1.0, 0.0);
        bad.total_ms = 5.0;
        assert!(matches!(rec.record("a", bad), Err(MetricsError::TotalMismatch { .. })));
        let neg = StageLatencies::from_parts(-1.0, 1.0, 1.0, 1.0, 0.0);
        assert!(matches!(rec.record("a", neg), Err(MetricsError::Negative { field: "stt_ms", .. })));
        assert_eq!(rec.summarize(MetricStage::Llm), Err(MetricsError::NoData));
    }

    #[test]
    fn csv_has_one_row_per_stage() {
        let rec = MetricsRecorder::new();
        rec.record("a", StageLatencies::from_parts(1300.0, 2130.0, 9720.0, 930.0, 13880.0)).unwrap();
        let csv = render_csv(&rec.summarize_all().unwrap());
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.contains("llm,1,9720.000,0.000,9720.000"));
        assert!(render_table(&rec.summarize_all().unwrap()).contains("9.72 ± 0.00"));
    }
}
