//! Plot-ready exports. Byte-deterministic for a fixed seed and grid.
//!
//! CSV schema v1, one row per run, columns in [`RECORD_COLUMNS`] order.
//! `gt_loglik` of an impossible sequence is written as `-inf`; quality
//! columns are empty for livelocked runs. Floats use the shortest
//! representation that round-trips.

use std::io::Write;

use serde_json::json;

use super::{ConfigSummary, RunRecord};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const RECORD_COLUMNS: [&str; 17] = [
    "kind",
    "config_id",
    "config_label",
    "fingerprint",
    "task_id",
    "seed",
    "status",
    "exact_match",
    "gt_loglik",
    "verifier_nll",
    "drafter_nfe",
    "verifier_nfe",
    "weighted_cost",
    "lambda",
    "cycles",
    "total_remasked",
    "forced_trust_cycles",
];

const SUMMARY_COLUMNS: [&str; 15] = [
    "config_id",
    "kind",
    "config_label",
    "fingerprint",
    "tasks",
    "exact_match",
    "gt_loglik",
    "impossible",
    "verifier_nll",
    "drafter_nfe",
    "verifier_nfe",
    "weighted_cost",
    "cycles",
    "total_remasked",
    "livelocks",
];

fn fmt_f64(x: f64) -> String {
    if x == f64::NEG_INFINITY {
        "-inf".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

pub fn write_records_csv<W: Write>(out: W, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_COLUMNS).map_err(csv_err)?;
    for r in records {
        let (em, ll, nll) = match &r.quality {
            Some(q) => (u8::from(q.exact_match).to_string(), fmt_f64(q.gt_loglik), fmt_f64(q.verifier_nll)),
            None => (String::new(), String::new(), String::new()),
        };
        w.write_record([
            r.kind.as_str().to_owned(),
            r.config_id.to_string(),
            r.config_label.clone(),
            r.fingerprint.clone(),
            r.task_id.to_string(),
            r.seed.to_string(),
            match r.status {
                super::RecordStatus::Ok => "ok".into(),
                super::RecordStatus::Livelock => "livelock".into(),
            },
            em,
            ll,
            nll,
            r.cost.drafter_nfe.to_string(),
            r.cost.verifier_nfe.to_string(),
            fmt_f64(r.cost.weighted_cost),
            fmt_f64(r.lambda),
            r.cycles.to_string(),
            r.total_remasked.to_string(),
            r.forced_trust_cycles.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON object per line. `gt_loglik` of an impossible sequence is `null`
/// with `"impossible": true`. With `timing`, each line gains `wall_time_ms`
/// (which breaks byte-determinism).
pub fn write_records_jsonl<W: Write>(mut out: W, records: &[RunRecord], timing: bool) -> Result<()> {
    for r in records {
        let quality = r.quality.as_ref().map(|q| {
            json!({
                "exact_match": q.exact_match,
                "gt_loglik": q.gt_loglik.is_finite().then_some(q.gt_loglik),
                "impossible": q.gt_loglik == f64::NEG_INFINITY,
                "verifier_nll": q.verifier_nll,
            })
        });
        let mut line = json!({
            "schema_version": SCHEMA_VERSION,
            "kind": r.kind,
            "config_id": r.config_id,
            "config_label": r.config_label,
            "fingerprint": r.fingerprint,
            "task_id": r.task_id,
            "seed": r.seed,
            "status": r.status,
            "quality": quality,
            "cost": r.cost,
            "lambda": r.lambda,
            "cycles": r.cycles,
            "total_remasked": r.total_remasked,
            "forced_trust_cycles": r.forced_trust_cycles,
        });
        if timing {
            line["wall_time_ms"] = json!(r.wall_time_ms);
        }
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(out: W, summaries: &[ConfigSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS).map_err(csv_err)?;
    for s in summaries {
        w.write_record([
            s.config_id.to_string(),
            s.kind.as_str().to_owned(),
            s.config_label.clone(),
            s.fingerprint.clone(),
            s.tasks.to_string(),
            fmt_f64(s.exact_match),
            fmt_f64(s.gt_loglik),
            s.impossible.to_string(),
            fmt_f64(s.verifier_nll),
            fmt_f64(s.drafter_nfe),
            fmt_f64(s.verifier_nfe),
            fmt_f64(s.weighted_cost),
            fmt_f64(s.cycles),
            fmt_f64(s.total_remasked),
            s.livelocks.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{CostMetrics, QualityMetrics, RecordStatus, RunKind};

    fn record(quality: Option<QualityMetrics>) -> RunRecord {
        RunRecord {
            kind: RunKind::Dual,
            config_id: 2,
            config_label: "dual/top_k(1)/K=5/kl_threshold(0.3)".into(),
            fingerprint: "abc".into(),
            task_id: 7,
            seed: 99,
            status: if quality.is_some() { RecordStatus::Ok } else { RecordStatus::Livelock },
            quality,
            cost: CostMetrics::new(10, 2, 5.0),
            lambda: 5.0,
            cycles: 2,
            total_remasked: 1,
            forced_trust_cycles: 0,
            wall_time_ms: 1.25,
        }
    }

    #[test]
    fn csv_layout() {
        let q = QualityMetrics {
            exact_match: true,
            gt_loglik: f64::NEG_INFINITY,
            verifier_nll: 0.5,
        };
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &[record(Some(q)), record(None)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], RECORD_COLUMNS.join(","));
        assert_eq!(lines[1], "dual,2,dual/top_k(1)/K=5/kl_threshold(0.3),abc,7,99,ok,1,-inf,0.5,10,2,20,5,2,1,0");
        assert_eq!(lines[2], "dual,2,dual/top_k(1)/K=5/kl_threshold(0.3),abc,7,99,livelock,,,,10,2,20,5,2,1,0");
    }

    #[test]
    fn jsonl_hides_timing_unless_asked() {
        let mut buf = Vec::new();
        write_records_jsonl(&mut buf, &[record(None)], false).unwrap();
        assert!(!String::from_utf8(buf).unwrap().contains("wall_time_ms"));
        let mut buf = Vec::new();
        write_records_jsonl(&mut buf, &[record(None)], true).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["wall_time_ms"], 1.25);
        assert_eq!(v["quality"], serde_json::Value::Null);
    }
}
