use super::{AttackKind, RetentionPoint, RobustnessCurve};
use crate::error::{Error, Result};

pub const CURVE_CSV_HEADER: &str = "dataset,attack,steps,epsilon,n_samples,n_retained,retention";

/// One row per point, curves in order; epsilon with 4 decimals, retention
/// with 6.
pub fn write_curves_csv(curves: &[RobustnessCurve]) -> String {
    let mut out = String::from(CURVE_CSV_HEADER);
    out.push('\n');
    for c in curves {
        for p in &c.points {
            out.push_str(&format!(
                "{},{},{},{:.4},{},{},{:.6}\n",
                c.dataset,
                c.kind,
                c.steps,
                p.epsilon,
                p.n_samples,
                p.n_retained,
                p.retention()
            ));
        }
    }
    out
}

/// Groups consecutive rows sharing `(dataset, attack, steps)` into curves.
/// Failure counts, seeds and checkpoint ids are not stored in the CSV.
pub fn read_curves_csv(text: &str) -> Result<Vec<RobustnessCurve>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == CURVE_CSV_HEADER => {}
        _ => return Err(Error::Format(format!("curve CSV must start with `{CURVE_CSV_HEADER}`"))),
    }
    let mut curves: Vec<RobustnessCurve> = Vec::new();
    for (i, line) in lines {
        let bad = |what: &str| Error::Format(format!("line {}: {what}", i + 1));
        let fields: Vec<&str> = line.trim().split(',').collect();
        let [dataset, attack, steps, epsilon, n_samples, n_retained, _retention] = fields[..] else {
            return Err(bad("expected 7 fields"));
        };
        let kind: AttackKind = attack.parse().map_err(|_| bad("unknown attack"))?;
        let steps: usize = steps.parse().map_err(|_| bad("bad steps"))?;
        let point = RetentionPoint {
            epsilon: epsilon.parse().map_err(|_| bad("bad epsilon"))?,
            n_samples: n_samples.parse().map_err(|_| bad("bad n_samples"))?,
            n_retained: n_retained.parse().map_err(|_| bad("bad n_retained"))?,
            n_failed: 0,
        };
        if point.n_retained > point.n_samples || point.n_samples == 0 {
            return Err(bad("n_retained must not exceed a positive n_samples"));
        }
        match curves.last_mut() {
            Some(c) if c.dataset == dataset && c.kind == kind && c.steps == steps => c.points.push(point),
            _ => curves.push(RobustnessCurve {
                dataset: dataset.to_string(),
                kind,
                steps,
                points: vec![point],
                seed: None,
                checkpoint_id: None,
            }),
        }
    }
    Ok(curves)
}
