//! Projected subgradient descent `x_{t+1} = Π(x_t − η_t g_t)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedules::StepSchedule;

/// A convex objective with a deterministic subgradient oracle and a
/// projection onto its domain.
pub trait ConvexInstance: Send + Sync {
    fn dim(&self) -> usize;

    fn initial_point(&self) -> Vec<f64>;

    fn value(&self, x: &[f64]) -> f64;

    /// Writes one element of `∂f(x)` into `out` (length `dim`).
    fn subgradient_into(&self, x: &[f64], out: &mut [f64]);

    /// Projects `x` onto the domain in place. Returns `true` when `x` changed.
    fn project(&self, x: &mut [f64]) -> bool;

    /// A value `v` with `min f ≤ v`; errors are reported relative to it.
    fn reference_level(&self) -> f64;

    fn lipschitz(&self) -> f64;

    fn diameter(&self) -> f64;

    fn subgradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.subgradient_into(x, &mut out);
        out
    }
}

/// Which iterates a run keeps.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotPolicy {
    #[default]
    None,
    All,
    Times(BTreeSet<u64>),
}

impl SnapshotPolicy {
    fn wants(&self, t: u64) -> bool {
        match self {
            SnapshotPolicy::None => false,
            SnapshotPolicy::All => true,
            SnapshotPolicy::Times(times) => times.contains(&t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schedule_label: String,
    pub horizon: u64,
    /// `errors[t-1] = f(x_t) − reference_level` for `t = 1..=horizon`.
    pub errors: Vec<f64>,
    pub snapshots: BTreeMap<u64, Vec<f64>>,
    /// Largest `‖x_t‖` over `t = 0..=horizon`.
    pub max_norm_seen: f64,
    /// Steps at which the projection moved its input.
    pub projection_activations: u64,
}

impl RunRecord {
    /// `err(t)` for `1 ≤ t ≤ horizon`.
    pub fn error_at(&self, t: u64) -> Option<f64> {
        t.checked_sub(1).and_then(|i| self.errors.get(i as usize)).copied()
    }

    pub fn final_error(&self) -> f64 {
        *self.errors.last().expect("a run has at least one step")
    }

    /// Writes `t,err` rows.
    pub fn write_errors_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,err")?;
        for (i, e) in self.errors.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, e)?;
        }
        Ok(())
    }

    /// Snapshots as a JSON object keyed by step.
    pub fn snapshots_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .snapshots
            .iter()
            .map(|(t, x)| (t.to_string(), serde_json::json!(x)))
            .collect();
        serde_json::Value::Object(map)
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Euclidean projection onto the ball of radius `radius` about the origin.
pub fn project_ball(x: &[f64], radius: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    project_ball_in_place(&mut out, radius);
    out
}

pub(crate) fn project_ball_in_place(x: &mut [f64], radius: f64) -> bool {
    let n = norm(x);
    if n <= radius {
        return false;
    }
    let scale = radius / n;
    x.iter_mut().for_each(|v| *v *= scale);
    // rounding can leave the norm an ulp above the radius
    while norm(x) > radius {
        x.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
    }
    true
}

/// Clamps `x` to `[lo, hi]`.
pub fn project_interval(x: f64, lo: f64, hi: f64) -> Result<f64> {
    if lo > hi || lo.is_nan() || hi.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "interval [{lo}, {hi}] is empty"
        )));
    }
    Ok(x.clamp(lo, hi))
}

/// Runs `horizon` steps and keeps iterates according to `policy`.
pub fn run(
    instance: &dyn ConvexInstance,
    schedule: &StepSchedule,
    horizon: u64,
    policy: &SnapshotPolicy,
) -> Result<RunRecord> {
    let mut snapshots = BTreeMap::new();
    let mut record = run_observed(instance, schedule, horizon, |t, x| {
        if policy.wants(t) {
            snapshots.insert(t, x.to_vec());
        }
    })?;
    record.snapshots = snapshots;
    Ok(record)
}

/// Runs `horizon` steps, calling `observe(t, x_t)` for `t = 0..=horizon`.
///
/// The returned record has no snapshots.
pub fn run_observed<F>(
    instance: &dyn ConvexInstance,
    schedule: &StepSchedule,
    horizon: u64,
    mut observe: F,
) -> Result<RunRecord>
where
    F: FnMut(u64, &[f64]),
{
    if horizon < 1 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    let dim = instance.dim();
    if dim < 1 {
        return Err(Error::InvalidParameter("instance dimension must be >= 1".into()));
    }
    let reference = instance.reference_level();
    let mut x = instance.initial_point();
    if x.len() != dim {
        return Err(Error::InvalidParameter(format!(
            "initial point has length {}, instance dimension is {dim}",
            x.len()
        )));
    }
    let mut g = vec![0.0; dim];
    let mut errors = Vec::with_capacity(horizon as usize);
    let mut max_norm_seen = norm(&x);
    let mut projection_activations = 0;
    observe(0, &x);

    for t in 0..horizon {
        instance.subgradient_into(&x, &mut g);
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericFault {
                step: t,
                what: format!("subgradient coordinate {i} is {}", g[i]),
            });
        }
        let eta = schedule.eta(t);
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= eta * gi;
        }
        if instance.project(&mut x) {
            projection_activations += 1;
        }
        let value = instance.value(&x);
        if !value.is_finite() {
            return Err(Error::NumericFault {
                step: t + 1,
                what: format!("objective value is {value}"),
            });
        }
        errors.push(value - reference);
        max_norm_seen = max_norm_seen.max(norm(&x));
        observe(t + 1, &x);
    }

    Ok(RunRecord {
        schedule_label: schedule.label().to_string(),
        horizon,
        errors,
        snapshots: BTreeMap::new(),
        max_norm_seen,
        projection_activations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `f(x) = ‖x − c‖₁` on the box `[-1, 1]^2`.
    struct L1Box {
        center: [f64; 2],
    }

    impl ConvexInstance for L1Box {
        fn dim(&self) -> usize {
            2
        }
        fn initial_point(&self) -> Vec<f64> {
            vec![0.9, -0.4]
        }
        fn value(&self, x: &[f64]) -> f64 {
            x.iter().zip(&self.center).map(|(a, c)| (a - c).abs()).sum()
        }
        fn subgradient_into(&self, x: &[f64], out: &mut [f64]) {
            for ((o, a), c) in out.iter_mut().zip(x).zip(&self.center) {
                *o = if a > c { 1.0 } else { -1.0 };
            }
        }
        fn project(&self, x: &mut [f64]) -> bool {
            let mut moved = false;
            for v in x.iter_mut() {
                let c = v.clamp(-1.0, 1.0);
                moved |= c != *v;
                *v = c;
            }
            moved
        }
        fn reference_level(&self) -> f64 {
            0.0
        }
        fn lipschitz(&self) -> f64 {
            2f64.sqrt()
        }
        fn diameter(&self) -> f64 {
            2.0 * 2f64.sqrt()
        }
    }

    struct Blowup;

    impl ConvexInstance for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn initial_point(&self) -> Vec<f64> {
            vec![0.0]
        }
        fn value(&self, x: &[f64]) -> f64 {
            if x[0] < -1.5 {
                f64::INFINITY
            } else {
                x[0]
            }
        }
        fn subgradient_into(&self, _x: &[f64], out: &mut [f64]) {
            out[0] = 1.0;
        }
        fn project(&self, _x: &mut [f64]) -> bool {
            false
        }
        fn reference_level(&self) -> f64 {
            0.0
        }
        fn lipschitz(&self) -> f64 {
            1.0
        }
        fn diameter(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn zero_steps_move_nothing() {
        let inst = L1Box { center: [0.1, 0.2] };
        let s = StepSchedule::constant(0.0).unwrap();
        let rec = run(&inst, &s, 5, &SnapshotPolicy::All).unwrap();
        let f0 = inst.value(&inst.initial_point());
        assert_eq!(rec.errors, vec![f0; 5]);
        for x in rec.snapshots.values() {
            assert_eq!(x, &inst.initial_point());
        }
        assert_eq!(rec.snapshots.len(), 6);
    }

    #[test]
    fn projection_counts_and_snapshot_times() {
        let inst = L1Box { center: [5.0, 5.0] };
        let s = StepSchedule::constant(0.5).unwrap();
        let times: BTreeSet<u64> = [1, 3].into_iter().collect();
        let rec = run(&inst, &s, 4, &SnapshotPolicy::Times(times)).unwrap();
        assert_eq!(rec.snapshots.keys().copied().collect::<Vec<_>>(), vec![1, 3]);
        let x1 = &rec.snapshots[&1];
        assert_eq!(x1[0], 1.0);
        assert!((x1[1] - 0.1).abs() < 1e-15);
        assert!(rec.projection_activations >= 2);
        assert!(rec.max_norm_seen <= 2f64.sqrt() + 1e-15);
    }

    #[test]
    fn numeric_fault_names_step() {
        let s = StepSchedule::constant(1.0).unwrap();
        let err = run(&Blowup, &s, 5, &SnapshotPolicy::None).unwrap_err();
        assert!(matches!(err, Error::NumericFault { step: 2, .. }), "{err:?}");
    }

    #[test]
    fn horizon_must_be_positive() {
        let s = StepSchedule::constant(1.0).unwrap();
        assert!(run(&Blowup, &s, 0, &SnapshotPolicy::None).is_err());
    }

    #[test]
    fn ball_projection() {
        assert_eq!(project_ball(&[0.3, 0.4], 1.0), vec![0.3, 0.4]);
        let p = project_ball(&[3.0, 4.0], 1.0);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        assert_eq!(project_ball(&[0.0; 4], 1.0), vec![0.0; 4]);
    }

    #[test]
    fn interval_projection() {
        assert_eq!(project_interval(1.5, -1.0, 1.0).unwrap(), 1.0);
        assert_eq!(project_interval(0.2, -1.0, 1.0).unwrap(), 0.2);
        assert_eq!(project_interval(-3.0, -1.0, 1.0).unwrap(), -1.0);
        assert!(project_interval(0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn runs_are_deterministic() {
        let inst = L1Box { center: [0.3, -0.7] };
        let s = StepSchedule::sqrt_decay(1.0, 1.0).unwrap();
        let a = run(&inst, &s, 50, &SnapshotPolicy::All).unwrap();
        let b = run(&inst, &s, 50, &SnapshotPolicy::All).unwrap();
        assert_eq!(a, b);
    }
}
