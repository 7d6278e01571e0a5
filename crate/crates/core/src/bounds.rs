//! Analytic quantities in the lower-bound argument and guarantee envelopes.
//!
//! Every `log` is natural. Horizons written `T/2` use `⌊T/2⌋`.

use std::f64::consts::{E, PI};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::RunRecord;
use crate::error::{Error, Result};
use crate::schedules::{param, parse_params, StepSchedule};

/// A non-decreasing `φ: ℕ → [1, ∞)` with worst-case error `≤ φ(t)/√t`.
#[derive(Clone)]
pub struct GuaranteeEnvelope {
    eval: Arc<dyn Fn(u64) -> f64 + Send + Sync>,
    label: String,
}

impl fmt::Debug for GuaranteeEnvelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GuaranteeEnvelope").field("label", &self.label).finish()
    }
}

impl GuaranteeEnvelope {
    pub fn new<F>(eval: F, label: impl Into<String>) -> Self
    where
        F: Fn(u64) -> f64 + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(eval),
            label: label.into(),
        }
    }

    /// `φ(t) = 8 + 4 ln t`: the `D/(G√(t+1))` guarantee at `G = 1, D = 2`.
    ///
    /// `φ(0)` is taken as `φ(1)`.
    pub fn example31() -> Self {
        Self::log_affine(4.0, 1.0, 8.0).with_label("example31")
    }

    /// `φ(t) = scale · ln(t)^power + offset`, with `t = 0` treated as `t = 1`.
    pub fn log_affine(scale: f64, power: f64, offset: f64) -> Self {
        Self::new(
            move |t| scale * (t.max(1) as f64).ln().powf(power) + offset,
            format!("log:c1={scale},c2={power},c3={offset}"),
        )
    }

    pub fn constant(c: f64) -> Result<Self> {
        if !(c >= 1.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "constant envelope must be finite and >= 1, got {c}"
            )));
        }
        Ok(Self::new(move |_| c, format!("const:c={c}")))
    }

    /// Envelope from a table indexed by `t` (index 0 is `φ(0)`), held at its
    /// last value beyond the table.
    pub fn from_table(values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("envelope table is empty".into()));
        }
        let values: Arc<[f64]> = values.into();
        Ok(Self::new(
            move |t| {
                let i = usize::try_from(t).unwrap_or(usize::MAX).min(values.len() - 1);
                values[i]
            },
            label,
        ))
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn at(&self, t: u64) -> f64 {
        (self.eval)(t)
    }
}

/// Parses `example31`, `one`, `const:c=..` or `log:c1=..,c2=..,c3=..`.
///
/// `empirical` is not an envelope by itself and is handled by the harness.
pub fn parse_envelope(descriptor: &str) -> Result<GuaranteeEnvelope> {
    let (name, rest) = descriptor.split_once(':').unwrap_or((descriptor, ""));
    match name.trim() {
        "example31" => Ok(GuaranteeEnvelope::example31()),
        "one" => Ok(GuaranteeEnvelope::constant(1.0)?.with_label("one")),
        "const" | "constant" => {
            let params = parse_params(rest)?;
            let c = param(&params, "c")?.ok_or_else(|| {
                Error::InvalidParameter("const envelope requires c=<value>".into())
            })?;
            GuaranteeEnvelope::constant(c)
        }
        "log" => {
            let params = parse_params(rest)?;
            Ok(GuaranteeEnvelope::log_affine(
                param(&params, "c1")?.unwrap_or(1.0),
                param(&params, "c2")?.unwrap_or(1.0),
                param(&params, "c3")?.unwrap_or(1.0),
            ))
        }
        other => Err(Error::InvalidParameter(format!(
            "unknown envelope `{other}` (expected example31, one, const, log or empirical)"
        ))),
    }
}

// ---------------------------------------------------------------------------
// scalar bounds

/// `H_n = Σ_{i=1}^n 1/i`, summed from the small terms up.
pub fn harmonic(n: u64) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidParameter("harmonic number needs n >= 1".into()));
    }
    Ok(harmonic_unchecked(n))
}

fn harmonic_unchecked(n: u64) -> f64 {
    (1..=n).rev().map(|i| 1.0 / i as f64).sum()
}

/// `E(t) ≥ η_{t-1}`.
pub fn lemma41_last_step(schedule: &StepSchedule, t: u64) -> f64 {
    assert!(t >= 1, "t must be >= 1");
    schedule.eta(t - 1)
}

/// `E(t) ≥ 1/(4e² Σ_{j<t} η_j)` when the step sum is at least `1/2`.
pub fn lemma41_sum_bound(schedule: &StepSchedule, t: u64) -> Option<f64> {
    sum_bound_from(schedule.prefix_sum(t))
}

fn sum_bound_from(step_sum: f64) -> Option<f64> {
    (step_sum >= 0.5).then(|| 1.0 / (4.0 * E.powi(2) * step_sum))
}

/// `1/(64 φ(t+1) √(t+1)) · Σ_{j<t} min{1, η_j√(t+1)}² / (t+1−j)`.
pub fn eq3_bound(schedule: &StepSchedule, t: u64, phi: &GuaranteeEnvelope) -> f64 {
    eq3_from(&schedule.etas(t as usize), phi.at(t + 1))
}

fn eq3_from(etas: &[f64], phi_next: f64) -> f64 {
    let t = etas.len();
    let root = ((t + 1) as f64).sqrt();
    let sum: f64 = etas
        .iter()
        .enumerate()
        .map(|(j, eta)| (eta * root).min(1.0).powi(2) / (t + 1 - j) as f64)
        .sum();
    sum / (64.0 * phi_next * root)
}

/// `(1/128) Σ_{j<t} η_j² j / (t+1−j)`.
pub fn phi4_rhs(schedule: &StepSchedule, t: u64) -> f64 {
    phi4_from(&schedule.etas(t as usize), 0.0)
}

/// The `(j+1)`-numerator form `(1/128) Σ_{j<t} η_j² (j+1) / (t+1−j)`.
pub fn phi4_rhs_succ(schedule: &StepSchedule, t: u64) -> f64 {
    phi4_from(&schedule.etas(t as usize), 1.0)
}

fn phi4_from(etas: &[f64], shift: f64) -> f64 {
    let t = etas.len();
    etas.iter()
        .enumerate()
        .map(|(j, eta)| eta * eta * (j as f64 + shift) / (t + 1 - j) as f64)
        .sum::<f64>()
        / 128.0
}

/// `(1/T) Σ_{k=1}^{T-1} k η_k² (H_{T+1-k} − 1)`.
///
/// This equals the average over `t ∈ [T]` of `Σ_{j<t} j η_j²/(t+1−j)`: for a
/// fixed `j = k` the inner index runs over `t = k+1..=T`, which contributes
/// `1/2 + … + 1/(T+1−k)`.
pub fn averaged_phi4(schedule: &StepSchedule, horizon: u64) -> f64 {
    averaged_from(&schedule.etas(horizon as usize), false)
}

/// `(1/T) Σ_{k=1}^{T-1} k η_k² H_{T+1-k}`, the form with the full harmonic
/// weight. It dominates [`averaged_phi4`].
pub fn averaged_phi4_full_harmonic(schedule: &StepSchedule, horizon: u64) -> f64 {
    averaged_from(&schedule.etas(horizon as usize), true)
}

fn averaged_from(etas: &[f64], full_harmonic: bool) -> f64 {
    let horizon = etas.len();
    if horizon < 2 {
        return 0.0;
    }
    // tail[n] = Σ_{i=2}^{n} 1/i for n = 1..=T, built from the small end
    let mut weights = vec![0.0; horizon + 1];
    for n in 2..=horizon {
        weights[n] = weights[n - 1] + 1.0 / n as f64;
    }
    let offset = if full_harmonic { 1.0 } else { 0.0 };
    let sum: f64 = (1..horizon)
        .map(|k| k as f64 * etas[k] * etas[k] * (weights[horizon + 1 - k] + offset))
        .sum();
    sum / horizon as f64
}

/// `(1/T) Σ_{t=1}^{T} Σ_{j<t} j η_j²/(t+1−j)`, evaluated term by term.
pub fn averaged_phi4_double_sum(schedule: &StepSchedule, horizon: u64) -> f64 {
    double_sum_from(&schedule.etas(horizon as usize))
}

fn double_sum_from(etas: &[f64]) -> f64 {
    let horizon = etas.len();
    if horizon == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for t in 1..=horizon {
        for (j, eta) in etas[..t].iter().enumerate() {
            total += j as f64 * eta * eta / (t + 1 - j) as f64;
        }
    }
    total / horizon as f64
}

/// `2⁸ e⁴`.
fn t1_scale() -> f64 {
    256.0 * E.powi(4)
}

/// `t₁ = ⌊(T/2+1) / (2⁸ e⁴ φ(T/2+1)²)⌋ − 1`, or `None` when it is below 1.
pub fn t1_select(horizon: u64, phi: &GuaranteeEnvelope) -> Option<u64> {
    let half = horizon / 2 + 1;
    let phi_half = phi.at(half);
    let ratio = half as f64 / (t1_scale() * phi_half * phi_half);
    let floor = ratio.floor();
    (floor >= 2.0).then(|| floor as u64 - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalBound {
    /// `H_{T/2}^{1/8} / (2^{5/2} e²)`.
    pub harmonic: f64,
    /// `ln(T/2)^{1/8} / (2^{5/2} e)`.
    pub log: f64,
}

/// The two closing expressions for the lower bound on `φ(T+1)`.
pub fn final_bound(horizon: u64) -> FinalBound {
    assert!(horizon >= 2, "final bound needs T >= 2");
    let half = horizon / 2;
    let base = 2f64.powf(2.5);
    FinalBound {
        harmonic: harmonic_unchecked(half).powf(0.125) / (base * E.powi(2)),
        log: (half as f64).ln().powf(0.125) / (base * E),
    }
}

/// Smallest even `T` in `[lo, hi]` from which the harmonic form stays at or
/// above the log form through `hi`, if any.
pub fn final_bound_crossover(lo: u64, hi: u64) -> Option<u64> {
    let mut candidate = None;
    let mut t = lo.max(2) + lo.max(2) % 2;
    while t <= hi {
        let fb = final_bound(t);
        if fb.harmonic >= fb.log {
            candidate.get_or_insert(t);
        } else {
            candidate = None;
        }
        t += 2;
    }
    candidate
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// `Σ_{j=t₁}^{t₂} η_j ≤ 2 φ(t₂+1) (√t₂ − √t₁)`.
pub fn eta_sum_upper(
    schedule: &StepSchedule,
    t1: u64,
    t2: u64,
    phi: &GuaranteeEnvelope,
) -> Result<Inequality> {
    if !(1 <= t1 && t1 < t2) {
        return Err(Error::InvalidParameter(format!(
            "step-sum bound needs 1 <= t1 < t2, got t1={t1}, t2={t2}"
        )));
    }
    let lhs: f64 = (t1..=t2).map(|j| schedule.eta(j)).sum();
    let rhs = 2.0 * phi.at(t2 + 1) * ((t2 as f64).sqrt() - (t1 as f64).sqrt());
    Ok(Inequality {
        lhs,
        rhs,
        pass: lhs <= rhs + 1e-12,
    })
}

// ---------------------------------------------------------------------------
// envelopes from data

/// `φ̂(t) = max{1, max_{s ≤ t} √s·err(s)}` over all records.
///
/// Defined through the longest record and held constant after it.
pub fn empirical_envelope(records: &[RunRecord]) -> Result<GuaranteeEnvelope> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidParameter("empirical envelope needs at least one run".into()))?;
    if let Some(other) = records.iter().find(|r| r.schedule_label != first.schedule_label) {
        return Err(Error::InvalidParameter(format!(
            "runs mix schedules `{}` and `{}`",
            first.schedule_label, other.schedule_label
        )));
    }
    let len = records.iter().map(|r| r.errors.len()).max().unwrap_or(0);
    let mut table = vec![1.0; len + 1];
    for record in records {
        for (i, err) in record.errors.iter().enumerate() {
            let s = i + 1;
            let scaled = (s as f64).sqrt() * err;
            if scaled > table[s] {
                table[s] = scaled;
            }
        }
    }
    for s in 1..table.len() {
        table[s] = table[s].max(table[s - 1]);
    }
    GuaranteeEnvelope::from_table(table, format!("empirical:{}", first.schedule_label))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeViolation {
    pub check: String,
    pub t: u64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub envelope: String,
    pub schedule: String,
    pub checked_through: u64,
    pub at_least_one: bool,
    pub monotone: bool,
    pub dominates_records: bool,
    pub dominates_last_step: bool,
    /// First few violations of each kind.
    pub violations: Vec<EnvelopeViolation>,
}

impl EnvelopeReport {
    pub fn pass(&self) -> bool {
        self.at_least_one && self.monotone && self.dominates_records && self.dominates_last_step
    }
}

const MAX_VIOLATIONS_PER_CHECK: usize = 8;

/// Necessary conditions for `φ` to be an envelope of `schedule` on
/// `1..=through`: `φ ≥ 1`, non-decreasing, `φ(t) ≥ √t·err(t)` on every
/// recorded error, and `φ(t+1) ≥ η_t √(t+1)`.
pub fn validate_envelope(
    schedule: &StepSchedule,
    phi: &GuaranteeEnvelope,
    records: &[RunRecord],
    through: u64,
) -> EnvelopeReport {
    let mut violations = Vec::new();
    let mut push = |kind: &str, t: u64, lhs: f64, rhs: f64, count: &mut usize| {
        if *count < MAX_VIOLATIONS_PER_CHECK {
            violations.push(EnvelopeViolation {
                check: kind.to_string(),
                t,
                lhs,
                rhs,
            });
        }
        *count += 1;
    };

    let (mut low, mut mono, mut rec, mut last) = (0, 0, 0, 0);
    let mut prev = None;
    for t in 1..=through {
        let v = phi.at(t);
        if !(v >= 1.0) {
            push("phi >= 1", t, v, 1.0, &mut low);
        }
        if let Some(p) = prev {
            if !(v >= p) {
                push("non-decreasing", t, v, p, &mut mono);
            }
        }
        prev = Some(v);
    }
    for record in records {
        for (i, err) in record.errors.iter().enumerate() {
            let t = i as u64 + 1;
            let scaled = (t as f64).sqrt() * err;
            let v = phi.at(t);
            if !(v >= scaled) {
                push("phi(t) >= sqrt(t) err(t)", t, v, scaled, &mut rec);
            }
        }
    }
    for t in 0..through {
        let need = schedule.eta(t) * ((t + 1) as f64).sqrt();
        let v = phi.at(t + 1);
        if !(v >= need) {
            push("phi(t+1) >= eta_t sqrt(t+1)", t, v, need, &mut last);
        }
    }

    EnvelopeReport {
        envelope: phi.label().to_string(),
        schedule: schedule.label().to_string(),
        checked_through: through,
        at_least_one: low == 0,
        monotone: mono == 0,
        dominates_records: rec == 0,
        dominates_last_step: last == 0,
        violations,
    }
}

// ---------------------------------------------------------------------------
// proof-chain replay

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Pass,
    Fail,
    /// Depends on a `t₁ ≥ 1` that this horizon does not admit.
    Inconclusive,
    /// The premise of the step does not hold for this schedule.
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    pub name: String,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub status: StepStatus,
    pub note: String,
}

impl ChainStep {
    fn geq(name: &str, lhs: f64, rhs: f64, note: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            lhs: Some(lhs),
            rhs: Some(rhs),
            status: if lhs >= rhs { StepStatus::Pass } else { StepStatus::Fail },
            note: note.into(),
        }
    }

    fn inconclusive(name: &str, note: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            lhs: None,
            rhs: None,
            status: StepStatus::Inconclusive,
            note: note.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub schedule: String,
    pub envelope: String,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub t1: Option<u64>,
    pub final_bound: FinalBound,
    pub steps: Vec<ChainStep>,
}

impl ChainReport {
    pub fn any_failed(&self) -> bool {
        self.steps.iter().any(|s| s.status == StepStatus::Fail)
    }

    pub fn step(&self, name: &str) -> Option<&ChainStep> {
        self.steps.iter().find(|s| s.name == name)
    }
}

/// Relative tolerance for the averaged-sum identity.
pub const IDENTITY_RTOL: f64 = 1e-12;

/// Replays each inequality of the argument for horizon `T` numerically.
pub fn chain_check(schedule: &StepSchedule, phi: &GuaranteeEnvelope, horizon: u64) -> Result<ChainReport> {
    if horizon % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "chain check requires even T, got {horizon}"
        )));
    }
    if horizon < 4 {
        return Err(Error::InvalidParameter(format!(
            "chain check requires T >= 4, got {horizon}"
        )));
    }
    let n = horizon as usize;
    let half = n / 2;
    let etas = schedule.etas(n + 1);
    let phis: Vec<f64> = (0..=horizon + 1).map(|t| phi.at(t)).collect();
    let mut steps = Vec::new();

    // per-t rearranged bound: φ(t+1)^4 ≥ (1/128) Σ η_j² j/(t+1−j), and the (j+1) form
    let (mut worst_j, mut worst_succ) = ((f64::INFINITY, 0.0, 0.0, 0), (f64::INFINITY, 0.0, 0.0, 0));
    for t in 1..=n {
        let lhs = phis[t + 1].powi(4);
        for (shift, worst) in [(0.0, &mut worst_j), (1.0, &mut worst_succ)] {
            let rhs = phi4_from(&etas[..t], shift);
            let slack = lhs - rhs;
            if slack < worst.0 {
                *worst = (slack, lhs, rhs, t);
            }
        }
    }
    steps.push(ChainStep::geq(
        "phi4_rearranged",
        worst_j.1,
        worst_j.2,
        format!("phi(t+1)^4 >= phi4_rhs(t) for t=1..={n}; tightest at t={}", worst_j.3),
    ));
    steps.push(ChainStep::geq(
        "phi4_rearranged_succ",
        worst_succ.1,
        worst_succ.2,
        format!(
            "(j+1)-numerator form for t=1..={n}; tightest at t={}",
            worst_succ.3
        ),
    ));

    // averaging over t ∈ [T]
    let phi_last4 = 128.0 * phis[n + 1].powi(4);
    let mean_phi4 = (1..=n).map(|t| 128.0 * phis[t + 1].powi(4)).sum::<f64>() / n as f64;
    steps.push(ChainStep::geq(
        "average_monotone",
        phi_last4,
        mean_phi4,
        "128 phi(T+1)^4 >= (1/T) sum_t 128 phi(t+1)^4",
    ));
    let double = double_sum_from(&etas[..n]);
    steps.push(ChainStep::geq(
        "average_dominates_double_sum",
        mean_phi4,
        double,
        "(1/T) sum_t 128 phi(t+1)^4 >= (1/T) sum_t sum_{j<t} j eta_j^2/(t+1-j)",
    ));
    let closed = averaged_from(&etas[..n], false);
    let scale = closed.abs().max(double.abs());
    let identity_ok = (closed - double).abs() <= IDENTITY_RTOL * scale;
    steps.push(ChainStep {
        name: "average_identity".into(),
        lhs: Some(closed),
        rhs: Some(double),
        status: if identity_ok { StepStatus::Pass } else { StepStatus::Fail },
        note: format!(
            "closed form (1/T) sum_k k eta_k^2 (H_(T+1-k) - 1) equals the double sum to {IDENTITY_RTOL:e} relative; full-harmonic form = {}",
            averaged_from(&etas[..n], true)
        ),
    });
    let weighted_half: f64 = (1..=half).map(|k| k as f64 * etas[k] * etas[k]).sum();
    let h_half = harmonic_unchecked(half as u64);
    steps.push(ChainStep::geq(
        "average_harmonic_tail",
        double,
        h_half / n as f64 * weighted_half,
        "(1/T) sum_k k eta_k^2 H-weight >= H_(T/2)/T sum_(k<=T/2) k eta_k^2",
    ));

    // step sums up to T/2
    let e2 = E.powi(2);
    let phi_half = phis[half + 1];
    let root_half = ((half + 1) as f64).sqrt();
    let prefix_half: f64 = etas[..=half].iter().sum();
    if prefix_half >= 0.5 {
        steps.push(ChainStep::geq(
            "eta_prefix_lower",
            prefix_half,
            root_half / (4.0 * e2 * phi_half),
            "sum_(k<=T/2) eta_k >= sqrt(T/2+1)/(4 e^2 phi(T/2+1))",
        ));
    } else {
        steps.push(ChainStep {
            name: "eta_prefix_lower".into(),
            lhs: Some(prefix_half),
            rhs: None,
            status: StepStatus::NotApplicable,
            note: "step sum below 1/2: the quadratic bound does not apply".into(),
        });
    }

    let t1 = t1_select(horizon, phi);
    let l1_start = t1.unwrap_or(1) as usize;
    if l1_start <= half {
        let window = &etas[l1_start..=half];
        let l2: f64 = window.iter().map(|v| v * v).sum();
        let l1: f64 = window.iter().sum();
        steps.push(ChainStep::geq(
            "l1_l2",
            l2,
            l1 * l1 / window.len() as f64,
            format!(
                "sum eta_k^2 >= (sum eta_k)^2/n over k={l1_start}..={half}{}",
                if t1.is_some() { " (start t1)" } else { " (t1 unavailable, start 1)" }
            ),
        ));
    }

    match t1 {
        None => {
            let note = "t1 < 1 at this T: inconclusive at this T";
            steps.push(ChainStep::inconclusive("t1_prefix_upper", note));
            steps.push(ChainStep::inconclusive("t1_selection", note));
            steps.push(ChainStep::inconclusive("weighted_sum_lower", note));
        }
        Some(t1) => {
            let t1u = t1 as usize;
            let phi_t1 = phis[t1u];
            let prefix_t1: f64 = etas[..t1u].iter().sum();
            let t1_term = 2.0 * phi_t1 * ((t1 + 1) as f64).sqrt();
            steps.push(ChainStep::geq(
                "t1_prefix_upper",
                t1_term,
                prefix_t1,
                "2 phi(t1) sqrt(t1+1) >= sum_(k<t1) eta_k",
            ));
            steps.push(ChainStep::geq(
                "t1_selection",
                root_half / (4.0 * e2 * phi_half) - t1_term,
                root_half / (8.0 * e2 * phi_half),
                "sqrt(T/2+1)/(4e^2 phi) - 2 phi(t1) sqrt(t1+1) >= sqrt(T/2+1)/(8e^2 phi)",
            ));
            steps.push(ChainStep::geq(
                "weighted_sum_lower",
                weighted_half,
                n as f64 / (2f64.powi(13) * E.powi(8) * phis[n + 1].powi(4)),
                "sum_(k<=T/2) k eta_k^2 >= T/(2^13 e^8 phi(T+1)^4)",
            ));
        }
    }

    let fb = final_bound(horizon);
    steps.push(ChainStep::geq(
        "final_bound",
        phis[n + 1],
        fb.harmonic,
        format!("phi(T+1) >= H_(T/2)^(1/8)/(2^(5/2) e^2); log form = {}", fb.log),
    ));

    Ok(ChainReport {
        schedule: schedule.label().to_string(),
        envelope: phi.label().to_string(),
        horizon,
        t1,
        final_bound: fb,
        steps,
    })
}

/// Row of the analytic bound table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub t: u64,
    pub lemma41_step: f64,
    pub lemma41_sum: Option<f64>,
    pub eq3: f64,
    pub phi4_rhs: f64,
    pub final_harmonic: Option<f64>,
    pub final_log: Option<f64>,
    pub measured_err: Option<f64>,
}

/// Analytic bound values at horizon `t`, without simulation.
pub fn bound_row(schedule: &StepSchedule, t: u64, phi: &GuaranteeEnvelope) -> BoundRow {
    let etas = schedule.etas(t as usize);
    let step_sum: f64 = etas.iter().sum();
    let fb = (t >= 2).then(|| final_bound(t));
    BoundRow {
        t,
        lemma41_step: etas[t as usize - 1],
        lemma41_sum: sum_bound_from(step_sum),
        eq3: eq3_from(&etas, phi.at(t + 1)),
        phi4_rhs: phi4_from(&etas, 0.0),
        final_harmonic: fb.map(|f| f.harmonic),
        final_log: fb.map(|f| f.log),
        measured_err: None,
    }
}

pub const BOUND_CSV_HEADER: &str =
    "t,lemma41_step,lemma41_sum,eq3,phi4_rhs,final_harmonic,final_log,measured_err";

/// Header for tables with no simulation column.
pub const BOUND_CSV_HEADER_ANALYTIC: &str =
    "t,lemma41_step,lemma41_sum,eq3,phi4_rhs,final_harmonic,final_log";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl BoundRow {
    pub fn csv_line(&self) -> String {
        format!("{},{}", self.csv_line_analytic(), opt(self.measured_err))
    }

    /// Row matching [`BOUND_CSV_HEADER_ANALYTIC`].
    pub fn csv_line_analytic(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.t,
            self.lemma41_step,
            opt(self.lemma41_sum),
            self.eq3,
            self.phi4_rhs,
            opt(self.final_harmonic),
            opt(self.final_log)
        )
    }
}

/// `π²/1536`, the bound on `Σ a_j²` for envelopes with `φ ≥ 1`.
pub fn sum_squares_ceiling() -> f64 {
    PI * PI / 6.0 / 256.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rtol: f64) -> bool {
        (a - b).abs() <= rtol * a.abs().max(b.abs())
    }

    #[test]
    fn harmonic_values() {
        assert_eq!(harmonic(1).unwrap(), 1.0);
        assert_eq!(harmonic(2).unwrap(), 1.5);
        assert!(close(harmonic(4).unwrap(), 25.0 / 12.0, 1e-15));
        assert!(harmonic(0).is_err());
    }

    #[test]
    fn last_step_bound() {
        let table = StepSchedule::from_table(vec![0.3, 0.2, 0.1], "t").unwrap();
        assert_eq!(lemma41_last_step(&table, 3), 0.1);
        assert_eq!(lemma41_last_step(&StepSchedule::sqrt_decay(2.0, 1.0).unwrap(), 1), 2.0);
        assert_eq!(lemma41_last_step(&StepSchedule::constant(0.0).unwrap(), 17), 0.0);
    }

    #[test]
    fn sum_bound_applicability() {
        let v = lemma41_sum_bound(&StepSchedule::constant(0.5).unwrap(), 2).unwrap();
        assert!(close(v, 0.033_833_820_809_153_18, 1e-12));
        assert_eq!(lemma41_sum_bound(&StepSchedule::constant(0.1).unwrap(), 2), None);
        let v = lemma41_sum_bound(&StepSchedule::constant(1.0).unwrap(), 1).unwrap();
        assert!(0.0625 >= v);
    }

    #[test]
    fn eq3_small_cases() {
        assert_eq!(eq3_bound(&StepSchedule::constant(0.0).unwrap(), 9, &GuaranteeEnvelope::example31()), 0.0);
        let phi2 = GuaranteeEnvelope::constant(2.0).unwrap();
        let v = eq3_bound(&StepSchedule::constant(1.0).unwrap(), 1, &phi2);
        assert!(close(v, 1.0 / (256.0 * 2f64.sqrt()), 1e-14));
        assert!((v - 0.002_762_1).abs() < 1e-7);
    }

    #[test]
    fn phi4_small_cases() {
        let one = StepSchedule::constant(1.0).unwrap();
        assert_eq!(phi4_rhs(&one, 1), 0.0);
        assert!(close(phi4_rhs(&one, 3), (1.0 / 3.0 + 1.0) / 128.0, 1e-15));
        assert_eq!(phi4_rhs(&StepSchedule::constant(0.0).unwrap(), 40), 0.0);
        // (j+1) form at t=1: η_0² · 1/2 / 128
        assert!(close(phi4_rhs_succ(&one, 1), 0.5 / 128.0, 1e-15));
    }

    #[test]
    fn averaged_small_cases() {
        let one = StepSchedule::constant(1.0).unwrap();
        // only t=2, j=1 contributes 1/2; divided by T = 2
        assert_eq!(averaged_phi4(&one, 2), 0.25);
        assert_eq!(averaged_phi4_double_sum(&one, 2), 0.25);
        assert_eq!(averaged_phi4_full_harmonic(&one, 2), 0.75);
        assert_eq!(averaged_phi4(&StepSchedule::constant(0.0).unwrap(), 10), 0.0);
    }

    #[test]
    fn t1_selection_values() {
        let one = GuaranteeEnvelope::constant(1.0).unwrap();
        assert_eq!(t1_select(55_924, &one), Some(1));
        assert_eq!(t1_select(1_000_000, &one), Some(34));
        assert_eq!(t1_select(55_908, &one), Some(1));
        assert_eq!(t1_select(55_906, &one), None);
        assert_eq!(t1_select(1 << 14, &GuaranteeEnvelope::example31()), None);
    }

    #[test]
    fn final_bound_values() {
        let fb = final_bound(2);
        assert!(close(fb.harmonic, 1.0 / (2f64.powf(2.5) * E * E), 1e-15));
        assert!((fb.harmonic - 0.023_924_124_127_602_73).abs() < 1e-15);
        assert_eq!(fb.log, 0.0);
        let fb = final_bound(4);
        assert!((fb.harmonic - 0.025_167_927_510_724_22).abs() < 1e-15);
        assert!((fb.log - 0.062_120_323_908_754_88).abs() < 1e-15);
        assert!(fb.log > fb.harmonic);
    }

    #[test]
    fn final_bound_has_no_crossover() {
        assert_eq!(final_bound_crossover(4, 1 << 16), None);
        assert_eq!(final_bound_crossover(2, 2), Some(2));
    }

    #[test]
    fn step_sum_bound() {
        let zero = StepSchedule::constant(0.0).unwrap();
        let r = eta_sum_upper(&zero, 3, 9, &GuaranteeEnvelope::example31()).unwrap();
        assert!(r.pass && r.lhs == 0.0);
        let s = StepSchedule::sqrt_decay(2.0, 1.0).unwrap();
        assert!(eta_sum_upper(&s, 4, 16, &GuaranteeEnvelope::example31()).unwrap().pass);
        let ten = StepSchedule::constant(10.0).unwrap();
        let r = eta_sum_upper(&ten, 1, 2, &GuaranteeEnvelope::constant(1.0).unwrap()).unwrap();
        assert!(!r.pass);
        assert!(eta_sum_upper(&s, 3, 3, &GuaranteeEnvelope::example31()).is_err());
    }

    fn record(label: &str, errors: Vec<f64>) -> RunRecord {
        RunRecord {
            schedule_label: label.into(),
            horizon: errors.len() as u64,
            errors,
            snapshots: Default::default(),
            max_norm_seen: 0.0,
            projection_activations: 0,
        }
    }

    #[test]
    fn empirical_envelope_cases() {
        let phi = empirical_envelope(&[record("s", vec![0.0; 8])]).unwrap();
        assert!((1..20).all(|t| phi.at(t) == 1.0));

        let phi = empirical_envelope(&[record("s", vec![1e-9, 1e-9, 1e-9, 3.0, 1e-9])]).unwrap();
        assert_eq!(phi.at(3), 1.0);
        assert_eq!(phi.at(4), 6.0);
        assert_eq!(phi.at(5), 6.0);
        assert_eq!(phi.at(100), 6.0);

        assert!(empirical_envelope(&[]).is_err());
        assert!(empirical_envelope(&[record("a", vec![0.1]), record("b", vec![0.1])]).is_err());
    }

    #[test]
    fn envelope_validation() {
        let s = StepSchedule::sqrt_decay(2.0, 1.0).unwrap();
        assert!(validate_envelope(&s, &GuaranteeEnvelope::example31(), &[], 1000).pass());

        let two = StepSchedule::constant(2.0).unwrap();
        let r = validate_envelope(&two, &GuaranteeEnvelope::constant(1.0).unwrap(), &[], 10);
        assert!(!r.dominates_last_step);
        assert_eq!(r.violations[0].t, 0);

        let falling = GuaranteeEnvelope::new(|t| if t < 5 { 3.0 } else { 2.0 }, "falling");
        let r = validate_envelope(&StepSchedule::constant(0.0).unwrap(), &falling, &[], 10);
        assert!(!r.monotone);

        let r = validate_envelope(
            &StepSchedule::constant(0.0).unwrap(),
            &GuaranteeEnvelope::constant(1.0).unwrap(),
            &[record("c", vec![0.0, 0.0, 0.0, 1.0])],
            4,
        );
        assert!(!r.dominates_records);
    }

    #[test]
    fn envelope_parsing() {
        assert_eq!(parse_envelope("example31").unwrap().at(1), 8.0);
        assert_eq!(parse_envelope("one").unwrap().at(50), 1.0);
        assert_eq!(parse_envelope("const:c=16").unwrap().at(3), 16.0);
        assert!(parse_envelope("const:c=0.5").is_err());
        let log = parse_envelope("log:c1=4,c2=1,c3=8").unwrap();
        assert!(close(log.at(10), 8.0 + 4.0 * 10f64.ln(), 1e-15));
        assert!(parse_envelope("empirical").is_err());
    }

    #[test]
    fn chain_check_constant_zero() {
        let zero = StepSchedule::constant(0.0).unwrap();
        let one = GuaranteeEnvelope::constant(1.0).unwrap();
        let r = chain_check(&zero, &one, 64).unwrap();
        assert!(!r.any_failed(), "{r:#?}");
        let s = r.step("phi4_rearranged").unwrap();
        assert_eq!(s.rhs, Some(0.0));
        assert_eq!(r.step("t1_selection").unwrap().status, StepStatus::Inconclusive);
        assert_eq!(r.step("eta_prefix_lower").unwrap().status, StepStatus::NotApplicable);
    }

    #[test]
    fn chain_check_rejects_odd_or_small() {
        let s = StepSchedule::constant(1.0).unwrap();
        let phi = GuaranteeEnvelope::example31();
        assert!(chain_check(&s, &phi, 3).unwrap_err().to_string().contains("even T"));
        assert!(chain_check(&s, &phi, 2).is_err());
    }

    #[test]
    fn l1_l2_equality_case() {
        let s = StepSchedule::from_table(vec![1.0; 9], "ones").unwrap();
        let r = chain_check(&s, &GuaranteeEnvelope::constant(1.0).unwrap(), 8).unwrap();
        let step = r.step("l1_l2").unwrap();
        assert_eq!(step.lhs, Some(4.0));
        assert_eq!(step.rhs, Some(4.0));
        assert_eq!(step.status, StepStatus::Pass);
    }

    #[test]
    fn bound_row_csv() {
        let s = StepSchedule::constant(0.0).unwrap();
        let row = bound_row(&s, 1, &GuaranteeEnvelope::constant(1.0).unwrap());
        assert_eq!(row.csv_line(), "1,0,,0,0,,,");
    }
}
