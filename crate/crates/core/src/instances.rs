//! Adversarial instance families for a given stepsize schedule.
//!
//! * [`VShapeInstance`]: a one-dimensional piecewise-linear function whose
//!   iterate sits exactly on the kink one step before the target time, so the
//!   last step overshoots by `η_{t-1}`.
//! * [`QuadraticInstance`]: `x²/(4S)` with `S = Σ_{j<t} η_j`; contraction is
//!   too slow when the step sum is small.
//! * [`MaxLinearInstance`]: `max_i v_i·x` over the unit ball of `R^{T+1}`,
//!   where every step uncovers a fresh coordinate.

use serde::{Deserialize, Serialize};

use crate::bounds::GuaranteeEnvelope;
use crate::engine::{project_ball_in_place, ConvexInstance};
use crate::error::{Error, Result};
use crate::schedules::StepSchedule;

/// Default shrink factor applied to the admissible `ε` range of the V-shape.
pub const DEFAULT_VSHAPE_SHRINK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    VShape,
    Quadratic,
    MaxLinear,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::VShape, Family::Quadratic, Family::MaxLinear];

    pub fn name(self) -> &'static str {
        match self {
            Family::VShape => "vshape",
            Family::Quadratic => "quadratic",
            Family::MaxLinear => "maxlinear",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vshape" | "v-shape" | "v_shape" => Ok(Family::VShape),
            "quadratic" => Ok(Family::Quadratic),
            "maxlinear" | "max-linear" | "max_linear" => Ok(Family::MaxLinear),
            other => Err(Error::InvalidParameter(format!(
                "unknown family `{other}` (expected vshape, quadratic or maxlinear)"
            ))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn clamp_unit(x: &mut [f64]) -> bool {
    let c = x[0].clamp(-1.0, 1.0);
    let moved = c != x[0];
    x[0] = c;
    moved
}

// ---------------------------------------------------------------------------
// V-shape

/// `f(x) = −x` for `x < 0`, `c_ε x` on `[0, ε]`, `x − ε + c_ε ε` above `ε`,
/// over `[−1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VShapeInstance {
    pub target_t: u64,
    pub epsilon: f64,
    pub c_eps: f64,
    /// Starting point used by the run. Equal to `ε` up to a few ulps; see
    /// [`build_vshape`].
    pub start: f64,
    /// `η_0 … η_{target_t-1}`.
    etas: Vec<f64>,
    schedule_label: String,
}

/// Builds the V-shape targeted at `target_t` with
/// `ε = shrink · min{1, η_{t-1}, Σ_{j<t-1} η_j}` and `c_ε = ε / Σ_{j<t-1} η_j`.
///
/// In exact arithmetic the run reaches `x_{t-1} = 0`. Floating-point
/// cancellation can leave a residual of either sign; a positive residual would
/// keep the iterate on the shallow slope, so the start is lowered by the
/// residual until the simulated pre-kink iterate is `≤ 0`. The function
/// itself is unchanged.
pub fn build_vshape(schedule: &StepSchedule, target_t: u64, shrink: f64) -> Result<VShapeInstance> {
    if target_t < 2 {
        return Err(Error::Construction(format!(
            "v-shape needs target t >= 2, got {target_t}"
        )));
    }
    if !(shrink > 0.0 && shrink < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "v-shape shrink factor must lie in (0, 1), got {shrink}"
        )));
    }
    let etas = schedule.etas(target_t as usize);
    let last = etas[target_t as usize - 1];
    let sum: f64 = etas[..target_t as usize - 1].iter().sum();
    if last <= 0.0 {
        return Err(Error::Construction(format!(
            "v-shape undefined: η_{} = 0",
            target_t - 1
        )));
    }
    if sum <= 0.0 {
        return Err(Error::Construction(format!(
            "v-shape undefined: Σ_{{j<{}}} η_j = 0",
            target_t - 1
        )));
    }
    let epsilon = shrink * 1f64.min(last).min(sum);
    let c_eps = epsilon / sum;
    if !(c_eps > 0.0 && c_eps < 1.0) {
        return Err(Error::Construction(format!("v-shape slope c_ε = {c_eps} outside (0, 1)")));
    }
    let mut inst = VShapeInstance {
        target_t,
        epsilon,
        c_eps,
        start: epsilon,
        etas,
        schedule_label: schedule.label().to_string(),
    };
    for _ in 0..64 {
        let residual = inst.simulate_pre_kink();
        if residual <= 0.0 {
            return Ok(inst);
        }
        let lowered = inst.start - residual;
        inst.start = if lowered < inst.start {
            lowered
        } else {
            f64::from_bits(inst.start.to_bits() - 1)
        };
    }
    Err(Error::Construction(
        "v-shape start could not be aligned with the kink".into(),
    ))
}

impl VShapeInstance {
    /// Replays the engine's arithmetic up to `x_{t-1}`.
    fn simulate_pre_kink(&self) -> f64 {
        let mut x = [self.start];
        let mut g = [0.0];
        for eta in &self.etas[..self.target_t as usize - 1] {
            self.subgradient_into(&x, &mut g);
            x[0] -= eta * g[0];
            clamp_unit(&mut x);
        }
        x[0]
    }

    pub fn slope(&self, x: f64) -> f64 {
        if x <= 0.0 {
            -1.0
        } else if x <= self.epsilon {
            self.c_eps
        } else {
            1.0
        }
    }

    /// `x_t = min{η_{t-1}, 1}`: the last step leaves the kink and is clamped
    /// to the domain when it overshoots.
    fn final_point(&self) -> f64 {
        self.etas[self.target_t as usize - 1].min(1.0)
    }

    /// `min{η_{t-1}, 1} − ε + c_ε ε`.
    pub fn certified_bound(&self) -> f64 {
        self.final_point() - self.epsilon + self.c_eps * self.epsilon
    }

    /// Exact-arithmetic trajectory: `x_i = c_ε Σ_{j=i}^{t-2} η_j` for
    /// `i ≤ t-1`, then `x_t = min{η_{t-1}, 1}`.
    pub fn closed_form(&self, i: u64) -> Result<f64> {
        let t = self.target_t;
        if i > t {
            return Err(Error::InvalidParameter(format!(
                "v-shape trajectory is defined for 0 <= i <= {t}, got {i}"
            )));
        }
        if i == t {
            return Ok(self.final_point());
        }
        let tail: f64 = self.etas[i as usize..t as usize - 1].iter().rev().sum();
        Ok(self.c_eps * tail)
    }
}

impl ConvexInstance for VShapeInstance {
    fn dim(&self) -> usize {
        1
    }
    fn initial_point(&self) -> Vec<f64> {
        vec![self.start]
    }
    fn value(&self, x: &[f64]) -> f64 {
        let x = x[0];
        if x < 0.0 {
            -x
        } else if x <= self.epsilon {
            self.c_eps * x
        } else {
            x - self.epsilon + self.c_eps * self.epsilon
        }
    }
    fn subgradient_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.slope(x[0]);
    }
    fn project(&self, x: &mut [f64]) -> bool {
        clamp_unit(x)
    }
    fn reference_level(&self) -> f64 {
        0.0
    }
    fn lipschitz(&self) -> f64 {
        1.0
    }
    fn diameter(&self) -> f64 {
        2.0
    }
}

// ---------------------------------------------------------------------------
// Quadratic

/// `f(x) = x²/(4S)` over `[−1, 1]`, started at `x_0 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticInstance {
    pub target_t: u64,
    /// `S = Σ_{j<target_t} η_j`.
    pub step_sum: f64,
    etas: Vec<f64>,
    schedule_label: String,
}

pub fn build_quadratic(schedule: &StepSchedule, target_t: u64) -> Result<QuadraticInstance> {
    if target_t < 1 {
        return Err(Error::Construction("quadratic needs target t >= 1".into()));
    }
    let etas = schedule.etas(target_t as usize);
    let step_sum: f64 = etas.iter().sum();
    if !(step_sum >= 0.5) {
        return Err(Error::Construction(format!(
            "quadratic instance requires S >= 1/2 for 1-Lipschitzness, got S < 1/2 (S = {step_sum})"
        )));
    }
    Ok(QuadraticInstance {
        target_t,
        step_sum,
        etas,
        schedule_label: schedule.label().to_string(),
    })
}

impl QuadraticInstance {
    /// `x_i = Π_{j<i} (1 − η_j/(2S))`.
    pub fn closed_form(&self, i: u64) -> Result<f64> {
        if i > self.target_t {
            return Err(Error::InvalidParameter(format!(
                "quadratic trajectory is defined for 0 <= i <= {}, got {i}",
                self.target_t
            )));
        }
        let two_s = 2.0 * self.step_sum;
        Ok(self.etas[..i as usize]
            .iter()
            .map(|eta| 1.0 - eta / two_s)
            .product())
    }

    /// `e^{-2} / (4S)`.
    pub fn certified_bound(&self) -> f64 {
        (-2f64).exp() / (4.0 * self.step_sum)
    }
}

impl ConvexInstance for QuadraticInstance {
    fn dim(&self) -> usize {
        1
    }
    fn initial_point(&self) -> Vec<f64> {
        vec![1.0]
    }
    fn value(&self, x: &[f64]) -> f64 {
        x[0] * x[0] / (4.0 * self.step_sum)
    }
    fn subgradient_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] / (2.0 * self.step_sum);
    }
    fn project(&self, x: &mut [f64]) -> bool {
        clamp_unit(x)
    }
    fn reference_level(&self) -> f64 {
        0.0
    }
    fn lipschitz(&self) -> f64 {
        1.0 / (2.0 * self.step_sum)
    }
    fn diameter(&self) -> f64 {
        2.0
    }
}

// ---------------------------------------------------------------------------
// a/b sequences and their conditions

/// `a_j = min{1, η_j√(t+1)} / (16 φ(t+1) (t+1−j))`,
/// `b_j = min{1/2, 1/(2 η_j √(t+1))}` for `j = 0..=t`.
pub fn build_ab(schedule: &StepSchedule, t: u64, phi: &GuaranteeEnvelope) -> (Vec<f64>, Vec<f64>) {
    let etas = schedule.etas(t as usize + 1);
    build_ab_from(&etas, phi.at(t + 1))
}

pub(crate) fn build_ab_from(etas: &[f64], phi_next: f64) -> (Vec<f64>, Vec<f64>) {
    let t = etas.len() - 1;
    let root = ((t + 1) as f64).sqrt();
    let a = etas
        .iter()
        .enumerate()
        .map(|(j, eta)| (eta * root).min(1.0) / (16.0 * phi_next * (t + 1 - j) as f64))
        .collect();
    let b = etas.iter().map(|eta| b_cap(*eta, root)).collect();
    (a, b)
}

/// `min{1/2, 1/(2 η √(T+1))}`, equal to `1/2` when `η = 0`.
fn b_cap(eta: f64, root: f64) -> f64 {
    if eta > 0.0 {
        0.5f64.min(1.0 / (2.0 * eta * root))
    } else {
        0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionOutcome {
    pub pass: bool,
    /// Smallest `rhs − lhs` over the quantified indices.
    pub slack: f64,
    /// Index attaining the smallest slack, when the condition is per-index.
    pub worst_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub horizon: u64,
    pub nonnegative: bool,
    /// `Σ a_j² ≤ 1/2`.
    pub sum_squares: ConditionOutcome,
    /// `b_j ≤ min{1/2, 1/(2η_j√(T+1))}`.
    pub b_cap: ConditionOutcome,
    /// `a_j Σ_{k>j} η_k ≤ η_j b_j / 2`.
    pub tail_balance: ConditionOutcome,
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.nonnegative && self.sum_squares.pass && self.b_cap.pass && self.tail_balance.pass
    }

    pub fn failed_conditions(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.nonnegative {
            out.push("nonnegativity");
        }
        if !self.sum_squares.pass {
            out.push("(i) sum of squares");
        }
        if !self.b_cap.pass {
            out.push("(ii) b cap");
        }
        if !self.tail_balance.pass {
            out.push("(iii) tail balance");
        }
        out
    }
}

pub fn check_ab_conditions(
    a: &[f64],
    b: &[f64],
    schedule: &StepSchedule,
    horizon: u64,
) -> Result<ConditionReport> {
    let n = horizon as usize + 1;
    if a.len() != n || b.len() != n {
        return Err(Error::InvalidParameter(format!(
            "a and b must have length T+1 = {n}, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(check_ab_from(a, b, &schedule.etas(n)))
}

fn worst<I: Iterator<Item = f64>>(slacks: I) -> ConditionOutcome {
    let (idx, slack) = slacks
        .enumerate()
        .fold((None, f64::INFINITY), |(bi, bs), (i, s)| {
            if s < bs || s.is_nan() && !bs.is_nan() {
                (Some(i), s)
            } else {
                (bi, bs)
            }
        });
    ConditionOutcome {
        pass: slack >= 0.0,
        slack,
        worst_index: idx,
    }
}

pub(crate) fn check_ab_from(a: &[f64], b: &[f64], etas: &[f64]) -> ConditionReport {
    let n = etas.len();
    let root = (n as f64).sqrt();
    let nonnegative = a.iter().chain(b).all(|v| v.is_finite() && *v >= 0.0);

    let sum_sq: f64 = a.iter().map(|v| v * v).sum();
    let sum_squares = ConditionOutcome {
        pass: sum_sq <= 0.5,
        slack: 0.5 - sum_sq,
        worst_index: None,
    };

    let b_cap = worst((0..n).map(|j| b_cap(etas[j], root) - b[j]));

    // tails[j] = Σ_{k=j+1}^{T} η_k, accumulated from the top
    let mut tails = vec![0.0; n];
    for j in (0..n.saturating_sub(1)).rev() {
        tails[j] = tails[j + 1] + etas[j + 1];
    }
    let tail_balance = worst((0..n).map(|j| 0.5 * etas[j] * b[j] - a[j] * tails[j]));

    ConditionReport {
        horizon: n as u64 - 1,
        nonnegative,
        sum_squares,
        b_cap,
        tail_balance,
    }
}

// ---------------------------------------------------------------------------
// Max of linear functions

/// `f(x) = max_i v_i·x` over the unit ball in `R^{T+1}`, with
/// `v_i = Σ_{j=1}^{i} a_{j-1} e_j − b_i e_{i+1}` (coordinates 1-based).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxLinearInstance {
    pub horizon: u64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub conditions: ConditionReport,
    pub envelope_label: String,
    /// `η_0 … η_T`.
    etas: Vec<f64>,
    schedule_label: String,
}

pub fn build_maxlinear(
    schedule: &StepSchedule,
    horizon: u64,
    phi: &GuaranteeEnvelope,
) -> Result<MaxLinearInstance> {
    if horizon < 1 {
        return Err(Error::Construction("max-linear needs T >= 1".into()));
    }
    let etas = schedule.etas(horizon as usize + 1);
    let phi_next = phi.at(horizon + 1);
    if !(phi_next >= 1.0 && phi_next.is_finite()) {
        return Err(Error::Construction(format!(
            "envelope value φ({}) = {phi_next} must be finite and >= 1",
            horizon + 1
        )));
    }
    let (a, b) = build_ab_from(&etas, phi_next);
    let conditions = check_ab_from(&a, &b, &etas);
    if !conditions.all_pass() {
        return Err(Error::Conditions(Box::new(conditions)));
    }
    Ok(MaxLinearInstance {
        horizon,
        a,
        b,
        conditions,
        envelope_label: phi.label().to_string(),
        etas,
        schedule_label: schedule.label().to_string(),
    })
}

impl MaxLinearInstance {
    /// Minimal index attaining `max_i v_i·x`, and the maximum.
    ///
    /// `v_i·x = P_i − b_i x_i` with running prefix `P_i = Σ_{m<i} a_m x_m`
    /// (0-based coordinates), so all `T+1` products cost `O(T)`.
    pub fn argmax(&self, x: &[f64]) -> (usize, f64) {
        let mut prefix = 0.0;
        let mut best = (0, f64::NEG_INFINITY);
        for (i, ((a, b), xi)) in self.a.iter().zip(&self.b).zip(x).enumerate() {
            let value = prefix - b * xi;
            if value > best.1 {
                best = (i, value);
            }
            prefix += a * xi;
        }
        best
    }

    /// `v_i` as a dense vector.
    pub fn direction(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.write_direction(i, &mut v);
        v
    }

    fn write_direction(&self, i: usize, out: &mut [f64]) {
        out[..i].copy_from_slice(&self.a[..i]);
        out[i] = -self.b[i];
        out[i + 1..].iter_mut().for_each(|v| *v = 0.0);
    }

    /// `½ Σ_{j<T} a_j b_j η_j`.
    pub fn certified_bound(&self) -> f64 {
        0.5 * (0..self.horizon as usize)
            .map(|j| self.a[j] * self.b[j] * self.etas[j])
            .sum::<f64>()
    }

    /// Coordinate `j ≤ t` (1-based) is `b_{j-1}η_{j-1} − a_{j-1} Σ_{k=j}^{t-1} η_k`;
    /// the rest are zero.
    pub fn closed_form(&self, t: u64) -> Result<Vec<f64>> {
        if t > self.horizon {
            return Err(Error::InvalidParameter(format!(
                "max-linear trajectory is defined for 0 <= t <= {}, got {t}",
                self.horizon
            )));
        }
        let t = t as usize;
        let mut x = vec![0.0; self.dim()];
        let mut tail = 0.0;
        // 0-based coordinate m holds 1-based j = m + 1; tail = Σ_{k=m+1}^{t-1} η_k
        for m in (0..t).rev() {
            x[m] = self.b[m] * self.etas[m] - self.a[m] * tail;
            tail += self.etas[m];
        }
        Ok(x)
    }
}

impl ConvexInstance for MaxLinearInstance {
    fn dim(&self) -> usize {
        self.horizon as usize + 1
    }
    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.argmax(x).1
    }
    fn subgradient_into(&self, x: &[f64], out: &mut [f64]) {
        let (i, _) = self.argmax(x);
        self.write_direction(i, out);
    }
    fn project(&self, x: &mut [f64]) -> bool {
        project_ball_in_place(x, 1.0)
    }
    fn reference_level(&self) -> f64 {
        0.0
    }
    fn lipschitz(&self) -> f64 {
        1.0
    }
    fn diameter(&self) -> f64 {
        2.0
    }
}

// ---------------------------------------------------------------------------

/// One member of any of the three families.
#[derive(Debug, Clone, PartialEq)]
pub enum Instance {
    VShape(VShapeInstance),
    Quadratic(QuadraticInstance),
    MaxLinear(MaxLinearInstance),
}

/// Reproducibility dump of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDump {
    pub family: Family,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub schedule_label: String,
    pub a: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub c_eps: Option<f64>,
    #[serde(rename = "S")]
    pub step_sum: Option<f64>,
}

impl Instance {
    pub fn build(
        family: Family,
        schedule: &StepSchedule,
        horizon: u64,
        phi: &GuaranteeEnvelope,
    ) -> Result<Self> {
        Ok(match family {
            Family::VShape => {
                Instance::VShape(build_vshape(schedule, horizon, DEFAULT_VSHAPE_SHRINK)?)
            }
            Family::Quadratic => Instance::Quadratic(build_quadratic(schedule, horizon)?),
            Family::MaxLinear => Instance::MaxLinear(build_maxlinear(schedule, horizon, phi)?),
        })
    }

    pub fn family(&self) -> Family {
        match self {
            Instance::VShape(_) => Family::VShape,
            Instance::Quadratic(_) => Family::Quadratic,
            Instance::MaxLinear(_) => Family::MaxLinear,
        }
    }

    /// The time the instance is built for.
    pub fn horizon(&self) -> u64 {
        match self {
            Instance::VShape(i) => i.target_t,
            Instance::Quadratic(i) => i.target_t,
            Instance::MaxLinear(i) => i.horizon,
        }
    }

    pub fn as_convex(&self) -> &dyn ConvexInstance {
        match self {
            Instance::VShape(i) => i,
            Instance::Quadratic(i) => i,
            Instance::MaxLinear(i) => i,
        }
    }

    /// Lower bound on the error at the horizon that this instance certifies.
    pub fn certified_bound(&self) -> f64 {
        match self {
            Instance::VShape(i) => i.certified_bound(),
            Instance::Quadratic(i) => i.certified_bound(),
            Instance::MaxLinear(i) => i.certified_bound(),
        }
    }

    /// Exact-arithmetic iterate `x_t`, `1 ≤ t ≤ horizon`.
    pub fn closed_form_iterate(&self, t: u64) -> Result<Vec<f64>> {
        if t < 1 || t > self.horizon() {
            return Err(Error::InvalidParameter(format!(
                "closed form requested at t={t}, valid range is 1..={}",
                self.horizon()
            )));
        }
        match self {
            Instance::VShape(i) => i.closed_form(t).map(|v| vec![v]),
            Instance::Quadratic(i) => i.closed_form(t).map(|v| vec![v]),
            Instance::MaxLinear(i) => i.closed_form(t),
        }
    }

    pub fn dump(&self) -> InstanceDump {
        let mut dump = InstanceDump {
            family: self.family(),
            horizon: self.horizon(),
            schedule_label: String::new(),
            a: None,
            b: None,
            epsilon: None,
            c_eps: None,
            step_sum: None,
        };
        match self {
            Instance::VShape(i) => {
                dump.schedule_label = i.schedule_label.clone();
                dump.epsilon = Some(i.epsilon);
                dump.c_eps = Some(i.c_eps);
            }
            Instance::Quadratic(i) => {
                dump.schedule_label = i.schedule_label.clone();
                dump.step_sum = Some(i.step_sum);
            }
            Instance::MaxLinear(i) => {
                dump.schedule_label = i.schedule_label.clone();
                dump.a = Some(i.a.clone());
                dump.b = Some(i.b.clone());
            }
        }
        dump
    }
}
