//! Experiment orchestration: trajectory verification, schedule audits and the
//! stopping-time density measurement.
//!
//! Horizons and families are independent work items. They run on a rayon
//! pool of the requested width and are merged in input order, so outputs do
//! not depend on the width.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    bound_row, empirical_envelope, parse_envelope, validate_envelope, BoundRow, EnvelopeReport,
    GuaranteeEnvelope,
};
use crate::engine::{run, run_observed, RunRecord, SnapshotPolicy};
use crate::error::{Error, Result};
use crate::instances::{Family, Instance};
use crate::schedules::{parse_descriptor, StepSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Absolute, per coordinate, for the quadratic and max-linear families.
    pub trajectory_abs: f64,
    /// Absolute, per coordinate, for the v-shape (cancellation at the kink).
    pub vshape_abs: f64,
    /// Relative, for scalar identities and the quadratic closed-form error.
    pub scalar_rtol: f64,
    /// Absolute slack allowed when a measured error is compared with a
    /// certified lower bound.
    pub dominance_abs: f64,
    /// Relative to `η_{t-1}`, for the v-shape certified bound.
    pub vshape_rtol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            trajectory_abs: 1e-9,
            vshape_abs: 1e-6,
            scalar_rtol: 1e-12,
            dominance_abs: 1e-12,
            vshape_rtol: 1e-6,
        }
    }
}

/// Serialized experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Schedule descriptor, e.g. `sqrt_decay:D=2,G=1` or `table:path.csv`.
    pub schedule: String,
    pub horizons: Vec<u64>,
    pub families: Vec<Family>,
    /// Envelope descriptor, or `empirical`.
    pub envelope: String,
    pub tolerances: Tolerances,
    /// Worker threads; 0 picks the rayon default.
    pub jobs: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            schedule: "sqrt_decay:D=2,G=1".into(),
            horizons: vec![8, 64, 512],
            families: Family::ALL.to_vec(),
            envelope: "example31".into(),
            tolerances: Tolerances::default(),
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum EnvelopeChoice {
    Named(GuaranteeEnvelope),
    Empirical,
}

/// An [`ExperimentSpec`] with its schedule and envelope resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub schedule: StepSchedule,
    pub horizons: Vec<u64>,
    pub families: Vec<Family>,
    pub envelope: EnvelopeChoice,
    pub tolerances: Tolerances,
    pub jobs: usize,
}

impl ExperimentSpec {
    pub fn resolve(&self) -> Result<Experiment> {
        let schedule = parse_descriptor(&self.schedule)?;
        let envelope = match self.envelope.trim() {
            "empirical" => EnvelopeChoice::Empirical,
            other => EnvelopeChoice::Named(parse_envelope(other)?),
        };
        Experiment::new(
            schedule,
            self.horizons.clone(),
            self.families.clone(),
            envelope,
            self.tolerances,
            self.jobs,
        )
    }
}

impl Experiment {
    pub fn new(
        schedule: StepSchedule,
        horizons: Vec<u64>,
        families: Vec<Family>,
        envelope: EnvelopeChoice,
        tolerances: Tolerances,
        jobs: usize,
    ) -> Result<Self> {
        if horizons.is_empty() {
            return Err(Error::InvalidParameter("horizons: at least one horizon is required".into()));
        }
        if horizons.iter().any(|t| *t < 1) {
            return Err(Error::InvalidParameter("horizons: every horizon must be >= 1".into()));
        }
        if horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "horizons: must be strictly ascending".into(),
            ));
        }
        if families.is_empty() {
            return Err(Error::InvalidParameter("families: at least one family is required".into()));
        }
        if let Some(support) = schedule.support() {
            let needed = horizons.last().unwrap() + 1;
            if support < needed {
                return Err(Error::InvalidParameter(format!(
                    "schedule: table has {support} entries but horizon {} needs {needed}",
                    needed - 1
                )));
            }
        }
        Ok(Self {
            schedule,
            horizons,
            families,
            envelope,
            tolerances,
            jobs,
        })
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("jobs: {e}")))
    }

    fn max_horizon(&self) -> u64 {
        *self.horizons.last().expect("validated non-empty")
    }

    /// Errors from the one-dimensional witnesses at every horizon. They need
    /// no envelope, so they seed the empirical one.
    fn first_pass_records(&self) -> Result<Vec<RunRecord>> {
        let placeholder = GuaranteeEnvelope::constant(1.0)?;
        let work: Vec<(Family, u64)> = self
            .horizons
            .iter()
            .flat_map(|t| [(Family::VShape, *t), (Family::Quadratic, *t)])
            .collect();
        let records: Vec<Option<RunRecord>> = self.pool()?.install(|| {
            work.par_iter()
                .map(|(family, t)| {
                    let inst = Instance::build(*family, &self.schedule, *t, &placeholder).ok()?;
                    run(inst.as_convex(), &self.schedule, *t, &SnapshotPolicy::None).ok()
                })
                .collect()
        });
        Ok(records.into_iter().flatten().collect())
    }

    /// The named envelope, or the empirical one built from a first pass.
    pub fn resolve_envelope(&self) -> Result<GuaranteeEnvelope> {
        match &self.envelope {
            EnvelopeChoice::Named(phi) => Ok(phi.clone()),
            EnvelopeChoice::Empirical => {
                let records = self.first_pass_records()?;
                if records.is_empty() {
                    Ok(GuaranteeEnvelope::constant(1.0)?.with_label("empirical:no-data"))
                } else {
                    empirical_envelope(&records)
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// trajectory verification

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCheck {
    pub family: Family,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub max_coord_deviation: f64,
    pub max_error_deviation: f64,
    pub tolerance: f64,
    pub final_error: f64,
    pub certified_bound: f64,
    pub max_norm_seen: f64,
    pub projection_activations: u64,
    /// Steps whose minimal maximizing index differs from `t` (max-linear only).
    pub argmax_mismatches: Option<u64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schedule: String,
    pub envelope: String,
    pub checks: Vec<TrajectoryCheck>,
}

impl VerificationReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn max_deviation(&self, family: Family) -> Option<f64> {
        self.checks
            .iter()
            .filter(|c| c.family == family)
            .map(|c| c.max_coord_deviation)
            .reduce(f64::max)
    }
}

/// Runs one instance and compares every iterate with its closed form.
pub fn verify_instance(
    instance: &Instance,
    schedule: &StepSchedule,
    tolerances: &Tolerances,
) -> Result<TrajectoryCheck> {
    let horizon = instance.horizon();
    let convex = instance.as_convex();
    let mut max_coord = 0.0f64;
    let mut max_err = 0.0f64;
    let mut mismatches = 0u64;
    let mut fault = None;
    let record = run_observed(convex, schedule, horizon, |t, x| {
        if t == 0 || fault.is_some() {
            return;
        }
        match instance.closed_form_iterate(t) {
            Ok(exact) => {
                for (a, b) in x.iter().zip(&exact) {
                    max_coord = max_coord.max((a - b).abs());
                }
                max_err = max_err.max((convex.value(x) - convex.value(&exact)).abs());
            }
            Err(e) => fault = Some(e),
        }
        if let Instance::MaxLinear(m) = instance {
            if m.argmax(x).0 != t as usize {
                mismatches += 1;
            }
        }
    })?;
    if let Some(e) = fault {
        return Err(e);
    }
    let tolerance = match instance.family() {
        Family::VShape => tolerances.vshape_abs,
        _ => tolerances.trajectory_abs,
    };
    Ok(TrajectoryCheck {
        family: instance.family(),
        horizon,
        max_coord_deviation: max_coord,
        max_error_deviation: max_err,
        tolerance,
        final_error: record.final_error(),
        certified_bound: instance.certified_bound(),
        max_norm_seen: record.max_norm_seen,
        projection_activations: record.projection_activations,
        argmax_mismatches: matches!(instance, Instance::MaxLinear(_)).then_some(mismatches),
        pass: max_coord <= tolerance,
    })
}

/// Builds every (family, horizon) instance, runs it and compares against the
/// closed-form trajectory. Construction failures are errors; deviations are
/// recorded.
pub fn verify_trajectories(exp: &Experiment) -> Result<VerificationReport> {
    let phi = exp.resolve_envelope()?;
    let work: Vec<(Family, u64)> = exp
        .families
        .iter()
        .flat_map(|f| exp.horizons.iter().map(move |t| (*f, *t)))
        .collect();
    let checks: Vec<Result<TrajectoryCheck>> = exp.pool()?.install(|| {
        work.par_iter()
            .map(|(family, t)| {
                let inst = Instance::build(*family, &exp.schedule, *t, &phi).map_err(|e| {
                    let detail = match e {
                        Error::Construction(msg) => msg,
                        other => other.to_string(),
                    };
                    Error::Construction(format!("{family} at T={t}: {detail}"))
                })?;
                verify_instance(&inst, &exp.schedule, &exp.tolerances)
            })
            .collect()
    });
    Ok(VerificationReport {
        schedule: exp.schedule.label().to_string(),
        envelope: phi.label().to_string(),
        checks: checks.into_iter().collect::<Result<_>>()?,
    })
}

// ---------------------------------------------------------------------------
// audit

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessOutcome {
    pub family: Family,
    pub t: u64,
    /// Why the instance could not be built, if it could not.
    pub skipped: Option<String>,
    pub measured_err: Option<f64>,
    pub certified_bound: Option<f64>,
    pub dominates: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schedule: String,
    pub envelope: String,
    pub rows: Vec<BoundRow>,
    pub witnesses: Vec<WitnessOutcome>,
    pub envelope_check: EnvelopeReport,
}

impl AuditReport {
    pub fn dominance_failures(&self) -> usize {
        self.witnesses.iter().filter(|w| w.dominates == Some(false)).count()
    }

    pub fn pass(&self) -> bool {
        self.dominance_failures() == 0 && self.envelope_check.pass()
    }
}

fn audit_witness(
    exp: &Experiment,
    phi: &GuaranteeEnvelope,
    family: Family,
    t: u64,
) -> Result<(WitnessOutcome, Option<RunRecord>)> {
    let inst = match Instance::build(family, &exp.schedule, t, phi) {
        Ok(inst) => inst,
        Err(e) => {
            return Ok((
                WitnessOutcome {
                    family,
                    t,
                    skipped: Some(e.to_string()),
                    measured_err: None,
                    certified_bound: None,
                    dominates: None,
                },
                None,
            ))
        }
    };
    let record = run(inst.as_convex(), &exp.schedule, t, &SnapshotPolicy::None)?;
    let measured = record.final_error();
    let certified = inst.certified_bound();
    let slack = match family {
        Family::VShape => exp.tolerances.vshape_rtol * exp.schedule.eta(t - 1),
        _ => exp.tolerances.dominance_abs,
    };
    Ok((
        WitnessOutcome {
            family,
            t,
            skipped: None,
            measured_err: Some(measured),
            certified_bound: Some(certified),
            dominates: Some(measured >= certified - slack),
        },
        Some(record),
    ))
}

/// Builds the witnesses at each horizon, runs them, and checks each measured
/// error against the bound its instance certifies.
pub fn audit_schedule(exp: &Experiment) -> Result<AuditReport> {
    let phi = exp.resolve_envelope()?;
    let work: Vec<(Family, u64)> = exp
        .horizons
        .iter()
        .flat_map(|t| exp.families.iter().map(move |f| (*f, *t)))
        .collect();
    let pool = exp.pool()?;
    let outcomes: Vec<Result<(WitnessOutcome, Option<RunRecord>)>> = pool.install(|| {
        work.par_iter()
            .map(|(family, t)| audit_witness(exp, &phi, *family, *t))
            .collect()
    });
    let outcomes: Vec<_> = outcomes.into_iter().collect::<Result<_>>()?;
    let rows: Vec<BoundRow> = pool.install(|| {
        exp.horizons
            .par_iter()
            .map(|t| {
                let mut row = bound_row(&exp.schedule, *t, &phi);
                row.measured_err = outcomes
                    .iter()
                    .filter(|(w, _)| w.t == *t)
                    .filter_map(|(w, _)| w.measured_err)
                    .reduce(f64::max);
                row
            })
            .collect()
    });
    let records: Vec<RunRecord> = outcomes.iter().filter_map(|(_, r)| r.clone()).collect();
    let envelope_check = validate_envelope(&exp.schedule, &phi, &records, exp.max_horizon() + 1);
    Ok(AuditReport {
        schedule: exp.schedule.label().to_string(),
        envelope: phi.label().to_string(),
        rows,
        witnesses: outcomes.into_iter().map(|(w, _)| w).collect(),
        envelope_check,
    })
}

// ---------------------------------------------------------------------------
// density of suboptimal stopping times

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityMode {
    /// One instance built for `T`; `err(t)` read from its run at every `t`.
    SingleRun,
    /// A fresh instance built and run for every `t ≤ T`.
    PerT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub c: f64,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub count: u64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorProfile {
    #[serde(rename = "T")]
    pub horizon: u64,
    /// `err(t)` for `t = 1..=T`; `None` where no instance could be built.
    pub errors: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    pub family: Family,
    pub mode: DensityMode,
    pub envelope: String,
    pub rows: Vec<DensityRow>,
    pub profiles: Vec<ErrorProfile>,
}

impl DensityTable {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "c,T,count,density")?;
        for row in &self.rows {
            writeln!(w, "{},{},{},{}", row.c, row.horizon, row.count, row.density)?;
        }
        Ok(())
    }
}

fn profile_for(
    exp: &Experiment,
    phi: &GuaranteeEnvelope,
    family: Family,
    horizon: u64,
    mode: DensityMode,
) -> Result<ErrorProfile> {
    let errors = match mode {
        DensityMode::SingleRun => match Instance::build(family, &exp.schedule, horizon, phi) {
            Ok(inst) => run(inst.as_convex(), &exp.schedule, horizon, &SnapshotPolicy::None)?
                .errors
                .into_iter()
                .map(Some)
                .collect(),
            Err(_) => vec![None; horizon as usize],
        },
        DensityMode::PerT => (1..=horizon)
            .into_par_iter()
            .map(|t| match Instance::build(family, &exp.schedule, t, phi) {
                Ok(inst) => run(inst.as_convex(), &exp.schedule, t, &SnapshotPolicy::None)
                    .map(|r| Some(r.final_error())),
                Err(_) => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(ErrorProfile { horizon, errors })
}

/// Fraction of stopping times `t ≤ T` with `√t·err(t) ≥ c`, per threshold.
pub fn density_experiment(exp: &Experiment, thresholds: &[f64], mode: DensityMode) -> Result<DensityTable> {
    let family = match exp.families.as_slice() {
        [f] => *f,
        _ => {
            return Err(Error::InvalidParameter(
                "families: density measurement needs exactly one family".into(),
            ))
        }
    };
    if thresholds.is_empty() {
        return Err(Error::InvalidParameter("thresholds: at least one threshold is required".into()));
    }
    if thresholds.iter().any(|c| c.is_nan()) {
        return Err(Error::InvalidParameter("thresholds: NaN is not a threshold".into()));
    }
    let mut cs = thresholds.to_vec();
    cs.sort_by(f64::total_cmp);
    cs.dedup();

    let phi = exp.resolve_envelope()?;
    let profiles: Vec<Result<ErrorProfile>> = exp.pool()?.install(|| {
        exp.horizons
            .par_iter()
            .map(|t| profile_for(exp, &phi, family, *t, mode))
            .collect()
    });
    let profiles: Vec<ErrorProfile> = profiles.into_iter().collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for profile in &profiles {
        let scaled: Vec<Option<f64>> = profile
            .errors
            .iter()
            .enumerate()
            .map(|(i, e)| e.map(|e| ((i + 1) as f64).sqrt() * e))
            .collect();
        for &c in &cs {
            let count = scaled.iter().filter(|s| matches!(s, Some(v) if *v >= c)).count() as u64;
            rows.push(DensityRow {
                c,
                horizon: profile.horizon,
                count,
                density: count as f64 / profile.horizon as f64,
            });
        }
    }
    Ok(DensityTable {
        family,
        mode,
        envelope: phi.label().to_string(),
        rows,
        profiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn experiment(schedule: &str, horizons: Vec<u64>, families: Vec<Family>) -> Experiment {
        ExperimentSpec {
            schedule: schedule.into(),
            horizons,
            families,
            ..Default::default()
        }
        .resolve()
        .unwrap()
    }

    #[test]
    fn spec_validation() {
        let mut spec = ExperimentSpec::default();
        spec.horizons = vec![8, 4];
        assert!(spec.resolve().unwrap_err().to_string().contains("horizons"));
        spec.horizons = vec![];
        assert!(spec.resolve().is_err());
        spec.horizons = vec![4];
        spec.families = vec![];
        assert!(spec.resolve().unwrap_err().to_string().contains("families"));
    }

    #[test]
    fn table_schedule_must_cover_horizon() {
        let s = StepSchedule::from_table(vec![1.0; 8], "t").unwrap();
        let err = Experiment::new(
            s,
            vec![8],
            vec![Family::MaxLinear],
            EnvelopeChoice::Named(GuaranteeEnvelope::example31()),
            Tolerances::default(),
            1,
        )
        .unwrap_err();
        assert!(err.to_string().contains("needs 9"));
    }

    #[test]
    fn verify_small_quadratic() {
        let exp = experiment("constant:c=1", vec![2], vec![Family::Quadratic]);
        let report = verify_trajectories(&exp).unwrap();
        assert!(report.pass());
        assert!((report.checks[0].final_error - 81.0 / 2048.0).abs() < 1e-15);
    }

    #[test]
    fn verify_fails_on_unbuildable_instance() {
        let exp = experiment("constant:c=0", vec![4], vec![Family::Quadratic]);
        let err = verify_trajectories(&exp).unwrap_err();
        assert!(err.to_string().contains("S < 1/2"), "{err}");
    }

    #[test]
    fn verify_constant_zero_maxlinear() {
        let exp = experiment("constant:c=0", vec![5], vec![Family::MaxLinear]);
        let report = verify_trajectories(&exp).unwrap();
        assert!(report.pass());
        assert_eq!(report.checks[0].max_coord_deviation, 0.0);
    }

    #[test]
    fn audit_constant_zero_degenerates() {
        let exp = experiment("constant:c=0", vec![4, 8], Family::ALL.to_vec());
        let report = audit_schedule(&exp).unwrap();
        assert!(report.rows.iter().all(|r| r.lemma41_step == 0.0));
        let skipped = report.witnesses.iter().filter(|w| w.skipped.is_some()).count();
        assert_eq!(skipped, 4);
        assert_eq!(report.dominance_failures(), 0);
        assert!(report.pass());
    }

    #[test]
    fn audit_empirical_envelope() {
        let mut spec = ExperimentSpec {
            schedule: "sqrt_decay:D=2,G=1".into(),
            horizons: vec![4, 16],
            ..Default::default()
        };
        spec.envelope = "empirical".into();
        let report = audit_schedule(&spec.resolve().unwrap()).unwrap();
        assert!(report.envelope.starts_with("empirical"));
        assert_eq!(report.dominance_failures(), 0);
    }

    #[test]
    fn density_thresholds() {
        let exp = experiment("sqrt_decay:D=2,G=1", vec![32], vec![Family::MaxLinear]);
        let table = density_experiment(&exp, &[f64::INFINITY, 0.0, 0.05], DensityMode::SingleRun).unwrap();
        assert_eq!(table.rows[0].c, 0.0);
        assert_eq!(table.rows[0].density, 1.0);
        assert_eq!(table.rows[2].density, 0.0);
        assert!(table.rows[1].density <= table.rows[0].density);
    }

    #[test]
    fn density_needs_one_family() {
        let exp = experiment("sqrt_decay:D=2,G=1", vec![8], Family::ALL.to_vec());
        assert!(density_experiment(&exp, &[0.0], DensityMode::SingleRun).is_err());
    }

    #[test]
    fn density_modes_share_last_row() {
        let exp = experiment("sqrt_decay:D=2,G=1", vec![24], vec![Family::MaxLinear]);
        let single = density_experiment(&exp, &[0.0], DensityMode::SingleRun).unwrap();
        let per_t = density_experiment(&exp, &[0.0], DensityMode::PerT).unwrap();
        assert_eq!(
            single.profiles[0].errors.last().unwrap().unwrap().to_bits(),
            per_t.profiles[0].errors.last().unwrap().unwrap().to_bits()
        );
    }
}
