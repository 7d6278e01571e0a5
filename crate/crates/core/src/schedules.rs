//! Stepsize sequences `η_0, η_1, …` and their prefix sums.
//!
//! A [`StepSchedule`] is evaluated lazily from a generator. A finite table,
//! when present, shadows the generator on its indices; past the end of a
//! table-only schedule the stepsize is zero.

use std::fmt;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use serde::Deserialize;

use crate::error::{Error, Result};

/// Number of doubling blocks addressable by a `u64` index.
const MAX_BLOCKS: usize = 63;

type BlockBuilder = dyn Fn(usize) -> Vec<f64> + Send + Sync;

#[derive(Clone)]
enum Generator {
    Constant(f64),
    /// `scale / sqrt(t + 1)`.
    SqrtDecay(f64),
    Doubling(Arc<DoublingBlocks>),
    /// Only the table is defined; zero beyond it.
    Empty,
}

struct DoublingBlocks {
    builder: Box<BlockBuilder>,
    blocks: Vec<OnceLock<Vec<f64>>>,
}

impl DoublingBlocks {
    fn block(&self, k: usize) -> &[f64] {
        self.blocks[k].get_or_init(|| {
            let len = 1usize << k;
            let values = (self.builder)(len);
            assert_eq!(
                values.len(),
                len,
                "doubling block builder returned {} values for horizon {len}",
                values.len()
            );
            assert!(
                values.iter().all(|v| v.is_finite() && *v >= 0.0),
                "doubling block builder returned a negative or non-finite stepsize"
            );
            values
        })
    }
}

/// A nonnegative stepsize sequence.
#[derive(Clone)]
pub struct StepSchedule {
    generator: Generator,
    table: Option<Arc<[f64]>>,
    label: String,
}

impl fmt::Debug for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StepSchedule")
            .field("label", &self.label)
            .field("table_len", &self.table.as_ref().map(|t| t.len()))
            .finish()
    }
}

/// Block index `k` and in-block offset of global index `t` for the doubling
/// layout, where block `k` covers `[2^k - 1, 2^(k+1) - 2]`.
pub fn doubling_block_of(t: u64) -> (usize, u64) {
    let k = 63 - (t + 1).leading_zeros() as usize;
    (k, t + 1 - (1u64 << k))
}

impl StepSchedule {
    /// `η_t = D / (G·sqrt(t+1))`.
    pub fn sqrt_decay(diameter: f64, lipschitz: f64) -> Result<Self> {
        if !(diameter > 0.0 && diameter.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sqrt_decay requires D > 0, got {diameter}"
            )));
        }
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sqrt_decay requires G > 0, got {lipschitz}"
            )));
        }
        Ok(Self {
            generator: Generator::SqrtDecay(diameter / lipschitz),
            table: None,
            label: format!("sqrt_decay:D={diameter},G={lipschitz}"),
        })
    }

    pub fn constant(c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "constant stepsize must be finite and >= 0, got {c}"
            )));
        }
        Ok(Self {
            generator: Generator::Constant(c),
            table: None,
            label: format!("constant:c={c}"),
        })
    }

    /// A finite schedule; indices past the table evaluate to zero.
    pub fn from_table(values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if let Some((t, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::InvalidParameter(format!(
                "stepsize table entry t={t} is {v}; entries must be finite and >= 0"
            )));
        }
        Ok(Self {
            generator: Generator::Empty,
            table: Some(values.into()),
            label: label.into(),
        })
    }

    /// Shadows the first `values.len()` indices of this schedule.
    pub fn with_table_override(mut self, values: Vec<f64>) -> Result<Self> {
        let table = Self::from_table(values, "")?.table;
        self.table = table;
        self.label = format!("{}+table", self.label);
        Ok(self)
    }

    /// Concatenates `builder(1), builder(2), builder(4), …`.
    ///
    /// Blocks covering indices `0..=validate_through` are built and checked
    /// eagerly; later blocks are built on first use and panic if the builder
    /// breaks its length contract.
    pub fn doubling_concat<F>(builder: F, validate_through: u64) -> Result<Self>
    where
        F: Fn(usize) -> Vec<f64> + Send + Sync + 'static,
    {
        let blocks = DoublingBlocks {
            builder: Box::new(builder),
            blocks: (0..MAX_BLOCKS).map(|_| OnceLock::new()).collect(),
        };
        let (last_block, _) = doubling_block_of(validate_through);
        for k in 0..=last_block {
            let len = 1usize << k;
            let values = (blocks.builder)(len);
            if values.len() != len {
                return Err(Error::Construction(format!(
                    "doubling block {k} must have length {len}, builder returned {}",
                    values.len()
                )));
            }
            if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::Construction(format!(
                    "doubling block {k} contains invalid stepsize {v}"
                )));
            }
            let _ = blocks.blocks[k].set(values);
        }
        Ok(Self {
            generator: Generator::Doubling(Arc::new(blocks)),
            table: None,
            label: "doubling".to_string(),
        })
    }

    /// Reads a `t,eta` CSV with contiguous 0-based `t`.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let values = read_table(file)?;
        Self::from_table(values, format!("table:{}", path.display()))
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Length of the finite support, `None` when defined everywhere.
    pub fn support(&self) -> Option<u64> {
        match (&self.generator, &self.table) {
            (Generator::Empty, Some(table)) => Some(table.len() as u64),
            (Generator::Empty, None) => Some(0),
            _ => None,
        }
    }

    /// The stepsize `η_t`.
    pub fn eta(&self, t: u64) -> f64 {
        if let Some(table) = &self.table {
            if let Some(v) = usize::try_from(t).ok().and_then(|i| table.get(i)) {
                return *v;
            }
        }
        match &self.generator {
            Generator::Constant(c) => *c,
            Generator::SqrtDecay(scale) => scale / ((t + 1) as f64).sqrt(),
            Generator::Doubling(blocks) => {
                let (k, offset) = doubling_block_of(t);
                blocks.block(k)[offset as usize]
            }
            Generator::Empty => 0.0,
        }
    }

    /// `η_0, …, η_{n-1}`.
    pub fn etas(&self, n: usize) -> Vec<f64> {
        (0..n as u64).map(|t| self.eta(t)).collect()
    }

    /// `Σ_{j=0}^{t-1} η_j`, accumulated in index order.
    pub fn prefix_sum(&self, t: u64) -> f64 {
        (0..t).fold(0.0, |acc, j| acc + self.eta(j))
    }

    /// All prefix sums `S_0 = 0, S_1, …, S_n` with `S_t = prefix_sum(t)`.
    pub fn prefix_sums(&self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        out.push(acc);
        for j in 0..n as u64 {
            acc += self.eta(j);
            out.push(acc);
        }
        out
    }
}

#[derive(Debug, Deserialize)]
struct TableRow {
    t: u64,
    eta: f64,
}

fn read_table<R: std::io::Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Format(e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["t", "eta"] {
        return Err(Error::Format(format!(
            "schedule table header must be `t,eta`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut values = Vec::new();
    for (expected, row) in rdr.deserialize::<TableRow>().enumerate() {
        let row = row.map_err(|e| Error::Format(e.to_string()))?;
        if row.t != expected as u64 {
            return Err(Error::Format(format!(
                "schedule table rows must be contiguous from t=0; expected t={expected}, found t={}",
                row.t
            )));
        }
        values.push(row.eta);
    }
    Ok(values)
}

/// Parses the `name:key=value,…` descriptor.
///
/// Recognised names: `sqrt_decay:D=..,G=..`, `constant:c=..`, `table:PATH`.
pub fn parse_descriptor(descriptor: &str) -> Result<StepSchedule> {
    let (name, rest) = descriptor.split_once(':').unwrap_or((descriptor, ""));
    match name.trim() {
        "sqrt_decay" => {
            let params = parse_params(rest)?;
            let d = param(&params, "D")?.unwrap_or(1.0);
            let g = param(&params, "G")?.unwrap_or(1.0);
            StepSchedule::sqrt_decay(d, g)
        }
        "constant" => {
            let params = parse_params(rest)?;
            let c = param(&params, "c")?.ok_or_else(|| {
                Error::InvalidParameter("constant schedule requires c=<value>".into())
            })?;
            StepSchedule::constant(c)
        }
        "table" => {
            if rest.is_empty() {
                return Err(Error::InvalidParameter("table schedule requires a path".into()));
            }
            StepSchedule::from_csv_path(rest)
        }
        other => Err(Error::InvalidParameter(format!(
            "unknown schedule `{other}` (expected sqrt_decay, constant or table)"
        ))),
    }
}

pub(crate) fn parse_params(rest: &str) -> Result<Vec<(String, String)>> {
    rest.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::InvalidParameter(format!("expected key=value, got `{kv}`")))
        })
        .collect()
}

pub(crate) fn param(params: &[(String, String)], key: &str) -> Result<Option<f64>> {
    params
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| {
            v.parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("parameter {key}={v} is not a number")))
        })
        .transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_decay_values() {
        let s = StepSchedule::sqrt_decay(2.0, 1.0).unwrap();
        assert_eq!(s.eta(0), 2.0);
        assert_eq!(s.eta(3), 1.0);
        let s = StepSchedule::sqrt_decay(1.0, 1.0).unwrap();
        assert!((s.eta(99) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn sqrt_decay_rejects_nonpositive() {
        assert!(matches!(StepSchedule::sqrt_decay(0.0, 1.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(StepSchedule::sqrt_decay(1.0, -1.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn constant_values_and_errors() {
        assert_eq!(StepSchedule::constant(0.0).unwrap().eta(7), 0.0);
        let half = StepSchedule::constant(0.5).unwrap();
        assert_eq!(half.eta(0), 0.5);
        assert_eq!(half.prefix_sum(4), 2.0);
        assert_eq!(half.prefix_sum(0), 0.0);
        assert!(StepSchedule::constant(-0.1).is_err());
    }

    #[test]
    fn prefix_sum_of_table_and_sqrt_decay() {
        let table = StepSchedule::from_table(vec![0.3, 0.2, 0.1], "t").unwrap();
        assert!((table.prefix_sum(3) - 0.6).abs() < 1e-15);
        assert_eq!(table.eta(3), 0.0);
        assert_eq!(table.support(), Some(3));
        let s = StepSchedule::sqrt_decay(2.0, 1.0).unwrap();
        assert!((s.prefix_sum(2) - 3.414_213_562_373_095).abs() < 1e-12);
    }

    #[test]
    fn table_override_shadows_generator() {
        let s = StepSchedule::constant(1.0)
            .unwrap()
            .with_table_override(vec![5.0, 6.0])
            .unwrap();
        assert_eq!(s.eta(0), 5.0);
        assert_eq!(s.eta(1), 6.0);
        assert_eq!(s.eta(2), 1.0);
        assert_eq!(s.support(), None);
    }

    #[test]
    fn doubling_block_layout() {
        assert_eq!(doubling_block_of(0), (0, 0));
        assert_eq!(doubling_block_of(1), (1, 0));
        assert_eq!(doubling_block_of(2), (1, 1));
        assert_eq!(doubling_block_of(6), (2, 3));
        assert_eq!(doubling_block_of(7), (3, 0));
    }

    #[test]
    fn doubling_concat_values() {
        let s = StepSchedule::doubling_concat(|n| vec![1.0 / (n as f64).sqrt(); n], 64).unwrap();
        assert_eq!(s.eta(0), 1.0);
        assert!((s.eta(2) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((s.eta(7) - 1.0 / 8f64.sqrt()).abs() < 1e-15);
        // lazily built beyond the validated range
        assert!((s.eta(1000) - 1.0 / 512f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn doubling_concat_wrong_length() {
        let err = StepSchedule::doubling_concat(|n| vec![1.0; n.max(2)], 10).unwrap_err();
        assert!(matches!(err, Error::Construction(_)));
    }

    #[test]
    fn table_csv_parsing() {
        let values = read_table("t,eta\n0,0.3\n1,0.2\n2,0.1\n".as_bytes()).unwrap();
        assert_eq!(values, vec![0.3, 0.2, 0.1]);
        assert!(read_table("t,eta\n0,0.3\n2,0.1\n".as_bytes()).is_err());
        assert!(read_table("step,eta\n0,0.3\n".as_bytes()).is_err());
    }

    #[test]
    fn descriptors() {
        let s = parse_descriptor("sqrt_decay:D=2,G=1").unwrap();
        assert_eq!(s.eta(0), 2.0);
        let s = parse_descriptor("constant:c=0.5").unwrap();
        assert_eq!(s.eta(10), 0.5);
        assert!(parse_descriptor("constant").is_err());
        assert!(parse_descriptor("cosine:x=1").is_err());
        assert!(matches!(parse_descriptor("table:/nonexistent/x.csv"), Err(Error::Io { .. })));
    }
}
