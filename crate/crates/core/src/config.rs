//! Run configuration files (TOML).
//!
//! ```text
//! d = 2
//! potential = "cos1d:100"
//!
//! [flow]
//! m = 100
//! integrator = "sgd_renorm"
//! steps = 20000
//!
//! [reference]
//! grid = 256
//!
//! [output]
//! runs = 8
//! ```
//!
//! Flow keys may sit at the top level or under `[flow]`. The potential is
//! either a string (`potential = "cos1d:100"`) or a `[potential]` table with
//! `spec`, or `name` plus `amplitude`. Only `d` and the potential are
//! required. Environment variables `SPECTRALFLOW_<KEY>` override flow keys,
//! `SPECTRALFLOW_REFERENCE_<KEY>` and `SPECTRALFLOW_OUTPUT_<KEY>` the other
//! sections.

use std::path::PathBuf;

use toml_edit::{value, Document, DocumentMut, Item, Table, Value};

use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::potentials::PotentialSpec;
use crate::reference::DEFAULT_TOL;

pub const ENV_PREFIX: &str = "SPECTRALFLOW_";
pub const DEFAULT_REFERENCE_GRID: usize = 256;
pub const DEFAULT_RUNS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceConfig {
    /// Precomputed reference; solved on the fly when absent and `solve` is set.
    pub file: Option<PathBuf>,
    pub solve: bool,
    pub grid: usize,
    pub tol: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { file: None, solve: false, grid: DEFAULT_REFERENCE_GRID, tol: DEFAULT_TOL }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub runs: usize,
    pub checkpoint: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, runs: DEFAULT_RUNS, checkpoint: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub flow: FlowConfig,
    pub reference: ReferenceConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Top,
    Flow,
    Potential,
    Reference,
    Output,
}

const FLOW_KEYS: &[&str] = &[
    "d",
    "m",
    "tau",
    "integrator",
    "parametrization",
    "steps",
    "eta",
    "batch",
    "dataset_size",
    "seed",
    "eval_every",
    "r_max",
    "probe_count",
    "training",
    "normalization",
    "eval_grid",
    "eval_samples",
    "record_timing",
];

type Set<T> = std::result::Result<T, String>;

fn kind(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "a string",
        Value::Integer(_) => "an integer",
        Value::Float(_) => "a float",
        Value::Boolean(_) => "a boolean",
        Value::Datetime(_) => "a datetime",
        Value::Array(_) => "an array",
        Value::InlineTable(_) => "a table",
    }
}

fn as_str<'v>(key: &str, v: &'v Value) -> Set<&'v str> {
    v.as_str().ok_or_else(|| format!("`{key}` expects a string, got {}", kind(v)))
}

fn as_u64(key: &str, v: &Value) -> Set<u64> {
    match v {
        Value::Integer(i) => u64::try_from(*i.value()).map_err(|_| format!("`{key}` must be nonnegative")),
        // integers above i64::MAX (seeds) are written as strings
        Value::String(s) => s.value().parse().map_err(|_| format!("`{key}` expects an integer, got {:?}", s.value())),
        _ => Err(format!("`{key}` expects an integer, got {}", kind(v))),
    }
}

fn as_usize(key: &str, v: &Value) -> Set<usize> {
    usize::try_from(as_u64(key, v)?).map_err(|_| format!("`{key}` is too large"))
}

fn as_positive(key: &str, v: &Value) -> Set<usize> {
    match as_usize(key, v)? {
        0 => Err(format!("`{key}` must be at least 1")),
        n => Ok(n),
    }
}

fn as_f64(key: &str, v: &Value) -> Set<f64> {
    match v {
        Value::Float(f) => Ok(*f.value()),
        Value::Integer(i) => Ok(*i.value() as f64),
        _ => Err(format!("`{key}` expects a number, got {}", kind(v))),
    }
}

fn as_positive_f64(key: &str, v: &Value) -> Set<f64> {
    let x = as_f64(key, v)?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("`{key}` must be positive, got {x}"))
    }
}

fn as_bool(key: &str, v: &Value) -> Set<bool> {
    v.as_bool().ok_or_else(|| format!("`{key}` expects true or false, got {}", kind(v)))
}

fn parsed<T: std::str::FromStr<Err = Error>>(key: &str, v: &Value) -> Set<T> {
    as_str(key, v)?.parse().map_err(|e: Error| format!("`{key}`: {e}"))
}

#[derive(Debug, Default)]
struct Builder {
    d: Option<usize>,
    potential: Option<PotentialSpec>,
    potential_name: Option<String>,
    amplitude: Option<f64>,
    flow: Option<FlowConfig>,
    reference: ReferenceConfig,
    output: OutputConfig,
}

impl Builder {
    fn flow(&mut self) -> &mut FlowConfig {
        self.flow.get_or_insert_with(|| FlowConfig::new(1, PotentialSpec::Zero))
    }

    fn set(&mut self, section: Section, key: &str, v: &Value) -> Set<()> {
        match section {
            Section::Top | Section::Flow if key == "potential" => self.potential = Some(parsed(key, v)?),
            Section::Top | Section::Flow => self.set_flow(key, v)?,
            Section::Potential => match key {
                "spec" => self.potential = Some(parsed(key, v)?),
                "name" => self.potential_name = Some(as_str(key, v)?.to_string()),
                "amplitude" => self.amplitude = Some(as_f64(key, v)?),
                _ => return Err(format!("unknown key `{key}` in [potential]")),
            },
            Section::Reference => match key {
                "file" => self.reference.file = Some(PathBuf::from(as_str(key, v)?)),
                "solve" => self.reference.solve = as_bool(key, v)?,
                "grid" => self.reference.grid = as_positive(key, v)?,
                "tol" => self.reference.tol = as_positive_f64(key, v)?,
                _ => return Err(format!("unknown key `{key}` in [reference]")),
            },
            Section::Output => match key {
                "dir" => self.output.dir = Some(PathBuf::from(as_str(key, v)?)),
                "runs" => self.output.runs = as_positive(key, v)?,
                "checkpoint" => self.output.checkpoint = as_bool(key, v)?,
                _ => return Err(format!("unknown key `{key}` in [output]")),
            },
        }
        Ok(())
    }

    fn set_flow(&mut self, key: &str, v: &Value) -> Set<()> {
        match key {
            "d" => self.d = Some(as_positive(key, v)?),
            "m" => self.flow().m = as_positive(key, v)?,
            "tau" => self.flow().tau = as_positive_f64(key, v)?,
            "integrator" => self.flow().integrator = parsed(key, v)?,
            "parametrization" => self.flow().parametrization = parsed(key, v)?,
            "steps" => self.flow().steps = as_usize(key, v)?,
            "eta" => self.flow().eta = Some(as_positive_f64(key, v)?),
            "batch" => self.flow().batch = as_positive(key, v)?,
            "dataset_size" => self.flow().dataset_size = as_positive(key, v)?,
            "seed" => self.flow().seed = as_u64(key, v)?,
            "eval_every" => self.flow().eval_every = as_positive(key, v)?,
            "r_max" => self.flow().r_max = Some(as_positive_f64(key, v)?),
            "probe_count" => self.flow().probe_count = as_usize(key, v)?,
            "training" => self.flow().training = parsed(key, v)?,
            "normalization" => self.flow().normalization = parsed(key, v)?,
            "eval_grid" => self.flow().eval_grid = as_positive(key, v)?,
            "eval_samples" => self.flow().eval_samples = as_positive(key, v)?,
            "record_timing" => self.flow().record_timing = as_bool(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    fn finish(mut self, last_line: usize) -> Result<RunConfig> {
        let missing = |key: &str| Error::Parse { line: last_line, message: format!("missing required key `{key}`") };
        let d = self.d.ok_or_else(|| missing("d"))?;
        let potential = match (self.potential, self.potential_name.take()) {
            (Some(p), None) => p,
            (None, Some(name)) => {
                let spec = match self.amplitude {
                    Some(a) => format!("{name}:{a:?}"),
                    None => name,
                };
                spec.parse().map_err(|e| Error::Parse { line: last_line, message: format!("[potential]: {e}") })?
            }
            (Some(_), Some(_)) => {
                return Err(Error::Parse { line: last_line, message: "potential given both as `spec` and `name`".into() })
            }
            (None, None) => return Err(missing("potential")),
        };
        let mut flow = self.flow.unwrap_or_else(|| FlowConfig::new(d, potential));
        flow.d = d;
        flow.potential = potential;
        flow.validate()?;
        Ok(RunConfig { flow, reference: self.reference, output: self.output })
    }
}

fn line_of(text: &str, span: Option<std::ops::Range<usize>>) -> usize {
    span.map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1)
}

fn apply_table(b: &mut Builder, text: &str, table: &Table, section: Section) -> Result<()> {
    for (key, item) in table.iter() {
        let line = line_of(text, table.key(key).and_then(|k| k.span()));
        let err = |message: String| Error::Parse { line, message };
        match item {
            Item::Value(v) => b.set(section, key, v).map_err(err)?,
            Item::Table(t) if section == Section::Top => {
                let sub = match key {
                    "flow" => Section::Flow,
                    "potential" => Section::Potential,
                    "reference" => Section::Reference,
                    "output" => Section::Output,
                    other => return Err(err(format!("unknown section [{other}]"))),
                };
                apply_table(b, text, t, sub)?;
            }
            _ => return Err(err(format!("`{key}` must be a plain value"))),
        }
    }
    Ok(())
}

/// Parses a configuration file. Errors name the offending key and line.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let doc = Document::parse(text)
        .map_err(|e| Error::Parse { line: line_of(text, e.span()), message: e.message().trim().to_string() })?;
    let mut b = Builder::default();
    apply_table(&mut b, text, doc.as_table(), Section::Top)?;
    b.finish(text.lines().count())
}

impl RunConfig {
    /// Minimal configuration with defaults everywhere else.
    pub fn new(d: usize, potential: PotentialSpec) -> Self {
        Self { flow: FlowConfig::new(d, potential), reference: ReferenceConfig::default(), output: OutputConfig::default() }
    }

    /// Canonical form; `parse_config` of the result gives `self` back.
    pub fn to_config_string(&self) -> String {
        let f = &self.flow;
        let int = |n: usize| value(n as i64);
        let mut flow = Table::new();
        flow["d"] = int(f.d);
        flow["m"] = int(f.m);
        flow["tau"] = value(f.tau);
        flow["integrator"] = value(f.integrator.to_string());
        flow["parametrization"] = value(f.parametrization.to_string());
        flow["steps"] = int(f.steps);
        if let Some(eta) = f.eta {
            flow["eta"] = value(eta);
        }
        flow["batch"] = int(f.batch);
        flow["dataset_size"] = int(f.dataset_size);
        flow["seed"] = match i64::try_from(f.seed) {
            Ok(s) => value(s),
            Err(_) => value(f.seed.to_string()),
        };
        flow["eval_every"] = int(f.eval_every);
        if let Some(r) = f.r_max {
            flow["r_max"] = value(r);
        }
        flow["probe_count"] = int(f.probe_count);
        flow["training"] = value(f.training.to_string());
        flow["normalization"] = value(f.normalization.to_string());
        flow["eval_grid"] = int(f.eval_grid);
        flow["eval_samples"] = int(f.eval_samples);
        flow["record_timing"] = value(f.record_timing);

        let mut potential = Table::new();
        potential["spec"] = value(f.potential.to_string());

        let mut reference = Table::new();
        if let Some(p) = &self.reference.file {
            reference["file"] = value(p.display().to_string());
        }
        reference["solve"] = value(self.reference.solve);
        reference["grid"] = int(self.reference.grid);
        reference["tol"] = value(self.reference.tol);

        let mut output = Table::new();
        if let Some(p) = &self.output.dir {
            output["dir"] = value(p.display().to_string());
        }
        output["runs"] = int(self.output.runs);
        output["checkpoint"] = value(self.output.checkpoint);

        let mut doc = DocumentMut::new();
        for (name, t) in [("flow", flow), ("potential", potential), ("reference", reference), ("output", output)] {
            doc[name] = Item::Table(t);
        }
        doc.to_string()
    }

    /// Applies `SPECTRALFLOW_*` overrides from `vars` (normally
    /// `std::env::vars()`). Values are read as TOML values, falling back to
    /// plain strings. Unknown `SPECTRALFLOW_` names are errors.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        let mut overrides: Vec<(String, String)> =
            vars.into_iter().filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_ascii_lowercase(), v))).collect();
        if overrides.is_empty() {
            return Ok(());
        }
        overrides.sort();
        let mut b = Builder {
            d: Some(self.flow.d),
            potential: Some(self.flow.potential),
            flow: Some(self.flow.clone()),
            reference: self.reference.clone(),
            output: self.output.clone(),
            ..Builder::default()
        };
        for (key, raw) in overrides {
            let (section, k) = if let Some(k) = key.strip_prefix("reference_") {
                (Section::Reference, k)
            } else if let Some(k) = key.strip_prefix("output_") {
                (Section::Output, k)
            } else if key == "potential" || FLOW_KEYS.contains(&key.as_str()) {
                (Section::Flow, key.as_str())
            } else {
                return Err(Error::Config(format!("unknown override {ENV_PREFIX}{}", key.to_ascii_uppercase())));
            };
            let v: Value = raw.trim().parse().unwrap_or_else(|_| Value::from(raw.as_str()));
            b.set(section, k, &v).map_err(|m| Error::Config(format!("{ENV_PREFIX}{}: {m}", key.to_ascii_uppercase())))?;
        }
        *self = b.finish(0)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{Integrator, Quadrature};

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config("d=2\npotential=\"cos1d:100\"\n").unwrap();
        assert_eq!(cfg.flow.d, 2);
        assert_eq!(cfg.flow.m, 100);
        assert_eq!(cfg.flow.batch, 100);
        assert_eq!(cfg.flow.tau, 20.0);
        assert_eq!(cfg.flow.step_size(), 1.0 / 2000.0);
        assert_eq!(cfg.flow.potential, PotentialSpec::Cos1d(100.0));
        assert_eq!(cfg.output.runs, 8);
    }

    #[test]
    fn sections_and_comments() {
        let text = "# demo\n[flow]\nd = 3 # dimension\nintegrator = 'lagrangian'\ntraining = \"grid:16\"\n\n[potential]\nname = \"exp_diag\"\namplitude = 50\n[reference]\ngrid = 64\n[output]\nruns = 2\ndir = \"out # not a comment\"\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.flow.integrator, Integrator::Lagrangian);
        assert_eq!(cfg.flow.training, Quadrature::Grid(16));
        assert_eq!(cfg.flow.potential, PotentialSpec::ExpDiag(50.0));
        assert_eq!(cfg.reference.grid, 64);
        assert_eq!(cfg.output.dir.as_deref(), Some(std::path::Path::new("out # not a comment")));
    }

    #[test]
    fn round_trip_is_a_fixed_point() {
        let text = "d=2\npotential=\"cos_diag:7.5\"\nintegrator=\"sgd_renorm\"\neta=0.001\nr_max=50\nseed=\"18446744073709551615\"\n[output]\ndir=\"runs/a\"\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.flow.seed, u64::MAX);
        let s1 = cfg.to_config_string();
        let again = parse_config(&s1).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_config_string(), s1);
    }

    #[test]
    fn errors_name_key_and_line() {
        let err = |t: &str| match parse_config(t) {
            Err(Error::Parse { line, message }) => (line, message),
            other => panic!("expected parse error, got {other:?}"),
        };
        let (line, msg) = err("d=2\npotential=\"zero\"\nm=0\n");
        assert_eq!(line, 3);
        assert!(msg.contains("`m`"), "{msg}");
        let (line, msg) = err("d=2\npotential=\"zero\"\nwidth=3\n");
        assert_eq!(line, 3);
        assert!(msg.contains("`width`"));
        let (line, msg) = err("d=2\n\npotential=\"zero\"\nsteps=\"ten\"\n");
        assert_eq!(line, 4);
        assert!(msg.contains("`steps`"));
        let (line, msg) = err("d=2\npotential=\"zero\"\n[flow]\ntau=\"fast\"\n");
        assert_eq!(line, 4);
        assert!(msg.contains("`tau`"), "{msg}");
        let (_, msg) = err("potential=\"zero\"\n");
        assert!(msg.contains("`d`"));
        let (_, msg) = err("d=2\n");
        assert!(msg.contains("`potential`"));
        let (line, _) = err("d=2\nd=3\npotential=\"zero\"\n");
        assert_eq!(line, 2);
        let (line, _) = err("d=2\npotential=\"zero\"\n[plot]\nx=1\n");
        assert_eq!(line, 3);
        let (line, _) = err("d=2\npotential=zero\n");
        assert_eq!(line, 2);
        assert!(parse_config("d=1\npotential=\"cos_diag:1\"\n").is_err());
    }

    #[test]
    fn environment_overrides() {
        let mut cfg = parse_config("d=2\npotential=\"cos1d:100\"\n").unwrap();
        let vars = [
            ("SPECTRALFLOW_STEPS".to_string(), "10".to_string()),
            ("SPECTRALFLOW_REFERENCE_GRID".to_string(), "32".to_string()),
            ("SPECTRALFLOW_POTENTIAL".to_string(), "zero".to_string()),
            ("SPECTRALFLOW_INTEGRATOR".to_string(), "lagrangian".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        cfg.apply_env(vars).unwrap();
        assert_eq!(cfg.flow.steps, 10);
        assert_eq!(cfg.reference.grid, 32);
        assert_eq!(cfg.flow.potential, PotentialSpec::Zero);
        assert_eq!(cfg.flow.integrator, Integrator::Lagrangian);
        assert!(cfg.apply_env([("SPECTRALFLOW_BOGUS".to_string(), "1".to_string())]).is_err());
        assert!(cfg.apply_env([("SPECTRALFLOW_M".to_string(), "0".to_string())]).is_err());
    }
}
