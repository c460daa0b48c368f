//! File formats: operator CSV, spectrum JSON, instance JSON, experiment
//! configs, and the output directory with its manifest.
//!
//! Floats are written with 17 significant digits so every value round-trips
//! exactly. Outputs are staged and renamed into place, manifest last.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};
use crate::instances::GeneratorSpec;
use crate::montecarlo::{ExperimentConfig, ExperimentReport, RiskEstimate};
use crate::sequence_model::{
    build_singular_system, ProblemInstance, SingularSystem, DEFAULT_RANK_TOL,
};

pub const INSTANCE_SCHEMA: &str = "specfilter/instance/1";
pub const MANIFEST_SCHEMA: &str = "specfilter/manifest/1";

/// `{:.16e}`: 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Pretty JSON whose floats carry 17 significant digits.
struct FullPrecision(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + std::io::Write>(
        &mut self,
        writer: &mut W,
        value: f64,
    ) -> std::io::Result<()> {
        writer.write_all(format_float(value).as_bytes())
    }

    fn begin_array<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + std::io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + std::io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut out,
        FullPrecision(serde_json::ser::PrettyFormatter::new()),
    );
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn parse_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| parse_err(path, e.to_string()))
}

/// Parses an operator CSV: a `rows,cols` line followed by row-major data,
/// comma separated over any number of lines. A literal `rows,cols` header
/// line before the dimensions is accepted.
pub fn parse_operator_csv(text: &str, path: &Path) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let mut header = lines.next().ok_or_else(|| parse_err(path, "empty file"))?;
    if header.replace(' ', "") == "rows,cols" {
        header = lines
            .next()
            .ok_or_else(|| parse_err(path, "missing dimensions"))?;
    }
    let dims: Vec<usize> = header
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(path, format!("bad dimension line `{header}`")))?;
    let [rows, cols] = dims[..] else {
        return Err(parse_err(
            path,
            format!("expected `rows,cols`, got `{header}`"),
        ));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for (lineno, line) in lines.enumerate() {
        for field in line.split(',').map(str::trim).filter(|f| !f.is_empty()) {
            let v: f64 = field.parse().map_err(|_| {
                parse_err(
                    path,
                    format!("bad number `{field}` on data line {}", lineno + 1),
                )
            })?;
            data.push(v);
        }
    }
    if data.len() != rows * cols {
        return Err(parse_err(
            path,
            format!(
                "expected {} values for {rows}x{cols}, found {}",
                rows * cols,
                data.len()
            ),
        ));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn read_operator_csv(path: &Path) -> Result<DMatrix<f64>> {
    parse_operator_csv(&read_text(path)?, path)
}

pub fn write_operator_csv(matrix: &DMatrix<f64>) -> String {
    let mut out = format!("{},{}\n", matrix.nrows(), matrix.ncols());
    for r in 0..matrix.nrows() {
        let row: Vec<String> = (0..matrix.ncols())
            .map(|c| format_float(matrix[(r, c)]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Spectrum-only operator file `{"b": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumFile {
    pub b: Vec<f64>,
}

pub fn read_spectrum(path: &Path) -> Result<SingularSystem> {
    let f: SpectrumFile = read_json(path)?;
    SingularSystem::from_spectrum(f.b)
}

/// Fully explicit instance as written by the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub schema: String,
    pub b: Vec<f64>,
    pub x: Vec<f64>,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
}

impl InstanceFile {
    pub fn of(instance: &ProblemInstance, generator: Option<GeneratorSpec>) -> Self {
        Self {
            schema: INSTANCE_SCHEMA.to_string(),
            b: instance.system().spectrum().to_vec(),
            x: instance.x().to_vec(),
            sigma: instance.sigma(),
            generator,
        }
    }

    pub fn to_instance(&self) -> Result<ProblemInstance> {
        if self.schema != INSTANCE_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported instance schema `{}`, expected `{INSTANCE_SCHEMA}`",
                self.schema
            )));
        }
        ProblemInstance::from_spectrum(self.b.clone(), self.x.clone(), self.sigma)
    }
}

pub fn read_instance(path: &Path) -> Result<ProblemInstance> {
    read_json::<InstanceFile>(path)?.to_instance()
}

/// Where a config takes its instance from. Exactly one of `path`,
/// `operator_csv`, `operator_spectrum` or `b` must be set; the last three
/// also need `x` and `sigma`. Relative paths resolve against the config's
/// directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator_spectrum: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_tolerance: Option<f64>,
}

impl InstanceSource {
    pub fn inline(b: Vec<f64>, x: Vec<f64>, sigma: f64) -> Self {
        Self {
            b: Some(b),
            x: Some(x),
            sigma: Some(sigma),
            ..Self::default()
        }
    }

    pub fn file(path: impl Into<PathBuf>) -> Self {
        Self {
            path: Some(path.into()),
            ..Self::default()
        }
    }

    pub fn resolve(&self, base: &Path) -> Result<ProblemInstance> {
        let set = [
            self.path.is_some(),
            self.operator_csv.is_some(),
            self.operator_spectrum.is_some(),
            self.b.is_some(),
        ]
        .iter()
        .filter(|s| **s)
        .count();
        if set != 1 {
            return Err(Error::Config(
                "instance needs exactly one of `path`, `operator_csv`, `operator_spectrum`, `b`"
                    .into(),
            ));
        }
        if let Some(p) = &self.path {
            if self.x.is_some() || self.sigma.is_some() || self.rank_tolerance.is_some() {
                return Err(Error::Config(
                    "instance `path` cannot be combined with `x`, `sigma` or `rank_tolerance`"
                        .into(),
                ));
            }
            return read_instance(&base.join(p));
        }
        let (Some(x), Some(sigma)) = (&self.x, self.sigma) else {
            return Err(Error::Config("instance needs `x` and `sigma`".into()));
        };
        if self.rank_tolerance.is_some() && self.operator_csv.is_none() {
            return Err(Error::Config(
                "`rank_tolerance` only applies to `operator_csv`".into(),
            ));
        }
        let system = if let Some(p) = &self.operator_csv {
            let m = read_operator_csv(&base.join(p))?;
            build_singular_system(&m, self.rank_tolerance.unwrap_or(DEFAULT_RANK_TOL))?
        } else if let Some(p) = &self.operator_spectrum {
            read_spectrum(&base.join(p))?
        } else {
            SingularSystem::from_spectrum(self.b.clone().expect("counted above"))?
        };
        ProblemInstance::new(x.clone(), sigma, system)
    }
}

/// Parses a config file; the returned directory anchors relative paths.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, PathBuf)> {
    let config: ExperimentConfig = read_json(path)?;
    config.validate()?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

/// Config plus its resolved instance.
pub fn load_experiment(path: &Path) -> Result<(ExperimentConfig, ProblemInstance)> {
    let (config, base) = load_config(path)?;
    let instance = config.instance.resolve(&base)?;
    Ok((config, instance))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `id,mean,stderr,replications`, one row per estimate.
pub fn risks_csv(estimates: &[RiskEstimate]) -> String {
    let mut out = String::from("id,mean,stderr,replications\n");
    for e in estimates {
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(&e.id),
            format_float(e.mean),
            format_float(e.stderr),
            e.replications
        ));
    }
    out
}

/// `k,mean,stderr,exact` for every cut-off estimate in the report.
pub fn cutoff_curve_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("k,mean,stderr,exact\n");
    for e in &report.estimates {
        let Some(k) =
            e.id.strip_prefix("cutoff(")
                .and_then(|r| r.strip_suffix(')'))
        else {
            continue;
        };
        let exact = report
            .exact_risks
            .iter()
            .find(|r| r.id == e.id)
            .map(|r| format_float(r.risk))
            .unwrap_or_default();
        out.push_str(&format!(
            "{k},{},{},{exact}\n",
            format_float(e.mean),
            format_float(e.stderr)
        ));
    }
    out
}

/// `estimator,mean,stderr`.
pub fn estimator_risks_csv(estimates: &[RiskEstimate]) -> String {
    let mut out = String::from("estimator,mean,stderr\n");
    for e in estimates {
        out.push_str(&format!(
            "{},{},{}\n",
            csv_field(&e.id),
            format_float(e.mean),
            format_float(e.stderr)
        ));
    }
    out
}

/// One named output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(name: impl Into<String>, contents: impl Into<Vec<u8>>) -> Self {
        Self {
            name: name.into(),
            bytes: contents.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub artifacts: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn of(artifacts: &[Artifact]) -> Self {
        let mut entries: Vec<ManifestEntry> = artifacts
            .iter()
            .map(|a| ManifestEntry {
                path: a.name.clone(),
                sha256: hex::encode(Sha256::digest(&a.bytes)),
                bytes: a.bytes.len() as u64,
            })
            .collect();
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        Self {
            schema: MANIFEST_SCHEMA.to_string(),
            artifacts: entries,
        }
    }
}

/// Writes `artifacts` plus `manifest.json` under `dir`. Everything is
/// first staged in a hidden sibling directory, so a failure leaves no
/// partial outputs behind; the manifest is moved into place last.
pub fn write_outputs(dir: &Path, artifacts: &[Artifact]) -> Result<Manifest> {
    for a in artifacts {
        if a.name == "manifest.json" || a.name.contains(['/', '\\']) || a.name.starts_with('.') {
            return Err(Error::InvalidParameter(format!(
                "bad artifact name `{}`",
                a.name
            )));
        }
    }
    let manifest = Manifest::of(artifacts);
    let manifest_bytes = to_json(&manifest)?.into_bytes();

    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let staging = dir.join(format!(".staging-{}", std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    fs::create_dir(&staging).map_err(io_err(&staging))?;
    let staged = (|| -> Result<()> {
        for a in artifacts {
            let p = staging.join(&a.name);
            fs::write(&p, &a.bytes).map_err(io_err(&p))?;
        }
        let p = staging.join("manifest.json");
        fs::write(&p, &manifest_bytes).map_err(io_err(&p))
    })();
    if let Err(e) = staged {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    let names = artifacts
        .iter()
        .map(|a| a.name.as_str())
        .chain(["manifest.json"]);
    for name in names {
        let from = staging.join(name);
        let to = dir.join(name);
        fs::rename(&from, &to).map_err(io_err(&to))?;
    }
    fs::remove_dir(&staging).map_err(io_err(&staging))?;
    Ok(manifest)
}

/// Artifacts of an experiment: `risks.csv`, `report.json` and, on request,
/// `plot_cutoff_curve.csv` and `plot_estimator_risks.csv`.
pub fn experiment_artifacts(report: &ExperimentReport, plot_data: bool) -> Result<Vec<Artifact>> {
    let mut out = vec![
        Artifact::new("risks.csv", risks_csv(&report.estimates)),
        Artifact::new("report.json", to_json(report)?),
    ];
    if plot_data {
        out.push(Artifact::new(
            "plot_cutoff_curve.csv",
            cutoff_curve_csv(report),
        ));
        out.push(Artifact::new(
            "plot_estimator_risks.csv",
            estimator_risks_csv(&report.estimates),
        ));
    }
    Ok(out)
}
