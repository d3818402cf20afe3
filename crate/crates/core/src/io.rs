//! Sample files and run configuration.
//!
//! CSV layout: a header line `S,T,N`, one line of spatial coordinates, one
//! line of temporal coordinates, then `N` lines of `S*T` values each, with
//! value `(s, t)` at position `s*T + t`.
//!
//! BIN layout: the magic bytes `FDS1`, `S`, `T`, `N` as little-endian `u64`,
//! then little-endian `f64` spatial coordinates, temporal coordinates and
//! observation values in the CSV order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{default_block_length, BootstrapConfig, TestReport};
use crate::covariance::FunctionalSample;
use crate::error::{Error, Result};
use crate::grid::{AxisGrid, ProductGrid};
use crate::kernel::DEFAULT_MEMORY_BUDGET;
use crate::separable::ApproxChoice;
use crate::simulate::{Ma1Sites, SimConfig, SimKernelParams};
use crate::statistic::DEFAULT_BLOCK_SIZE;

const MAGIC: &[u8; 4] = b"FDS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    Csv,
    Bin,
}

impl SampleFormat {
    /// `.bin` means BIN, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("bin") => SampleFormat::Bin,
            _ => SampleFormat::Csv,
        }
    }
}

impl std::str::FromStr for SampleFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(SampleFormat::Csv),
            "bin" => Ok(SampleFormat::Bin),
            other => Err(Error::domain(format!("unknown sample format '{other}'"))),
        }
    }
}

pub fn read_sample(path: &Path, format: SampleFormat) -> Result<FunctionalSample> {
    match format {
        SampleFormat::Csv => parse_csv(&fs::read_to_string(path)?),
        SampleFormat::Bin => parse_bin(&fs::read(path)?),
    }
}

pub fn write_sample(path: &Path, sample: &FunctionalSample, format: SampleFormat) -> Result<()> {
    let bytes = match format {
        SampleFormat::Csv => to_csv(sample).into_bytes(),
        SampleFormat::Bin => to_bin(sample),
    };
    fs::write(path, bytes)?;
    Ok(())
}

fn join_values(out: &mut String, values: impl Iterator<Item = f64>) {
    for (i, v) in values.enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{v:.16e}").expect("writing to a String cannot fail");
    }
    out.push('\n');
}

pub fn to_csv(sample: &FunctionalSample) -> String {
    let g = sample.grid();
    let mut out = format!("{},{},{}\n", g.n_space(), g.n_time(), sample.len());
    join_values(&mut out, g.spatial.points().iter().copied());
    join_values(&mut out, g.temporal.points().iter().copied());
    for n in 0..sample.len() {
        join_values(&mut out, sample.observation(n).iter().copied());
    }
    out
}

fn parse_line(line: &str, lineno: usize, expected: usize, what: &str) -> Result<Vec<f64>> {
    let loc = || format!("line {lineno}");
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != expected {
        return Err(Error::parse(
            loc(),
            format!("{what} has {} values, expected {expected}", fields.len()),
        ));
    }
    fields
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let v: f64 = f.parse().map_err(|_| {
                Error::parse(
                    loc(),
                    format!("{what}: field {} ('{f}') is not a number", i + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    loc(),
                    format!("{what}: field {} is not finite", i + 1),
                ));
            }
            Ok(v)
        })
        .collect()
}

fn axis_at(points: Vec<f64>, location: String, what: &str) -> Result<AxisGrid> {
    AxisGrid::new(points).map_err(|e| Error::parse(location, format!("{what}: {e}")))
}

pub fn parse_csv(text: &str) -> Result<FunctionalSample> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::parse("end of file", format!("missing {what}")))
    };

    let (ln, header) = next("header line S,T,N")?;
    let counts: Vec<usize> = header
        .split(',')
        .map(|f| f.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(format!("line {ln}"), "header must be three counts S,T,N"))?;
    let [s, t, n] = counts[..] else {
        return Err(Error::parse(
            format!("line {ln}"),
            "header must be three counts S,T,N",
        ));
    };
    if s == 0 || t == 0 || n == 0 {
        return Err(Error::parse(
            format!("line {ln}"),
            "counts must be positive",
        ));
    }

    let (ln, line) = next("spatial coordinates")?;
    let spatial = axis_at(
        parse_line(line, ln, s, "spatial coordinates")?,
        format!("line {ln}"),
        "spatial coordinates",
    )?;
    let (ln, line) = next("temporal coordinates")?;
    let temporal = axis_at(
        parse_line(line, ln, t, "temporal coordinates")?,
        format!("line {ln}"),
        "temporal coordinates",
    )?;

    let d = s * t;
    let mut data = Vec::with_capacity(d * n);
    for k in 0..n {
        let (ln, line) = next(&format!("observation {} of {n}", k + 1))?;
        data.extend(parse_line(line, ln, d, &format!("observation {}", k + 1))?);
    }
    if let Ok((ln, _)) = next("") {
        return Err(Error::parse(
            format!("line {ln}"),
            format!("unexpected data after {n} observations"),
        ));
    }
    let grid = ProductGrid::new(spatial, temporal);
    FunctionalSample::from_matrix(grid, DMatrix::from_vec(d, n, data))
}

pub fn to_bin(sample: &FunctionalSample) -> Vec<u8> {
    let g = sample.grid();
    let mut out = Vec::with_capacity(28 + 8 * (g.n_space() + g.n_time() + sample.data().len()));
    out.extend_from_slice(MAGIC);
    for count in [g.n_space(), g.n_time(), sample.len()] {
        out.extend_from_slice(&(count as u64).to_le_bytes());
    }
    let values = g
        .spatial
        .points()
        .iter()
        .chain(g.temporal.points())
        .chain(sample.data().as_slice());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl Cursor<'_> {
    fn take(&mut self, len: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.offset < len {
            return Err(Error::parse(
                format!("byte offset {}", self.offset),
                format!("file ends inside {what}"),
            ));
        }
        let slice = &self.bytes[self.offset..self.offset + len];
        self.offset += len;
        Ok(slice)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let start = self.offset;
        let bytes = self.take(
            count.checked_mul(8).ok_or_else(|| {
                Error::parse(
                    format!("byte offset {start}"),
                    format!("{what} is too large"),
                )
            })?,
            what,
        )?;
        bytes
            .chunks_exact(8)
            .enumerate()
            .map(|(i, c)| {
                let v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::parse(
                        format!("byte offset {}", start + 8 * i),
                        format!("{what}: non-finite value"),
                    ))
                }
            })
            .collect()
    }
}

pub fn parse_bin(bytes: &[u8]) -> Result<FunctionalSample> {
    let mut cur = Cursor { bytes, offset: 0 };
    if cur.take(4, "the magic bytes")? != MAGIC {
        return Err(Error::parse("byte offset 0", "missing FDS1 magic bytes"));
    }
    let mut count = |what: &str| -> Result<usize> {
        let at = cur.offset;
        let v = cur.u64(what)?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::parse(format!("byte offset {at}"), format!("invalid {what} {v}")))
    };
    let s = count("spatial count")?;
    let t = count("temporal count")?;
    let n = count("sample size")?;
    let d = s
        .checked_mul(t)
        .filter(|d| d.checked_mul(n).is_some())
        .ok_or_else(|| Error::parse("byte offset 4", "counts overflow"))?;

    let at = cur.offset;
    let spatial = axis_at(
        cur.f64s(s, "spatial coordinates")?,
        format!("byte offset {at}"),
        "spatial coordinates",
    )?;
    let at = cur.offset;
    let temporal = axis_at(
        cur.f64s(t, "temporal coordinates")?,
        format!("byte offset {at}"),
        "temporal coordinates",
    )?;
    let values = cur.f64s(d * n, "observation values")?;
    if cur.offset != bytes.len() {
        return Err(Error::parse(
            format!("byte offset {}", cur.offset),
            format!("{} trailing bytes", bytes.len() - cur.offset),
        ));
    }
    FunctionalSample::from_matrix(
        ProductGrid::new(spatial, temporal),
        DMatrix::from_vec(d, n, values),
    )
}

/// Pretty-printed JSON with a trailing newline.
pub fn report_to_json(report: &TestReport) -> Result<String> {
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    Ok(json)
}

fn default_approx() -> ApproxChoice {
    ApproxChoice::Trace
}
fn default_replicates() -> usize {
    400
}
fn default_alpha() -> f64 {
    0.05
}
fn default_block_size() -> usize {
    DEFAULT_BLOCK_SIZE
}
fn default_memory_budget() -> u64 {
    DEFAULT_MEMORY_BUDGET
}
fn default_time() -> usize {
    50
}
fn default_runs() -> usize {
    1000
}
fn default_true() -> bool {
    true
}

/// Simulation settings of a [`RunConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default)]
    pub params: SimKernelParams,
    pub n_space: usize,
    #[serde(default = "default_time")]
    pub n_time: usize,
    pub n: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_true")]
    pub paper_grid: bool,
    #[serde(default)]
    pub sites: Ma1Sites,
}

/// Everything needed to run a test or an experiment, as read from JSON.
/// Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_approx")]
    pub approx: ApproxChoice,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Defaults to [`default_block_length`] of the sample size.
    #[serde(default)]
    pub block_length: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    #[serde(default = "default_memory_budget")]
    pub memory_budget: u64,
    #[serde(default)]
    pub simulation: Option<SimulationSection>,
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            Error::parse(
                format!("line {} column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// The bootstrap settings for a sample of size `n`.
    pub fn bootstrap_config(&self, n: usize) -> BootstrapConfig {
        BootstrapConfig {
            replicates: self.replicates,
            block_length: self.block_length.unwrap_or_else(|| default_block_length(n)),
            alpha: self.alpha,
            seed: self.seed,
            approx: self.approx,
            block_size: self.block_size,
            memory_budget: self.memory_budget,
        }
    }

    pub fn sim_config(&self) -> Option<SimConfig> {
        self.simulation.as_ref().map(|sim| SimConfig {
            params: sim.params,
            n_space: sim.n_space,
            n_time: sim.n_time,
            n: sim.n,
            runs: sim.runs,
            bootstrap: self.bootstrap_config(sim.n),
            seed: self.seed,
            paper_grid: sim.paper_grid,
            sites: sim.sites,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.simulation.as_ref().map_or(usize::MAX, |s| s.n);
        let boot = self.bootstrap_config(n.min(1 << 20));
        boot.validate()?;
        if let Some(sim) = self.sim_config() {
            sim.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(s: usize, t: usize, n: usize) -> FunctionalSample {
        let g = ProductGrid::new(
            AxisGrid::fractional(s, s).unwrap(),
            AxisGrid::new((0..t).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap(),
        );
        let obs = (0..n)
            .map(|k| {
                (0..s * t)
                    .map(|i| ((i * 7 + k * 13) as f64).sin() / 3.0)
                    .collect()
            })
            .collect();
        FunctionalSample::new(g, obs).unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let x = sample(3, 4, 5);
        let back = parse_csv(&to_csv(&x)).unwrap();
        assert_eq!(back.grid(), x.grid());
        for (a, b) in back.data().iter().zip(x.data().iter()) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn bin_round_trip_is_bit_exact() {
        let x = sample(2, 5, 3);
        let back = parse_bin(&to_bin(&x)).unwrap();
        assert_eq!(back.grid(), x.grid());
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn minimal_fixture() {
        let x = parse_csv("1,1,2\n0.5\n0.25\n1.5\n-2\n").unwrap();
        assert_eq!(x.len(), 2);
        assert_eq!(x.observation(0), &[1.5]);
        assert_eq!(x.observation(1), &[-2.0]);
        assert_eq!(x.grid().spatial.points(), &[0.5]);
    }

    #[test]
    fn short_row_is_reported() {
        let text = "2,2,2\n0,1\n0,1\n1,2,3,4\n1,2,3\n";
        match parse_csv(text) {
            Err(Error::Parse { location, message }) => {
                assert_eq!(location, "line 5");
                assert!(message.contains("observation 2"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_errors() {
        let cases = [
            ("", "end of file"),
            ("2,2\n", "line 1"),
            ("1,1,1\n0\n0\nnan\n", "line 4"),
            ("1,1,1\n0\n0\nabc\n", "line 4"),
            ("1,2,1\n0\n1,0\n1,1\n", "line 3"),
            ("1,1,1\n0\n0\n1\n2\n", "line 5"),
            ("1,1,2\n0\n0\n1\n", "end of file"),
        ];
        for (text, loc) in cases {
            match parse_csv(text) {
                Err(Error::Parse { location, .. }) => assert_eq!(location, loc, "{text:?}"),
                other => panic!("{text:?}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn bin_errors() {
        let good = to_bin(&sample(2, 2, 2));
        assert!(matches!(parse_bin(b"FDS2"), Err(Error::Parse { .. })));
        match parse_bin(&good[..good.len() - 3]) {
            Err(Error::Parse { location, .. }) => assert!(location.starts_with("byte offset")),
            other => panic!("unexpected {other:?}"),
        }
        let mut extra = good.clone();
        extra.push(0);
        assert!(matches!(parse_bin(&extra), Err(Error::Parse { .. })));
        let mut inf = good.clone();
        let last = inf.len() - 8;
        inf[last..].copy_from_slice(&f64::INFINITY.to_le_bytes());
        match parse_bin(&inf) {
            Err(Error::Parse { location, .. }) => {
                assert_eq!(location, format!("byte offset {last}"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("septest-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let x = sample(2, 3, 4);
        for (name, fmt) in [("s.csv", SampleFormat::Csv), ("s.bin", SampleFormat::Bin)] {
            let path = dir.join(name);
            assert_eq!(SampleFormat::from_path(&path), fmt);
            write_sample(&path, &x, fmt).unwrap();
            let back = read_sample(&path, fmt).unwrap();
            assert_eq!(back.len(), 4);
        }
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn run_config_defaults_and_validation() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.replicates, 400);
        assert_eq!(cfg.bootstrap_config(100).block_length, 2);
        assert!(cfg.sim_config().is_none());

        let cfg = RunConfig::from_json(
            r#"{"approx": {"kind": "product", "psi": "cosine"}, "seed": 3,
                "simulation": {"n_space": 4, "n": 100, "params": {"a": 3, "b": 2, "c": 1}}}"#,
        )
        .unwrap();
        let sim = cfg.sim_config().unwrap();
        assert_eq!(sim.n_time, 50);
        assert_eq!(sim.bootstrap.block_length, 2);
        assert_eq!(sim.params.c, 1.0);

        assert!(matches!(
            RunConfig::from_json(r#"{"replicate": 3}"#),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"alpha": 1.5}"#),
            Err(Error::Domain(_))
        ));
        assert!(RunConfig::from_json(r#"{"simulation": {"n_space": 1, "n": 10}}"#).is_err());
    }
}
