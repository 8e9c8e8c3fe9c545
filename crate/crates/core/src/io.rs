//! File formats: JSON matrices, CSV traces, beliefs, spectra and ensembles.

/// Serialize a dense matrix as a list of rows.
pub mod matrix_serde {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        (m.nrows(), m.ncols(), rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let (nrows, ncols, rows) = <(usize, usize, Vec<Vec<f64>>)>::deserialize(d)?;
        if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom(format!("expected {nrows}x{ncols} matrix")));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }
}

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::{GaussianBelief, Trace};
use crate::model::{ModeShape, ShapeSample};
use crate::sim::TrialOutcome;
use crate::spectral::{GroupStats, PsdEstimate};

/// Header line written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn line(&self) -> String {
        format!("# config_sha256={} seed={}", self.config_sha256, self.seed)
    }

    /// Parse the first line of a file written by this module.
    pub fn read(path: &Path) -> Result<Option<Self>> {
        let mut first = String::new();
        BufReader::new(File::open(path)?).read_line(&mut first)?;
        let Some(rest) = first.trim_end().strip_prefix("# ") else {
            return Ok(None);
        };
        let mut hash = None;
        let mut seed = None;
        for field in rest.split_whitespace() {
            if let Some(v) = field.strip_prefix("config_sha256=") {
                hash = Some(v.to_string());
            } else if let Some(v) = field.strip_prefix("seed=") {
                seed = v.parse().ok();
            }
        }
        Ok(hash.zip(seed).map(|(config_sha256, seed)| Self { config_sha256, seed }))
    }
}

fn writer(path: &Path, prov: Option<&Provenance>, header: &[String]) -> Result<csv::Writer<BufWriter<File>>> {
    let mut file = BufWriter::new(File::create(path)?);
    if let Some(p) = prov {
        writeln!(file, "{}", p.line())?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    Ok(w)
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?)
}

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn parse(field: &str, path: &Path, row: usize) -> Result<f64> {
    field.trim().parse().map_err(|_| {
        Error::invalid(
            format!("{}:{}", path.display(), row + 2),
            format!("not a number: {field:?}"),
        )
    })
}

// f64 Display prints the shortest string that parses back to the same bits
fn f(v: f64) -> String {
    format!("{v}")
}

/// `t,y,u`.
pub fn write_trace(path: &Path, trace: &Trace, prov: Option<&Provenance>) -> Result<()> {
    let mut w = writer(path, prov, &cols(&["t", "y", "u"]))?;
    for k in 0..trace.len() {
        w.write_record([f(trace.time(k)), f(trace.y[k]), f(trace.u[k])])?;
    }
    w.flush()?;
    Ok(())
}

/// Read `t,y,u`; the sample period is taken from the time column.
pub fn read_trace(path: &Path) -> Result<Trace> {
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut u = Vec::new();
    for (row, rec) in reader(path)?.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::invalid(
                format!("{}:{}", path.display(), row + 2),
                "expected columns t,y,u",
            ));
        }
        t.push(parse(&rec[0], path, row)?);
        y.push(parse(&rec[1], path, row)?);
        u.push(parse(&rec[2], path, row)?);
    }
    if t.len() < 2 {
        return Err(Error::invalid(path.display().to_string(), "need at least two samples"));
    }
    let t_s = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    let trace = Trace { t_s, t0: t[0], y, u };
    trace.validate()?;
    Ok(trace)
}

/// `t,x1..xn`.
pub fn write_states(path: &Path, t_s: f64, states: &[DVector<f64>], prov: Option<&Provenance>) -> Result<()> {
    let n = states.first().map_or(0, |s| s.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    let mut w = writer(path, prov, &header)?;
    for (k, x) in states.iter().enumerate() {
        let mut rec = vec![f(k as f64 * t_s)];
        rec.extend(x.iter().map(|v| f(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `t,x1..xn,sigma11,sigma12,…` with the upper triangle row by row.
pub fn write_beliefs(path: &Path, beliefs: &[GaussianBelief], prov: Option<&Provenance>) -> Result<()> {
    let n = beliefs.first().map_or(0, |b| b.n());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    for i in 1..=n {
        for j in i..=n {
            header.push(format!("sigma{i}{j}"));
        }
    }
    let mut w = writer(path, prov, &header)?;
    for b in beliefs {
        let mut rec = vec![f(b.t)];
        rec.extend(b.x.iter().map(|v| f(*v)));
        for i in 0..n {
            for j in i..n {
                rec.push(f(b.cov[(i, j)]));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `freq_hz,psd`.
pub fn write_psd(path: &Path, psd: &PsdEstimate, prov: Option<&Provenance>) -> Result<()> {
    let mut w = writer(path, prov, &cols(&["freq_hz", "psd"]))?;
    for (fr, v) in psd.freqs.iter().zip(&psd.values) {
        w.write_record([f(*fr), f(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// `magnitude,mean,std,n`.
pub fn write_stats(path: &Path, groups: &[GroupStats], prov: Option<&Provenance>) -> Result<()> {
    let mut w = writer(path, prov, &cols(&["magnitude", "mean", "std", "n"]))?;
    for g in groups {
        w.write_record([f(g.magnitude), f(g.mean), f(g.std), g.n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the ensemble export.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRow {
    pub trial: usize,
    pub p_applied: f64,
    pub p_est_mode1: f64,
    pub dv1_est: f64,
    pub dz1_est: f64,
    pub bound_dv1: f64,
}

impl From<&TrialOutcome> for EnsembleRow {
    fn from(t: &TrialOutcome) -> Self {
        let e = &t.estimate;
        // mode 1 always occupies states 0 (position) and 1 (velocity)
        Self {
            trial: t.trial,
            p_applied: t.p_applied,
            p_est_mode1: e.momenta[0],
            dv1_est: e.dx[1],
            dz1_est: e.dx[0],
            bound_dv1: e.bound[(1, 1)].sqrt(),
        }
    }
}

/// `trial,p_applied,p_est_mode1,dv1_est,dz1_est,bound_dv1`.
pub fn write_ensemble(path: &Path, rows: &[EnsembleRow], prov: Option<&Provenance>) -> Result<()> {
    let mut w = writer(
        path,
        prov,
        &cols(&["trial", "p_applied", "p_est_mode1", "dv1_est", "dz1_est", "bound_dv1"]),
    )?;
    for r in rows {
        w.write_record([
            r.trial.to_string(),
            f(r.p_applied),
            f(r.p_est_mode1),
            f(r.dv1_est),
            f(r.dz1_est),
            f(r.bound_dv1),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ensemble(path: &Path) -> Result<Vec<EnsembleRow>> {
    let mut out = Vec::new();
    for (row, rec) in reader(path)?.records().enumerate() {
        let rec = rec?;
        if rec.len() != 6 {
            return Err(Error::invalid(format!("{}:{}", path.display(), row + 2), "expected 6 columns"));
        }
        out.push(EnsembleRow {
            trial: parse(&rec[0], path, row)? as usize,
            p_applied: parse(&rec[1], path, row)?,
            p_est_mode1: parse(&rec[2], path, row)?,
            dv1_est: parse(&rec[3], path, row)?,
            dz1_est: parse(&rec[4], path, row)?,
            bound_dv1: parse(&rec[5], path, row)?,
        });
    }
    Ok(out)
}

/// Mode shape samples with header `x,y,z,phi,rho,dv`.
pub fn read_mode_shape(path: &Path) -> Result<ModeShape> {
    let mut samples = Vec::new();
    for (row, rec) in reader(path)?.records().enumerate() {
        let rec = rec?;
        if rec.len() != 6 {
            return Err(Error::invalid(
                format!("{}:{}", path.display(), row + 2),
                "expected columns x,y,z,phi,rho,dv",
            ));
        }
        let v: Vec<f64> = (0..6).map(|i| parse(&rec[i], path, row)).collect::<Result<_>>()?;
        samples.push(ShapeSample {
            x: v[0],
            y: v[1],
            z: v[2],
            phi: v[3],
            rho: v[4],
            dv: v[5],
        });
    }
    Ok(ModeShape { samples })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    writeln!(file)?;
    file.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
