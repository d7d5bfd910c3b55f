//! File formats for signals and ground truth.
//!
//! A signal is a CSV with header `region_0,...,region_{M-1}` and one row per
//! time step, plus a JSON sidecar `{M, T, K, dt, conditions, seed}` whose
//! `conditions` array holds one-based labels.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{ConditionTrack, CouplingSet, HyperParams, Matrix, ObservedSignal};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSidecar {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub dt: f64,
    pub conditions: Vec<usize>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_config: Option<serde_json::Value>,
}

impl SignalSidecar {
    pub fn for_signal(signal: &ObservedSignal, k: usize, seed: u64) -> Self {
        Self {
            m: signal.nodes(),
            t: signal.len(),
            k,
            dt: signal.dt,
            conditions: signal.track.one_based(),
            seed,
            generator: None,
            generator_config: None,
        }
    }
}

pub fn write_signal_csv(path: &Path, signal: &ObservedSignal) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = (0..signal.nodes()).map(|i| format!("region_{i}")).collect();
    w.write_record(&header)?;
    for t in 0..signal.len() {
        w.write_record(signal.y.column(t).iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a signal CSV and its sidecar.
pub fn read_signal(
    csv_path: &Path,
    sidecar_path: &Path,
) -> Result<(ObservedSignal, SignalSidecar)> {
    let sidecar: SignalSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path)?)?;
    let mut rdr = csv::Reader::from_path(csv_path)?;
    let header = rdr.headers()?.clone();
    for (i, h) in header.iter().enumerate() {
        if h != format!("region_{i}") {
            return Err(Error::Format(format!(
                "unexpected column header {h:?} at position {i}"
            )));
        }
    }
    let m = header.len();
    let mut cols = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != m {
            return Err(Error::Format("ragged signal row".into()));
        }
        for v in rec.iter() {
            cols.push(
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad number {v:?}: {e}")))?,
            );
        }
    }
    let t = cols.len() / m.max(1);
    if sidecar.m != m || sidecar.t != t || sidecar.conditions.len() != t {
        return Err(Error::Format(format!(
            "sidecar declares M={}, T={}, {} conditions but CSV holds M={m}, T={t}",
            sidecar.m,
            sidecar.t,
            sidecar.conditions.len()
        )));
    }
    let c = sidecar.conditions.iter().copied().max().unwrap_or(1);
    let track = ConditionTrack::from_one_based(&sidecar.conditions, c)?;
    let y = Matrix::from_column_slice(m, t, &cols);
    Ok((
        ObservedSignal {
            y,
            dt: sidecar.dt,
            track,
        },
        sidecar,
    ))
}

pub fn write_signal(
    dir: &Path,
    stem: &str,
    signal: &ObservedSignal,
    sidecar: &SignalSidecar,
) -> Result<()> {
    write_signal_csv(&dir.join(format!("{stem}.csv")), signal)?;
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(sidecar)?,
    )?;
    Ok(())
}

/// Ground-truth parameters with flat row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthManifest {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "C")]
    pub c: usize,
    /// C*M*M values, condition-major then row-major.
    pub coupling: Vec<f64>,
    pub alpha: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    /// M*T latent values, row-major, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<Vec<f64>>,
}

impl TruthManifest {
    pub fn new(coupling: &CouplingSet, hyper: &HyperParams, latent: Option<&Matrix>) -> Self {
        Self {
            m: coupling.nodes(),
            c: coupling.conditions(),
            coupling: coupling.to_flat(),
            alpha: hyper.alpha.clone(),
            q: hyper.q.clone(),
            r: hyper.r.clone(),
            latent: latent.map(|x| x.transpose().as_slice().to_vec()),
        }
    }

    pub fn coupling_set(&self) -> Result<CouplingSet> {
        CouplingSet::from_flat(self.c, self.m, &self.coupling)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_dataset, KernelShape, MdsModel, ModelConfig};
    use crate::rng::seeded;

    #[test]
    fn signal_files_round_trip() {
        let model = MdsModel::new(
            ModelConfig {
                c: 2,
                ..ModelConfig::new(3, 20, 4)
            },
            KernelShape::default(),
        )
        .unwrap();
        let ds = sample_dataset(&model, &mut seeded(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let side = SignalSidecar::for_signal(&ds.signal, 4, 3);
        write_signal(dir.path(), "subject", &ds.signal, &side).unwrap();
        let header = fs::read_to_string(dir.path().join("subject.csv")).unwrap();
        assert!(header.starts_with("region_0,region_1,region_2\n"));
        let (back, side2) = read_signal(
            &dir.path().join("subject.csv"),
            &dir.path().join("subject.json"),
        )
        .unwrap();
        assert_eq!(back.y, ds.signal.y);
        assert_eq!(side, side2);
        assert!(side2.conditions.iter().all(|c| (1..=2).contains(c)));
    }

    #[test]
    fn truth_manifest_is_row_major() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let hyper = HyperParams {
            alpha: vec![0.0, 0.1],
            q: vec![1.0, 1.0],
            r: vec![0.5, 0.5],
        };
        let man = TruthManifest::new(&CouplingSet::single(a.clone()), &hyper, None);
        assert_eq!(man.coupling, vec![1.0, 2.0, 3.0, 4.0]);
        let json = serde_json::to_string(&man).unwrap();
        let back: TruthManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back.coupling_set().unwrap().matrices[0], a);
    }
}
