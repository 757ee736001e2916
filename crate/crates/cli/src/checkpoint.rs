//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | offset     | size | content                                        |
//! |------------|------|------------------------------------------------|
//! | 0          | 8    | magic `AFLOWCKP`                               |
//! | 8          | 4    | format version (`u32`)                         |
//! | 12         | 4    | header length `L` (`u32`)                      |
//! | 16         | L    | header, UTF-8 JSON ([`CheckpointHeader`])      |
//! | 16+L       | …    | arrays in header order                         |
//! | end−32     | 32   | SHA-256 of every preceding byte                |
//!
//! Each array stores `points × dim × dim` complex entries as interleaved
//! IEEE-754 `f64` pairs `(re, im)`. The grid point index is outer, in the
//! enumeration order of `TorusGrid`; the matrix entry is inner, row-major.

use std::path::Path;

use aflow_core::flow::{FlowState, Formulation, MetricState, CONVENTIONS_ID};
use aflow_core::torus::{MatrixField, TorusGrid};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::output::write_atomic;
use crate::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"AFLOWCKP";
pub const FORMAT_VERSION: u32 = 1;
const TRAILER: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayInfo {
    pub name: String,
    pub points: usize,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub conventions: String,
    pub config_hash: String,
    pub t: f64,
    pub step: usize,
    pub n: usize,
    pub resolution: usize,
    pub active: Vec<usize>,
    pub period: f64,
    pub formulation: Formulation,
    pub norms_k: usize,
    pub arrays: Vec<ArrayInfo>,
}

/// A stored state: the density `Φ/(n−1)!` and the recovered metric `ω`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub density: Vec<Complex64>,
    pub metric: Vec<Complex64>,
}

impl Checkpoint {
    pub fn from_state(
        state: &FlowState,
        metric: &MetricState,
        config_hash: &str,
        step: usize,
        norms_k: usize,
    ) -> Self {
        let grid = state.grid();
        let info = |name: &str| ArrayInfo {
            name: name.into(),
            points: grid.len(),
            dim: grid.n(),
        };
        Self {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                conventions: CONVENTIONS_ID.into(),
                config_hash: config_hash.into(),
                t: state.t,
                step,
                n: grid.n(),
                resolution: grid.resolution(),
                active: grid.active().to_vec(),
                period: grid.period(),
                formulation: state.formulation,
                norms_k,
                arrays: vec![info("density"), info("metric")],
            },
            density: state.density.data().to_vec(),
            metric: metric.g.data().to_vec(),
        }
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        let h = &self.header;
        TorusGrid::with_period(h.n, h.resolution, &h.active, h.period).map_err(|e| CliError::Format(e.to_string()))
    }

    pub fn state(&self) -> Result<FlowState> {
        let grid = self.grid()?;
        let density = MatrixField::from_data(&grid, self.density.clone()).map_err(|e| CliError::Format(e.to_string()))?;
        let mut s = FlowState::new(density, self.header.formulation);
        s.t = self.header.t;
        Ok(s)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 16 * (self.density.len() + self.metric.len()) + TRAILER);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.density.iter().chain(&self.metric) {
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 + TRAILER || &bytes[..8] != MAGIC {
            return Err(CliError::Format("not an aflow checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CliError::Version {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        let (body, trailer) = bytes.split_at(bytes.len() - TRAILER);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(CliError::Format("checksum mismatch".into()));
        }
        let hlen = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
        let hend = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| CliError::Format("header overruns file".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&body[16..hend]).map_err(|e| CliError::Format(format!("header: {e}")))?;
        if header.format_version != version {
            return Err(CliError::Format("header version disagrees with preamble".into()));
        }
        if header.conventions != CONVENTIONS_ID {
            return Err(CliError::Format(format!(
                "conventions {:?} differ from {CONVENTIONS_ID:?}",
                header.conventions
            )));
        }
        let names: Vec<&str> = header.arrays.iter().map(|a| a.name.as_str()).collect();
        if names != ["density", "metric"] {
            return Err(CliError::Format(format!("unexpected arrays {names:?}")));
        }
        let mut values = body[hend..]
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                    f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                )
            });
        let expected: usize = header.arrays.iter().map(|a| a.points * a.dim * a.dim).sum();
        if body.len() - hend != 16 * expected {
            return Err(CliError::Format(format!(
                "payload holds {} bytes, header describes {}",
                body.len() - hend,
                16 * expected
            )));
        }
        let a0 = &header.arrays[0];
        let density: Vec<Complex64> = values.by_ref().take(a0.points * a0.dim * a0.dim).collect();
        let metric: Vec<Complex64> = values.collect();
        for a in &header.arrays {
            if a.dim != header.n {
                return Err(CliError::Format(format!("array {} has dim {}, n = {}", a.name, a.dim, header.n)));
            }
        }
        Ok(Self {
            header,
            density,
            metric,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
