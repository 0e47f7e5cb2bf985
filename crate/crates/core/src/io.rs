//! JSON documents exchanged by the command-line tool. Matrices are stored as
//! `{rows, cols, data}` with `data` in row-major order; see `docs/schema.md`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::{AdmmOutcome, AdmmStatus, KktReport, OacCode};
use crate::model::{ChannelRealization, NetworkTopology, PlantModel};
use crate::simulate::ClosedLoopSystem;
use crate::synthesis::{SynthesisResult, SynthesisStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixDoc {
    fn from(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|ij| m[ij])
            .collect();
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl MatrixDoc {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch(format!(
                "matrix document declares {}x{} but holds {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantDoc {
    pub a: MatrixDoc,
    pub b: MatrixDoc,
    pub c: MatrixDoc,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    0.1
}

impl From<&PlantModel> for PlantDoc {
    fn from(p: &PlantModel) -> Self {
        Self {
            a: p.a().into(),
            b: p.b().into(),
            c: p.c().into(),
            delta: p.delta(),
        }
    }
}

impl PlantDoc {
    pub fn to_model(&self) -> Result<PlantModel> {
        PlantModel::new(
            self.a.to_matrix()?,
            self.b.to_matrix()?,
            self.c.to_matrix()?,
            self.delta,
        )
    }
}

/// Edges are `[actuator, sensor]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDoc {
    pub actuators: usize,
    pub sensors: usize,
    pub edges: Vec<[usize; 2]>,
}

impl From<&NetworkTopology> for TopologyDoc {
    fn from(t: &NetworkTopology) -> Self {
        Self {
            actuators: t.m(),
            sensors: t.p(),
            edges: t.edges().map(|(i, j)| [i, j]).collect(),
        }
    }
}

impl TopologyDoc {
    pub fn to_model(&self) -> Result<NetworkTopology> {
        NetworkTopology::new(self.actuators, self.sensors, self.edges.iter().map(|e| (e[0], e[1])))
    }
}

/// `gains[i][j]` is `h_ij`, or `null` where no link exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDoc {
    pub sigma2: f64,
    pub gains: Vec<Vec<Option<f64>>>,
}

impl From<&ChannelRealization> for ChannelDoc {
    fn from(h: &ChannelRealization) -> Self {
        let gains = (0..h.m()).map(|i| (0..h.p()).map(|j| h.gain(i, j)).collect()).collect();
        Self {
            sigma2: h.sigma2(),
            gains,
        }
    }
}

impl ChannelDoc {
    pub fn to_model(&self) -> Result<ChannelRealization> {
        let m = self.gains.len();
        let p = self.gains.first().map_or(0, Vec::len);
        if self.gains.iter().any(|row| row.len() != p) {
            return Err(Error::DimensionMismatch("channel rows have different lengths".into()));
        }
        ChannelRealization::new(m, p, self.gains.concat(), self.sigma2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisDoc {
    pub gain: MatrixDoc,
    pub gamma: f64,
    pub certificate: MatrixDoc,
    pub converged: bool,
    pub outer_iterations: usize,
    pub gamma_history: Vec<f64>,
    pub closed_loop_spectral_radius: f64,
}

impl SynthesisDoc {
    pub fn new(result: &SynthesisResult, closed_loop_spectral_radius: f64) -> Self {
        Self {
            gain: (&result.gain).into(),
            gamma: result.gamma,
            certificate: (&result.x).into(),
            converged: result.status == SynthesisStatus::Converged,
            outer_iterations: result.outer_iterations,
            gamma_history: result.gamma_history.clone(),
            closed_loop_spectral_radius,
        }
    }
}

/// Either a synthesis result or a bare matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainDoc {
    Synthesis(Box<SynthesisDoc>),
    Matrix(MatrixDoc),
}

impl GainDoc {
    pub fn gain(&self) -> Result<DMatrix<f64>> {
        match self {
            GainDoc::Synthesis(s) => s.gain.to_matrix(),
            GainDoc::Matrix(m) => m.to_matrix(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeDoc {
    pub precoders: MatrixDoc,
    pub decoders: MatrixDoc,
    pub budgets: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub primal_residual: f64,
    pub kkt: KktReport,
}

impl CodeDoc {
    pub fn new(outcome: &AdmmOutcome, budgets: &[f64]) -> Self {
        Self {
            precoders: outcome.code.precoders().into(),
            decoders: outcome.code.decoders().into(),
            budgets: budgets.to_vec(),
            converged: outcome.status == AdmmStatus::Converged,
            iterations: outcome.iterations,
            primal_residual: outcome.primal_residual(),
            kkt: outcome.kkt.clone(),
        }
    }

    pub fn to_code(&self) -> Result<OacCode> {
        OacCode::new(self.precoders.to_matrix()?, self.decoders.to_matrix()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDoc {
    pub a_hat: MatrixDoc,
    pub b: MatrixDoc,
    pub decoders: MatrixDoc,
    pub sigma2: f64,
}

impl From<&ClosedLoopSystem> for SystemDoc {
    fn from(s: &ClosedLoopSystem) -> Self {
        Self {
            a_hat: s.a_hat().into(),
            b: s.b().into(),
            decoders: s.decoders().into(),
            sigma2: s.sigma2(),
        }
    }
}

impl SystemDoc {
    pub fn to_model(&self) -> Result<ClosedLoopSystem> {
        ClosedLoopSystem::new(
            self.a_hat.to_matrix()?,
            self.b.to_matrix()?,
            self.decoders.to_matrix()?,
            self.sigma2,
        )
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
