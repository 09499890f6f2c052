//! On-disk formats.
//!
//! * MDP documents: JSON `{S, A, H, rho: [S], P: [H][S][A][S], rewards: [m][H][S][A]}`.
//! * Occupancy models: the same shape with `P` holding the estimated kernels
//!   (one per estimated step) plus `xi` and `counts: [..][S][A]`.
//! * Datasets: one `h,s,a,s_next` record per line, zero-based, with
//!   `s_next = -1` on final-step records.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{OccupancyModel, ThresholdedKernel};
use crate::mdp::{RewardFunction, TabularMdp};
use crate::offline::{Transition, TransitionDataset};

type Nested4 = Vec<Vec<Vec<Vec<f64>>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub rho: Vec<f64>,
    #[serde(rename = "P")]
    pub kernel: Nested4,
    #[serde(default)]
    pub rewards: Nested4,
}

fn nest4(a: &Array4<f64>) -> Nested4 {
    a.outer_iter()
        .map(|x| x.outer_iter().map(|y| y.outer_iter().map(|z| z.to_vec()).collect()).collect())
        .collect()
}

fn nest3(a: &Array3<f64>) -> Vec<Vec<Vec<f64>>> {
    a.outer_iter()
        .map(|x| x.outer_iter().map(|y| y.to_vec()).collect())
        .collect()
}

fn flatten4(v: &Nested4, shape: (usize, usize, usize, usize), what: &str) -> Result<Array4<f64>> {
    let flat: Vec<f64> = v.iter().flatten().flatten().flatten().copied().collect();
    let ok = v.len() == shape.0
        && v.iter().all(|x| {
            x.len() == shape.1 && x.iter().all(|y| y.len() == shape.2 && y.iter().all(|z| z.len() == shape.3))
        });
    if !ok {
        return Err(Error::Parse(format!("{what} does not have shape {shape:?}")));
    }
    Array4::from_shape_vec(shape, flat).map_err(|e| Error::Parse(e.to_string()))
}

fn flatten3(v: &[Vec<Vec<f64>>], shape: (usize, usize, usize), what: &str) -> Result<Array3<f64>> {
    let ok = v.len() == shape.0 && v.iter().all(|x| x.len() == shape.1 && x.iter().all(|y| y.len() == shape.2));
    if !ok {
        return Err(Error::Parse(format!("{what} does not have shape {shape:?}")));
    }
    let flat: Vec<f64> = v.iter().flatten().flatten().copied().collect();
    Array3::from_shape_vec(shape, flat).map_err(|e| Error::Parse(e.to_string()))
}

impl MdpDocument {
    pub fn from_mdp(mdp: &TabularMdp, rewards: &[RewardFunction]) -> Self {
        MdpDocument {
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            horizon: mdp.horizon(),
            rho: mdp.init_dist().to_vec(),
            kernel: nest4(mdp.kernel()),
            rewards: rewards.iter().map(|r| nest3(r.table())).collect(),
        }
    }

    /// Rebuilds and re-validates the MDP and its rewards.
    pub fn into_parts(self) -> Result<(TabularMdp, Vec<RewardFunction>)> {
        let (ns, na, h) = (self.num_states, self.num_actions, self.horizon);
        let kernel = flatten4(&self.kernel, (h, ns, na, ns), "P")?;
        let mdp = TabularMdp::new(kernel, Array1::from(self.rho))?;
        let rewards = self
            .rewards
            .iter()
            .map(|r| RewardFunction::new(flatten3(r, (h, ns, na), "reward")?))
            .collect::<Result<Vec<_>>>()?;
        Ok((mdp, rewards))
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_mdp(path: &Path) -> Result<(TabularMdp, Vec<RewardFunction>)> {
    read_json::<MdpDocument>(path)?.into_parts()
}

pub fn save_mdp(path: &Path, mdp: &TabularMdp, rewards: &[RewardFunction]) -> Result<()> {
    write_json(path, &MdpDocument::from_mdp(mdp, rewards))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub rho: Vec<f64>,
    #[serde(rename = "P")]
    pub kernel: Nested4,
    pub xi: f64,
    pub counts: Vec<Vec<Vec<u64>>>,
}

impl ModelDocument {
    pub fn from_model(model: &OccupancyModel) -> Self {
        ModelDocument {
            num_states: model.num_states(),
            num_actions: model.num_actions(),
            horizon: model.horizon(),
            rho: model.rho_hat().to_vec(),
            kernel: model.kernels().iter().map(|k| nest3(k.rows())).collect(),
            xi: model.xi(),
            counts: model
                .kernels()
                .iter()
                .map(|k| k.counts().outer_iter().map(|r| r.to_vec()).collect())
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<OccupancyModel> {
        let (ns, na) = (self.num_states, self.num_actions);
        if self.kernel.len() != self.counts.len() {
            return Err(Error::Parse("P and counts cover different steps".into()));
        }
        let kernels = self
            .kernel
            .iter()
            .zip(&self.counts)
            .map(|(rows, counts)| {
                let rows = flatten3(rows, (ns, na, ns), "P")?;
                if counts.len() != ns || counts.iter().any(|c| c.len() != na) {
                    return Err(Error::Parse("counts have the wrong shape".into()));
                }
                let counts = Array2::from_shape_vec((ns, na), counts.iter().flatten().copied().collect())
                    .map_err(|e| Error::Parse(e.to_string()))?;
                ThresholdedKernel::from_parts(rows, counts, self.xi)
            })
            .collect::<Result<Vec<_>>>()?;
        OccupancyModel::from_parts(self.horizon, na, Array1::from(self.rho), kernels, self.xi)
    }
}

pub fn save_model(path: &Path, model: &OccupancyModel) -> Result<()> {
    write_json(path, &ModelDocument::from_model(model))
}

pub fn load_model(path: &Path) -> Result<OccupancyModel> {
    read_json::<ModelDocument>(path)?.into_model()
}

pub fn write_dataset<W: Write>(mut out: W, dataset: &TransitionDataset) -> std::io::Result<()> {
    for h in 0..dataset.horizon() {
        for r in dataset.records(h) {
            let next = r.next.map_or(-1, |n| n as i64);
            writeln!(out, "{h},{},{},{next}", r.state, r.action)?;
        }
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(
    input: R,
    horizon: usize,
    num_states: usize,
    num_actions: usize,
) -> Result<TransitionDataset> {
    let mut data = TransitionDataset::new(horizon, num_states, num_actions);
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<i64> = line
            .split(',')
            .map(|f| f.trim().parse::<i64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        let [h, s, a, next] = fields[..] else {
            return Err(Error::Parse(format!("line {}: expected 4 fields", lineno + 1)));
        };
        if h < 0 || s < 0 || a < 0 || next < -1 {
            return Err(Error::Parse(format!("line {}: negative index", lineno + 1)));
        }
        let record = Transition {
            state: s as usize,
            action: a as usize,
            next: (next >= 0).then_some(next as usize),
        };
        data.push(h as usize, record)?;
    }
    Ok(data)
}

pub fn save_dataset(path: &Path, dataset: &TransitionDataset) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_dataset(&mut out, dataset).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path, horizon: usize, num_states: usize, num_actions: usize) -> Result<TransitionDataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), horizon, num_states, num_actions)
}
