//! On-disk artifacts: datasets as CSV plus a metadata sidecar, and JSON
//! checkpoints for black boxes, surrogate energies and interpreters.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use soint_core::blackbox::{BlackBoxModel, EnergyNet, SpenBlackBox};
use soint_core::diffnet::Net;
use soint_core::interpreter::Interpreter;
use soint_core::synth::{Dataset, DatasetSpec, SyntheticEnergy, GROUND_TRUTH_FEATURES};

/// Sidecar written next to every dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub energy: SyntheticEnergy,
    pub n: usize,
    pub d: usize,
    pub num_samples: usize,
    pub seed: u64,
    pub ground_truth_features: Vec<usize>,
}

impl DatasetMeta {
    pub fn from_spec(spec: &DatasetSpec, data: &Dataset) -> Self {
        DatasetMeta {
            energy: spec.energy,
            n: data.n,
            d: data.d,
            num_samples: data.len(),
            seed: spec.seed,
            ground_truth_features: data.ground_truth_features.clone(),
        }
    }
}

/// `d.csv` -> `d.<suffix>`; files without an extension get the suffix appended.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn meta_path(csv: &Path) -> PathBuf {
    sibling(csv, "meta.json")
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    let header: Vec<String> =
        (1..=data.n).map(|i| format!("x{i}")).chain((1..=data.d).map(|i| format!("y{i}"))).collect();
    w.write_record(&header)?;
    for (x, y) in data.inputs.iter().zip(&data.outputs) {
        let row: Vec<String> = x.iter().map(|v| v.to_string()).chain(y.iter().map(|v| v.to_string())).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset CSV. Ground-truth features come from the sidecar when it
/// exists and default to the synthetic ground truth otherwise.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header = r.headers()?.clone();
    let n = header.iter().take_while(|h| h.starts_with('x')).count();
    let d = header.len() - n;
    for (i, h) in header.iter().enumerate() {
        let want = if i < n { format!("x{}", i + 1) } else { format!("y{}", i - n + 1) };
        if h != want {
            bail!("{}: unexpected column `{h}`, expected `{want}`", path.display());
        }
    }
    if n == 0 || d == 0 {
        bail!("{}: need at least one x and one y column", path.display());
    }
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let x = rec
            .iter()
            .take(n)
            .map(|v| v.parse::<f64>().map_err(|e| anyhow!("{}:{row}: {e}", path.display())))
            .collect::<Result<Vec<_>>>()?;
        let y = rec
            .iter()
            .skip(n)
            .map(|v| match v {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(anyhow!("{}:{row}: output `{other}` is not binary", path.display())),
            })
            .collect::<Result<Vec<_>>>()?;
        inputs.push(x);
        outputs.push(y);
    }
    let meta = meta_path(path);
    let ground_truth_features = if meta.exists() {
        let m: DatasetMeta = read_json(&meta)?;
        if m.n != n || m.d != d {
            bail!("{} does not describe {}", meta.display(), path.display());
        }
        m.ground_truth_features
    } else {
        GROUND_TRUTH_FEATURES.to_vec()
    };
    Ok(Dataset { n, d, inputs, outputs, ground_truth_features })
}

pub fn read_dataset_meta(csv: &Path) -> Result<Option<DatasetMeta>> {
    let meta = meta_path(csv);
    if meta.exists() {
        Ok(Some(read_json(&meta)?))
    } else {
        Ok(None)
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    let mut f = fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("malformed JSON in {}", path.display()))
}

fn checked_net(net: Net) -> Result<Net> {
    Ok(Net::from_params(net.spec, net.params)?)
}

fn checked_energy(e: EnergyNet) -> Result<EnergyNet> {
    Ok(EnergyNet::new(checked_net(e.net)?, e.n, e.d)?)
}

pub fn read_blackbox(path: &Path) -> Result<BlackBoxModel> {
    Ok(match read_json::<BlackBoxModel>(path)? {
        BlackBoxModel::Oracle(o) => {
            BlackBoxModel::Oracle(soint_core::blackbox::OracleBlackBox::new(o.energy, o.n)?)
        }
        BlackBoxModel::Spen(s) => BlackBoxModel::Spen(SpenBlackBox { energy: checked_energy(s.energy)? }),
    })
}

pub fn read_energy(path: &Path) -> Result<EnergyNet> {
    checked_energy(read_json(path)?)
}

pub fn read_interpreter(path: &Path) -> Result<Interpreter> {
    let i: Interpreter = read_json(path)?;
    Ok(Interpreter::new(checked_net(i.w_net)?, i.k, i.tau, i.target_index)?)
}
