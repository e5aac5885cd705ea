//! Model bundle: a directory with a JSON manifest and one `MHX1` file per
//! matrix.
//!
//! Required for encoding: `anchors_{t}.mhx`, `r_{k}.mhx`, `u1f_{k}.mhx`,
//! `u2f_{k}.mhx`. Learned training codes are stored as `codes_{k}.mhc1`.
//! The remaining variables (`s`, `b`, `u1b`, `u2b`, `p`, `t`) are optional
//! and only needed for diagnostics. `k` and `t` are 1-based.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::codec::{pack, Encoder, LengthEncoder, PackedCodes};
use crate::error::{Error, Result};
use crate::io::{read_codes, read_matrix, write_atomic, write_codes, write_matrix};
use crate::kernel::{AnchorSet, KernelModel, ModalityKernel};
use crate::model::{HyperParams, LengthState, Modality, ModelState};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub lengths: Vec<usize>,
    pub classes: usize,
    pub anchors: usize,
    pub samples: usize,
    pub dims: [usize; 2],
    pub sigma: [f64; 2],
    pub anchor_indices: [Vec<usize>; 2],
    pub hyperparams: HyperParams,
    pub seed: u64,
    pub diagnostics: bool,
}

/// A bundle read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub manifest: Manifest,
    pub encoder: Encoder,
    /// Packed training codes `B^k`, one entry per length.
    pub learned_codes: Vec<PackedCodes>,
    /// Full state, when the bundle was saved with diagnostics.
    pub state: Option<ModelState>,
}

fn file(dir: &Path, stem: &str, k: usize) -> PathBuf {
    dir.join(format!("{stem}_{k}.mhx"))
}

fn codes_file(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("codes_{k}.mhc1"))
}

/// Saves everything, including the diagnostic variables.
pub fn save_model(dir: impl AsRef<Path>, state: &ModelState, kernel: &KernelModel, hp: &HyperParams) -> Result<()> {
    save_model_with(dir, state, kernel, hp, true)
}

pub fn save_model_with(
    dir: impl AsRef<Path>,
    state: &ModelState,
    kernel: &KernelModel,
    hp: &HyperParams,
    diagnostics: bool,
) -> Result<()> {
    let dir = dir.as_ref();
    hp.validate()?;
    if state.lengths.len() != hp.num_lengths() {
        return Err(Error::DimensionMismatch {
            symbol: "number of lengths".into(),
            expected: hp.num_lengths().to_string(),
            actual: state.lengths.len().to_string(),
        });
    }
    // Shapes are checked by the encoder constructor.
    Encoder::from_state(kernel.clone(), state)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let first = &state.lengths[0];
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        lengths: hp.lengths.clone(),
        classes: first.p.nrows(),
        anchors: kernel.anchors(),
        samples: first.s.ncols(),
        dims: [kernel.modalities[0].anchors.dim(), kernel.modalities[1].anchors.dim()],
        sigma: [kernel.modalities[0].sigma, kernel.modalities[1].sigma],
        anchor_indices: [
            kernel.modalities[0].anchors.indices.clone(),
            kernel.modalities[1].anchors.indices.clone(),
        ],
        hyperparams: hp.clone(),
        seed: hp.seed,
        diagnostics,
    };

    for t in Modality::BOTH {
        write_matrix(file(dir, "anchors", t.number()), &kernel.modality(t).anchors.points)?;
    }
    for (k0, ls) in state.lengths.iter().enumerate() {
        let k = k0 + 1;
        write_matrix(file(dir, "r", k), &ls.r)?;
        write_matrix(file(dir, "u1f", k), &ls.u_forward[0])?;
        write_matrix(file(dir, "u2f", k), &ls.u_forward[1])?;
        write_codes(codes_file(dir, k), &pack(&ls.b)?)?;
        if diagnostics {
            write_matrix(file(dir, "s", k), &ls.s)?;
            write_matrix(file(dir, "b", k), &ls.b)?;
            write_matrix(file(dir, "u1b", k), &ls.u_backward[0])?;
            write_matrix(file(dir, "u2b", k), &ls.u_backward[1])?;
            write_matrix(file(dir, "p", k), &ls.p)?;
        }
    }
    if diagnostics {
        for (k0, t) in state.chain.iter().enumerate() {
            write_matrix(file(dir, "t", k0 + 1), t)?;
        }
    }
    // Manifest last: a bundle without one is incomplete.
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&dir.join(MANIFEST), &json)
}

fn load(path: PathBuf, what: String, shape: (usize, usize)) -> Result<DMatrix<f64>> {
    if !path.is_file() {
        return Err(Error::MissingFile { path, what });
    }
    let m = read_matrix(&path)?;
    if m.shape() != shape {
        return Err(Error::ShapeMismatch {
            path,
            expected: shape,
            actual: m.shape(),
        });
    }
    Ok(m)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST);
    if !path.is_file() {
        return Err(Error::MissingFile {
            path,
            what: "manifest".into(),
        });
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    // Check the version before the full schema so old bundles get a clear error.
    let version = serde_json::from_slice::<serde_json::Value>(&bytes)?
        .get("format_version")
        .and_then(|v| v.as_u64())
        .unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let manifest: Manifest = serde_json::from_slice(&bytes)?;
    manifest.hyperparams.validate()?;
    if manifest.hyperparams.lengths != manifest.lengths {
        return Err(Error::Config("manifest lengths disagree with hyperparameters".into()));
    }
    Ok(manifest)
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<LoadedModel> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let m = manifest.anchors;
    let n = manifest.samples;
    let c = manifest.classes;

    let mut kernels = Vec::with_capacity(2);
    for t in Modality::BOTH {
        let points = load(
            file(dir, "anchors", t.number()),
            format!("anchors of modality {}", t.number()),
            (manifest.dims[t.slot()], m),
        )?;
        let indices = manifest.anchor_indices[t.slot()].clone();
        if indices.len() != m {
            return Err(Error::Config(format!(
                "modality {} lists {} anchor indices, expected {m}",
                t.number(),
                indices.len()
            )));
        }
        let sigma = manifest.sigma[t.slot()];
        if !(sigma > 0.0) {
            return Err(Error::DegenerateSigma { modality: t.number() });
        }
        kernels.push(ModalityKernel {
            anchors: AnchorSet {
                modality: t,
                points,
                indices,
                requested: manifest.hyperparams.anchors,
            },
            sigma,
        });
    }
    let second = kernels.pop().unwrap();
    let kernel = KernelModel {
        modalities: [kernels.pop().unwrap(), second],
    };

    let mut encoders = Vec::with_capacity(manifest.lengths.len());
    let mut learned_codes = Vec::with_capacity(manifest.lengths.len());
    for (k0, &r) in manifest.lengths.iter().enumerate() {
        let k = k0 + 1;
        encoders.push(LengthEncoder {
            rotation: load(file(dir, "r", k), format!("rotation R^{k}"), (r, r))?,
            forward: [
                load(file(dir, "u1f", k), format!("projection U_1f^{k}"), (r, m))?,
                load(file(dir, "u2f", k), format!("projection U_2f^{k}"), (r, m))?,
            ],
        });
        let path = codes_file(dir, k);
        if !path.is_file() {
            return Err(Error::MissingFile {
                path,
                what: format!("learned codes B^{k}"),
            });
        }
        let codes = read_codes(&path)?;
        if (codes.bits(), codes.len()) != (r, n) {
            return Err(Error::ShapeMismatch {
                path,
                expected: (r, n),
                actual: (codes.bits(), codes.len()),
            });
        }
        learned_codes.push(codes);
    }

    let state = if manifest.diagnostics {
        let mut lengths = Vec::with_capacity(manifest.lengths.len());
        for (k0, &r) in manifest.lengths.iter().enumerate() {
            let k = k0 + 1;
            let enc = &encoders[k0];
            lengths.push(LengthState {
                s: load(file(dir, "s", k), format!("latent S^{k}"), (r, n))?,
                b: load(file(dir, "b", k), format!("codes B^{k}"), (r, n))?,
                r: enc.rotation.clone(),
                u_forward: enc.forward.clone(),
                u_backward: [
                    load(file(dir, "u1b", k), format!("back projection U_1b^{k}"), (m, r))?,
                    load(file(dir, "u2b", k), format!("back projection U_2b^{k}"), (m, r))?,
                ],
                p: load(file(dir, "p", k), format!("label map P^{k}"), (c, r))?,
            });
        }
        let chain = manifest
            .lengths
            .windows(2)
            .enumerate()
            .map(|(k0, w)| load(file(dir, "t", k0 + 1), format!("chain map T^{}", k0 + 1), (w[0], w[1])))
            .collect::<Result<_>>()?;
        Some(ModelState { lengths, chain })
    } else {
        None
    };

    Ok(LoadedModel {
        encoder: Encoder::new(kernel, encoders)?,
        manifest,
        learned_codes,
        state,
    })
}
