//! Run configuration: a JSON file describing the noise measure, band
//! limit, time grid, data model, training and generation settings. Every
//! module-level invariant is validated at load time and reported with the
//! offending field path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DataModel, Empirical, GaussianMixture, GaussianShift};
use crate::error::{Error, Result};
use crate::forward::TimeGrid;
use crate::harmonics::{CoeffField, HarmonicIndex};
use crate::learn::TrainConfig;
use crate::spectrum::{matern_spectrum, MaternParams, Spectrum};

/// One sparse coefficient entry of a mean field.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CoeffEntry {
    pub ell: u32,
    pub m: i32,
    pub value: f64,
}

/// Per-degree variance profile of a Gaussian data model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarScale {
    /// `s_l = scale * C_l`.
    PriorScale(f64),
    /// Explicit `s_l` per degree.
    PerEll(Vec<f64>),
}

impl VarScale {
    fn resolve(&self, spec: &Spectrum, field: &str) -> Result<Vec<f64>> {
        match self {
            VarScale::PriorScale(scale) => {
                if !(*scale >= 0.0) {
                    return Err(Error::config(format!("{field}: prior_scale must be >= 0")));
                }
                Ok(spec.values().iter().map(|c| c * scale).collect())
            }
            VarScale::PerEll(values) => {
                if values.len() != spec.band_limit() as usize + 1 {
                    return Err(Error::config(format!(
                        "{field}: needs {} entries for band limit {}, got {}",
                        spec.band_limit() as usize + 1,
                        spec.band_limit(),
                        values.len()
                    )));
                }
                Ok(values.clone())
            }
        }
    }
}

/// Data model description inside the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataConfig {
    GaussianShift {
        mean_coeffs: Vec<CoeffEntry>,
        var_scale: VarScale,
    },
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<Vec<CoeffEntry>>,
        var_scale: VarScale,
    },
    Empirical {
        atom_files: Vec<PathBuf>,
    },
}

/// Architecture of the trainable denoiser.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ModelArch {
    PerTimeAffine,
    TimeMlp { hidden: Vec<usize> },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TimeConfig {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    #[serde(flatten)]
    pub optimizer: TrainConfig,
    pub model: ModelArch,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n_samples: usize,
}

/// The whole run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub matern: MaternParams,
    pub band_limit: u32,
    pub time: TimeConfig,
    pub data: DataConfig,
    pub train: TrainSection,
    pub generation: GenerationConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = crate::io::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.matern
            .validate()
            .map_err(|e| Error::config(format!("matern: {e}")))?;
        TimeGrid::new(self.time.horizon, self.time.steps)
            .map_err(|e| Error::config(format!("time: {e}")))?;
        let grid = self.time_grid();
        self.train
            .optimizer
            .validate(&grid)
            .map_err(|e| match e {
                Error::Config(msg) => Error::config(msg),
                other => Error::config(other.to_string()),
            })?;
        if let ModelArch::TimeMlp { hidden } = &self.train.model {
            if hidden.is_empty() || hidden.iter().any(|&w| w == 0) {
                return Err(Error::config(
                    "train.model.hidden: needs nonempty, nonzero widths",
                ));
            }
        }
        // the data section is validated against the spectrum when built
        self.data_model(&self.spectrum()?).map(|_| ())
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        matern_spectrum(&self.matern, self.band_limit)
            .map_err(|e| Error::config(format!("matern/band_limit: {e}")))
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid::new(self.time.horizon, self.time.steps).expect("validated at load")
    }

    /// Build the data model, loading empirical atoms from CSV when needed.
    pub fn data_model(&self, spec: &Spectrum) -> Result<DataModel> {
        let band = self.band_limit;
        match &self.data {
            DataConfig::GaussianShift {
                mean_coeffs,
                var_scale,
            } => {
                let mean = mean_from_entries(band, mean_coeffs, "data.mean_coeffs")?;
                let var = var_scale.resolve(spec, "data.var_scale")?;
                Ok(DataModel::GaussianShift(
                    GaussianShift::new(mean, var)
                        .map_err(|e| Error::config(format!("data: {e}")))?,
                ))
            }
            DataConfig::GaussianMixture {
                weights,
                means,
                var_scale,
            } => {
                let mean_fields = means
                    .iter()
                    .enumerate()
                    .map(|(i, entries)| {
                        mean_from_entries(band, entries, &format!("data.means[{i}]"))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let var = var_scale.resolve(spec, "data.var_scale")?;
                Ok(DataModel::GaussianMixture(
                    GaussianMixture::new(weights.clone(), mean_fields, var)
                        .map_err(|e| Error::config(format!("data: {e}")))?,
                ))
            }
            DataConfig::Empirical { atom_files } => {
                if atom_files.is_empty() {
                    return Err(Error::config("data.atom_files: needs at least one file"));
                }
                let atoms = atom_files
                    .iter()
                    .map(|p| {
                        let atom = crate::io::read_coeff_csv(p)?;
                        if atom.band_limit() != band {
                            return Err(Error::config(format!(
                                "data.atom_files: {} has band limit {}, config says {band}",
                                p.display(),
                                atom.band_limit()
                            )));
                        }
                        Ok(atom)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(DataModel::Empirical(
                    Empirical::new(atoms).map_err(|e| Error::config(format!("data: {e}")))?,
                ))
            }
        }
    }
}

fn mean_from_entries(band_limit: u32, entries: &[CoeffEntry], field: &str) -> Result<CoeffField> {
    let mut mean = CoeffField::zeros(band_limit);
    for (i, e) in entries.iter().enumerate() {
        let idx = HarmonicIndex::new(e.ell, e.m)
            .map_err(|err| Error::config(format!("{field}[{i}]: {err}")))?;
        if e.ell > band_limit {
            return Err(Error::config(format!(
                "{field}[{i}]: degree {} exceeds band limit {band_limit}",
                e.ell
            )));
        }
        mean.set(idx, e.value);
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn reference_json() -> String {
        r#"{
            "matern": {"kappa": 1.0, "beta": 1.0},
            "band_limit": 0,
            "time": {"horizon": 8.0, "steps": 160},
            "data": {
                "kind": "gaussian_shift",
                "mean_coeffs": [{"ell": 0, "m": 0, "value": 1.0}],
                "var_scale": {"prior_scale": 1.0}
            },
            "train": {
                "n_samples": 64,
                "step_size": 1.0,
                "epochs": 10,
                "minibatch": null,
                "grad_clip": 1000.0,
                "loss_norm": "cameron_martin",
                "fixed_dataset": false,
                "model": {"arch": "per_time_affine"}
            },
            "generation": {"n_samples": 10},
            "seed": 42,
            "out_dir": "out"
        }"#
        .to_string()
    }

    #[test]
    fn reference_config_loads_and_builds() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, reference_json()).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        let spec = cfg.spectrum().unwrap();
        assert_eq!(spec.band_limit(), 0);
        let model = cfg.data_model(&spec).unwrap();
        assert!(model.kl_defined());
        match model {
            DataModel::GaussianShift(m) => {
                assert_eq!(m.mean.coeffs()[0], 1.0);
                assert_eq!(m.var_by_ell, vec![1.0]);
            }
            other => panic!("expected gaussian shift, got {other:?}"),
        }
    }

    #[test]
    fn invalid_fields_are_reported_with_paths() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("config.json");
        let bad = reference_json().replace("\"beta\": 1.0", "\"beta\": 0.4");
        std::fs::write(&path, bad).unwrap();
        match RunConfig::load(&path) {
            Err(Error::Config(msg)) => assert!(msg.starts_with("matern:"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }

        let bad = reference_json().replace("\"steps\": 160", "\"steps\": 0");
        std::fs::write(&path, bad).unwrap();
        match RunConfig::load(&path) {
            Err(Error::Config(msg)) => assert!(msg.starts_with("time:"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }

        let bad = reference_json().replace("\"m\": 0", "\"m\": 2");
        std::fs::write(&path, bad).unwrap();
        match RunConfig::load(&path) {
            Err(Error::Config(msg)) => {
                assert!(msg.starts_with("data.mean_coeffs[0]:"), "{msg}")
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn empirical_atoms_load_from_csv() {
        let dir = tempdir().unwrap();
        let atom_path = dir.path().join("atom.csv");
        let mut atom = CoeffField::zeros(0);
        atom.coeffs_mut()[0] = 0.75;
        crate::io::write_coeff_csv(&atom_path, &atom).unwrap();
        let json = reference_json().replace(
            r#""kind": "gaussian_shift",
                "mean_coeffs": [{"ell": 0, "m": 0, "value": 1.0}],
                "var_scale": {"prior_scale": 1.0}"#,
            &format!(
                r#""kind": "empirical", "atom_files": ["{}"]"#,
                atom_path.display()
            ),
        );
        let path = dir.path().join("config.json");
        std::fs::write(&path, json).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        let model = cfg.data_model(&cfg.spectrum().unwrap()).unwrap();
        assert!(!model.kl_defined());
        match model {
            DataModel::Empirical(e) => assert_eq!(e.atoms[0].coeffs()[0], 0.75),
            other => panic!("expected empirical, got {other:?}"),
        }
    }
}
