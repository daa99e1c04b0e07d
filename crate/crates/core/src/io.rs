//! Plain-text file formats: CSV for fields, spectra and histories, JSON
//! for checkpoints, configs and reports. Floats are written in shortest
//! round-trip form so re-reading reproduces values bitwise.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::diag::SpectrumReportRow;
use crate::error::{Error, Result};
use crate::forward::ForwardTrajectory;
use crate::harmonics::{coeff_count, CoeffField, GridField, HarmonicIndex};
use crate::spectrum::Spectrum;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path.display().to_string(), e)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(path))?;
        }
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(contents.as_bytes()).map_err(io_err(path))
}

/// Coefficients as `ell,m,value` rows in ascending flat order.
pub fn write_coeff_csv(path: &Path, field: &CoeffField) -> Result<()> {
    let mut out = String::from("ell,m,value\n");
    for (idx, v) in field.iter() {
        out.push_str(&format!("{},{},{}\n", idx.ell(), idx.m(), v));
    }
    write_file(path, &out)
}

pub fn read_coeff_csv(path: &Path) -> Result<CoeffField> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != "ell,m,value" {
                return Err(parse_err(1, format!("expected header 'ell,m,value', got '{line}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(parse_err(i + 1, format!("expected 3 fields, got {}", parts.len())));
        }
        let ell: u32 = parts[0]
            .trim()
            .parse()
            .map_err(|e| parse_err(i + 1, format!("bad degree: {e}")))?;
        let m: i32 = parts[1]
            .trim()
            .parse()
            .map_err(|e| parse_err(i + 1, format!("bad order: {e}")))?;
        let value: f64 = parts[2]
            .trim()
            .parse()
            .map_err(|e| parse_err(i + 1, format!("bad value: {e}")))?;
        let idx = HarmonicIndex::new(ell, m)
            .map_err(|e| parse_err(i + 1, e.to_string()))?;
        rows.push((idx, value));
    }
    if rows.is_empty() {
        return Err(parse_err(1, "no coefficient rows".to_string()));
    }
    let band_limit = rows.iter().map(|(idx, _)| idx.ell()).max().expect("nonempty");
    if rows.len() != coeff_count(band_limit) {
        return Err(parse_err(
            0,
            format!(
                "found {} rows, band limit {} needs {}",
                rows.len(),
                band_limit,
                coeff_count(band_limit)
            ),
        ));
    }
    let mut field = CoeffField::zeros(band_limit);
    let mut seen = vec![false; field.len()];
    for (idx, v) in rows {
        let flat = idx.flat();
        if seen[flat] {
            return Err(parse_err(0, format!("duplicate index ({}, {})", idx.ell(), idx.m())));
        }
        seen[flat] = true;
        field.coeffs_mut()[flat] = v;
    }
    Ok(field)
}

/// Grid samples as `theta,phi,value` rows, row-major over `(theta, phi)`.
pub fn write_grid_csv(path: &Path, field: &GridField) -> Result<()> {
    let mut out = String::from("theta,phi,value\n");
    let thetas = field.grid().thetas();
    for (i, theta) in thetas.iter().enumerate() {
        for (k, phi) in field.grid().phis().iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", theta, phi, field.value(i, k)));
        }
    }
    write_file(path, &out)
}

/// Spectrum as `ell,C` rows.
pub fn write_spectrum_csv(path: &Path, spec: &Spectrum) -> Result<()> {
    let mut out = String::from("ell,C\n");
    for (l, c) in spec.values().iter().enumerate() {
        out.push_str(&format!("{l},{c}\n"));
    }
    write_file(path, &out)
}

pub fn read_spectrum_csv(path: &Path) -> Result<Spectrum> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != "ell,C" {
                return Err(parse_err(1, format!("expected header 'ell,C', got '{line}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 2 {
            return Err(parse_err(i + 1, format!("expected 2 fields, got {}", parts.len())));
        }
        let ell: usize = parts[0]
            .trim()
            .parse()
            .map_err(|e| parse_err(i + 1, format!("bad degree: {e}")))?;
        if ell != values.len() {
            return Err(parse_err(i + 1, format!("expected degree {}, got {ell}", values.len())));
        }
        let c: f64 = parts[1]
            .trim()
            .parse()
            .map_err(|e| parse_err(i + 1, format!("bad value: {e}")))?;
        values.push(c);
    }
    Spectrum::from_values(values)
}

/// Forward trajectories as `sample_id,t,ell,m,value` rows.
pub fn write_trajectory_csv(path: &Path, trajectories: &[ForwardTrajectory]) -> Result<()> {
    let mut out = String::from("sample_id,t,ell,m,value\n");
    for (sample_id, traj) in trajectories.iter().enumerate() {
        for (j, state) in traj.states.iter().enumerate() {
            let t = traj.grid.time(j);
            for (idx, v) in state.iter() {
                out.push_str(&format!("{},{},{},{},{}\n", sample_id, t, idx.ell(), idx.m(), v));
            }
        }
    }
    write_file(path, &out)
}

/// Backward paths in the same `sample_id,t,ell,m,value` schema, `t` being
/// the backward time of each state.
pub fn write_path_csv(
    path: &Path,
    grid: &crate::forward::TimeGrid,
    paths: &[Vec<CoeffField>],
) -> Result<()> {
    let mut out = String::from("sample_id,t,ell,m,value\n");
    for (sample_id, states) in paths.iter().enumerate() {
        for (j, state) in states.iter().enumerate() {
            let t = grid.time(j);
            for (idx, v) in state.iter() {
                out.push_str(&format!("{},{},{},{},{}\n", sample_id, t, idx.ell(), idx.m(), v));
            }
        }
    }
    write_file(path, &out)
}

/// Training losses as `epoch,loss` rows.
pub fn write_loss_history_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,loss\n");
    for (epoch, loss) in losses.iter().enumerate() {
        out.push_str(&format!("{epoch},{loss}\n"));
    }
    write_file(path, &out)
}

/// Spectrum comparison rows as `ell,C_true,C_hat,ci_lo,ci_hi`.
pub fn write_spectrum_report_csv(path: &Path, rows: &[SpectrumReportRow]) -> Result<()> {
    let mut out = String::from("ell,C_true,C_hat,ci_lo,ci_hi\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.ell, row.c_true, row.c_hat, row.ci_lo, row.ci_hi
        ));
    }
    write_file(path, &out)
}

/// Pretty-printed JSON for any serialisable report or checkpoint.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_file(path, &(text + "\n"))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{simulate_forward, TimeGrid};
    use crate::harmonics::{synthesize, SphereGrid};
    use crate::spectrum::{matern_spectrum, sample_prior, MaternParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    #[test]
    fn coeff_csv_roundtrip_is_bitwise() {
        let spec = matern_spectrum(&MaternParams::new(1.3, 0.9).unwrap(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let field = sample_prior(&spec, &mut rng);
        let dir = tempdir().unwrap();
        let path = dir.path().join("field.csv");
        write_coeff_csv(&path, &field).unwrap();
        let back = read_coeff_csv(&path).unwrap();
        assert_eq!(back, field);
    }

    #[test]
    fn coeff_csv_rejects_malformed_input() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "ell,m,value\n0,0,1.0\n1,2,0.5\n").unwrap();
        assert!(read_coeff_csv(&path).is_err()); // |m| > l
        std::fs::write(&path, "wrong,header\n").unwrap();
        assert!(read_coeff_csv(&path).is_err());
        std::fs::write(&path, "ell,m,value\n0,0,1.0\n1,0,0.5\n").unwrap();
        assert!(read_coeff_csv(&path).is_err()); // incomplete band
    }

    #[test]
    fn spectrum_csv_roundtrip() {
        let spec = matern_spectrum(&MaternParams::new(0.7, 1.2).unwrap(), 5).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("spec.csv");
        write_spectrum_csv(&path, &spec).unwrap();
        let back = read_spectrum_csv(&path).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn grid_and_trajectory_files_have_expected_shape() {
        let spec = matern_spectrum(&MaternParams::new(1.0, 1.0).unwrap(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let field = sample_prior(&spec, &mut rng);
        let grid = SphereGrid::for_band_limit(2);
        let sampled = synthesize(&field, &grid);
        let dir = tempdir().unwrap();

        let gpath = dir.path().join("grid.csv");
        write_grid_csv(&gpath, &sampled).unwrap();
        let lines = std::fs::read_to_string(&gpath).unwrap();
        assert_eq!(
            lines.lines().count(),
            1 + grid.n_theta() * grid.n_phi(),
            "one row per node plus header"
        );
        assert!(lines.starts_with("theta,phi,value\n"));

        let tgrid = TimeGrid::new(1.0, 2).unwrap();
        let traj = simulate_forward(&field, &spec, &tgrid, &mut rng).unwrap();
        let tpath = dir.path().join("traj.csv");
        write_trajectory_csv(&tpath, &[traj]).unwrap();
        let lines = std::fs::read_to_string(&tpath).unwrap();
        assert_eq!(lines.lines().count(), 1 + 3 * 9);
        assert!(lines.starts_with("sample_id,t,ell,m,value\n"));
    }
}
