//! CSV readers and writers for observations, trajectories and chains.

use std::path::Path;

use magidde::gp::{ComponentObservations, NoiseLevel};
use magidde::models::DdeModel;
use magidde::pipeline::{InferenceResult, StabilityReport};
use magidde::posterior::Posterior;

use crate::CliError;

fn csv_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

/// Read an observation file with header `time,<component>...`. Empty cells
/// are missing observations.
pub fn read_observations(path: &Path, model: &dyn DdeModel) -> Result<Vec<ComponentObservations>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let expected: Vec<String> = std::iter::once("time".to_string())
        .chain(model.components().iter().cloned())
        .collect();
    if header != expected {
        return Err(csv_error(
            path,
            format!("header must be '{}', got '{}'", expected.join(","), header.join(",")),
        ));
    }
    let m = model.dim();
    let mut times = vec![Vec::new(); m];
    let mut values = vec![Vec::new(); m];
    let mut last = f64::NEG_INFINITY;
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = row + 2;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| csv_error(path, format!("line {line}: '{s}' is not a number")))
        };
        let t = parse(&rec[0])?;
        if !(t > last) {
            return Err(csv_error(
                path,
                format!("line {line}: time column must be strictly increasing"),
            ));
        }
        last = t;
        let mut any = false;
        for i in 0..m {
            let cell = &rec[i + 1];
            if !cell.is_empty() {
                times[i].push(t);
                values[i].push(parse(cell)?);
                any = true;
            }
        }
        if !any {
            return Err(csv_error(path, format!("line {line}: no observations")));
        }
    }
    times
        .into_iter()
        .zip(values)
        .map(|(t, v)| ComponentObservations::new(t, v, NoiseLevel::Unknown).map_err(|e| csv_error(path, e)))
        .collect()
}

/// Write rows of `time, values...` under the given header.
pub fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(err)?;
    }
    w.flush()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// One row per parameter: the name, both 95% intervals and their overlap.
pub fn write_stability(path: &Path, report: &StabilityReport) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["parameter", "coarse_lower", "coarse_upper", "fine_lower", "fine_upper", "overlap"])
        .map_err(err)?;
    for p in &report.parameters {
        let values = [p.coarse.0, p.coarse.1, p.fine.0, p.fine.1, p.overlap].map(|v| v.to_string());
        w.write_record(std::iter::once(p.name.clone()).chain(values)).map_err(err)?;
    }
    w.flush()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Observations on a common time axis, with empty cells where a component
/// was not observed.
pub fn write_observations(path: &Path, model: &dyn DdeModel, obs: &[ComponentObservations]) -> Result<(), CliError> {
    let mut all: Vec<f64> = obs.iter().flat_map(|o| o.times.iter().copied()).collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    let header: Vec<String> = std::iter::once("time".to_string())
        .chain(model.components().iter().cloned())
        .collect();
    w.write_record(&header).map_err(err)?;
    for t in all {
        let mut rec = vec![t.to_string()];
        for o in obs {
            rec.push(
                o.times
                    .iter()
                    .position(|&s| s == t)
                    .map_or(String::new(), |k| o.values[k].to_string()),
            );
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.flush()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn write_trajectory(path: &Path, result: &InferenceResult) -> Result<(), CliError> {
    let tr = &result.trajectory;
    let mut header = vec!["time".to_string()];
    for c in &tr.components {
        header.extend([format!("{c}_mean"), format!("{c}_lower"), format!("{c}_upper")]);
    }
    let rows = (0..tr.times.len()).map(|j| {
        let mut row = vec![tr.times[j]];
        for i in 0..tr.components.len() {
            row.extend([tr.mean[i][j], tr.lower[i][j], tr.upper[i][j]]);
        }
        row
    });
    write_table(path, &header, rows)
}

/// Retained draws: parameters and noise levels on their natural scale, then
/// the trajectory on the modeled scale.
pub fn write_samples(path: &Path, posterior: &Posterior, result: &InferenceResult) -> Result<(), CliError> {
    let model = posterior.model();
    let grid = &posterior.grid().times;
    let mut header: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    header.extend(result.noise.iter().map(|n| n.name.clone()));
    for c in model.components() {
        header.extend(grid.iter().map(|t| format!("{c}@{t}")));
    }
    let rows = result.chain.samples.iter().map(|z| {
        let u = posterior.unpack(z);
        let mut row = u.theta;
        row.extend(
            (0..model.dim())
                .filter(|&i| posterior.sigma_index(i).is_some())
                .map(|i| u.sigma[i]),
        );
        for x in u.x {
            row.extend(x);
        }
        row
    });
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(err)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(err)?;
    }
    w.flush()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use magidde::models::{builtin, SirdDelayed};

    #[test]
    fn missing_cells_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        std::fs::write(&path, "time,I,R,D\n0,0.1,0.2,0.3\n1,,0.25,\n2.5,0.3,,0.4\n").unwrap();
        let model = SirdDelayed::new();
        let obs = read_observations(&path, &model).unwrap();
        assert_eq!(obs[0].times, vec![0.0, 2.5]);
        assert_eq!(obs[1].values, vec![0.2, 0.25]);
        assert_eq!(obs[2].times, vec![0.0, 2.5]);

        let out = dir.path().join("again.csv");
        write_observations(&out, &model, &obs).unwrap();
        assert_eq!(read_observations(&out, &model).unwrap(), obs);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = builtin("hutchinson-log").unwrap();
        for (name, body) in [
            ("header.csv", "t,N\n0,1\n"),
            ("order.csv", "time,N\n1,1\n0,2\n"),
            ("empty_row.csv", "time,N\n0,1\n1,\n"),
            ("text.csv", "time,N\n0,abc\n"),
        ] {
            let p = dir.path().join(name);
            std::fs::write(&p, body).unwrap();
            assert!(
                matches!(read_observations(&p, model.as_ref()), Err(CliError::Usage(_))),
                "{name}"
            );
        }
        assert!(read_observations(&dir.path().join("absent.csv"), model.as_ref()).is_err());
    }
}
