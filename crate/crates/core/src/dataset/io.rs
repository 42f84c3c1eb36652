use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stance::{stance_encoding, StanceEncoding, StanceId};
use super::{layout, Dataset, NormalisationStats, RobotState, Sample};
use crate::error::{Error, Result};
use crate::robot::{RobotParams, NUM_LEGS};

pub const DATASET_FORMAT_VERSION: &str = "quadlat-dataset-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    version: String,
    seed: u64,
    n_train: usize,
    n_test: usize,
    split_fraction: f64,
    with_com: bool,
    params_hash: String,
    stats: NormalisationStats,
    crc32: u32,
}

/// A dataset read back from disk with any non-fatal warnings.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn header(with_com: bool) -> Vec<String> {
    let mut h = layout::feature_names(with_com);
    h.push("y".into());
    h.extend((0..4).map(|i| format!("s{i}")));
    h.push("stance_id".into());
    h.extend((0..NUM_LEGS).map(|i| format!("c{i}")));
    h
}

fn encode_csv(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = Error::from;
    w.write_record(header(dataset.with_com)).map_err(csv_err)?;
    for s in dataset.all() {
        let mut rec: Vec<String> = s.x.0.iter().map(|v| format!("{v}")).collect();
        rec.push(u8::from(s.y).to_string());
        rec.extend(s.s.0.iter().map(|v| format!("{v}")));
        rec.push(s.stance_id.to_string());
        rec.extend(s.contact_flags.iter().map(|&c| u8::from(c).to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

/// Write the sample table to `path` and metadata to the `.json` sidecar.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let bytes = encode_csv(dataset)?;
    let meta = Sidecar {
        version: DATASET_FORMAT_VERSION.into(),
        seed: dataset.seed,
        n_train: dataset.train.len(),
        n_test: dataset.test.len(),
        split_fraction: dataset.split_fraction,
        with_com: dataset.with_com,
        params_hash: dataset.params_hash.clone(),
        stats: dataset.stats.clone(),
        crc32: crc32fast::hash(&bytes),
    };
    fs::write(path, &bytes)?;
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

fn parse_flag(field: &str) -> Result<bool> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Format(format!("expected 0/1, found {other:?}"))),
    }
}

fn parse_row(rec: &csv::StringRecord, with_com: bool) -> Result<Sample> {
    let dim = layout::dim(with_com);
    if rec.len() != dim + 10 {
        return Err(Error::Format(format!(
            "row has {} fields, expected {}",
            rec.len(),
            dim + 10
        )));
    }
    let num = |i: usize| -> Result<f64> {
        rec[i]
            .parse()
            .map_err(|_| Error::Format(format!("bad number {:?} in column {i}", &rec[i])))
    };
    let x = (0..dim).map(num).collect::<Result<Vec<_>>>()?;
    let y = parse_flag(&rec[dim])?;
    let s = StanceEncoding([num(dim + 1)?, num(dim + 2)?, num(dim + 3)?, num(dim + 4)?]);
    let id: u8 = rec[dim + 5]
        .parse()
        .map_err(|_| Error::Format(format!("bad stance id {:?}", &rec[dim + 5])))?;
    let stance_id = StanceId::new(id)?;
    let mut contact_flags = [false; NUM_LEGS];
    for (leg, c) in contact_flags.iter_mut().enumerate() {
        *c = parse_flag(&rec[dim + 6 + leg])?;
    }
    if stance_encoding(stance_id) != s || stance_id.contact_flags() != contact_flags {
        return Err(Error::Format(format!(
            "row labels inconsistent with stance {stance_id}"
        )));
    }
    Ok(Sample {
        x: RobotState(x),
        y,
        s,
        stance_id,
        contact_flags,
    })
}

/// Read a dataset written by [`write_dataset`]. A params hash that differs
/// from `expected_params` is reported as a warning, not an error.
pub fn read_dataset(path: &Path, expected_params: Option<&RobotParams>) -> Result<LoadedDataset> {
    let meta: Sidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    if meta.version != DATASET_FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch {
            expected: DATASET_FORMAT_VERSION.into(),
            found: meta.version,
        });
    }
    let bytes = fs::read(path)?;
    let computed = crc32fast::hash(&bytes);
    if computed != meta.crc32 {
        return Err(Error::ChecksumMismatch {
            expected: meta.crc32,
            computed,
        });
    }
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let found = r.headers()?.clone();
    let want = header(meta.with_com);
    if found.iter().ne(want.iter().map(String::as_str)) {
        return Err(Error::Format("unexpected header".into()));
    }
    let mut samples = Vec::with_capacity(meta.n_train + meta.n_test);
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        samples.push(parse_row(&rec, meta.with_com)?);
    }
    if samples.len() != meta.n_train + meta.n_test {
        return Err(Error::Format(format!(
            "{} rows, metadata says {}",
            samples.len(),
            meta.n_train + meta.n_test
        )));
    }
    if meta.stats.dim() != layout::dim(meta.with_com) {
        return Err(Error::ShapeMismatch("statistics dimension".into()));
    }
    let test = samples.split_off(meta.n_train);
    let mut warnings = Vec::new();
    if let Some(p) = expected_params {
        let h = p.hash_hex();
        if h != meta.params_hash {
            warnings.push(format!(
                "dataset was generated with robot params {} but current params hash to {h}",
                meta.params_hash
            ));
        }
    }
    Ok(LoadedDataset {
        dataset: Dataset {
            train: samples,
            test,
            stats: meta.stats,
            seed: meta.seed,
            split_fraction: meta.split_fraction,
            with_com: meta.with_com,
            params_hash: meta.params_hash,
        },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, SamplerConfig};
    use crate::exec::Exec;

    fn data(with_com: bool) -> Dataset {
        let c = SamplerConfig {
            with_com,
            ..Default::default()
        };
        generate_dataset(96, 0.75, 9, &RobotParams::default(), &c, Exec::Sequential).unwrap()
    }

    fn bits(d: &Dataset) -> Vec<u64> {
        d.all()
            .flat_map(|s| s.x.0.iter().map(|v| v.to_bits()))
            .chain(d.stats.mean.iter().chain(&d.stats.std).map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        for with_com in [false, true] {
            let d = data(with_com);
            let path = dir.path().join(format!("d{with_com}.csv"));
            write_dataset(&path, &d).unwrap();
            let back = read_dataset(&path, Some(&RobotParams::default())).unwrap();
            assert!(back.warnings.is_empty());
            assert_eq!(back.dataset, d);
            assert_eq!(bits(&back.dataset), bits(&d));
        }
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dataset(&path, &data(false)).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(read_dataset(&path, None), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn version_and_params_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dataset(&path, &data(false)).unwrap();
        let other = RobotParams {
            friction_coeff: 0.7,
            ..Default::default()
        };
        let back = read_dataset(&path, Some(&other)).unwrap();
        assert_eq!(back.warnings.len(), 1);

        let side = sidecar_path(&path);
        let text = fs::read_to_string(&side).unwrap();
        fs::write(&side, text.replace(DATASET_FORMAT_VERSION, "quadlat-dataset-v0")).unwrap();
        assert!(matches!(
            read_dataset(&path, None),
            Err(Error::FormatVersionMismatch { .. })
        ));
    }
}
