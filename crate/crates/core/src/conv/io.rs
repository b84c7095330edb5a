//! Two-level parameter serialization: one binary record per kernel in the
//! shared tensor format, plus a JSON manifest listing role, group index,
//! shape, and file name.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conv::{GroupSpec, TwoLevelParams};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::tensor::{read_record, write_record, ConvKernel};

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    n: usize,
    m: usize,
    groups: usize,
    d: usize,
    d0: usize,
    records: Vec<Record>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    role: String,
    group: usize,
    dims: Vec<u32>,
    file: String,
}

fn write_kernel(dir: &Path, name: &str, k: &ConvKernel) -> Result<Record> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    k.write_to(&mut w)?;
    Ok(Record {
        role: String::new(),
        group: 0,
        dims: vec![k.out_channels() as u32, k.in_channels() as u32, k.size() as u32, k.size() as u32],
        file: name.to_string(),
    })
}

/// Write `params` into `dir` (created if missing).
pub fn save_params(dir: &Path, spec: &GroupSpec, params: &TwoLevelParams) -> Result<()> {
    params.validate(spec)?;
    std::fs::create_dir_all(dir)?;
    let mut records = Vec::new();
    for (k, kern) in params.local.iter().enumerate() {
        let mut rec = write_kernel(dir, &format!("local_{k}.t2lc"), kern)?;
        rec.role = "local".into();
        rec.group = k;
        records.push(rec);
    }
    for (k, kern) in params.coarse_restrict.iter().enumerate() {
        let mut rec = write_kernel(dir, &format!("coarse_restrict_{k}.t2lc"), kern)?;
        rec.role = "coarse_restrict".into();
        rec.group = k;
        records.push(rec);
    }
    for (k, s) in params.coarse_mix.iter().enumerate() {
        let name = format!("coarse_mix_{k}.t2lc");
        let mut w = BufWriter::new(File::create(dir.join(&name))?);
        write_record(&mut w, &[s.rows() as u32, s.cols() as u32], s.data())?;
        records.push(Record {
            role: "coarse_mix".into(),
            group: k,
            dims: vec![s.rows() as u32, s.cols() as u32],
            file: name,
        });
    }
    let manifest = Manifest {
        n: spec.n,
        m: spec.m,
        groups: spec.groups,
        d: spec.d,
        d0: spec.d0,
        records,
    };
    let f = File::create(dir.join(MANIFEST))?;
    serde_json::to_writer_pretty(f, &manifest)
        .map_err(|e| Error::Format(format!("manifest write: {e}")))?;
    Ok(())
}

/// Read back a parameter set written by [`save_params`].
pub fn load_params(dir: &Path) -> Result<(GroupSpec, TwoLevelParams)> {
    let f = File::open(dir.join(MANIFEST))
        .map_err(|e| Error::Ingest(format!("{}: {e}", dir.join(MANIFEST).display())))?;
    let manifest: Manifest = serde_json::from_reader(f)
        .map_err(|e| Error::Format(format!("manifest parse: {e}")))?;
    let spec = GroupSpec::with_d0(manifest.n, manifest.m, manifest.groups, manifest.d, manifest.d0)?;

    let mut local = vec![None; spec.groups];
    let mut coarse_restrict = vec![None; spec.groups];
    let mut coarse_mix = vec![None; spec.groups];
    for rec in &manifest.records {
        if rec.group >= spec.groups {
            return Err(Error::Format(format!("record group {} out of range", rec.group)));
        }
        let mut r = BufReader::new(
            File::open(dir.join(&rec.file))
                .map_err(|e| Error::Ingest(format!("{}: {e}", rec.file)))?,
        );
        match rec.role.as_str() {
            "local" => {
                local[rec.group] = Some(ConvKernel::read_from(&mut r)?);
            }
            "coarse_restrict" => {
                coarse_restrict[rec.group] = Some(ConvKernel::read_from(&mut r)?);
            }
            "coarse_mix" => {
                let (dims, data) = read_record(&mut r)?;
                if dims.len() != 2 {
                    return Err(Error::Format(format!("bad mixing record dims {dims:?}")));
                }
                coarse_mix[rec.group] =
                    Some(DenseMatrix::from_vec(dims[0] as usize, dims[1] as usize, data)?);
            }
            other => return Err(Error::Format(format!("unknown record role {other:?}"))),
        }
    }
    let unwrap_all = |v: Vec<Option<ConvKernel>>, role: &str| -> Result<Vec<ConvKernel>> {
        v.into_iter()
            .enumerate()
            .map(|(k, o)| o.ok_or_else(|| Error::Format(format!("missing {role} record for group {k}"))))
            .collect()
    };
    let params = TwoLevelParams {
        local: unwrap_all(local, "local")?,
        coarse_restrict: unwrap_all(coarse_restrict, "coarse_restrict")?,
        coarse_mix: coarse_mix
            .into_iter()
            .enumerate()
            .map(|(k, o)| {
                o.ok_or_else(|| Error::Format(format!("missing coarse_mix record for group {k}")))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    params.validate(&spec)?;
    Ok((spec, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn params_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GroupSpec::new(8, 12, 4, 3).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let params = TwoLevelParams::he_init(&spec, &mut rng).unwrap();
        save_params(dir.path(), &spec, &params).unwrap();
        let (spec2, params2) = load_params(dir.path()).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(params, params2);
    }

    #[test]
    fn load_missing_manifest_is_ingest_error() {
        let dir = tempfile::tempdir().unwrap();
        match load_params(dir.path()) {
            Err(Error::Ingest(_)) => {}
            other => panic!("expected ingest error, got {other:?}"),
        }
    }
}
