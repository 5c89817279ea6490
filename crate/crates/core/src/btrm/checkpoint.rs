//! Checkpoint file: one JSON header line, then the parameter vector as
//! little-endian f64.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{Arch, RewardModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: Arch,
    pub input_dim: usize,
    pub iteration: u32,
    pub gold_accuracy: f64,
    pub n_params: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("header declares {declared} params but arch needs {expected}")]
    ParamCount { declared: usize, expected: usize },
    #[error("trailing bytes after parameter array")]
    Trailing,
}

pub fn write_checkpoint(
    path: &Path,
    model: &RewardModel,
    gold_accuracy: f64,
) -> Result<(), CheckpointError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let header = CheckpointHeader {
        arch: model.arch,
        input_dim: model.input_dim,
        iteration: model.trained_on,
        gold_accuracy,
        n_params: model.params.len(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for p in &model.params {
        w.write_f64::<LittleEndian>(*p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(RewardModel, CheckpointHeader), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    let header: CheckpointHeader = serde_json::from_slice(&line)?;
    let expected = header.arch.n_params(header.input_dim);
    if header.n_params != expected {
        return Err(CheckpointError::ParamCount {
            declared: header.n_params,
            expected,
        });
    }
    let mut params = vec![0.0; expected];
    r.read_f64_into::<LittleEndian>(&mut params)?;
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(CheckpointError::Trailing);
    }
    let model = RewardModel {
        arch: header.arch,
        params,
        input_dim: header.input_dim,
        trained_on: header.iteration,
    };
    Ok((model, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut m = RewardModel::zeros(Arch::Mlp { hidden_dim: 2 }, 3);
        m.params
            .iter_mut()
            .enumerate()
            .for_each(|(i, p)| *p = i as f64 * 0.1 - 0.3);
        m.trained_on = 4;
        write_checkpoint(&path, &m, 0.875).unwrap();
        let (back, header) = read_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.gold_accuracy, 0.875);
        assert_eq!(header.iteration, 4);
    }

    #[test]
    fn truncated_file_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&path, &RewardModel::zeros(Arch::Linear, 4), 0.5).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}
