//! Binary checkpoints of a trained model.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "KGINCKPT"
//! version      u32      = 1
//! config       u64 length + UTF-8 JSON of the TrainConfig
//! shape        4 x u64  users, items, entities, relations
//! adam step    u64
//! tables       u32 count, then per table:
//!                u64 length + UTF-8 name
//!                u64 rows, u64 cols
//!                rows*cols f64 values, then first moment, then second moment
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::binio::{read_bytes, read_f64s, read_magic, read_u32, read_u64, write_bytes, write_f64s, write_u32, write_u64};
use crate::grad::{ParamStore, ParamTable};
use crate::matrix::Matrix;
use crate::model::{ModelParams, ModelShape};
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 8] = b"KGINCKPT";
pub const VERSION: u32 = 1;
const MAX_STRING: u64 = 1 << 20;
const MAX_TABLES: u32 = 64;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint config: {0}")]
    Config(String),
    #[error("checkpoint is corrupt: {0}")]
    Corrupt(String),
}

/// A model together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        write_u32(w, VERSION)?;
        let json = serde_json::to_vec(&self.config).map_err(|e| CheckpointError::Config(e.to_string()))?;
        write_bytes(w, &json)?;
        let s = self.params.shape;
        for n in [s.num_users, s.num_items, s.num_entities, s.num_relations] {
            write_u64(w, n as u64)?;
        }
        let store = &self.params.store;
        write_u64(w, store.step_count())?;
        write_u32(w, store.tables().len() as u32)?;
        for t in store.tables() {
            write_bytes(w, t.name.as_bytes())?;
            write_u64(w, t.values.rows() as u64)?;
            write_u64(w, t.values.cols() as u64)?;
            write_f64s(w, t.values.data())?;
            write_f64s(w, t.first_moment.data())?;
            write_f64s(w, t.second_moment.data())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, CheckpointError> {
        read_magic(r, MAGIC)?;
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let json = read_bytes(r, MAX_STRING)?;
        let config: TrainConfig =
            serde_json::from_slice(&json).map_err(|e| CheckpointError::Config(e.to_string()))?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = read_u64(r)? as usize;
        }
        let shape = ModelShape {
            num_users: dims[0],
            num_items: dims[1],
            num_entities: dims[2],
            num_relations: dims[3],
        };
        let step = read_u64(r)?;
        let count = read_u32(r)?;
        if count > MAX_TABLES {
            return Err(CheckpointError::Corrupt(format!("{count} tables")));
        }
        let mut tables = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name = String::from_utf8(read_bytes(r, MAX_STRING)?)
                .map_err(|_| CheckpointError::Corrupt("table name is not UTF-8".into()))?;
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|&n| n <= 1 << 32)
                .ok_or_else(|| CheckpointError::Corrupt(format!("table {name} is {rows}x{cols}")))?;
            let mut read = || -> Result<Matrix, CheckpointError> { Ok(Matrix::from_vec(rows, cols, read_f64s(r, n)?)) };
            let values = read()?;
            let first_moment = read()?;
            let second_moment = read()?;
            tables.push(ParamTable {
                name,
                grads: Matrix::zeros(rows, cols),
                values,
                first_moment,
                second_moment,
            });
        }
        let store = ParamStore::from_parts(tables, step);
        let params = ModelParams::from_store(config.model_config(), shape, store)
            .ok_or_else(|| CheckpointError::Corrupt("tables do not match the stored config".into()))?;
        Ok(Self { config, params })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{add_inverse_relations, build_index, InteractionSet, Triple, TripleSet};
    use crate::train::init_params;

    fn sample() -> Checkpoint {
        let cf = InteractionSet::from_lists(2, vec![vec![0], vec![1]]);
        let kg = add_inverse_relations(&TripleSet::canonical(vec![Triple::new(0, 0, 2)])).unwrap();
        let g = build_index(&cf, &kg).unwrap();
        let config = TrainConfig {
            dim: 3,
            num_intents: 2,
            ..Default::default()
        };
        let mut params = init_params(&config, &g);
        params.store.get_mut(params.user).first_moment.set(0, 1, 0.25);
        Checkpoint { config, params }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let back = Checkpoint::read_from(&mut c.to_bytes().as_slice()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        assert!(matches!(
            Checkpoint::read_from(&mut bytes.as_slice()),
            Err(CheckpointError::Version(9))
        ));
        bytes[0] = b'X';
        assert!(Checkpoint::read_from(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn truncated_file_is_an_error() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::read_from(&mut &bytes[..bytes.len() - 3]).is_err());
    }
}
