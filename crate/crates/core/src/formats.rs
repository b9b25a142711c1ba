//! Binary dataset and model files.
//!
//! Both formats are little-endian, start with a 4-byte magic and a `u32`
//! version, and end with a CRC-32 of every preceding byte. Arrays are
//! time-major `f64`.
//!
//! Dataset (`CGD1`):
//! ```text
//! magic, version u32, system u8, split u8, reserved u16, dt f64,
//! T u32, d u32, m u32, config_hash u64,
//! x_mean[d], x_scale[d], y_mean[d*m], y_scale[d*m],
//! X[T*d], Y[T*d*m], crc u32
//! ```
//!
//! Model (`CGM1`):
//! ```text
//! magic, version u32, system u8, mode u8, dataset_version u32,
//! d, m, hidden, head_x_width, head_y_width u32, dropout f64,
//! seed u64, best_epoch u32, config_hash u64,
//! n_tensors u32, { name_len u16, name, trainable u8, rank u8, dims u32[rank], data f64[..] }*,
//! has_standardizer u8, [x_mean, x_scale, y_mean, y_scale],
//! crc u32
//! ```

use std::path::Path;

use crate::coarsegrain::{PairStandardizer, PairedDataset, Standardizer};
use crate::dynsys::SystemTag;
use crate::error::{Error, Result};
use crate::neuralnet::{ParamStore, Tensor};
use crate::seqmodel::{Architecture, EmulatorModel};
use crate::series::Series;
use crate::training::Mode;

pub const DATASET_MAGIC: [u8; 4] = *b"CGD1";
pub const DATASET_VERSION: u32 = 1;
pub const MODEL_MAGIC: [u8; 4] = *b"CGM1";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Val,
    Holdout,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Train, SplitKind::Val, SplitKind::Holdout];

    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Holdout => "holdout",
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

/// Fixed-size part of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    pub system: SystemTag,
    pub split: SplitKind,
    pub dt: f64,
    pub len: usize,
    pub d: usize,
    pub m: usize,
    pub config_hash: u64,
}

#[derive(Debug)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub dataset: PairedDataset,
}

/// Provenance stored with a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelMeta {
    pub system: SystemTag,
    pub mode: Mode,
    pub dataset_version: u32,
    pub seed: u64,
    pub best_epoch: usize,
    pub config_hash: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.0.reserve(v.len() * 8);
        for &x in v {
            self.f64(x);
        }
    }
    fn len32(&mut self, v: usize, what: &str) -> Result<()> {
        let v = u32::try_from(v)
            .map_err(|_| Error::Format(format!("{what} = {v} does not fit in u32")))?;
        self.u32(v);
        Ok(())
    }
    fn standardizer(&mut self, s: &PairStandardizer) {
        self.f64s(&s.x.mean);
        self.f64s(&s.x.scale);
        self.f64s(&s.y.mean);
        self.f64s(&s.y.scale);
    }
    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.0);
        self.u32(crc);
        self.0
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated file: needed {n} bytes at offset {}",
                    self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("array too large".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn standardizer(&mut self, d: usize, dm: usize) -> Result<PairStandardizer> {
        let x_mean = self.f64s(d)?;
        let x_scale = self.f64s(d)?;
        let y_mean = self.f64s(dm)?;
        let y_scale = self.f64s(dm)?;
        Ok(PairStandardizer {
            x: Standardizer {
                mean: x_mean,
                scale: x_scale,
            },
            y: Standardizer {
                mean: y_mean,
                scale: y_scale,
            },
        })
    }
}

/// Checks magic, version and CRC, returning a reader positioned after the
/// version field.
fn open_checked<'a>(
    bytes: &'a [u8],
    magic: [u8; 4],
    expected: u32,
    what: &str,
) -> Result<Reader<'a>> {
    if bytes.len() < 12 || bytes[..4] != magic {
        return Err(Error::Format(format!(
            "not a {what} file (expected magic {:?})",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != expected {
        return Err(Error::Version {
            what: what.to_string(),
            found: version,
            expected,
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Format(format!(
            "{what} checksum mismatch (stored {stored:08x}, computed {actual:08x})"
        )));
    }
    Ok(Reader { buf: body, pos: 8 })
}

fn expect_consumed(r: &Reader<'_>, what: &str) -> Result<()> {
    if r.pos != r.buf.len() {
        return Err(Error::Format(format!(
            "{what} has {} trailing bytes before the checksum",
            r.buf.len() - r.pos
        )));
    }
    Ok(())
}

fn system_from_code(c: u8) -> Result<SystemTag> {
    SystemTag::from_code(c).ok_or_else(|| Error::Format(format!("unknown system code {c}")))
}

pub fn encode_dataset(ds: &PairedDataset, split: SplitKind, config_hash: u64) -> Result<Vec<u8>> {
    let std = ds
        .standardizer
        .as_ref()
        .ok_or_else(|| Error::invalid("dataset must carry its training-split standardizer"))?;
    let y = ds.y();
    let mut w = Writer(Vec::with_capacity(
        64 + 8 * (ds.x.as_slice().len() + y.as_slice().len()),
    ));
    w.0.extend_from_slice(&DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.u8(ds.system.code());
    w.u8(split.code());
    w.u16(0);
    w.f64(ds.dt_coarse);
    w.len32(ds.len(), "T")?;
    w.len32(ds.d(), "d")?;
    w.len32(ds.m, "m")?;
    w.u64(config_hash);
    w.standardizer(std);
    w.f64s(ds.x.as_slice());
    w.f64s(y.as_slice());
    Ok(w.finish())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<DatasetFile> {
    let mut r = open_checked(bytes, DATASET_MAGIC, DATASET_VERSION, "dataset")?;
    let system = system_from_code(r.u8()?)?;
    let split_code = r.u8()?;
    let split = SplitKind::from_code(split_code)
        .ok_or_else(|| Error::Format(format!("unknown split code {split_code}")))?;
    r.u16()?;
    let dt = r.f64()?;
    let len = r.u32()? as usize;
    let d = r.u32()? as usize;
    let m = r.u32()? as usize;
    if d == 0 || m == 0 {
        return Err(Error::Format(format!("invalid dimensions d={d}, m={m}")));
    }
    let config_hash = r.u64()?;
    let standardizer = r.standardizer(d, d * m)?;
    let x = Series::new(d, r.f64s(len * d)?)?;
    let y = Series::new(d * m, r.f64s(len * d * m)?)?;
    expect_consumed(&r, "dataset")?;
    let mut dataset = PairedDataset::new(system, x, y, dt)?;
    dataset.standardizer = Some(standardizer);
    Ok(DatasetFile {
        header: DatasetHeader {
            version: DATASET_VERSION,
            system,
            split,
            dt,
            len,
            d,
            m,
            config_hash,
        },
        dataset,
    })
}

/// Writes the file and returns the CRC stored in its trailer.
pub fn write_dataset(
    path: &Path,
    ds: &PairedDataset,
    split: SplitKind,
    config_hash: u64,
) -> Result<u32> {
    let bytes = encode_dataset(ds, split, config_hash)?;
    std::fs::write(path, &bytes)?;
    Ok(trailer_crc(&bytes))
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    decode_dataset(&std::fs::read(path)?).map_err(|e| with_path(e, path))
}

pub fn encode_model(model: &EmulatorModel, meta: &ModelMeta) -> Result<Vec<u8>> {
    let a = model.arch;
    let mut w = Writer(Vec::with_capacity(64 + 8 * model.num_params()));
    w.0.extend_from_slice(&MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    w.u8(meta.system.code());
    w.u8(meta.mode.code());
    w.u32(meta.dataset_version);
    for (v, what) in [
        (a.d, "d"),
        (a.m, "m"),
        (a.hidden, "hidden"),
        (a.head_x_width, "head_x_width"),
        (a.head_y_width, "head_y_width"),
    ] {
        w.len32(v, what)?;
    }
    w.f64(a.dropout);
    w.u64(meta.seed);
    w.len32(meta.best_epoch, "best_epoch")?;
    w.u64(meta.config_hash);
    let params = model.store.params();
    w.len32(params.len(), "tensor count")?;
    for p in params {
        let name = p.name.as_bytes();
        w.u16(
            u16::try_from(name.len())
                .map_err(|_| Error::Format(format!("tensor name '{}' too long", p.name)))?,
        );
        w.0.extend_from_slice(name);
        w.u8(p.trainable as u8);
        w.u8(u8::try_from(p.value.shape.len())
            .map_err(|_| Error::Format("tensor rank too large".into()))?);
        for &dim in &p.value.shape {
            w.len32(dim, "tensor dimension")?;
        }
        w.f64s(&p.value.data);
    }
    match &model.standardizer {
        Some(s) => {
            w.u8(1);
            w.standardizer(s);
        }
        None => w.u8(0),
    }
    Ok(w.finish())
}

pub fn decode_model(bytes: &[u8]) -> Result<(EmulatorModel, ModelMeta)> {
    let mut r = open_checked(bytes, MODEL_MAGIC, MODEL_VERSION, "model")?;
    let system = system_from_code(r.u8()?)?;
    let mode_code = r.u8()?;
    let mode = Mode::from_code(mode_code)
        .ok_or_else(|| Error::Format(format!("unknown mode code {mode_code}")))?;
    let dataset_version = r.u32()?;
    let mut dims = [0usize; 5];
    for v in &mut dims {
        *v = r.u32()? as usize;
    }
    let arch = Architecture {
        d: dims[0],
        m: dims[1],
        hidden: dims[2],
        head_x_width: dims[3],
        head_y_width: dims[4],
        dropout: r.f64()?,
    };
    let seed = r.u64()?;
    let best_epoch = r.u32()? as usize;
    let config_hash = r.u64()?;
    let n_tensors = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..n_tensors {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let trainable = r.u8()? != 0;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let tensor = Tensor::new(&shape, r.f64s(n)?)?;
        let id = store.add(name, tensor)?;
        store.set_trainable(id, trainable);
    }
    let standardizer = match r.u8()? {
        0 => None,
        1 => Some(r.standardizer(arch.d, arch.dm())?),
        other => return Err(Error::Format(format!("invalid standardizer flag {other}"))),
    };
    expect_consumed(&r, "model")?;
    let model = EmulatorModel::from_store(arch, store, standardizer)?;
    Ok((
        model,
        ModelMeta {
            system,
            mode,
            dataset_version,
            seed,
            best_epoch,
            config_hash,
        },
    ))
}

pub fn write_model(path: &Path, model: &EmulatorModel, meta: &ModelMeta) -> Result<u32> {
    let bytes = encode_model(model, meta)?;
    std::fs::write(path, &bytes)?;
    Ok(trailer_crc(&bytes))
}

/// Loads a model and rejects artifacts built against another dataset format.
pub fn read_model(path: &Path) -> Result<(EmulatorModel, ModelMeta)> {
    let (model, meta) = decode_model(&std::fs::read(path)?).map_err(|e| with_path(e, path))?;
    if meta.dataset_version != DATASET_VERSION {
        return Err(Error::Version {
            what: format!("dataset format referenced by model {}", path.display()),
            found: meta.dataset_version,
            expected: DATASET_VERSION,
        });
    }
    Ok((model, meta))
}

fn trailer_crc(bytes: &[u8]) -> u32 {
    u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap())
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        Error::Version {
            what,
            found,
            expected,
        } => Error::Version {
            what: format!("{what} ({})", path.display()),
            found,
            expected,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarsegrain::fit_standardizer;

    fn sample_dataset() -> PairedDataset {
        let x = Series::new(2, (0..10).map(|i| i as f64 * 0.5).collect()).unwrap();
        let y = Series::new(4, (0..20).map(|i| (i as f64).sin()).collect()).unwrap();
        let mut ds = PairedDataset::new(SystemTag::Ks, x, y, 0.01).unwrap();
        ds.standardizer = Some(fit_standardizer(&ds).unwrap());
        ds
    }

    #[test]
    fn dataset_round_trip_is_bitwise() {
        let ds = sample_dataset();
        let bytes = encode_dataset(&ds, SplitKind::Val, 77).unwrap();
        let f = decode_dataset(&bytes).unwrap();
        assert_eq!(f.header.split, SplitKind::Val);
        assert_eq!(
            (f.header.len, f.header.d, f.header.m, f.header.config_hash),
            (5, 2, 2, 77)
        );
        assert_eq!(f.dataset.x, ds.x);
        assert_eq!(f.dataset.y(), ds.y());
        assert_eq!(f.dataset.standardizer, ds.standardizer);
        assert_eq!(
            encode_dataset(&f.dataset, SplitKind::Val, 77).unwrap(),
            bytes
        );
    }

    #[test]
    fn corruption_and_version_are_reported() {
        let mut bytes = encode_dataset(&sample_dataset(), SplitKind::Train, 0).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(decode_dataset(&bytes), Err(Error::Format(m)) if m.contains("checksum")));
        bytes[mid] ^= 1;
        bytes[4] = 9;
        match decode_dataset(&bytes) {
            Err(Error::Version {
                found, expected, ..
            }) => assert_eq!((found, expected), (9, 1)),
            other => panic!("{other:?}"),
        }
        assert!(decode_dataset(b"nope").is_err());
    }

    #[test]
    fn model_round_trip_is_bitwise() {
        let arch = Architecture {
            d: 3,
            m: 2,
            hidden: 4,
            head_x_width: 5,
            head_y_width: 6,
            dropout: 0.3,
        };
        let mut model = EmulatorModel::new(arch, 5).unwrap();
        model.set_trainable_groups(&[crate::seqmodel::Group::HeadX]);
        model.standardizer = Some(PairStandardizer {
            x: Standardizer::identity(3),
            y: Standardizer::identity(6),
        });
        let meta = ModelMeta {
            system: SystemTag::L96,
            mode: Mode::Tl,
            dataset_version: DATASET_VERSION,
            seed: 42,
            best_epoch: 17,
            config_hash: 0xdead_beef,
        };
        let bytes = encode_model(&model, &meta).unwrap();
        let (back, meta2) = decode_model(&bytes).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(back.digest(), model.digest());
        assert_eq!(back.trainable_groups(), model.trainable_groups());
        assert_eq!(back.standardizer, model.standardizer);
        assert_eq!(encode_model(&back, &meta2).unwrap(), bytes);
    }
}
