//! Prior files: a little-endian binary form (bit-exact) and a JSON form.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::motion::{MotionLayout, Normalizer};
use crate::schedule::{DiffusionSchedule, ScheduleParams};

use super::gmm::{GmmComponent, GmmPrior, LowRankCov};

const MAGIC: &[u8; 8] = b"COINGMM\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ComponentRecord {
    weight: f64,
    mean: Vec<f64>,
    diag: Vec<f64>,
    /// Factor columns.
    factor: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PriorRecord {
    format: String,
    version: u32,
    dim: usize,
    layout: Option<MotionLayout>,
    schedule: ScheduleParams,
    cov_floor: f64,
    normalizer: Normalizer,
    components: Vec<ComponentRecord>,
}

pub fn write_prior_json<W: Write>(prior: &GmmPrior, w: W) -> Result<()> {
    let record = PriorRecord {
        format: "coin-gmm".into(),
        version: VERSION,
        dim: prior.dim(),
        layout: prior.layout,
        schedule: prior.schedule.params(),
        cov_floor: prior.cov_floor,
        normalizer: prior.normalizer.clone(),
        components: prior
            .components
            .iter()
            .map(|c| ComponentRecord {
                weight: c.weight,
                mean: c.mean.as_slice().to_vec(),
                diag: c.cov.diag().as_slice().to_vec(),
                factor: c.cov.factor().column_iter().map(|col| col.iter().copied().collect()).collect(),
            })
            .collect(),
    };
    serde_json::to_writer(w, &record)?;
    Ok(())
}

pub fn read_prior_json<R: Read>(r: R) -> Result<GmmPrior> {
    let record: PriorRecord = serde_json::from_reader(r)?;
    if record.version != VERSION {
        return Err(CoinError::Format(format!("unsupported prior version {}", record.version)));
    }
    let dim = record.dim;
    let mut comps = Vec::with_capacity(record.components.len());
    for c in record.components {
        if c.mean.len() != dim || c.diag.len() != dim || c.factor.iter().any(|col| col.len() != dim) {
            return Err(CoinError::Format("component dimension mismatch".into()));
        }
        let rank = c.factor.len();
        let factor = DMatrix::from_iterator(dim, rank, c.factor.into_iter().flatten());
        let cov = LowRankCov::new(DVector::from_vec(c.diag), factor)?;
        comps.push(GmmComponent { weight: c.weight, mean: DVector::from_vec(c.mean), cov: Arc::new(cov) });
    }
    assemble(comps, record.schedule, record.cov_floor, record.normalizer, record.layout)
}

fn assemble(comps: Vec<GmmComponent>, schedule: ScheduleParams, cov_floor: f64, normalizer: Normalizer, layout: Option<MotionLayout>) -> Result<GmmPrior> {
    let dim = comps.first().map(|c| c.mean.len()).unwrap_or(0);
    if normalizer.dim() != dim {
        return Err(CoinError::Format("normalizer dimension mismatch".into()));
    }
    let mut prior = GmmPrior::new(comps, DiffusionSchedule::new(schedule)?, cov_floor)?;
    prior.normalizer = normalizer;
    prior.layout = layout;
    Ok(prior)
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: usize) -> Result<()> {
        Ok(self.0.write_all(&(v as u64).to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64s<'a>(&mut self, v: impl IntoIterator<Item = &'a f64>) -> Result<()> {
        for x in v {
            self.f64(*x)?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(|e| CoinError::Format(format!("truncated prior file: {e}")))?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.bytes()?);
        usize::try_from(v).map_err(|_| CoinError::Format("size overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn write_prior_binary<W: Write>(prior: &GmmPrior, w: W) -> Result<()> {
    let mut w = Writer(w);
    w.0.write_all(MAGIC)?;
    w.u32(VERSION)?;
    let dim = prior.dim();
    w.u64(dim)?;
    w.u64(prior.len())?;
    match prior.layout {
        Some(l) => {
            w.u32(1)?;
            w.u64(l.frames)?;
            w.u64(l.j_local)?;
        }
        None => w.u32(0)?,
    }
    let s = prior.schedule.params();
    w.f64(s.cosine_offset)?;
    w.f64(s.alpha_bar_min)?;
    w.u64(s.table_resolution)?;
    w.f64(prior.cov_floor)?;
    w.f64s(&prior.normalizer.offset)?;
    w.f64s(&prior.normalizer.scale)?;
    for c in &prior.components {
        w.f64(c.weight)?;
        w.f64s(c.mean.iter())?;
        w.f64s(c.cov.diag().iter())?;
        w.u64(c.cov.rank())?;
        w.f64s(c.cov.factor().iter())?;
    }
    Ok(())
}

pub fn read_prior_binary<R: Read>(r: R) -> Result<GmmPrior> {
    let mut r = Reader(r);
    if &r.bytes::<8>()? != MAGIC {
        return Err(CoinError::Format("not a prior file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CoinError::Format(format!("unsupported prior version {version}")));
    }
    let dim = r.u64()?;
    let k = r.u64()?;
    let layout = match r.u32()? {
        0 => None,
        1 => Some(MotionLayout::new(r.u64()?, r.u64()?)),
        other => return Err(CoinError::Format(format!("bad layout tag {other}"))),
    };
    let schedule = ScheduleParams { cosine_offset: r.f64()?, alpha_bar_min: r.f64()?, table_resolution: r.u64()? };
    let cov_floor = r.f64()?;
    let normalizer = Normalizer { offset: r.f64s(dim)?, scale: r.f64s(dim)? };
    let mut comps = Vec::with_capacity(k);
    for _ in 0..k {
        let weight = r.f64()?;
        let mean = DVector::from_vec(r.f64s(dim)?);
        let diag = DVector::from_vec(r.f64s(dim)?);
        let rank = r.u64()?;
        if rank > dim {
            return Err(CoinError::Format("factor rank exceeds dimension".into()));
        }
        let factor = DMatrix::from_vec(dim, rank, r.f64s(dim * rank)?);
        comps.push(GmmComponent { weight, mean, cov: Arc::new(LowRankCov::new(diag, factor)?) });
    }
    assemble(comps, schedule, cov_floor, normalizer, layout)
}

/// Writes JSON for a `.json` extension and the binary form otherwise.
pub fn save_prior(prior: &GmmPrior, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    if path.extension().is_some_and(|e| e == "json") {
        write_prior_json(prior, file)
    } else {
        write_prior_binary(prior, file)
    }
}

/// Reads either form, detected from the leading bytes.
pub fn load_prior(path: &Path) -> Result<GmmPrior> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        read_prior_binary(bytes.as_slice())
    } else {
        read_prior_json(bytes.as_slice())
    }
}
