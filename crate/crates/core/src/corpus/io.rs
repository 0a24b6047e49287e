//! Binary corpus records and CSV feature dumps.
//!
//! A corpus file is `GGCR`, a little-endian `u32` version and `u64` record
//! count, followed by records of: id length (`u32`) and bytes, `F`, `T`, `C`
//! and token count (all `u32`), `F·T` `f32` frames, `T` `u16` labels and the
//! `u32` token ids.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Corpus, FeatureUtterance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"GGCR";
const VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    Ok(u32::from_le_bytes(get(r)?) as usize)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(corpus.len() as u64).to_le_bytes())?;
    for u in &corpus.utterances {
        put_u32(&mut w, u.id.len())?;
        w.write_all(u.id.as_bytes())?;
        put_u32(&mut w, u.features())?;
        put_u32(&mut w, u.len())?;
        put_u32(&mut w, corpus.senones)?;
        put_u32(&mut w, u.tokens.len())?;
        for v in u.frames.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        for &l in &u.labels {
            let l = u16::try_from(l).map_err(|_| Error::Format(format!("label {l} exceeds u16")))?;
            w.write_all(&l.to_le_bytes())?;
        }
        for &t in &u.tokens {
            put_u32(&mut w, t)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let mut r = BufReader::new(File::open(path)?);
    if &get::<4>(&mut r)? != MAGIC {
        return Err(Error::Format(format!("{} is not a corpus file", path.display())));
    }
    let version = u32::from_le_bytes(get(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported corpus version {version}")));
    }
    let n = u64::from_le_bytes(get(&mut r)?) as usize;
    let mut utterances = Vec::with_capacity(n);
    let mut dims = None;
    for _ in 0..n {
        let id_len = get_u32(&mut r)?;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id).map_err(|e| Error::Format(e.to_string()))?;
        let (f, t, c, nt) = (get_u32(&mut r)?, get_u32(&mut r)?, get_u32(&mut r)?, get_u32(&mut r)?);
        if *dims.get_or_insert((f, c)) != (f, c) {
            return Err(Error::Format(format!("utterance {id} changes F or C")));
        }
        let mut data = Vec::with_capacity(f * t);
        for _ in 0..f * t {
            data.push(f32::from_le_bytes(get(&mut r)?));
        }
        let labels = (0..t)
            .map(|_| Ok(u16::from_le_bytes(get(&mut r)?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let tokens = (0..nt).map(|_| get_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        utterances.push(FeatureUtterance {
            id,
            frames: Tensor::new(vec![f, t], data)?,
            labels,
            tokens,
        });
    }
    let (f, c) = dims.unwrap_or((0, 0));
    Corpus::new(f, c, utterances)
}

/// One row per frame: `t`, the features, then the label.
pub fn export_csv(utt: &FeatureUtterance, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let f = utt.features();
    let t = utt.len();
    let mut header = vec!["t".to_string()];
    header.extend((0..f).map(|i| format!("f{i}")));
    header.push("label".into());
    w.write_record(&header).map_err(csv_err)?;
    let src = utt.frames.data();
    for ti in 0..t {
        let mut row = vec![ti.to_string()];
        row.extend((0..f).map(|fi| src[fi * t + ti].to_string()));
        row.push(utt.labels[ti].to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}
