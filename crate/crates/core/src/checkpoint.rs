//! Model files: `GGAN`, a little-endian `u32` format version and `u32`
//! header length, a TOML header (architecture, training metadata and the
//! name and shape of every tensor), then the tensors as little-endian `f32`
//! in header order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    build_acoustic_model, build_discriminator, build_generator, AcousticModel, AcousticModelSpec, Discriminator,
    DiscriminatorSpec, Generator, GeneratorSpec,
};
use crate::nn::ParamSet;
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 4] = b"GGAN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "spec", rename_all = "kebab-case")]
pub enum Architecture {
    AcousticModel(AcousticModelSpec),
    Generator(GeneratorSpec),
    Discriminator(DiscriminatorSpec),
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::AcousticModel(_) => "acoustic-model",
            Architecture::Generator(_) => "generator",
            Architecture::Discriminator(_) => "discriminator",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub epoch: usize,
    pub dev_seer: Option<f64>,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    meta: Metadata,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub meta: Metadata,
    pub tensors: Vec<(String, Tensor)>,
}

fn tensors_of(ps: &ParamSet) -> Vec<(String, Tensor)> {
    ps.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
}

impl Checkpoint {
    pub fn from_acoustic(m: &AcousticModel, meta: Metadata) -> Self {
        Checkpoint {
            architecture: Architecture::AcousticModel(m.spec.clone()),
            meta,
            tensors: tensors_of(&m.params),
        }
    }

    pub fn from_generator(m: &Generator, meta: Metadata) -> Self {
        Checkpoint {
            architecture: Architecture::Generator(m.spec.clone()),
            meta,
            tensors: tensors_of(&m.params),
        }
    }

    pub fn from_discriminator(m: &Discriminator, meta: Metadata) -> Self {
        Checkpoint {
            architecture: Architecture::Discriminator(m.spec.clone()),
            meta,
            tensors: tensors_of(&m.params),
        }
    }

    fn wrong_kind(&self, want: &str) -> Error {
        Error::Format(format!("checkpoint holds a {}, expected a {want}", self.architecture.name()))
    }

    // Initial values are overwritten by `load`, so any generator will do.
    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    pub fn to_acoustic(&self) -> Result<AcousticModel> {
        let Architecture::AcousticModel(spec) = &self.architecture else {
            return Err(self.wrong_kind("acoustic-model"));
        };
        let mut m = build_acoustic_model(spec, &mut Self::rng())?;
        m.params.load(&self.tensors)?;
        Ok(m)
    }

    pub fn to_generator(&self) -> Result<Generator> {
        let Architecture::Generator(spec) = &self.architecture else {
            return Err(self.wrong_kind("generator"));
        };
        let mut m = build_generator(spec, &mut Self::rng())?;
        m.params.load(&self.tensors)?;
        Ok(m)
    }

    pub fn to_discriminator(&self) -> Result<Discriminator> {
        let Architecture::Discriminator(spec) = &self.architecture else {
            return Err(self.wrong_kind("discriminator"));
        };
        let mut m = build_discriminator(spec, &mut Self::rng())?;
        m.params.load(&self.tensors)?;
        Ok(m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            architecture: self.architecture.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let text = toml::to_string(&header)?;
        let payload: usize = self.tensors.iter().map(|(_, t)| t.numel() * 4).sum();
        let mut out = Vec::with_capacity(12 + text.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = || Error::Format("checkpoint is truncated".into());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let len = word(8) as usize;
        let text = bytes.get(12..12 + len).ok_or_else(short)?;
        let text = std::str::from_utf8(text).map_err(|e| Error::Format(e.to_string()))?;
        let header: Header = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let mut at = 12 + len;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n = numel(&e.shape);
            let raw = bytes.get(at..at + 4 * n).ok_or_else(short)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((e.name, Tensor::new(e.shape, data)?));
            at += 4 * n;
        }
        if at != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes in checkpoint", bytes.len() - at)));
        }
        Ok(Checkpoint {
            architecture: header.architecture,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::GeneratorSpec;

    fn meta() -> Metadata {
        Metadata {
            seed: 7,
            epoch: 3,
            dev_seer: Some(0.123456789),
            config_hash: "abc".into(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g: Generator = build_generator(&GeneratorSpec::default_fc(4), &mut rng).unwrap();
        let ck = Checkpoint::from_generator(&g, meta());
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        let g2 = back.to_generator().unwrap();
        assert_eq!(g2.params.fingerprint(), g.params.fingerprint());
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert!(back.to_acoustic().is_err());

        let am: AcousticModel = build_acoustic_model(&AcousticModelSpec::new(4, 8, 6), &mut rng).unwrap();
        let back = Checkpoint::from_bytes(&Checkpoint::from_acoustic(&am, meta()).to_bytes().unwrap()).unwrap();
        assert_eq!(back.to_acoustic().unwrap().params.fingerprint(), am.params.fingerprint());

        let d: Discriminator = build_discriminator(&DiscriminatorSpec::compact(4, 16, [4; 4]), &mut rng).unwrap();
        let back = Checkpoint::from_bytes(&Checkpoint::from_discriminator(&d, meta()).to_bytes().unwrap()).unwrap();
        assert_eq!(back.to_discriminator().unwrap().params.fingerprint(), d.params.fingerprint());
    }

    #[test]
    fn rejects_bad_files() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g: Generator = build_generator(&GeneratorSpec::default_fc(2), &mut rng).unwrap();
        let bytes = Checkpoint::from_generator(&g, meta()).to_bytes().unwrap();
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(Error::Format(m)) if m.contains("version 2")));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}
