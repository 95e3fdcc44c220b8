//! Binary model checkpoints.
//!
//! Layout: magic `AGL1`, u32 LE format version, u64 LE length-prefixed JSON
//! descriptor (kind, architectures, parameter name/shape table, training
//! metadata), then the raw little-endian f32 parameter arrays in the declared
//! order. Round-trips are bit-exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{MlpArchitecture, MlpParams, ParamSet, VaeArchitecture, VaeParams};
use crate::rng::seeded_rng;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"AGL1";
pub const VERSION: u32 = 1;

/// Training provenance stored in the descriptor.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_losses: BTreeMap<String, f64>,
    pub init: String,
    pub precision: String,
}

impl TrainMeta {
    pub fn new(seed: u64, epochs: usize) -> Self {
        TrainMeta {
            seed,
            epochs,
            final_losses: BTreeMap::new(),
            init: "glorot-uniform".into(),
            precision: "f32".into(),
        }
    }
}

/// What a checkpoint holds.
#[derive(Clone, Debug, PartialEq)]
pub enum CheckpointPayload {
    Vae(VaeParams<f32>),
    VaeGan {
        vae: VaeParams<f32>,
        discriminator: MlpParams<f32>,
    },
    Classifier(MlpParams<f32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub payload: CheckpointPayload,
    pub meta: TrainMeta,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Descriptor {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    vae: Option<VaeArchitecture>,
    #[serde(skip_serializing_if = "Option::is_none")]
    discriminator: Option<MlpArchitecture>,
    #[serde(skip_serializing_if = "Option::is_none")]
    classifier: Option<MlpArchitecture>,
    params: Vec<ParamEntry>,
    meta: TrainMeta,
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self.payload {
            CheckpointPayload::Vae(_) => "vae",
            CheckpointPayload::VaeGan { .. } => "vae-gan",
            CheckpointPayload::Classifier(_) => "classifier",
        }
    }

    /// The VAE parameters, for checkpoints that carry them.
    pub fn vae(&self) -> Result<&VaeParams<f32>> {
        match &self.payload {
            CheckpointPayload::Vae(v) | CheckpointPayload::VaeGan { vae: v, .. } => Ok(v),
            CheckpointPayload::Classifier(_) => Err(Error::Incompatible(
                "checkpoint holds a classifier, not a generative model".into(),
            )),
        }
    }

    pub fn classifier(&self) -> Result<&MlpParams<f32>> {
        match &self.payload {
            CheckpointPayload::Classifier(c) => Ok(c),
            _ => Err(Error::Incompatible(
                "checkpoint does not hold a latent classifier".into(),
            )),
        }
    }

    /// Parameter tensors in canonical declared order.
    fn param_table(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut items: Vec<(String, &Tensor<f32>)> = Vec::new();
        match &self.payload {
            CheckpointPayload::Vae(v) => v.visit("", &mut |n, t| items.push((n, t))),
            CheckpointPayload::VaeGan {
                vae,
                discriminator,
            } => {
                vae.visit("", &mut |n, t| items.push((n, t)));
                discriminator.visit("disc", &mut |n, t| items.push((n, t)));
            }
            CheckpointPayload::Classifier(c) => c.visit("clf", &mut |n, t| items.push((n, t))),
        }
        items
    }

    fn descriptor(&self) -> Descriptor {
        let params = self
            .param_table()
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect();
        let (vae, discriminator, classifier) = match &self.payload {
            CheckpointPayload::Vae(v) => (Some(v.arch.clone()), None, None),
            CheckpointPayload::VaeGan {
                vae,
                discriminator,
            } => (
                Some(vae.arch.clone()),
                Some(discriminator.arch.clone()),
                None,
            ),
            CheckpointPayload::Classifier(c) => (None, None, Some(c.arch.clone())),
        };
        Descriptor {
            kind: self.kind().to_string(),
            vae,
            discriminator,
            classifier,
            params,
            meta: self.meta.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let descriptor = serde_json::to_vec(&self.descriptor())?;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(descriptor.len() as u64).to_le_bytes());
        out.extend_from_slice(&descriptor);
        for (_, tensor) in self.param_table() {
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut cursor = bytes;
        let mut magic = [0u8; 4];
        cursor
            .read_exact(&mut magic)
            .map_err(|_| Error::CheckpointBadMagic)?;
        if magic != MAGIC {
            return Err(Error::CheckpointBadMagic);
        }
        let mut word = [0u8; 4];
        cursor
            .read_exact(&mut word)
            .map_err(|_| Error::CheckpointMalformed("missing version".into()))?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::CheckpointBadVersion(version));
        }
        let mut len8 = [0u8; 8];
        cursor
            .read_exact(&mut len8)
            .map_err(|_| Error::CheckpointMalformed("missing descriptor length".into()))?;
        let desc_len = u64::from_le_bytes(len8) as usize;
        if cursor.len() < desc_len {
            return Err(Error::CheckpointMalformed(
                "descriptor extends past end of file".into(),
            ));
        }
        let descriptor: Descriptor = serde_json::from_slice(&cursor[..desc_len])?;
        cursor = &cursor[desc_len..];

        // Build parameter holders from the declared architecture, then fill
        // them in declared order.
        let mut rng = seeded_rng(0, "checkpoint-shell");
        let payload = match descriptor.kind.as_str() {
            "vae" => {
                let arch = descriptor
                    .vae
                    .clone()
                    .ok_or_else(|| Error::CheckpointMalformed("vae descriptor missing".into()))?;
                CheckpointPayload::Vae(VaeParams::init(arch, &mut rng))
            }
            "vae-gan" => {
                let arch = descriptor
                    .vae
                    .clone()
                    .ok_or_else(|| Error::CheckpointMalformed("vae descriptor missing".into()))?;
                let darch = descriptor.discriminator.clone().ok_or_else(|| {
                    Error::CheckpointMalformed("discriminator descriptor missing".into())
                })?;
                CheckpointPayload::VaeGan {
                    vae: VaeParams::init(arch, &mut rng),
                    discriminator: MlpParams::init(darch, &mut rng),
                }
            }
            "classifier" => {
                let arch = descriptor.classifier.clone().ok_or_else(|| {
                    Error::CheckpointMalformed("classifier descriptor missing".into())
                })?;
                CheckpointPayload::Classifier(MlpParams::init(arch, &mut rng))
            }
            other => {
                return Err(Error::CheckpointMalformed(format!(
                    "unknown kind `{other}`"
                )))
            }
        };

        let mut checkpoint = Checkpoint {
            payload,
            meta: descriptor.meta.clone(),
        };

        // Validate the declared table against the architecture-derived one.
        {
            let table = checkpoint.param_table();
            if table.len() != descriptor.params.len() {
                return Err(Error::CheckpointMalformed(format!(
                    "parameter table length {} does not match architecture ({})",
                    descriptor.params.len(),
                    table.len()
                )));
            }
            for ((name, tensor), entry) in table.iter().zip(&descriptor.params) {
                if *name != entry.name || tensor.shape() != entry.shape.as_slice() {
                    return Err(Error::CheckpointMalformed(format!(
                        "parameter `{}` {:?} does not match declared `{}` {:?}",
                        name,
                        tensor.shape(),
                        entry.name,
                        entry.shape
                    )));
                }
            }
        }

        // Fill values.
        let fill = |t: &mut Tensor<f32>, cursor: &mut &[u8]| -> Result<()> {
            let need = t.numel() * 4;
            if cursor.len() < need {
                return Err(Error::CheckpointMalformed(format!(
                    "parameter payload truncated: need {need} bytes, found {}",
                    cursor.len()
                )));
            }
            for (v, chunk) in t.data_mut().iter_mut().zip(cursor[..need].chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
            }
            *cursor = &cursor[need..];
            Ok(())
        };
        match &mut checkpoint.payload {
            CheckpointPayload::Vae(v) => {
                let mut result = Ok(());
                v.visit_mut("", &mut |_, t| {
                    if result.is_ok() {
                        result = fill(t, &mut cursor);
                    }
                });
                result?;
            }
            CheckpointPayload::VaeGan {
                vae,
                discriminator,
            } => {
                let mut result = Ok(());
                vae.visit_mut("", &mut |_, t| {
                    if result.is_ok() {
                        result = fill(t, &mut cursor);
                    }
                });
                discriminator.visit_mut("disc", &mut |_, t| {
                    if result.is_ok() {
                        result = fill(t, &mut cursor);
                    }
                });
                result?;
            }
            CheckpointPayload::Classifier(c) => {
                let mut result = Ok(());
                c.visit_mut("clf", &mut |_, t| {
                    if result.is_ok() {
                        result = fill(t, &mut cursor);
                    }
                });
                result?;
            }
        }
        if !cursor.is_empty() {
            return Err(Error::CheckpointMalformed(format!(
                "{} trailing bytes",
                cursor.len()
            )));
        }
        Ok(checkpoint)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        f.write_all(&bytes)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

