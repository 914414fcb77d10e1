//! Binary model artifact: scaler, VAE, teacher and student in one file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "CANIDSv\0"
//! version      u32
//! profile      u8        1 hcrl, 2 cic-iov, 3 synthetic
//! metadata     u32 length + UTF-8 JSON
//! scaler       u32 width + width f64 minimums + width f64 maximums
//! networks     encoder, mu head, logvar head, decoder, teacher, student;
//!              each: u32 layer count, then per layer
//!              u32 inputs, u32 outputs, u8 activation (0 linear, 1 relu),
//!              outputs*inputs f64 weights (row-major), outputs f64 biases
//! digest       32 bytes  SHA-256 of every preceding byte
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Profile, RunConfig};
use crate::distill::{ClassifierModel, DistillConfig, Role};
use crate::error::{Error, Result};
use crate::features::{ClassTable, ScalerParams};
use crate::neural::{Activation, Dense, Mlp};
use crate::vae::VaeModel;

pub const MAGIC: [u8; 8] = *b"CANIDSv\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub run: u64,
    pub vae: u64,
    pub teacher: u64,
    pub student: u64,
    pub split: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMetadata {
    pub config: RunConfig,
    pub distill: DistillConfig,
    pub classes: ClassTable,
    pub seeds: Seeds,
    pub scaler_fitted_on: String,
    /// SHA-256 (hex) over every training-trace value.
    pub trace_digest: String,
    pub train_windows: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelArtifact {
    pub profile: Profile,
    pub metadata: ArtifactMetadata,
    pub scaler: ScalerParams,
    pub vae: VaeModel,
    pub teacher: ClassifierModel,
    pub student: ClassifierModel,
}

/// Hex SHA-256 over a sequence of traces, each value as f64 LE.
pub fn trace_digest(traces: &[&[f64]]) -> String {
    let mut h = Sha256::new();
    for t in traces {
        h.update((t.len() as u64).to_le_bytes());
        for v in *t {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Artifact(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_mlp(out: &mut Vec<u8>, mlp: &Mlp) -> Result<()> {
    put_u32(out, mlp.layers().len())?;
    for layer in mlp.layers() {
        put_u32(out, layer.input)?;
        put_u32(out, layer.output)?;
        out.push(match layer.activation {
            Activation::Linear => 0,
            Activation::Relu => 1,
        });
        put_f64s(out, &layer.weights);
        put_f64s(out, &layer.biases);
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Artifact(format!("truncated artifact at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Artifact("length overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn mlp(&mut self, seed: u64) -> Result<Mlp> {
        let count = self.u32()?;
        let mut layers = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let input = self.u32()?;
            let output = self.u32()?;
            let activation = match self.u8()? {
                0 => Activation::Linear,
                1 => Activation::Relu,
                other => return Err(Error::Artifact(format!("unknown activation code {other}"))),
            };
            let len = input
                .checked_mul(output)
                .ok_or_else(|| Error::Artifact("layer size overflow".into()))?;
            let weights = self.f64s(len)?;
            let biases = self.f64s(output)?;
            layers.push(Dense {
                input,
                output,
                weights,
                biases,
                activation,
            });
        }
        Mlp::from_layers(layers, seed).map_err(|e| Error::Artifact(format!("invalid network: {e}")))
    }
}

impl ModelArtifact {
    pub fn classes(&self) -> ClassTable {
        self.teacher.classes.clone()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.profile.code());
        let meta = serde_json::to_vec(&self.metadata).map_err(|e| Error::Artifact(e.to_string()))?;
        put_u32(&mut out, meta.len())?;
        out.extend_from_slice(&meta);
        put_u32(&mut out, self.scaler.width())?;
        put_f64s(&mut out, &self.scaler.min);
        put_f64s(&mut out, &self.scaler.max);
        for net in [
            &self.vae.encoder,
            &self.vae.mu_head,
            &self.vae.logvar_head,
            &self.vae.decoder,
            &self.teacher.net,
            &self.student.net,
        ] {
            put_mlp(&mut out, net)?;
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 || bytes[..8] != MAGIC {
            return Err(Error::Artifact("not a model artifact (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Artifact(format!(
                "artifact format version {version}, this build reads version {FORMAT_VERSION}"
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Artifact("artifact digest mismatch (file corrupted)".into()));
        }
        let mut r = Reader { bytes: body, pos: 12 };
        let profile = Profile::from_code(r.u8()?)?;
        let meta_len = r.u32()?;
        let metadata: ArtifactMetadata =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Artifact(format!("metadata: {e}")))?;
        if metadata.config.profile != profile {
            return Err(Error::Artifact("profile byte disagrees with metadata".into()));
        }
        let width = r.u32()?;
        let scaler = ScalerParams {
            min: r.f64s(width)?,
            max: r.f64s(width)?,
            fitted_on: metadata.scaler_fitted_on.clone(),
        };
        let vae_cfg = metadata.config.vae_config();
        let s = metadata.seeds.vae;
        let encoder = r.mlp(s)?;
        let mu_head = r.mlp(s.wrapping_add(1))?;
        let logvar_head = r.mlp(s.wrapping_add(2))?;
        let decoder = r.mlp(s.wrapping_add(3))?;
        let vae = VaeModel::from_parts(encoder, mu_head, logvar_head, decoder, vae_cfg)
            .map_err(|e| Error::Artifact(format!("invalid VAE: {e}")))?;
        let classes = metadata.classes.clone();
        let d = &metadata.distill;
        let teacher_net = r.mlp(d.teacher.seed)?;
        let teacher = ClassifierModel::from_net(Role::Teacher, teacher_net, classes.clone(), d.teacher_budget)?;
        let student_net = r.mlp(d.student.seed)?;
        let student = ClassifierModel::from_net(Role::Student, student_net, classes, d.student_budget)?;
        if r.pos != body.len() {
            return Err(Error::Artifact(format!("{} trailing bytes", body.len() - r.pos)));
        }
        if scaler.width() != vae.input_width() {
            return Err(Error::Artifact("scaler width does not match the VAE input".into()));
        }
        Ok(ModelArtifact {
            profile,
            metadata,
            scaler,
            vae,
            teacher,
            student,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
