//! Model checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "FQCLNET\0"
//! version    u32      1
//! spec_len   u32      length of the spec text
//! spec       UTF-8    `key = value` lines describing the architecture
//! n_params   u64      number of parameter scalars
//! params     f32 x n  parameter values in construction order
//! n_stats    u64      number of batchnorm running-stat scalars
//! stats      f32 x n  per layer: running means then running variances
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dual::DualNet;
use super::{AggregatorVariant, BackboneConfig, ScalingMode};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormConfig, Float};
use crate::wavelet::Selection;

const MAGIC: &[u8; 8] = b"FQCLNET\0";
const VERSION: u32 = 1;

/// Everything needed to rebuild a [`DualNet`] skeleton.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub backbone: BackboneConfig,
    pub variant: AggregatorVariant,
    pub selection: Selection,
    pub bn: BatchNormConfig,
    pub fuser_frozen: bool,
}

impl ModelSpec {
    pub fn of<T: Float>(net: &DualNet<T>) -> Self {
        Self {
            backbone: net.config,
            variant: net.variant,
            selection: net.selection,
            bn: net.state.bn,
            fuser_frozen: net.fuser.is_some() && net.fuser_frozen(),
        }
    }

    pub fn to_text(&self) -> String {
        let b = &self.backbone;
        let blocks = b.blocks_per_stage.map(|x| x.to_string()).join(",");
        format!(
            "base_width = {}\nblocks_per_stage = {blocks}\nnum_classes = {}\nscaling_mode = {}\n\
             image_channels = {}\nvariant = {}\nselection = {}\nbn_momentum = {:?}\nbn_eps = {:?}\n\
             fuser_frozen = {}\n",
            b.base_width,
            b.num_classes,
            b.scaling_mode.as_str(),
            b.image_channels,
            self.variant.as_str(),
            self.selection.as_str(),
            self.bn.momentum,
            self.bn.eps,
            self.fuser_frozen,
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = ModelSpec {
            backbone: BackboneConfig::resnet18(10).with_scaling(ScalingMode::HalveBoth),
            variant: AggregatorVariant::default(),
            selection: Selection::default(),
            bn: BatchNormConfig::default(),
            fuser_frozen: false,
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: String| Error::Parse { line: i + 1, message: m };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| bad(format!("expected `key = value`, got `{line}`")))?;
            let num = |v: &str| v.parse::<usize>().map_err(|e| bad(format!("{key}: {e}")));
            let real = |v: &str| v.parse::<f64>().map_err(|e| bad(format!("{key}: {e}")));
            match key {
                "base_width" => spec.backbone.base_width = num(value)?,
                "num_classes" => spec.backbone.num_classes = num(value)?,
                "image_channels" => spec.backbone.image_channels = num(value)?,
                "blocks_per_stage" => {
                    let parts = value.split(',').map(|p| num(p.trim())).collect::<Result<Vec<_>>>()?;
                    spec.backbone.blocks_per_stage = parts
                        .try_into()
                        .map_err(|_| bad("blocks_per_stage needs 4 entries".into()))?;
                }
                "scaling_mode" => {
                    spec.backbone.scaling_mode = ScalingMode::parse(value)
                        .ok_or_else(|| bad(format!("unknown scaling mode `{value}`")))?
                }
                "variant" => {
                    spec.variant = AggregatorVariant::parse(value)
                        .ok_or_else(|| bad(format!("unknown variant `{value}`")))?
                }
                "selection" => {
                    spec.selection = Selection::parse(value)
                        .ok_or_else(|| bad(format!("unknown selection `{value}`")))?
                }
                "bn_momentum" => spec.bn.momentum = real(value)?,
                "bn_eps" => spec.bn.eps = real(value)?,
                "fuser_frozen" => {
                    spec.fuser_frozen = value
                        .parse()
                        .map_err(|_| bad(format!("fuser_frozen: `{value}` is not a bool")))?
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        Ok(spec)
    }
}

fn put_f32s<W: Write, T: Float>(w: &mut W, values: &[T]) -> Result<()> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_checkpoint<T: Float, W: Write>(net: &DualNet<T>, mut w: W) -> Result<()> {
    let spec = ModelSpec::of(net).to_text();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(spec.len() as u32).to_le_bytes())?;
    w.write_all(spec.as_bytes())?;
    put_f32s(&mut w, &net.state.params.flatten())?;
    put_f32s(&mut w, &net.state.flatten_stats())?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("need {n} more bytes, file ends after {}", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s<T: Float>(&mut self, expected: usize, what: &str) -> Result<Vec<T>> {
        let at = self.pos;
        let n = self.u64()? as usize;
        if n != expected {
            return Err(Error::Format {
                offset: at,
                message: format!("{what}: file has {n} values, architecture needs {expected}"),
            });
        }
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect())
    }
}

pub fn read_checkpoint<T: Float, R: Read>(mut r: R) -> Result<DualNet<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Format { offset: 0, message: "not a model checkpoint".into() });
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Format { offset: 8, message: format!("unsupported version {version}") });
    }
    let len = cur.u32()? as usize;
    let at = cur.pos;
    let text = std::str::from_utf8(cur.take(len)?)
        .map_err(|e| Error::Format { offset: at, message: e.to_string() })?;
    let spec = ModelSpec::from_text(text)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = DualNet::new(spec.backbone, spec.variant, spec.selection, spec.bn, &mut rng)?;
    let params = cur.f32s::<T>(net.state.params.scalar_count(), "parameters")?;
    net.state.params.load_flat(&params)?;
    let stats = cur.f32s::<T>(net.state.stats_len(), "running stats")?;
    net.state.load_stats(&stats)?;
    if cur.pos != bytes.len() {
        return Err(Error::Format { offset: cur.pos, message: "trailing bytes".into() });
    }
    if spec.fuser_frozen {
        net.freeze_fuser();
    }
    Ok(net)
}

pub fn save_checkpoint<T: Float>(net: &DualNet<T>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Float>(path: &Path) -> Result<DualNet<T>> {
    read_checkpoint(std::fs::File::open(path)?)
}
