//! Binary checkpoint format.
//!
//! All integers are little-endian `u32`, all floats little-endian `f32`.
//!
//! ```text
//! "MCPN"  version
//! K  { kernel_length c1 c2 c3 } * K
//! h1 h2 h3 h4  num_classes  n_points  wf_num  wf_den
//! tensor_count  { rank dims[rank] data[prod(dims)] } * tensor_count
//! crc32
//! ```
//!
//! Tensors are written per conv+BN layer (columns first, then head) as
//! kernel, bias, gamma, beta, running mean, running var, followed by the
//! output kernel and bias.

use std::path::Path;

use super::{Conv, ConvBn, MCPNetConfig, Model, WidthFactor};
use crate::autodiff::BatchNormStats;
use crate::error::{Error, Result};
use crate::model::ColumnConfig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MCPN";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("checkpoint field exceeds u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn tensor<T: Scalar>(&mut self, shape: &[usize], data: &[T]) {
        self.u32(shape.len());
        for &d in shape {
            self.u32(d);
        }
        for v in data {
            self.0.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::InvalidConfig("checkpoint truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn tensor<T: Scalar>(&mut self, expected: &[usize]) -> Result<Vec<T>> {
        let rank = self.u32()?;
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        if shape != expected {
            return Err(Error::InvalidConfig(format!(
                "checkpoint tensor has shape {shape:?}, config implies {expected:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| T::of(f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))))
            .collect())
    }
}

fn write_layer<T: Scalar>(w: &mut Writer, l: &ConvBn<T>) {
    w.tensor(l.conv.kernel.shape(), l.conv.kernel.data());
    w.tensor(l.conv.bias.shape(), l.conv.bias.data());
    w.tensor(l.gamma.shape(), l.gamma.data());
    w.tensor(l.beta.shape(), l.beta.data());
    w.tensor(&[l.stats.mean.len()], &l.stats.mean);
    w.tensor(&[l.stats.var.len()], &l.stats.var);
}

/// Serializes a model. Parameters are stored as `f32`.
pub fn to_bytes<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let cfg = model.config();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION as usize);
    w.u32(cfg.columns.len());
    for col in &cfg.columns {
        w.u32(col.kernel_length);
        for &c in &col.channels {
            w.u32(c);
        }
    }
    for &h in &cfg.head_channels {
        w.u32(h);
    }
    w.u32(cfg.num_classes);
    w.u32(cfg.n_points);
    w.u32(cfg.width_factor.num() as usize);
    w.u32(cfg.width_factor.den() as usize);

    let layers: Vec<&ConvBn<T>> = model
        .columns()
        .iter()
        .flatten()
        .chain(model.head())
        .collect();
    w.u32(layers.len() * 6 + 2);
    for l in layers {
        write_layer(&mut w, l);
    }
    let out = model.output();
    w.tensor(out.kernel.shape(), out.kernel.data());
    w.tensor(out.bias.shape(), out.bias.data());

    let crc = crc32fast::hash(&w.0);
    w.0.extend_from_slice(&crc.to_le_bytes());
    w.0
}

fn read_conv<T: Scalar>(r: &mut Reader, k: usize, c_in: usize, c_out: usize) -> Result<Conv<T>> {
    let kernel = Tensor::new(&[k, c_in, c_out], r.tensor(&[k, c_in, c_out])?)?;
    let bias = Tensor::new(&[c_out], r.tensor(&[c_out])?)?;
    Ok(Conv { kernel, bias })
}

fn read_layer<T: Scalar>(r: &mut Reader, k: usize, c_in: usize, c_out: usize) -> Result<ConvBn<T>> {
    let conv = read_conv(r, k, c_in, c_out)?;
    let gamma = Tensor::new(&[c_out], r.tensor(&[c_out])?)?;
    let beta = Tensor::new(&[c_out], r.tensor(&[c_out])?)?;
    let mean = r.tensor(&[c_out])?;
    let var = r.tensor(&[c_out])?;
    Ok(ConvBn {
        conv,
        gamma,
        beta,
        stats: BatchNormStats { mean, var },
    })
}

/// Parses a checkpoint, checking magic, checksum and version in that order.
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(Error::ChecksumMismatch);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    if crc32fast::hash(body) != stored {
        return Err(Error::ChecksumMismatch);
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let k = r.u32()?;
    let mut columns = Vec::with_capacity(k.min(64));
    for _ in 0..k {
        let kernel_length = r.u32()?;
        let channels = [r.u32()?, r.u32()?, r.u32()?];
        columns.push(ColumnConfig {
            kernel_length,
            channels,
        });
    }
    let head_channels = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
    let num_classes = r.u32()?;
    let n_points = r.u32()?;
    let (num, den) = (r.u32()?, r.u32()?);
    let config = MCPNetConfig {
        columns,
        head_channels,
        num_classes,
        n_points,
        width_factor: WidthFactor::new(num as u32, den as u32)?,
    };
    config.validate()?;

    let count = r.u32()?;
    let expected = (3 * k + 4) * 6 + 2;
    if count != expected {
        return Err(Error::InvalidConfig(format!(
            "checkpoint has {count} tensors, config implies {expected}"
        )));
    }
    let mut cols = Vec::with_capacity(k);
    for (c, col) in config.columns.iter().enumerate() {
        let mut c_in = 2;
        let mut layers = Vec::with_capacity(3);
        for &w in &config.column_widths(c) {
            layers.push(read_layer(&mut r, col.kernel_length, c_in, w)?);
            c_in = w;
        }
        cols.push(layers);
    }
    let mut c_in = config.aggregated_width();
    let mut head = Vec::with_capacity(4);
    for &w in &config.head_widths() {
        head.push(read_layer(&mut r, 1, c_in, w)?);
        c_in = w;
    }
    let output = read_conv(&mut r, 1, c_in, config.num_classes)?;
    if r.pos != body.len() {
        return Err(Error::InvalidConfig(format!(
            "{} trailing bytes in checkpoint",
            body.len() - r.pos
        )));
    }
    Ok(Model::from_parts(config, cols, head, output))
}

pub fn save<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    from_bytes(&bytes)
}
