//! Versioned binary files for designs and networks.
//!
//! Layout: magic `TBQ1`, a `u32` kind tag, then the payload. Matrices are
//! stored as `u64 rows, u64 cols` followed by row-major `f64` values; all
//! integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::deep::{Activation, Dense, Head, Network, QuantStage, SoftChannel};
use crate::linear_task::QuantizerDesign;
use crate::quant::{LearnedQuantizerSpec, UniformQuantizerSpec};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TBQ1";
pub const KIND_DESIGN: u32 = 1;
pub const KIND_NETWORK: u32 = 2;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }

    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }

    fn matrix(&mut self, m: &DMatrix<f64>) -> Result<()> {
        self.u64(m.nrows() as u64)?;
        self.u64(m.ncols() as u64)?;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)])?;
            }
        }
        Ok(())
    }

    fn row(&mut self, v: &[f64]) -> Result<()> {
        self.matrix(&DMatrix::from_row_slice(1, v.len(), v))
    }

    fn header(&mut self, kind: u32) -> Result<()> {
        self.0.write_all(MAGIC)?;
        self.u32(kind)
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated file: {e}")))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn count(&mut self) -> Result<usize> {
        let v = self.u64()?;
        if v > 1 << 32 {
            return Err(Error::Format(format!("implausible size {v}")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let rows = self.count()?;
        let cols = self.count()?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    fn row(&mut self) -> Result<Vec<f64>> {
        let m = self.matrix()?;
        if m.nrows() != 1 && !m.is_empty() {
            return Err(Error::Format(format!("expected a row vector, got {}x{}", m.nrows(), m.ncols())));
        }
        Ok(m.iter().copied().collect())
    }

    fn header(&mut self, kind: u32) -> Result<()> {
        let magic: [u8; 4] = self.bytes()?;
        if &magic != MAGIC {
            return Err(Error::Format("missing TBQ1 magic bytes".into()));
        }
        let found = self.u32()?;
        if found != kind {
            return Err(Error::Format(format!("expected file kind {kind}, found {found}")));
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        let mut rest = Vec::new();
        self.0.read_to_end(&mut rest)?;
        if rest.is_empty() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} trailing bytes", rest.len())))
        }
    }
}

pub fn write_design<W: Write>(design: &QuantizerDesign, out: W) -> Result<()> {
    let mut w = Writer(out);
    w.header(KIND_DESIGN)?;
    w.u64(design.quantizer.levels() as u64)?;
    w.f64(design.quantizer.support())?;
    w.u8(design.quantizer.dithered() as u8)?;
    w.matrix(&design.analog)?;
    w.matrix(&design.digital)?;
    w.f64(design.predicted_excess_mse)?;
    w.row(design.singular_values.as_slice())?;
    w.f64(design.waterline.unwrap_or(f64::NAN))
}

pub fn read_design<R: Read>(input: R) -> Result<QuantizerDesign> {
    let mut r = Reader(input);
    r.header(KIND_DESIGN)?;
    let levels = r.count()?;
    let support = r.f64()?;
    let dithered = r.u8()? != 0;
    let quantizer = UniformQuantizerSpec::new(levels, support, dithered).map_err(|e| Error::Format(e.to_string()))?;
    let analog = r.matrix()?;
    let digital = r.matrix()?;
    if digital.ncols() != analog.nrows() {
        return Err(Error::Format(format!("digital matrix has {} columns for {} quantizers", digital.ncols(), analog.nrows())));
    }
    let predicted_excess_mse = r.f64()?;
    let singular_values = DVector::from_vec(r.row()?);
    let waterline = Some(r.f64()?).filter(|w| !w.is_nan());
    r.finish()?;
    Ok(QuantizerDesign {
        analog,
        quantizer,
        digital,
        predicted_excess_mse,
        singular_values,
        waterline,
    })
}

fn write_layers<W: Write>(w: &mut Writer<W>, layers: &[Dense]) -> Result<()> {
    w.u64(layers.len() as u64)?;
    for l in layers {
        w.u32(match l.activation {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        })?;
        w.matrix(&l.weights)?;
        w.row(l.bias.as_slice())?;
    }
    Ok(())
}

fn read_layers<R: Read>(r: &mut Reader<R>) -> Result<Vec<Dense>> {
    let count = r.count()?;
    (0..count)
        .map(|_| {
            let activation = match r.u32()? {
                0 => Activation::Identity,
                1 => Activation::Tanh,
                t => return Err(Error::Format(format!("unknown activation tag {t}"))),
            };
            let weights = r.matrix()?;
            let bias = DVector::from_vec(r.row()?);
            Ok(Dense { weights, bias, activation })
        })
        .collect()
}

/// Layer order: head, analog layers, quantization stage, digital layers.
pub fn write_network<W: Write>(net: &Network, out: W) -> Result<()> {
    let mut w = Writer(out);
    w.header(KIND_NETWORK)?;
    match net.head() {
        Head::Estimation { outputs } => {
            w.u32(0)?;
            w.u64(outputs as u64)?;
        }
        Head::Classification { classes } => {
            w.u32(1)?;
            w.u64(classes as u64)?;
        }
    }
    write_layers(&mut w, net.analog())?;
    match net.quant() {
        QuantStage::Soft(chans) => {
            w.u32(0)?;
            w.u64(chans.len() as u64)?;
            for c in chans {
                w.row(&c.a)?;
                w.row(&c.b)?;
                w.row(&c.c)?;
            }
        }
        QuantStage::Hard(chans) => {
            w.u32(1)?;
            w.u64(chans.len() as u64)?;
            for c in chans {
                w.row(c.thresholds())?;
                w.row(c.levels())?;
            }
        }
    }
    write_layers(&mut w, net.digital())
}

pub fn read_network<R: Read>(input: R) -> Result<Network> {
    let mut r = Reader(input);
    r.header(KIND_NETWORK)?;
    let head = match (r.u32()?, r.count()?) {
        (0, outputs) => Head::Estimation { outputs },
        (1, classes) => Head::Classification { classes },
        (t, _) => return Err(Error::Format(format!("unknown head tag {t}"))),
    };
    let analog = read_layers(&mut r)?;
    let stage = r.u32()?;
    let channels = r.count()?;
    let quant = match stage {
        0 => QuantStage::Soft(
            (0..channels)
                .map(|_| Ok(SoftChannel { a: r.row()?, b: r.row()?, c: r.row()? }))
                .collect::<Result<_>>()?,
        ),
        1 => QuantStage::Hard(
            (0..channels)
                .map(|_| {
                    let thresholds = r.row()?;
                    let levels = r.row()?;
                    LearnedQuantizerSpec::new(thresholds, levels).map_err(|e| Error::Format(e.to_string()))
                })
                .collect::<Result<_>>()?,
        ),
        t => return Err(Error::Format(format!("unknown quantizer stage tag {t}"))),
    };
    let digital = read_layers(&mut r)?;
    r.finish()?;
    Network::from_parts(analog, quant, digital, head).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_design(design: &QuantizerDesign, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_design(design, &mut buf)?;
    Ok(std::fs::write(path, buf)?)
}

pub fn load_design(path: &Path) -> Result<QuantizerDesign> {
    read_design(std::fs::read(path)?.as_slice())
}

pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_network(net, &mut buf)?;
    Ok(std::fs::write(path, buf)?)
}

pub fn load_network(path: &Path) -> Result<Network> {
    read_network(std::fs::read(path)?.as_slice())
}
