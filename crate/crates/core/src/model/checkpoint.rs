//! Versioned binary checkpoint container.
//!
//! Layout: magic bytes, format version, config hash, then little-endian
//! 64-bit shapes followed by raw little-endian `f64` payloads. Round-trips
//! are bit-exact, so interrupted training resumes on the same trajectory.

use super::{DenseLayer, Encoder, EncoderGrads, Head, HeadGrads};
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SLCP";
const VERSION: u32 = 1;

/// Everything needed to resume training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub epoch: u64,
    pub rng_seed: u64,
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub encoder: Encoder,
    pub head: Head,
    pub encoder_velocity: EncoderGrads,
    pub head_velocity: HeadGrads,
}

struct Writer<W: Write> {
    out: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.out.write_all(&[v])?;
        Ok(())
    }

    fn u32(&mut self, v: u32) -> Result<()> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn u128(&mut self, v: u128) -> Result<()> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn f64_slice(&mut self, vs: &[f64]) -> Result<()> {
        for v in vs {
            self.out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    fn matrix(&mut self, m: &Matrix) -> Result<()> {
        self.u64(m.rows() as u64)?;
        self.u64(m.cols() as u64)?;
        self.f64_slice(m.data())
    }

    fn vec(&mut self, v: &[f64]) -> Result<()> {
        self.u64(v.len() as u64)?;
        self.f64_slice(v)
    }
}

struct Reader<R: Read> {
    inp: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.inp.read_exact(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inp.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.inp.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn u128(&mut self) -> Result<u128> {
        let mut b = [0u8; 16];
        self.inp.read_exact(&mut b)?;
        Ok(u128::from_le_bytes(b))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            self.inp.read_exact(&mut b)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let data = self.f64_vec(rows.checked_mul(cols).ok_or_else(|| Error::Parse {
            path: "<checkpoint>".into(),
            line: 0,
            byte_offset: 0,
            message: "matrix shape overflow".into(),
        })?)?;
        Matrix::from_vec(rows, cols, data)
    }

    fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        self.f64_vec(n)
    }
}

fn write_head<W: Write>(w: &mut Writer<W>, head: &Head) -> Result<()> {
    match head {
        Head::None => w.u8(0),
        Head::Hypersphere { weights, bias } => {
            w.u8(1)?;
            w.matrix(weights)?;
            w.f64_slice(std::slice::from_ref(bias))
        }
        Head::Affine { weights, bias } => {
            w.u8(2)?;
            w.matrix(weights)?;
            w.vec(bias)
        }
        Head::PairwiseScale { scale, bias } => {
            w.u8(3)?;
            w.f64_slice(&[*scale, *bias])
        }
    }
}

fn read_head<R: Read>(r: &mut Reader<R>) -> Result<Head> {
    match r.u8()? {
        0 => Ok(Head::None),
        1 => {
            let weights = r.matrix()?;
            let bias = r.f64_vec(1)?[0];
            Ok(Head::Hypersphere { weights, bias })
        }
        2 => {
            let weights = r.matrix()?;
            let bias = r.vec()?;
            Ok(Head::Affine { weights, bias })
        }
        3 => {
            let sb = r.f64_vec(2)?;
            Ok(Head::PairwiseScale {
                scale: sb[0],
                bias: sb[1],
            })
        }
        tag => Err(Error::Parse {
            path: "<checkpoint>".into(),
            line: 0,
            byte_offset: 0,
            message: format!("unknown head tag {tag}"),
        }),
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let file =
        std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut w = Writer {
        out: std::io::BufWriter::new(file),
    };
    w.out.write_all(MAGIC)?;
    w.u32(VERSION)?;
    w.u64(ckpt.config_hash)?;
    w.u64(ckpt.epoch)?;
    w.u64(ckpt.rng_seed)?;
    w.u64(ckpt.rng_stream)?;
    w.u128(ckpt.rng_word_pos)?;

    w.u64(ckpt.encoder.input_dim() as u64)?;
    w.u64(ckpt.encoder.embed_dim() as u64)?;
    w.u64(ckpt.encoder.layers().len() as u64)?;
    for layer in ckpt.encoder.layers() {
        w.u8(layer.tanh as u8)?;
        w.matrix(&layer.weights)?;
        w.vec(&layer.bias)?;
    }
    write_head(&mut w, &ckpt.head)?;

    w.u64(ckpt.encoder_velocity.layers.len() as u64)?;
    for (vw, vb) in &ckpt.encoder_velocity.layers {
        w.matrix(vw)?;
        w.vec(vb)?;
    }
    match &ckpt.head_velocity.weights {
        Some(m) => {
            w.u8(1)?;
            w.matrix(m)?;
        }
        None => w.u8(0)?,
    }
    w.vec(&ckpt.head_velocity.bias)?;
    w.out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut r = Reader {
        inp: std::io::BufReader::new(file),
    };
    let mut magic = [0u8; 4];
    r.inp.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            byte_offset: 0,
            message: "bad magic bytes; not a checkpoint file".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            byte_offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let config_hash = r.u64()?;
    let epoch = r.u64()?;
    let rng_seed = r.u64()?;
    let rng_stream = r.u64()?;
    let rng_word_pos = r.u128()?;

    let input_dim = r.u64()? as usize;
    let embed_dim = r.u64()? as usize;
    let n_layers = r.u64()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let tanh = r.u8()? != 0;
        let weights = r.matrix()?;
        let bias = r.vec()?;
        layers.push(DenseLayer {
            weights,
            bias,
            tanh,
        });
    }
    let encoder = Encoder::from_layers(input_dim, embed_dim, layers);
    let head = read_head(&mut r)?;

    let n_vel = r.u64()? as usize;
    let mut vel_layers = Vec::with_capacity(n_vel);
    for _ in 0..n_vel {
        let vw = r.matrix()?;
        let vb = r.vec()?;
        vel_layers.push((vw, vb));
    }
    let head_weights = if r.u8()? == 1 {
        Some(r.matrix()?)
    } else {
        None
    };
    let head_bias = r.vec()?;

    Ok(Checkpoint {
        config_hash,
        epoch,
        rng_seed,
        rng_stream,
        rng_word_pos,
        encoder,
        head,
        encoder_velocity: EncoderGrads { layers: vel_layers },
        head_velocity: HeadGrads {
            weights: head_weights,
            bias: head_bias,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut rng = Rng::from_seed(313);
        let encoder = Encoder::new(8, &[8], 4, &mut rng).unwrap();
        let head = Head::hypersphere(5, 4, 0.125, &mut rng).unwrap();
        let mut encoder_velocity = encoder.zero_grads();
        for (vw, vb) in &mut encoder_velocity.layers {
            for v in vw.data_mut() {
                *v = rng.normal();
            }
            for v in vb.iter_mut() {
                *v = rng.normal();
            }
        }
        let head_velocity = head.zero_grads();
        let ckpt = Checkpoint {
            config_hash: 0xdeadbeefcafef00d,
            epoch: 17,
            rng_seed: 42,
            rng_stream: 99,
            rng_word_pos: 1234567,
            encoder,
            head,
            encoder_velocity,
            head_velocity,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt, loaded);
        // Saving the loaded copy reproduces the file byte-for-byte.
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("not_a_checkpoint");
        std::fs::write(&path, b"plain text, nothing else").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert_eq!(err.category(), "ParseError");
    }

    #[test]
    fn all_head_variants_round_trip() {
        let mut rng = Rng::from_seed(8);
        let heads = vec![
            Head::None,
            Head::hypersphere(3, 4, -0.5, &mut rng).unwrap(),
            Head::affine(3, 4, &mut rng),
            Head::PairwiseScale {
                scale: 10.0,
                bias: -5.0,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        for (i, head) in heads.into_iter().enumerate() {
            let encoder = Encoder::identity(4);
            let ckpt = Checkpoint {
                config_hash: i as u64,
                epoch: 0,
                rng_seed: 1,
                rng_stream: 2,
                rng_word_pos: 3,
                head_velocity: head.zero_grads(),
                encoder_velocity: encoder.zero_grads(),
                encoder,
                head,
            };
            let path = dir.path().join(format!("h{i}.ckpt"));
            save_checkpoint(&ckpt, &path).unwrap();
            assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
        }
    }
}
