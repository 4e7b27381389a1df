//! Model state and the `CHMD` checkpoint format.
//!
//! Layout (little-endian): magic `CHMD`, u16 version, the config block
//! (u32 sizes, f64 rates), every trainable tensor in declaration order as
//! f64, batch-norm running mean/var per block, the optimizer step (u64),
//! first and second moments in parameter order, and the dropout RNG
//! (32-byte seed, u64 stream, u128 word position).

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ConvSpec, NetworkConfig};
use super::network::{BnRunning, Network};
use super::radam::{RAdam, RAdamConfig};
use crate::error::{Error, Result};
use crate::tensorio::Dims;

const MAGIC: &[u8; 4] = b"CHMD";
const VERSION: u16 = 1;

/// Network parameters, optimizer slots, and the dropout RNG.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub network: Network,
    pub optimizer: RAdam,
    pub rng: ChaCha8Rng,
}

impl ModelState {
    pub fn new(cfg: NetworkConfig, radam: RAdamConfig, seed: u64) -> Result<Self> {
        radam.validate()?;
        let mut init_rng = crate::seed::rng_for(seed, &[0x1417]);
        let sizes = cfg.param_sizes();
        let network = Network::new(cfg, &mut init_rng)?;
        Ok(ModelState {
            network,
            optimizer: RAdam::new(radam, &sizes),
            rng: crate::seed::rng_for(seed, &[0xd409]),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u16(VERSION);
        let cfg = self.network.config();
        for v in [cfg.input.freq, cfg.input.time, cfg.input.channels] {
            w.u32(v);
        }
        for spec in [cfg.conv1, cfg.conv2, cfg.conv3] {
            w.u32(spec.kernel.0);
            w.u32(spec.kernel.1);
            w.u32(spec.out);
        }
        w.u32(cfg.pool1);
        w.u32(cfg.hidden);
        w.u32(cfg.n_classes);
        for v in [cfg.dropout1, cfg.dropout2, cfg.bn_momentum, cfg.bn_eps] {
            w.f64(v);
        }
        let o = &self.optimizer.cfg;
        for v in [o.lr, o.beta1, o.beta2, o.eps] {
            w.f64(v);
        }
        for p in self.network.params() {
            w.f64s(p);
        }
        for r in self.network.running() {
            w.f64s(&r.mean);
            w.f64s(&r.var);
        }
        w.0.extend_from_slice(&self.optimizer.step.to_le_bytes());
        for m in &self.optimizer.m {
            w.f64s(m);
        }
        for v in &self.optimizer.v {
            w.f64s(v);
        }
        w.bytes(&self.rng.get_seed());
        w.0.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        w.0.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::UnsupportedFormat("missing CHMD magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::UnsupportedFormat(format!("checkpoint version {version}")));
        }
        let input = Dims::new(r.u32()?, r.u32()?, r.u32()?);
        let mut specs = [ConvSpec {
            kernel: (0, 0),
            out: 0,
        }; 3];
        for s in specs.iter_mut() {
            *s = ConvSpec {
                kernel: (r.u32()?, r.u32()?),
                out: r.u32()?,
            };
        }
        let pool1 = r.u32()?;
        let hidden = r.u32()?;
        let n_classes = r.u32()?;
        let cfg = NetworkConfig {
            input,
            conv1: specs[0],
            pool1,
            dropout1: r.f64()?,
            conv2: specs[1],
            conv3: specs[2],
            dropout2: r.f64()?,
            hidden,
            n_classes,
            bn_momentum: r.f64()?,
            bn_eps: r.f64()?,
        };
        cfg.validate()
            .map_err(|e| Error::CorruptFile(format!("checkpoint config: {e}")))?;
        let radam = RAdamConfig {
            lr: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
        };
        let sizes = cfg.param_sizes();
        let params = sizes.iter().map(|&n| r.f64s(n)).collect::<Result<Vec<_>>>()?;
        let mut running = Vec::with_capacity(3);
        for w in [cfg.conv1.out, cfg.conv2.out, cfg.conv3.out] {
            running.push(BnRunning {
                mean: r.f64s(w)?,
                var: r.f64s(w)?,
            });
        }
        let step = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let m = sizes.iter().map(|&n| r.f64s(n)).collect::<Result<Vec<_>>>()?;
        let v = sizes.iter().map(|&n| r.f64s(n)).collect::<Result<Vec<_>>>()?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        if r.pos != bytes.len() {
            return Err(Error::CorruptFile("trailing bytes after checkpoint".into()));
        }
        let all_finite = params.iter().chain(&m).chain(&v).flatten().all(|x| x.is_finite());
        if !all_finite || running.iter().any(|b| b.var.iter().any(|&x| !(x >= 0.0))) {
            return Err(Error::CorruptFile("non-finite parameter or negative variance".into()));
        }
        let network = Network::from_parts(cfg, params, running)?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(ModelState {
            network,
            optimizer: RAdam {
                cfg: radam,
                m,
                v,
                step,
            },
            rng,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptFile("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn toy_state() -> ModelState {
        let mut cfg = NetworkConfig::scaled(Dims::new(8, 6, 3), [3, 4, 5], 6, 3);
        cfg.conv1.kernel = (3, 1);
        let mut s = ModelState::new(cfg, RAdamConfig::default(), 5).unwrap();
        s.optimizer.step = 17;
        s.optimizer.m[0][1] = 0.25;
        s.optimizer.v[2][0] = 0.5;
        s.network.running_mut()[1].var[0] = 3.0;
        s.rng.next_u64();
        s
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let s = toy_state();
        let bytes = s.to_bytes();
        let back = ModelState::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, s);
    }

    #[test]
    fn checkpoint_rejects_damage() {
        let bytes = toy_state().to_bytes();
        assert!(matches!(
            ModelState::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::CorruptFile(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            ModelState::from_bytes(&bad),
            Err(Error::UnsupportedFormat(_))
        ));
    }
}
