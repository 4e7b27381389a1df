use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Floor applied to mel-band energies before taking the log.
pub const ENERGY_FLOOR: f64 = 1e-10;

/// Natural log of [`ENERGY_FLOOR`]. Stands in for `ln(0)` so that masked
/// channels and silent (missing) channels share one finite representation.
pub const LOG_FLOOR: f64 = -23.025850929940457;

const MAGIC: &[u8; 4] = b"CHFT";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 4 + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub freq: usize,
    pub time: usize,
    pub channels: usize,
}

impl Dims {
    pub fn new(freq: usize, time: usize, channels: usize) -> Self {
        Dims {
            freq,
            time,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.freq * self.time * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Log mel-band energies indexed `[f, t, c]`, stored f-major then t then c.
///
/// Invariants: every entry is finite and `>= LOG_FLOOR`, and a channel marked
/// invalid holds `LOG_FLOOR` in every cell of its plane.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    dims: Dims,
    data: Vec<f64>,
    channel_valid: Vec<bool>,
}

impl FeatureTensor {
    pub fn new(dims: Dims, data: Vec<f64>, channel_valid: Vec<bool>) -> Result<Self> {
        if dims.freq == 0 || dims.time == 0 || dims.channels == 0 {
            return Err(Error::Shape(format!(
                "tensor dims must be positive, got {}x{}x{}",
                dims.freq, dims.time, dims.channels
            )));
        }
        if data.len() != dims.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match dims {}x{}x{}",
                data.len(),
                dims.freq,
                dims.time,
                dims.channels
            )));
        }
        if channel_valid.len() != dims.channels {
            return Err(Error::Shape(format!(
                "channel_valid has {} entries for {} channels",
                channel_valid.len(),
                dims.channels
            )));
        }
        let t = FeatureTensor {
            dims,
            data,
            channel_valid,
        };
        t.check_values()?;
        Ok(t)
    }

    /// A tensor with every channel valid.
    pub fn from_data(dims: Dims, data: Vec<f64>) -> Result<Self> {
        Self::new(dims, data, vec![true; dims.channels])
    }

    /// A tensor where every cell is `LOG_FLOOR` and every channel is invalid.
    pub fn silent(dims: Dims) -> Self {
        FeatureTensor {
            dims,
            data: vec![LOG_FLOOR; dims.len()],
            channel_valid: vec![false; dims.channels],
        }
    }

    fn check_values(&self) -> Result<()> {
        if let Some(i) = self
            .data
            .iter()
            .position(|v| !v.is_finite() || *v < LOG_FLOOR)
        {
            return Err(Error::Shape(format!(
                "entry {i} = {} is non-finite or below LOG_FLOOR",
                self.data[i]
            )));
        }
        for c in 0..self.dims.channels {
            if !self.channel_valid[c] && self.plane_iter(c).any(|v| v != LOG_FLOOR) {
                return Err(Error::Shape(format!(
                    "channel {c} is marked invalid but its plane is not LOG_FLOOR"
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.dims.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel_valid(&self) -> &[bool] {
        &self.channel_valid
    }

    #[inline]
    pub fn index(&self, f: usize, t: usize, c: usize) -> usize {
        (f * self.dims.time + t) * self.dims.channels + c
    }

    pub fn get(&self, f: usize, t: usize, c: usize) -> f64 {
        self.data[self.index(f, t, c)]
    }

    fn plane_iter(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.data
            .iter()
            .skip(c)
            .step_by(self.dims.channels)
            .copied()
    }

    /// The `F x T` plane of channel `c`, f-major.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.plane_iter(c).collect()
    }

    pub(crate) fn check_channel(&self, c: usize) -> Result<()> {
        if c >= self.dims.channels {
            Err(Error::ChannelOutOfRange {
                index: c,
                channels: self.dims.channels,
            })
        } else {
            Ok(())
        }
    }

    /// Copies plane `src` of `from` (same dims) into plane `dst` of `self`,
    /// along with its validity flag.
    pub(crate) fn copy_plane_from(&mut self, dst: usize, from: &FeatureTensor, src: usize) {
        debug_assert_eq!(self.dims, from.dims);
        let c = self.dims.channels;
        for cell in 0..self.dims.freq * self.dims.time {
            self.data[cell * c + dst] = from.data[cell * c + src];
        }
        self.channel_valid[dst] = from.channel_valid[src];
    }

    /// Sets plane `c` to `LOG_FLOOR` and marks the channel invalid.
    pub(crate) fn floor_plane(&mut self, c: usize) {
        let n = self.dims.channels;
        for cell in 0..self.dims.freq * self.dims.time {
            self.data[cell * n + c] = LOG_FLOOR;
        }
        self.channel_valid[c] = false;
    }

    pub(crate) fn set_valid(&mut self, c: usize, valid: bool) {
        self.channel_valid[c] = valid;
    }

    /// Serializes the tensor in the `CHFT` v1 format.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let d = self.dims;
        let freq = u16::try_from(d.freq)
            .map_err(|_| Error::Shape(format!("F = {} exceeds u16", d.freq)))?;
        let time = u32::try_from(d.time)
            .map_err(|_| Error::Shape(format!("T = {} exceeds u32", d.time)))?;
        let chans = u16::try_from(d.channels)
            .map_err(|_| Error::Shape(format!("C = {} exceeds u16", d.channels)))?;
        let mut out = Vec::with_capacity(HEADER_LEN + d.channels + 8 * d.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&freq.to_le_bytes());
        out.extend_from_slice(&time.to_le_bytes());
        out.extend_from_slice(&chans.to_le_bytes());
        out.extend(self.channel_valid.iter().map(|&v| u8::from(v)));
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 || &bytes[0..4] != MAGIC {
            return Err(Error::UnsupportedFormat("missing CHFT magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::UnsupportedFormat(format!(
                "tensor version {version}"
            )));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::CorruptFile("truncated header".into()));
        }
        let freq = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let time = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
        let chans = u16::from_le_bytes([bytes[12], bytes[13]]) as usize;
        let dims = Dims::new(freq, time, chans);
        let expected = HEADER_LEN + chans + 8 * dims.len();
        if bytes.len() != expected {
            return Err(Error::CorruptFile(format!(
                "expected {expected} bytes for {freq}x{time}x{chans}, found {}",
                bytes.len()
            )));
        }
        let valid_bytes = &bytes[HEADER_LEN..HEADER_LEN + chans];
        let mut channel_valid = Vec::with_capacity(chans);
        for &b in valid_bytes {
            match b {
                0 => channel_valid.push(false),
                1 => channel_valid.push(true),
                other => {
                    return Err(Error::CorruptFile(format!(
                        "channel_valid byte {other} is not 0 or 1"
                    )))
                }
            }
        }
        let data: Vec<f64> = bytes[HEADER_LEN + chans..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        FeatureTensor::new(dims, data, channel_valid).map_err(|e| match e {
            Error::Shape(msg) => Error::CorruptFile(msg),
            other => other,
        })
    }
}

pub fn write_tensor(t: &FeatureTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = t.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<FeatureTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureTensor::from_bytes(&bytes).map_err(|e| match e {
        Error::CorruptFile(msg) => Error::CorruptFile(format!("{}: {msg}", path.display())),
        Error::UnsupportedFormat(msg) => {
            Error::UnsupportedFormat(format!("{}: {msg}", path.display()))
        }
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn log_floor_is_ln_of_energy_floor() {
        assert_eq!(ENERGY_FLOOR.ln().to_bits(), LOG_FLOOR.to_bits());
    }

    #[test]
    fn scalar_tensor_round_trips() {
        let t = FeatureTensor::from_data(Dims::new(1, 1, 1), vec![0.0]).unwrap();
        let bytes = t.to_bytes().unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 1 + 8);
        assert_eq!(FeatureTensor::from_bytes(&bytes).unwrap(), t);
    }

    #[test]
    fn full_size_payload() {
        let dims = Dims::new(40, 501, 16);
        let t = FeatureTensor::from_data(dims, vec![0.5; dims.len()]).unwrap();
        let bytes = t.to_bytes().unwrap();
        assert_eq!(bytes.len() - HEADER_LEN - 16, 2_565_120);
    }

    #[test]
    fn invalid_channel_round_trips() {
        let dims = Dims::new(3, 4, 3);
        let data: Vec<f64> = (0..dims.len()).map(|i| i as f64 * 0.25).collect();
        let mut t = FeatureTensor::from_data(dims, data).unwrap();
        t.floor_plane(1);
        let back = FeatureTensor::from_bytes(&t.to_bytes().unwrap()).unwrap();
        assert_eq!(back.channel_valid(), &[true, false, true]);
        assert!(back.plane(1).iter().all(|&v| v == LOG_FLOOR));
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_invalid_plane_not_floored() {
        let dims = Dims::new(1, 2, 2);
        let err = FeatureTensor::new(dims, vec![0.0; 4], vec![true, false]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn bad_magic_and_version() {
        let err = FeatureTensor::from_bytes(b"NOPE\x01\x00").unwrap_err();
        assert!(err.to_string().starts_with("unsupported format"));
        let t = FeatureTensor::from_data(Dims::new(1, 1, 1), vec![0.0]).unwrap();
        let mut bytes = t.to_bytes().unwrap();
        bytes[4] = 2;
        let err = FeatureTensor::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().starts_with("unsupported format"));
    }

    #[test]
    fn truncated_and_nan_payloads_are_corrupt() {
        let t = FeatureTensor::from_data(Dims::new(2, 2, 1), vec![1.0; 4]).unwrap();
        let bytes = t.to_bytes().unwrap();
        let err = FeatureTensor::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().starts_with("corrupt file"), "{err}");

        let mut nan = bytes.clone();
        let at = nan.len() - 8;
        nan[at..].copy_from_slice(&f64::NAN.to_le_bytes());
        let err = FeatureTensor::from_bytes(&nan).unwrap_err();
        assert!(err.to_string().starts_with("corrupt file"), "{err}");

        let mut inf = bytes;
        inf[at..].copy_from_slice(&f64::NEG_INFINITY.to_le_bytes());
        assert!(matches!(
            FeatureTensor::from_bytes(&inf),
            Err(Error::CorruptFile(_))
        ));
    }

    #[test]
    fn file_round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let dims = Dims::new(4, 5, 2);
        let data: Vec<f64> = (0..dims.len()).map(|i| (i as f64).sin()).collect();
        let t = FeatureTensor::from_data(dims, data).unwrap();
        let a = dir.path().join("a.chft");
        let b = dir.path().join("b.chft");
        write_tensor(&t, &a).unwrap();
        write_tensor(&t, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(read_tensor(&a).unwrap(), t);
        let missing = dir.path().join("nope.chft");
        let err = read_tensor(&missing).unwrap_err();
        assert!(err.to_string().contains("nope.chft"));
    }

    fn arb_tensor() -> impl Strategy<Value = FeatureTensor> {
        (1usize..5, 1usize..6, 1usize..5)
            .prop_flat_map(|(f, t, c)| {
                (
                    Just(Dims::new(f, t, c)),
                    proptest::collection::vec(LOG_FLOOR..50.0f64, f * t * c),
                    proptest::collection::vec(any::<bool>(), c),
                )
            })
            .prop_map(|(dims, data, valid)| {
                let mut t = FeatureTensor::from_data(dims, data).unwrap();
                for (c, v) in valid.into_iter().enumerate() {
                    if !v {
                        t.floor_plane(c);
                    }
                }
                t
            })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(t in arb_tensor()) {
            let bytes = t.to_bytes().unwrap();
            let back = FeatureTensor::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
            prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
