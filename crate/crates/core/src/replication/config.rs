use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Top-k DCT frequencies per chunk of the momentum.
    Demo,
    /// Seeded random index subset; indices are recomputed on every replica.
    Random,
    /// Every n-th index, with the offset rotating by step.
    Striding,
    /// Full exchange every n-th step, purely local steps in between.
    Diloco,
    Full,
}

impl Scheme {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Scheme::Demo => 0,
            Scheme::Random => 1,
            Scheme::Striding => 2,
            Scheme::Diloco => 3,
            Scheme::Full => 4,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Scheme::Demo,
            1 => Scheme::Random,
            2 => Scheme::Striding,
            3 => Scheme::Diloco,
            4 => Scheme::Full,
            _ => return None,
        })
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Demo => "demo",
            Scheme::Random => "random",
            Scheme::Striding => "striding",
            Scheme::Diloco => "diloco",
            Scheme::Full => "full",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "demo" => Scheme::Demo,
            "random" => Scheme::Random,
            "striding" => Scheme::Striding,
            "diloco" => Scheme::Diloco,
            "full" => Scheme::Full,
            other => return Err(Error::config(format!("unknown scheme `{other}`"))),
        })
    }
}

/// Encoding of transmitted values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferDtype {
    Fp32,
    Fp16,
    /// 2-bit codes for {-1, 0, +1}; only valid together with sign mode.
    Ternary,
    /// Lossless 64-bit values. Used for loopback groups with a single member
    /// and for exactness experiments.
    Fp64,
}

impl TransferDtype {
    pub fn value_bits(self) -> u64 {
        match self {
            TransferDtype::Fp64 => 64,
            TransferDtype::Fp32 => 32,
            TransferDtype::Fp16 => 16,
            TransferDtype::Ternary => 2,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            TransferDtype::Fp32 => 0,
            TransferDtype::Fp16 => 1,
            TransferDtype::Ternary => 2,
            TransferDtype::Fp64 => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => TransferDtype::Fp32,
            1 => TransferDtype::Fp16,
            2 => TransferDtype::Ternary,
            3 => TransferDtype::Fp64,
            _ => return None,
        })
    }
}

impl fmt::Display for TransferDtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransferDtype::Fp32 => "fp32",
            TransferDtype::Fp16 => "fp16",
            TransferDtype::Ternary => "ternary",
            TransferDtype::Fp64 => "fp64",
        })
    }
}

impl FromStr for TransferDtype {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "fp32" => TransferDtype::Fp32,
            "fp16" => TransferDtype::Fp16,
            "ternary" => TransferDtype::Ternary,
            "fp64" => TransferDtype::Fp64,
            other => return Err(Error::config(format!("unknown transfer dtype `{other}`"))),
        })
    }
}

/// Exact fraction of components exchanged, in `(0, 1]`.
///
/// Parsed from `"a/b"` or a decimal literal; serialized as `"a/b"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Compression(Ratio<u64>);

impl Compression {
    pub fn new(numer: u64, denom: u64) -> Result<Self> {
        if denom == 0 {
            return Err(Error::config("compression denominator must be > 0"));
        }
        Self::from_ratio(Ratio::new(numer, denom))
    }

    pub fn one() -> Self {
        Self(Ratio::one())
    }

    fn from_ratio(r: Ratio<u64>) -> Result<Self> {
        if r.is_zero() || r > Ratio::one() {
            return Err(Error::config(format!(
                "compression must lie in (0, 1], got {r}"
            )));
        }
        Ok(Self(r))
    }

    pub fn ratio(self) -> Ratio<u64> {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    /// `round(self × len)`, halves rounding up.
    pub fn count_of(self, len: usize) -> usize {
        (self.0 * Ratio::from_integer(len as u64))
            .round()
            .to_integer() as usize
    }

    /// `round(1 / self)`, at least 1.
    pub fn period(self) -> usize {
        (self.0.recip().round().to_integer() as usize).max(1)
    }
}

impl fmt::Display for Compression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

impl FromStr for Compression {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((a, b)) = s.split_once('/') {
            let parse = |x: &str| {
                x.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::config(format!("bad compression `{s}`")))
            };
            return Self::new(parse(a)?, parse(b)?);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::config(format!("bad compression `{s}`")))?;
        Self::try_from(v)
    }
}

impl TryFrom<f64> for Compression {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::config(format!(
                "compression must lie in (0, 1], got {v}"
            )));
        }
        let r = Ratio::<i64>::approximate_float(v)
            .ok_or_else(|| Error::config(format!("bad compression {v}")))?;
        Self::new(*r.numer() as u64, *r.denom() as u64)
    }
}

impl Serialize for Compression {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Compression {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(f64),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Text(s) => s.parse(),
            Raw::Number(v) => Compression::try_from(v),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// How components are chosen, encoded and exchanged across a replication group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicatorConfig {
    pub scheme: Scheme,
    /// DeMo only.
    pub chunk_size: usize,
    /// DeMo only.
    pub top_k: usize,
    /// Random/Striding: index fraction; DiLoCo: 1/period; Full: 1. Derived as
    /// `top_k / chunk_size` for DeMo.
    pub compression: Compression,
    pub sign: bool,
    pub dtype: TransferDtype,
    pub seed: u64,
}

pub const DEFAULT_CHUNK_SIZE: usize = 32;

impl ReplicatorConfig {
    pub fn demo(chunk_size: usize, top_k: usize) -> Self {
        let compression = if chunk_size > 0 && top_k > 0 && top_k <= chunk_size {
            Compression(Ratio::new(top_k as u64, chunk_size as u64))
        } else {
            Compression::one()
        };
        Self {
            scheme: Scheme::Demo,
            chunk_size,
            top_k,
            compression,
            sign: false,
            dtype: TransferDtype::Fp32,
            seed: 0,
        }
    }

    pub fn with_scheme(scheme: Scheme, compression: Compression) -> Self {
        if scheme == Scheme::Demo {
            let k = compression.count_of(DEFAULT_CHUNK_SIZE);
            return Self::demo(DEFAULT_CHUNK_SIZE, k);
        }
        Self {
            scheme,
            chunk_size: DEFAULT_CHUNK_SIZE,
            top_k: compression.count_of(DEFAULT_CHUNK_SIZE),
            compression,
            sign: false,
            dtype: TransferDtype::Fp32,
            seed: 0,
        }
    }

    pub fn random(compression: Compression) -> Self {
        Self::with_scheme(Scheme::Random, compression)
    }

    pub fn striding(compression: Compression) -> Self {
        Self::with_scheme(Scheme::Striding, compression)
    }

    pub fn diloco(compression: Compression) -> Self {
        Self::with_scheme(Scheme::Diloco, compression)
    }

    pub fn full() -> Self {
        Self::with_scheme(Scheme::Full, Compression::one())
    }

    pub fn sign(mut self, on: bool) -> Self {
        self.sign = on;
        if !on && self.dtype == TransferDtype::Ternary {
            self.dtype = TransferDtype::Fp32;
        }
        self
    }

    pub fn dtype(mut self, dtype: TransferDtype) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Same selection, lossless values: used when a group has one member and
    /// nothing crosses the wire.
    pub fn loopback(mut self) -> Self {
        self.dtype = TransferDtype::Fp64;
        self
    }

    /// Re-derives the DeMo top-k from a requested compression at the current chunk size.
    pub fn set_compression(&mut self, c: Compression) {
        self.compression = c;
        if self.scheme == Scheme::Demo {
            self.top_k =
                (c.ratio() * Ratio::from_integer(self.chunk_size as u64)).to_integer() as usize;
            self.sync_demo_compression();
        }
    }

    pub(crate) fn sync_demo_compression(&mut self) {
        if self.scheme == Scheme::Demo
            && self.chunk_size > 0
            && self.top_k > 0
            && self.top_k <= self.chunk_size
        {
            self.compression = Compression(Ratio::new(self.top_k as u64, self.chunk_size as u64));
        }
    }

    /// Every constraint violated for shards of length `shard_len`.
    pub fn violations(&self, shard_len: usize) -> Vec<String> {
        let mut out = Vec::new();
        if !self.sign && self.dtype == TransferDtype::Ternary {
            out.push("ternary transfer dtype requires sign mode".to_string());
        }
        match self.scheme {
            Scheme::Demo => {
                if self.chunk_size == 0 {
                    out.push("DeMo chunk_size must be >= 1".into());
                }
                if self.top_k == 0 || self.top_k > self.chunk_size {
                    out.push(format!(
                        "DeMo top_k must satisfy 1 <= top_k <= chunk_size (top_k {}, chunk_size {})",
                        self.top_k, self.chunk_size
                    ));
                } else if self.compression.ratio()
                    != Ratio::new(self.top_k as u64, self.chunk_size as u64)
                {
                    out.push(format!(
                        "DeMo compression {} does not equal top_k/chunk_size = {}/{}",
                        self.compression, self.top_k, self.chunk_size
                    ));
                }
            }
            Scheme::Random | Scheme::Striding => {
                if self.compression.count_of(shard_len) < 1 {
                    out.push(format!(
                        "compression {} selects no index of a shard of length {shard_len}",
                        self.compression
                    ));
                }
                if self.scheme == Scheme::Striding && self.compression.period() > shard_len {
                    out.push(format!(
                        "stride {} exceeds shard length {shard_len}",
                        self.compression.period()
                    ));
                }
            }
            Scheme::Diloco => {}
            Scheme::Full => {
                if self.compression != Compression::one() {
                    out.push(format!(
                        "full replication requires compression 1, got {}",
                        self.compression
                    ));
                }
            }
        }
        out
    }

    pub fn validate(&self, shard_len: usize) -> Result<()> {
        let v = self.violations(shard_len);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_compression() {
        assert_eq!(
            "1/16".parse::<Compression>().unwrap(),
            Compression::new(1, 16).unwrap()
        );
        assert_eq!(
            "0.0625".parse::<Compression>().unwrap(),
            Compression::new(1, 16).unwrap()
        );
        assert!("0".parse::<Compression>().is_err());
        assert!("3/2".parse::<Compression>().is_err());
        assert!(Compression::try_from(0.0).is_err());
    }

    #[test]
    fn counts_and_periods() {
        let c = Compression::new(1, 16).unwrap();
        assert_eq!(c.count_of(1600), 100);
        assert_eq!(c.period(), 16);
        assert_eq!(Compression::new(3, 10).unwrap().period(), 3);
        assert_eq!(Compression::new(1, 32).unwrap().count_of(8), 0);
    }

    #[test]
    fn demo_compression_is_k_over_s() {
        let c = ReplicatorConfig::demo(32, 4);
        assert_eq!(c.compression, Compression::new(1, 8).unwrap());
        let mut c = ReplicatorConfig::demo(32, 4);
        c.set_compression(Compression::new(1, 16).unwrap());
        assert_eq!(c.top_k, 2);
        assert!(c.validate(100).is_ok());
    }

    #[test]
    fn violations_are_collected() {
        let cfg = ReplicatorConfig::random(Compression::new(1, 32).unwrap())
            .dtype(TransferDtype::Ternary);
        let v = cfg.violations(8);
        assert_eq!(v.len(), 2, "{v:?}");
        assert!(ReplicatorConfig::demo(4, 5).validate(16).is_err());
        let mut full = ReplicatorConfig::full();
        full.compression = Compression::new(1, 2).unwrap();
        assert!(full.validate(4).is_err());
    }
}
