//! Binary checkpoint format for a single network.
//!
//! ```text
//! magic      8 bytes  "PPGCKPT1"
//! kind       u32      0 = policy, 1 = value
//! obs_dim    u32
//! act_dim    u32      (1 for value networks)
//! n_hidden   u32
//! hidden     u32 × n_hidden
//! n_params   u64
//! params     f64 × n_params
//! ```
//! All integers and floats are little-endian. Policy parameters are the
//! flattened network followed by the log-std entries.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Mlp, PolicyParams, ValueParams};

pub const MAGIC: &[u8; 8] = b"PPGCKPT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    Policy = 0,
    Value = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Policy(PolicyParams),
    Value(ValueParams),
}

impl Checkpoint {
    pub fn kind(&self) -> NetKind {
        match self {
            Checkpoint::Policy(_) => NetKind::Policy,
            Checkpoint::Value(_) => NetKind::Value,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (obs_dim, act_dim, hidden, params) = match self {
            Checkpoint::Policy(p) => (p.obs_dim(), p.act_dim(), p.hidden(), p.flatten()),
            Checkpoint::Value(v) => (v.obs_dim(), 1, v.hidden(), v.flatten()),
        };
        let mut out = Vec::with_capacity(32 + 4 * hidden.len() + 8 * params.len());
        out.extend_from_slice(MAGIC);
        for x in [self.kind() as u32, obs_dim as u32, act_dim as u32, hidden.len() as u32] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for &h in hidden {
            out.extend_from_slice(&(h as u32).to_le_bytes());
        }
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let kind = r.u32()?;
        let obs_dim = r.u32()? as usize;
        let act_dim = r.u32()? as usize;
        let n_hidden = r.u32()? as usize;
        if n_hidden > 64 {
            return Err(Error::Checkpoint(format!("implausible layer count {n_hidden}")));
        }
        let mut sizes = vec![obs_dim];
        for _ in 0..n_hidden {
            sizes.push(r.u32()? as usize);
        }
        if sizes.contains(&0) || act_dim == 0 {
            return Err(Error::Checkpoint("zero-sized layer".into()));
        }
        let n_params = r.u64()? as usize;
        if r.remaining() != n_params.saturating_mul(8) {
            return Err(Error::Checkpoint(format!(
                "expected {n_params} parameters, found {} trailing bytes",
                r.remaining()
            )));
        }
        let params: Vec<f64> = r
            .take(n_params * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        let wrap = |e: Error| Error::Checkpoint(e.to_string());
        match kind {
            0 => {
                sizes.push(act_dim);
                let mut p = PolicyParams {
                    mean_net: Mlp::zeros(&sizes),
                    log_std: vec![0.0; act_dim],
                };
                p.set_flat(&params).map_err(wrap)?;
                Ok(Checkpoint::Policy(p))
            }
            1 => {
                if act_dim != 1 {
                    return Err(Error::Checkpoint("value network must have one output".into()));
                }
                sizes.push(1);
                let mut v = ValueParams {
                    net: Mlp::zeros(&sizes),
                };
                v.set_flat(&params).map_err(wrap)?;
                Ok(Checkpoint::Value(v))
            }
            k => Err(Error::Checkpoint(format!("unknown network kind {k}"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.at
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Rng, Stream};
    use crate::nn::{init_policy, init_value_with};

    #[test]
    fn roundtrip_both_kinds() {
        let mut rng = Rng::new(1, Stream::Test);
        let p = Checkpoint::Policy(init_policy(4, 2, &mut rng));
        assert_eq!(Checkpoint::from_bytes(&p.to_bytes()).unwrap(), p);
        let v = Checkpoint::Value(init_value_with(3, &[7], &mut rng));
        assert_eq!(Checkpoint::from_bytes(&v.to_bytes()).unwrap(), v);
    }

    #[test]
    fn header_layout() {
        let mut rng = Rng::new(1, Stream::Test);
        let bytes = Checkpoint::Policy(init_policy(4, 2, &mut rng)).to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 0);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 24 + 8 + 8 + 8 * 4612);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let mut rng = Rng::new(1, Stream::Test);
        let bytes = Checkpoint::Policy(init_policy(2, 1, &mut rng)).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[8] = 7;
        assert!(Checkpoint::from_bytes(&bad).is_err());
        assert!(Checkpoint::from_bytes(&[]).is_err());
    }
}
