//! Frame-level log-posterior matrices and their binary file format.
//!
//! ```text
//! "DOLPPOST" version:u16be frames:u32be vocab:u32be f32le[frames * vocab]
//! ```

use std::io::{Read, Write};

use super::{BiasError, Result};
use crate::num::{log_softmax_in_place, Real};
use crate::tokenizer::TokenId;

pub const POSTERIOR_MAGIC: &[u8; 8] = b"DOLPPOST";
pub const POSTERIOR_VERSION: u16 = 1;

const ROW_TOLERANCE: f64 = 1e-6;

/// `frames x vocab` natural-log posteriors, row-major, with a designated
/// CTC blank column.
#[derive(Clone, Debug, PartialEq)]
pub struct Posteriorgram<S> {
    frames: usize,
    vocab: usize,
    blank: TokenId,
    log_probs: Vec<S>,
}

impl<S: Real> Posteriorgram<S> {
    /// Wraps log-probabilities; every row must exponentiate to a
    /// distribution (within 1e-6).
    pub fn new(frames: usize, vocab: usize, log_probs: Vec<S>, blank: TokenId) -> Result<Self> {
        if frames == 0 || vocab == 0 {
            return Err(BiasError::InvalidPosteriorgram("empty posteriorgram".into()));
        }
        if log_probs.len() != frames * vocab {
            return Err(BiasError::InvalidPosteriorgram(format!(
                "{} values for {frames}x{vocab}",
                log_probs.len()
            )));
        }
        if blank as usize >= vocab {
            return Err(BiasError::InvalidPosteriorgram(format!("blank {blank} >= vocab {vocab}")));
        }
        for (t, row) in log_probs.chunks_exact(vocab).enumerate() {
            if row.iter().any(|x| x.is_nan() || *x > S::zero() && x.is_infinite()) {
                return Err(BiasError::InvalidPosteriorgram(format!("frame {t} has invalid values")));
            }
            let sum: f64 = row.iter().map(|x| x.as_f64().exp()).sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(BiasError::InvalidPosteriorgram(format!(
                    "frame {t} sums to {sum}, not 1"
                )));
            }
        }
        Ok(Self { frames, vocab, blank, log_probs })
    }

    /// Log-softmax over each row of unnormalized scores.
    pub fn from_logits(rows: &[Vec<S>], blank: TokenId) -> Result<Self> {
        let vocab = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * vocab);
        for row in rows {
            if row.len() != vocab {
                return Err(BiasError::InvalidPosteriorgram("ragged rows".into()));
            }
            let mut r = row.clone();
            log_softmax_in_place(&mut r);
            data.extend(r);
        }
        Self::new(rows.len(), vocab, data, blank)
    }

    /// Natural log of probability rows.
    pub fn from_probs(rows: &[Vec<S>], blank: TokenId) -> Result<Self> {
        let vocab = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != vocab) {
            return Err(BiasError::InvalidPosteriorgram("ragged rows".into()));
        }
        let data = rows.iter().flatten().map(|p| p.ln()).collect();
        Self::new(rows.len(), vocab, data, blank)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn blank(&self) -> TokenId {
        self.blank
    }

    pub fn row(&self, t: usize) -> &[S] {
        &self.log_probs[t * self.vocab..(t + 1) * self.vocab]
    }

    pub fn get(&self, t: usize, token: TokenId) -> S {
        self.log_probs[t * self.vocab + token as usize]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.log_probs
    }

    pub fn check_token(&self, token: TokenId) -> Result<()> {
        if (token as usize) < self.vocab {
            Ok(())
        } else {
            Err(BiasError::TokenOutOfRange { token, vocab: self.vocab })
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(POSTERIOR_MAGIC)?;
        w.write_all(&POSTERIOR_VERSION.to_be_bytes())?;
        w.write_all(&(self.frames as u32).to_be_bytes())?;
        w.write_all(&(self.vocab as u32).to_be_bytes())?;
        let mut buf = Vec::with_capacity(self.log_probs.len() * 4);
        for x in &self.log_probs {
            buf.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()
    }

    /// Reads the binary format. The file does not store the blank index.
    pub fn read_from<R: Read>(mut r: R, blank: TokenId) -> Result<Self> {
        let mut header = [0u8; 18];
        r.read_exact(&mut header).map_err(|_| BiasError::BadFormat("truncated header".into()))?;
        if &header[..8] != POSTERIOR_MAGIC {
            return Err(BiasError::BadFormat("bad magic".into()));
        }
        let version = u16::from_be_bytes([header[8], header[9]]);
        if version != POSTERIOR_VERSION {
            return Err(BiasError::BadFormat(format!("unsupported version {version}")));
        }
        let frames = u32::from_be_bytes(header[10..14].try_into().unwrap()) as usize;
        let vocab = u32::from_be_bytes(header[14..18].try_into().unwrap()) as usize;
        let n = frames
            .checked_mul(vocab)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| BiasError::BadFormat("dimensions overflow".into()))?;
        let mut body = Vec::with_capacity(n.min(1 << 30));
        r.take(n as u64).read_to_end(&mut body)?;
        if body.len() != n {
            return Err(BiasError::BadFormat(format!("expected {n} payload bytes, got {}", body.len())));
        }
        let data = body
            .chunks_exact(4)
            .map(|b| S::lit(f32::from_le_bytes(b.try_into().unwrap()) as f64))
            .collect();
        Self::new(frames, vocab, data, blank)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to Vec cannot fail");
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unnormalized_rows() {
        assert!(Posteriorgram::new(1, 2, vec![0.0f64, 0.0], 0).is_err());
        assert!(Posteriorgram::new(0, 2, Vec::<f64>::new(), 0).is_err());
        assert!(Posteriorgram::new(1, 2, vec![0.5f64.ln(), 0.5f64.ln()], 2).is_err());
        assert!(Posteriorgram::new(1, 2, vec![0.0f64, f64::NEG_INFINITY], 0).is_ok());
    }

    #[test]
    fn binary_round_trip() {
        let pg = Posteriorgram::from_logits(&[vec![0.3f64, 1.0, -2.0], vec![0.0, 0.0, 5.0]], 0).unwrap();
        let bytes = pg.to_bytes();
        assert_eq!(&bytes[..8], b"DOLPPOST");
        assert_eq!(&bytes[8..18], &[0, 1, 0, 0, 0, 2, 0, 0, 0, 3]);
        assert_eq!(&bytes[18..22], &(pg.get(0, 0) as f32).to_le_bytes());
        assert_eq!(bytes.len(), 18 + 6 * 4);
        let back: Posteriorgram<f64> = Posteriorgram::read_from(&bytes[..], 0).unwrap();
        for (a, b) in back.as_slice().iter().zip(pg.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
        let f32_back: Posteriorgram<f32> = Posteriorgram::read_from(&bytes[..], 0).unwrap();
        assert_eq!(f32_back.frames(), 2);
        assert!(Posteriorgram::<f64>::read_from(&bytes[..bytes.len() - 1], 0).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Posteriorgram::<f64>::read_from(&bad[..], 0).is_err());
    }
}
