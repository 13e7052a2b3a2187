//! Parity task: bit strings followed by `=`, with the parity bit predicted at
//! the `=` position.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BatchSource, Example};

pub const VOCAB_SIZE: usize = 6;
pub const EQUALS: usize = 2;
pub const PAD: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParityExample {
    pub bits: Vec<u8>,
    /// `bits`, then `=`, then one padding token: length `n + 2`.
    pub tokens: Vec<usize>,
    pub label: u8,
    pub readout_step: usize,
    /// True only at the `=` position.
    pub loss_mask: Vec<bool>,
}

impl ParityExample {
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::Input("parity example needs at least one bit".into()));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Input(format!("bit value {b} is not 0 or 1")));
        }
        let n = bits.len();
        let label = bits.iter().fold(0u8, |a, b| a ^ b);
        let mut tokens: Vec<usize> = bits.iter().map(|&b| b as usize).collect();
        tokens.push(EQUALS);
        tokens.push(PAD);
        let mut loss_mask = vec![false; n + 2];
        loss_mask[n] = true;
        Ok(Self {
            bits,
            tokens,
            label,
            readout_step: n,
            loss_mask,
        })
    }

    pub fn n(&self) -> usize {
        self.bits.len()
    }

    /// Loop horizon `n + 2`.
    pub fn horizon(&self) -> usize {
        self.n() + 2
    }

    pub fn answer_position(&self) -> usize {
        self.n()
    }

    pub fn to_example(&self) -> Example {
        let mut targets = vec![PAD; self.tokens.len()];
        targets[self.n()] = self.label as usize;
        Example {
            tokens: self.tokens.clone(),
            targets,
            loss_mask: self.loss_mask.clone(),
            readout_step: self.readout_step,
            loop_horizon: Some(self.horizon()),
        }
    }

    pub fn bit_string(&self) -> String {
        self.bits.iter().map(|b| char::from(b'0' + b)).collect()
    }
}

fn random_bits(rng: &mut impl Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}

/// `count` examples with lengths uniform in `[lo, hi]`.
pub fn gen_parity(count: usize, (lo, hi): (usize, usize), seed: u64) -> Result<Vec<ParityExample>> {
    if lo == 0 || hi < lo {
        return Err(Error::Input(format!("invalid length range [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(lo..=hi);
            ParityExample::from_bits(random_bits(&mut rng, n))
        })
        .collect()
}

/// `count` examples all of length `n`.
pub fn gen_parity_fixed(count: usize, n: usize, seed: u64) -> Result<Vec<ParityExample>> {
    gen_parity(count, (n, n), seed)
}

/// `0101...` (or `1010...` when `start_with_one`) of the given length.
pub fn alternating_probe(length: usize, start_with_one: bool) -> Result<ParityExample> {
    let first = u8::from(start_with_one);
    ParityExample::from_bits((0..length).map(|i| first ^ (i % 2) as u8).collect())
}

/// `count` alternating sequences with lengths uniform in `[lo, hi]` and a
/// random starting bit.
pub fn gen_alternating(count: usize, (lo, hi): (usize, usize), seed: u64) -> Result<Vec<ParityExample>> {
    if lo == 0 || hi < lo {
        return Err(Error::Input(format!("invalid length range [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(lo..=hi);
            alternating_probe(n, rng.random())
        })
        .collect()
}

/// Length curriculum: phase `i` runs `steps` updates with lengths uniform in
/// `[2, max_length]`. Every batch has a single length.
#[derive(Clone, Debug)]
pub struct Curriculum {
    pub phases: Vec<(usize, usize)>,
    pub batch_size: usize,
    pub seed: u64,
}

impl Curriculum {
    pub fn new(phases: Vec<(usize, usize)>, batch_size: usize, seed: u64) -> Result<Self> {
        if phases.is_empty() || batch_size == 0 {
            return Err(Error::Config("curriculum needs phases and a positive batch size".into()));
        }
        if let Some(&(_, m)) = phases.iter().find(|(_, m)| *m < 2) {
            return Err(Error::Config(format!("phase max length {m} < 2")));
        }
        Ok(Self {
            phases,
            batch_size,
            seed,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.phases.iter().map(|p| p.0).sum()
    }

    /// Max length in force at `step`; the last phase persists past the end.
    pub fn max_length_at(&self, step: usize) -> usize {
        let mut acc = 0;
        for &(steps, max) in &self.phases {
            acc += steps;
            if step < acc {
                return max;
            }
        }
        self.phases.last().map(|p| p.1).unwrap_or(2)
    }

    pub fn max_length(&self) -> usize {
        self.phases.iter().map(|p| p.1).max().unwrap_or(2)
    }

    pub fn batch(&self, step: usize) -> Vec<ParityExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step as u64);
        let n = rng.random_range(2..=self.max_length_at(step));
        (0..self.batch_size)
            .map(|_| ParityExample::from_bits(random_bits(&mut rng, n)).expect("n >= 2"))
            .collect()
    }
}

impl BatchSource for Curriculum {
    fn next_batch(&mut self, step: usize) -> Vec<Example> {
        self.batch(step).iter().map(ParityExample::to_example).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct JsonLine {
    bits: String,
    n: usize,
    label: u8,
}

pub fn write_jsonl(w: &mut impl Write, examples: &[ParityExample]) -> Result<()> {
    for ex in examples {
        let line = JsonLine {
            bits: ex.bit_string(),
            n: ex.n(),
            label: ex.label,
        };
        serde_json::to_writer(&mut *w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(r: impl BufRead) -> Result<Vec<ParityExample>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let j: JsonLine = serde_json::from_str(&line)?;
        let bits = j
            .bits
            .bytes()
            .map(|c| match c {
                b'0' => Ok(0),
                b'1' => Ok(1),
                _ => Err(Error::Format(format!("bad bit character {:?}", c as char))),
            })
            .collect::<Result<Vec<u8>>>()?;
        let ex = ParityExample::from_bits(bits)?;
        if ex.n() != j.n || ex.label != j.label {
            return Err(Error::Format(format!("inconsistent record for bits {}", j.bits)));
        }
        out.push(ex);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        let e = ParityExample::from_bits(vec![0, 1, 0, 1]).unwrap();
        assert_eq!(e.label, 0);
        assert_eq!(e.tokens, vec![0, 1, 0, 1, EQUALS, PAD]);
        assert_eq!(e.loss_mask, vec![false, false, false, false, true, false]);
        let one = ParityExample::from_bits(vec![1]).unwrap();
        assert_eq!((one.label, one.readout_step, one.horizon()), (1, 1, 3));
    }

    #[test]
    fn probes() {
        let p = alternating_probe(40, false).unwrap();
        assert_eq!(p.label, 0);
        assert_eq!(p.readout_step, 40);
        assert_eq!(p.horizon(), 42);
        let p = alternating_probe(2, false).unwrap();
        assert_eq!((p.bits.clone(), p.label), (vec![0, 1], 1));
        let p = alternating_probe(5, true).unwrap();
        assert_eq!((p.bit_string(), p.label), ("10101".to_string(), 1));
    }

    #[test]
    fn curriculum_phases() {
        let c = Curriculum::new(vec![(10, 3), (5, 12)], 4, 1).unwrap();
        assert_eq!(c.total_steps(), 15);
        assert_eq!(c.max_length_at(9), 3);
        assert_eq!(c.max_length_at(10), 12);
        assert_eq!(c.max_length_at(100), 12);
        for s in 0..10 {
            let b = c.batch(s);
            assert_eq!(b.len(), 4);
            assert!(b.iter().all(|e| e.n() == b[0].n() && (2..=3).contains(&e.n())));
        }
        assert_eq!(c.batch(3), c.batch(3));
    }

    #[test]
    fn jsonl_round_trip() {
        let xs = gen_parity(20, (1, 9), 5).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &xs).unwrap();
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, xs);
        assert!(read_jsonl(&b"{\"bits\":\"012\",\"n\":3,\"label\":1}\n"[..]).is_err());
    }
}
