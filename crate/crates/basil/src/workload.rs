//! Transaction scripts and the key distributions that generate them.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::types::{Key, Value};
use crate::Error;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Read(Key),
    Write(Key, Value),
}

/// One transaction's operations, executed in order.
pub type Script = Vec<Op>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadKind {
    #[default]
    RwUniform,
    RwZipf,
    RetwisLite,
    /// Every client works on its own key range: no contention at all.
    Disjoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub keys: u64,
    pub zipf: f64,
    pub reads: usize,
    pub writes: usize,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec { kind: WorkloadKind::RwUniform, keys: 1000, zipf: 0.9, reads: 2, writes: 2 }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), Error> {
        if self.keys == 0 {
            return Err(Error::Config("workload.keys must be positive".into()));
        }
        if !(self.zipf >= 0.0 && self.zipf.is_finite()) {
            return Err(Error::Config("workload.zipf must be a finite value >= 0".into()));
        }
        if self.reads + self.writes == 0 {
            return Err(Error::Config("workload.reads + workload.writes must be at least 1".into()));
        }
        let distinct = (self.reads.max(self.writes)) as u64;
        if matches!(self.kind, WorkloadKind::RwUniform | WorkloadKind::RwZipf | WorkloadKind::Disjoint)
            && distinct > self.keys
        {
            return Err(Error::Config("workload.keys is smaller than the keys touched per transaction".into()));
        }
        Ok(())
    }
}

/// Draws keys in `0..n` from a Zipf law with exponent `theta` (rank 1 = key 0).
#[derive(Clone, Debug)]
pub struct KeyChooser {
    n: u64,
    zipf: Option<Zipf<f64>>,
}

impl KeyChooser {
    pub fn uniform(n: u64) -> Self {
        KeyChooser { n, zipf: None }
    }

    pub fn zipf(n: u64, theta: f64) -> Result<Self, Error> {
        if theta == 0.0 {
            return Ok(Self::uniform(n));
        }
        let z = Zipf::new(n as f64, theta).map_err(|e| Error::Config(format!("zipf: {e}")))?;
        Ok(KeyChooser { n, zipf: Some(z) })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Key {
        match &self.zipf {
            Some(z) => (z.sample(rng) as u64 - 1).min(self.n - 1),
            None => rng.random_range(0..self.n),
        }
    }

    /// `count` distinct keys (by rejection, so `count` must not exceed `n`).
    pub fn distinct<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<Key> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let k = self.draw(rng);
            if !out.contains(&k) {
                out.push(k);
            }
        }
        out
    }
}

/// Per-client script generator.
#[derive(Clone, Debug)]
pub struct Generator {
    spec: WorkloadSpec,
    chooser: KeyChooser,
    /// First key of this client's private range (disjoint workloads).
    base: Key,
}

impl Generator {
    pub fn new(spec: &WorkloadSpec, client_index: u64) -> Result<Self, Error> {
        spec.validate()?;
        let chooser = match spec.kind {
            WorkloadKind::RwUniform | WorkloadKind::Disjoint => KeyChooser::uniform(spec.keys),
            WorkloadKind::RwZipf => KeyChooser::zipf(spec.keys, spec.zipf)?,
            WorkloadKind::RetwisLite => KeyChooser::zipf(spec.keys, 0.75)?,
        };
        let base = if spec.kind == WorkloadKind::Disjoint { client_index * spec.keys } else { 0 };
        Ok(Generator { spec: spec.clone(), chooser, base })
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Script {
        let value = |rng: &mut R| rng.random::<u64>().to_be_bytes().to_vec();
        match self.spec.kind {
            WorkloadKind::RetwisLite => self.retwis(rng),
            _ => {
                let read_keys = self.chooser.distinct(rng, self.spec.reads);
                let write_keys = self.chooser.distinct(rng, self.spec.writes);
                let mut s: Script = read_keys.into_iter().map(|k| Op::Read(self.base + k)).collect();
                for k in write_keys {
                    let v = value(rng);
                    s.push(Op::Write(self.base + k, v));
                }
                s
            }
        }
    }

    /// Retwis-like mix: add-user 5%, follow 15%, post 30%, load-timeline 50%.
    fn retwis<R: Rng + ?Sized>(&self, rng: &mut R) -> Script {
        let roll = rng.random_range(0..100u32);
        let (reads, writes, rmw) = match roll {
            0..5 => (1, 0, 2),
            5..20 => (0, 0, 2),
            20..50 => (0, 1, 2),
            _ => (rng.random_range(1..=10usize), 0, 0),
        };
        let n = (reads + writes + rmw).min(self.chooser.n as usize);
        let mut keys = self.chooser.distinct(rng, n);
        keys.shuffle(rng);
        let mut s = Script::new();
        let (rmw_keys, rest) = keys.split_at(rmw.min(n));
        for k in rmw_keys {
            s.push(Op::Read(*k));
        }
        let (read_keys, write_keys) = rest.split_at(reads.min(rest.len()));
        for k in read_keys {
            s.push(Op::Read(*k));
        }
        for k in rmw_keys.iter().chain(write_keys) {
            s.push(Op::Write(*k, rng.random::<u64>().to_be_bytes().to_vec()));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rw_shape_reads_then_writes() {
        let g = Generator::new(&WorkloadSpec::default(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = g.generate(&mut rng);
        assert_eq!(s.len(), 4);
        assert!(matches!(s[0], Op::Read(_)) && matches!(s[1], Op::Read(_)));
        assert!(matches!(s[2], Op::Write(..)) && matches!(s[3], Op::Write(..)));
    }

    #[test]
    fn disjoint_ranges() {
        let spec = WorkloadSpec { kind: WorkloadKind::Disjoint, keys: 10, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for c in 0..4 {
            let g = Generator::new(&spec, c).unwrap();
            for _ in 0..50 {
                for op in g.generate(&mut rng) {
                    let k = match op {
                        Op::Read(k) | Op::Write(k, _) => k,
                    };
                    assert!((c * 10..c * 10 + 10).contains(&k));
                }
            }
        }
    }

    #[test]
    fn retwis_never_empty() {
        let spec = WorkloadSpec { kind: WorkloadKind::RetwisLite, ..Default::default() };
        let g = Generator::new(&spec, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            assert!(!g.generate(&mut rng).is_empty());
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(WorkloadSpec { reads: 0, writes: 0, ..Default::default() }.validate().is_err());
        assert!(WorkloadSpec { zipf: -1.0, ..Default::default() }.validate().is_err());
        assert!(WorkloadSpec { keys: 1, ..Default::default() }.validate().is_err());
    }
}
