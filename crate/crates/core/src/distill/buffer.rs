use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::cns::CnsArchive;
use crate::envs::{Origin, Transition};
use crate::error::{invalid, Error, Result};

/// Training batch in array form.
#[derive(Clone, Debug)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub r_ext: Array1<f64>,
    pub features: Array2<f64>,
    pub next_obs: Array2<f64>,
    pub z: Vec<usize>,
    /// 1 for terminal transitions.
    pub done: Array1<f64>,
    pub online: usize,
    pub offline: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn from_transitions(ts: &[&Transition]) -> Result<Self> {
        let first = ts.first().ok_or_else(|| Error::EmptyBuffer("empty batch".into()))?;
        let (b, od, ad, fd) = (ts.len(), first.s.len(), first.a.len(), first.features.len());
        let mut batch = Batch {
            obs: Array2::zeros((b, od)),
            actions: Array2::zeros((b, ad)),
            r_ext: Array1::zeros(b),
            features: Array2::zeros((b, fd)),
            next_obs: Array2::zeros((b, od)),
            z: Vec::with_capacity(b),
            done: Array1::zeros(b),
            online: 0,
            offline: 0,
        };
        for (i, t) in ts.iter().enumerate() {
            if t.s.len() != od || t.a.len() != ad || t.features.len() != fd || t.s_next.len() != od {
                return Err(Error::ShapeMismatch("inconsistent transition shapes in batch".into()));
            }
            batch.obs.row_mut(i).assign(&ndarray::ArrayView1::from(&t.s));
            batch.actions.row_mut(i).assign(&ndarray::ArrayView1::from(&t.a));
            batch.features.row_mut(i).assign(&ndarray::ArrayView1::from(&t.features));
            batch.next_obs.row_mut(i).assign(&ndarray::ArrayView1::from(&t.s_next));
            batch.r_ext[i] = t.r_ext;
            batch.done[i] = if t.done { 1.0 } else { 0.0 };
            batch.z.push(t.z);
            match t.origin {
                Origin::Online => batch.online += 1,
                Origin::Offline => batch.offline += 1,
            }
        }
        Ok(batch)
    }
}

/// Online FIFO rings plus a frozen offline store, both split by skill.
#[derive(Clone, Debug)]
pub struct StratifiedBuffer {
    skills: usize,
    capacity_per_skill: usize,
    online: Vec<VecDeque<Transition>>,
    offline: Vec<Vec<Transition>>,
}

impl StratifiedBuffer {
    /// `capacity` online transitions in total, shared evenly between skills.
    pub fn new(skills: usize, capacity: usize) -> Self {
        Self {
            skills,
            capacity_per_skill: capacity.div_ceil(skills.max(1)).max(1),
            online: vec![VecDeque::new(); skills],
            offline: vec![Vec::new(); skills],
        }
    }

    /// Buffer whose offline store holds every transition of `archive`.
    pub fn with_archive(skills: usize, capacity: usize, archive: &CnsArchive) -> Result<Self> {
        let mut buf = Self::new(skills, capacity);
        for e in &archive.entries {
            if e.skill >= skills {
                return Err(invalid(format!("archive skill {} out of range", e.skill)));
            }
            buf.offline[e.skill]
                .extend(e.transitions.iter().map(|t| Transition { origin: Origin::Offline, ..t.clone() }));
        }
        Ok(buf)
    }

    pub fn skills(&self) -> usize {
        self.skills
    }

    pub fn online_len(&self) -> usize {
        self.online.iter().map(VecDeque::len).sum()
    }

    pub fn offline_len(&self) -> usize {
        self.offline.iter().map(Vec::len).sum()
    }

    pub fn online_for(&self, z: usize) -> &VecDeque<Transition> {
        &self.online[z]
    }

    pub fn offline_for(&self, z: usize) -> &[Transition] {
        &self.offline[z]
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.z >= self.skills {
            return Err(invalid(format!("skill {} out of range", t.z)));
        }
        if !t.r_ext.is_finite() {
            return Err(Error::Numerical("non-finite reward".into()));
        }
        let ring = &mut self.online[t.z];
        if ring.len() == self.capacity_per_skill {
            ring.pop_front();
        }
        ring.push_back(Transition { origin: Origin::Online, ..t });
        Ok(())
    }

    /// SHA-256 over the offline store contents.
    pub fn offline_hash(&self) -> String {
        let mut h = Sha256::new();
        for (z, store) in self.offline.iter().enumerate() {
            h.update((z as u64).to_le_bytes());
            for t in store {
                for v in t.s.iter().chain(&t.a).chain(&t.features).chain(&t.s_next).chain(std::iter::once(&t.r_ext)) {
                    h.update(v.to_bits().to_le_bytes());
                }
                h.update([u8::from(t.done)]);
            }
        }
        hex::encode(h.finalize())
    }

    fn draw<'a, R: Rng + ?Sized>(stratum: &'a [&'a [Transition]], rng: &mut R) -> &'a Transition {
        let k = rng.random_range(0..stratum.len());
        let s = stratum[k];
        &s[rng.random_range(0..s.len())]
    }

    /// Half the batch from each stratum (skill uniform, then transition uniform within
    /// that skill). Falls back to a single stratum while the other is empty.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        if batch_size == 0 || !batch_size.is_multiple_of(2) {
            return Err(invalid(format!("batch size must be even and positive, got {batch_size}")));
        }
        let on: Vec<&VecDeque<Transition>> = self.online.iter().filter(|r| !r.is_empty()).collect();
        let off: Vec<&[Transition]> = self.offline.iter().filter(|s| !s.is_empty()).map(Vec::as_slice).collect();
        let (n_on, n_off) = match (on.is_empty(), off.is_empty()) {
            (true, true) => return Err(Error::EmptyBuffer("both strata are empty".into())),
            (true, false) => (0, batch_size),
            (false, true) => (batch_size, 0),
            (false, false) => (batch_size / 2, batch_size / 2),
        };
        let mut picked: Vec<&Transition> = Vec::with_capacity(batch_size);
        for _ in 0..n_on {
            let ring = on[rng.random_range(0..on.len())];
            picked.push(&ring[rng.random_range(0..ring.len())]);
        }
        for _ in 0..n_off {
            picked.push(Self::draw(&off, rng));
        }
        Batch::from_transitions(&picked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cns::ArchiveEntry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(z: usize, r: f64) -> Transition {
        Transition {
            s: vec![r, 0.0],
            a: vec![0.0],
            r_ext: r,
            features: vec![r],
            s_next: vec![r, 1.0],
            z,
            done: false,
            origin: Origin::Online,
        }
    }

    fn archive() -> CnsArchive {
        let mut a = CnsArchive::new(2);
        for z in 0..2 {
            a.entries.push(ArchiveEntry {
                skill: z,
                iteration: 1,
                ret: 0.0,
                mean_features: vec![0.0],
                collisions: 0,
                transitions: (0..5).map(|k| tr(z, 100.0 + k as f64)).collect(),
            });
        }
        a
    }

    #[test]
    fn offline_only_fallback() {
        let buf = StratifiedBuffer::with_archive(2, 10, &archive()).unwrap();
        let b = buf.sample_batch(256, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((b.online, b.offline), (0, 256));
    }

    #[test]
    fn exact_halves_once_both_strata_exist() {
        let mut buf = StratifiedBuffer::with_archive(2, 10, &archive()).unwrap();
        buf.push(tr(1, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let b = buf.sample_batch(8, &mut rng).unwrap();
            assert_eq!((b.online, b.offline), (4, 4));
        }
        let b = buf.sample_batch(256, &mut rng).unwrap();
        assert_eq!((b.online, b.offline), (128, 128));
    }

    #[test]
    fn empty_buffer_errors() {
        let buf = StratifiedBuffer::new(2, 10);
        assert!(matches!(buf.sample_batch(4, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::EmptyBuffer(_))));
        assert!(buf.sample_batch(3, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn rings_evict_oldest() {
        let mut buf = StratifiedBuffer::new(2, 4);
        for k in 0..5 {
            buf.push(tr(0, k as f64)).unwrap();
        }
        let kept: Vec<f64> = buf.online_for(0).iter().map(|t| t.r_ext).collect();
        assert_eq!(kept, vec![3.0, 4.0]);
    }

    #[test]
    fn skills_uniform_within_stratum() {
        let mut buf = StratifiedBuffer::new(2, 1000);
        buf.push(tr(0, 0.0)).unwrap();
        for _ in 0..99 {
            buf.push(tr(1, 0.0)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut zero = 0;
        for _ in 0..200 {
            zero += buf.sample_batch(100, &mut rng).unwrap().z.iter().filter(|&&z| z == 0).count();
        }
        let frac = zero as f64 / 20_000.0;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn hash_ignores_online_data() {
        let mut buf = StratifiedBuffer::with_archive(2, 10, &archive()).unwrap();
        let h = buf.offline_hash();
        buf.push(tr(0, 3.0)).unwrap();
        assert_eq!(h, buf.offline_hash());
        assert_ne!(h, StratifiedBuffer::new(2, 10).offline_hash());
    }
}
