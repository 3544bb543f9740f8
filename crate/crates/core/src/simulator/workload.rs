//! Transaction generation against a simulated object store.
//!
//! Payloads are built when a transaction is invoked, reading the latest
//! committed version of each object, so later transactions observe earlier
//! commits. The store is scaffolding for the workload only.

use std::collections::BTreeMap;

use rand::Rng;

use crate::certification::{Payload, Value};
use crate::ids::{ObjectId, ShardId, TxnId, Version};

#[derive(Clone, Debug, Default)]
pub struct Store {
    objects: BTreeMap<ObjectId, (Version, Value)>,
    last_commit_version: Version,
    /// Next cold object index per shard (0-based within the shard's stripe).
    cold_cursor: BTreeMap<ShardId, u32>,
}

impl Store {
    pub fn version(&self, x: ObjectId) -> Version {
        self.objects.get(&x).map_or(0, |(v, _)| *v)
    }

    /// Applies a committed payload. Older versions never overwrite newer ones.
    pub fn apply(&mut self, l: &Payload) {
        for (x, val) in &l.writes {
            let e = self.objects.entry(*x).or_insert((0, String::new()));
            if l.commit_version > e.0 {
                *e = (l.commit_version, val.clone());
            }
        }
    }

    /// Reads `rw` and `ro` at their current versions and writes `rw`.
    pub fn payload(&mut self, t: TxnId, rw: &[ObjectId], ro: &[ObjectId]) -> Payload {
        let reads: BTreeMap<ObjectId, Version> = rw.iter().chain(ro).map(|x| (*x, self.version(*x))).collect();
        let max_read = reads.values().copied().max().unwrap_or(0);
        let commit_version = max_read.max(self.last_commit_version) + 1;
        self.last_commit_version = commit_version;
        Payload { reads, writes: rw.iter().map(|x| (*x, t.to_string())).collect(), commit_version }
    }

    /// One or two shards; per shard the hot object with probability
    /// `conflict_rate`, otherwise an object no other transaction touches.
    pub fn random_objects(
        &mut self,
        rng: &mut impl Rng,
        shards: u32,
        per_shard: u32,
        conflict_rate: f64,
    ) -> Vec<ObjectId> {
        let first = rng.gen_range(1..=shards);
        let mut chosen = vec![ShardId(first)];
        if shards > 1 && rng.gen_bool(0.5) {
            let mut second = rng.gen_range(1..shards);
            if second >= first {
                second += 1;
            }
            chosen.push(ShardId(second));
        }
        chosen.sort();
        chosen
            .into_iter()
            .map(|s| {
                let base = (s.0 - 1) * per_shard;
                if per_shard <= 1 || rng.gen_bool(conflict_rate) {
                    return ObjectId(base + 1);
                }
                let c = self.cold_cursor.entry(s).or_insert(0);
                *c += 1;
                ObjectId(base + 1 + (1 + (*c - 1) % (per_shard - 1)))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn payload_reads_committed_versions() {
        let mut st = Store::default();
        let l1 = st.payload(TxnId(1), &[ObjectId(1)], &[]);
        assert_eq!(l1.reads[&ObjectId(1)], 0);
        assert_eq!(l1.commit_version, 1);
        l1.validate().unwrap();
        st.apply(&l1);
        let l2 = st.payload(TxnId(2), &[ObjectId(1)], &[ObjectId(2)]);
        assert_eq!(l2.reads[&ObjectId(1)], 1);
        assert_eq!(l2.commit_version, 2);
        assert!(!l2.writes.contains_key(&ObjectId(2)));
        l2.validate().unwrap();
    }

    #[test]
    fn cold_objects_are_distinct_without_conflicts() {
        let mut st = Store::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..4 {
            for x in st.random_objects(&mut rng, 2, 9, 0.0) {
                assert!(seen.insert(x), "{x} reused");
                assert_ne!(x, ObjectId(1));
                assert_ne!(x, ObjectId(10));
            }
        }
    }
}
