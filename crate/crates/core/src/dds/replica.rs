use std::collections::BTreeMap;
use std::sync::Arc;

use arc_swap::ArcSwap;

use super::space::{ParticipantId, Sample};
use super::value::Value;

type Snapshot = BTreeMap<String, Arc<Sample>>;

/// Per-participant copy of the data space used by the multicast transport.
///
/// Readers load an immutable snapshot and never take a lock; writers swap in a
/// new snapshot. Remote samples are merged last-writer-wins by version.
#[derive(Debug, Default)]
pub struct ReplicaStore {
    topics: ArcSwap<Snapshot>,
}

impl ReplicaStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(&self, topic: &str) -> Option<Arc<Sample>> {
        self.topics.load().get(topic).cloned()
    }

    /// Local write: bumps the version past whatever this replica has seen.
    pub fn write(&self, writer: ParticipantId, topic: &str, value: Value) -> u64 {
        let mut version = 0;
        self.topics.rcu(|cur| {
            let mut next = Snapshot::clone(cur);
            version = cur.get(topic).map_or(1, |s| s.version + 1);
            next.insert(
                topic.to_string(),
                Arc::new(Sample { value: value.clone(), version, writer }),
            );
            next
        });
        version
    }

    /// Remote write; ignored unless newer than the local copy.
    pub fn merge(&self, topic: &str, sample: Sample) -> bool {
        let mut applied = false;
        let sample = Arc::new(sample);
        self.topics.rcu(|cur| {
            applied = cur.get(topic).is_none_or(|s| s.version < sample.version);
            let mut next = Snapshot::clone(cur);
            if applied {
                next.insert(topic.to_string(), sample.clone());
            }
            next
        });
        applied
    }

    /// A consistent view of every topic at one instant.
    pub fn snapshot(&self) -> Arc<BTreeMap<String, Arc<Sample>>> {
        self.topics.load_full()
    }

    pub fn len(&self) -> usize {
        self.topics.load().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::thread;

    use super::*;

    fn checksummed(seed: u64) -> Value {
        let body: Vec<u8> = (0..64).map(|i| (seed.wrapping_mul(31).wrapping_add(i) % 251) as u8).collect();
        let sum = body.iter().fold(0u8, |a, b| a.wrapping_add(*b));
        let mut bytes = body;
        bytes.push(sum);
        Value::Bytes(bytes)
    }

    fn intact(v: &Value) -> bool {
        match v {
            Value::Bytes(b) => {
                let (body, sum) = b.split_at(b.len() - 1);
                body.iter().fold(0u8, |a, x| a.wrapping_add(*x)) == sum[0]
            }
            _ => false,
        }
    }

    #[test]
    fn concurrent_reads_never_see_torn_or_stale_versions() {
        let store = Arc::new(ReplicaStore::new());
        let done = Arc::new(AtomicBool::new(false));
        let writer = {
            let store = store.clone();
            let done = done.clone();
            thread::spawn(move || {
                for i in 0..2000 {
                    store.write(ParticipantId(1), "/r/x", checksummed(i));
                }
                done.store(true, Ordering::SeqCst);
            })
        };
        let readers: Vec<_> = (0..3)
            .map(|_| {
                let store = store.clone();
                let done = done.clone();
                thread::spawn(move || {
                    let mut last = 0;
                    let mut failures = 0;
                    while !done.load(Ordering::SeqCst) {
                        if let Some(s) = store.read("/r/x") {
                            if !intact(&s.value) || s.version < last {
                                failures += 1;
                            }
                            last = s.version;
                        }
                    }
                    failures
                })
            })
            .collect();
        writer.join().unwrap();
        for r in readers {
            assert_eq!(r.join().unwrap(), 0);
        }
        assert_eq!(store.read("/r/x").unwrap().version, 2000);
    }

    #[test]
    fn merge_is_last_writer_wins_by_version() {
        let store = ReplicaStore::new();
        let s = |v: i64, version| Sample { value: Value::Int(v), version, writer: ParticipantId(2) };
        assert!(store.merge("/a", s(1, 3)));
        assert!(!store.merge("/a", s(2, 2)));
        assert!(store.merge("/a", s(3, 4)));
        assert_eq!(store.read("/a").unwrap().value, Value::Int(3));
    }
}
