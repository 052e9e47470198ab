use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::value::Value;

/// Announcement period, in virtual time units.
pub const ANNOUNCE_PERIOD: u64 = 500;
/// Announcement periods a participant may stay silent before it is dropped.
pub const LIVELINESS_PERIODS: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParticipantId(pub u32);

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParticipantRecord {
    pub id: ParticipantId,
    pub namespace: String,
    pub last_announce: u64,
    pub departed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub value: Value,
    pub version: u64,
    pub writer: ParticipantId,
}

/// One committed publish, as it appears in the audit log.
#[derive(Debug, Clone, PartialEq)]
pub struct PublishRecord {
    pub time: u64,
    pub writer: ParticipantId,
    pub namespace: String,
    pub topic: String,
    pub version: u64,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleViolation {
    pub time: u64,
    pub topic: String,
    pub attempted_by: ParticipantId,
    pub holder: ParticipantId,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BusError {
    #[error("namespace `{0}` is already held by a live participant")]
    DuplicateNamespace(String),
    #[error("participant {0} is not live")]
    NotLive(ParticipantId),
    #[error("`{topic}` is written by {holder}; {attempted_by} may not publish it")]
    RoleViolation { topic: String, attempted_by: ParticipantId, holder: ParticipantId },
    #[error(transparent)]
    Topic(#[from] TopicError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopicError {
    #[error("empty topic segment in `{0}`")]
    EmptySegment(String),
    #[error("invalid character in topic segment `{0}`")]
    BadSegment(String),
    #[error("topic name `{0}` must start with `/`")]
    NotAbsolute(String),
}

fn check_segment(seg: &str, whole: &str) -> Result<(), TopicError> {
    if seg.is_empty() {
        return Err(TopicError::EmptySegment(whole.to_string()));
    }
    if seg.chars().any(|c| c.is_whitespace() || c == '/') {
        return Err(TopicError::BadSegment(seg.to_string()));
    }
    Ok(())
}

/// Prefixes a local topic name with its namespace: `/namespace/local`.
///
/// `local` may itself carry several `/`-separated segments.
pub fn resolve_topic(namespace: &str, local: &str) -> Result<String, TopicError> {
    check_segment(namespace, namespace)?;
    for seg in local.split('/') {
        check_segment(seg, local)?;
    }
    Ok(format!("/{namespace}/{local}"))
}

pub fn validate_topic(name: &str) -> Result<(), TopicError> {
    let rest = name
        .strip_prefix('/')
        .ok_or_else(|| TopicError::NotAbsolute(name.to_string()))?;
    for seg in rest.split('/') {
        check_segment(seg, name)?;
    }
    Ok(())
}

/// In-process global data space: depth-1 topic store with single-writer
/// roles and liveliness-based participant discovery.
///
/// All reads are plain lookups of the last committed sample; nothing in here
/// ever waits.
#[derive(Debug, Clone)]
pub struct GlobalDataSpace {
    now: u64,
    announce_period: u64,
    liveliness_window: u64,
    topics: BTreeMap<String, Sample>,
    writers: BTreeMap<String, ParticipantId>,
    participants: BTreeMap<ParticipantId, ParticipantRecord>,
    next_id: u32,
    log: Vec<PublishRecord>,
    publish_count: u64,
    violations: Vec<RoleViolation>,
    read_steps: u64,
}

impl Default for GlobalDataSpace {
    fn default() -> Self {
        Self::new()
    }
}

impl GlobalDataSpace {
    pub fn new() -> Self {
        Self::with_liveliness(ANNOUNCE_PERIOD, LIVELINESS_PERIODS)
    }

    pub fn with_liveliness(announce_period: u64, periods: u64) -> Self {
        Self {
            now: 0,
            announce_period,
            liveliness_window: announce_period * periods,
            topics: BTreeMap::new(),
            writers: BTreeMap::new(),
            participants: BTreeMap::new(),
            next_id: 1,
            log: Vec::new(),
            publish_count: 0,
            violations: Vec::new(),
            read_steps: 0,
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn set_time(&mut self, now: u64) {
        debug_assert!(now >= self.now, "virtual time runs backwards");
        self.now = now;
    }

    pub fn announce_period(&self) -> u64 {
        self.announce_period
    }

    pub fn liveliness_window(&self) -> u64 {
        self.liveliness_window
    }

    fn live(&self, rec: &ParticipantRecord) -> bool {
        !rec.departed && self.now.saturating_sub(rec.last_announce) <= self.liveliness_window
    }

    pub fn is_live(&self, id: ParticipantId) -> bool {
        self.participants.get(&id).is_some_and(|r| self.live(r))
    }

    pub fn participant(&self, id: ParticipantId) -> Option<&ParticipantRecord> {
        self.participants.get(&id)
    }

    /// Live participant holding `namespace`, if any.
    pub fn lookup(&self, namespace: &str) -> Option<ParticipantId> {
        self.participants
            .values()
            .find(|r| r.namespace == namespace && self.live(r))
            .map(|r| r.id)
    }

    pub fn join(&mut self, namespace: &str) -> Result<ParticipantId, BusError> {
        check_segment(namespace, namespace)?;
        if self.lookup(namespace).is_some() {
            return Err(BusError::DuplicateNamespace(namespace.to_string()));
        }
        let id = ParticipantId(self.next_id);
        self.next_id += 1;
        self.participants.insert(
            id,
            ParticipantRecord {
                id,
                namespace: namespace.to_string(),
                last_announce: self.now,
                departed: false,
            },
        );
        Ok(id)
    }

    /// Liveliness heartbeat.
    pub fn announce(&mut self, id: ParticipantId) -> Result<(), BusError> {
        let now = self.now;
        let live = self.is_live(id);
        match self.participants.get_mut(&id) {
            Some(rec) if live => {
                rec.last_announce = now;
                Ok(())
            }
            _ => Err(BusError::NotLive(id)),
        }
    }

    /// Explicit departure (`bye`). Topic content stays in the domain.
    pub fn leave(&mut self, id: ParticipantId) {
        if let Some(rec) = self.participants.get_mut(&id) {
            rec.departed = true;
        }
    }

    /// Every live participant, the caller included.
    pub fn discover(&self, caller: ParticipantId) -> Result<Vec<ParticipantRecord>, BusError> {
        if !self.is_live(caller) {
            return Err(BusError::NotLive(caller));
        }
        Ok(self.participants.values().filter(|r| self.live(r)).cloned().collect())
    }

    /// Registers `id` as the single writer of `topic`. A role held by a
    /// departed participant may be taken over.
    pub fn claim_writer(&mut self, id: ParticipantId, topic: &str) -> Result<(), BusError> {
        validate_topic(topic)?;
        if !self.is_live(id) {
            return Err(BusError::NotLive(id));
        }
        match self.writers.get(topic) {
            Some(&holder) if holder != id && self.is_live(holder) => Err(BusError::RoleViolation {
                topic: topic.to_string(),
                attempted_by: id,
                holder,
            }),
            _ => {
                self.writers.insert(topic.to_string(), id);
                Ok(())
            }
        }
    }

    pub fn writer_of(&self, topic: &str) -> Option<ParticipantId> {
        self.writers.get(topic).copied()
    }

    /// Commits `value` to `topic` and returns the new version. Unclaimed
    /// topics are claimed by their first writer.
    pub fn publish(&mut self, id: ParticipantId, topic: &str, value: Value) -> Result<u64, BusError> {
        validate_topic(topic)?;
        if !self.is_live(id) {
            return Err(BusError::NotLive(id));
        }
        if let Some(&holder) = self.writers.get(topic) {
            if holder != id && self.is_live(holder) {
                self.violations.push(RoleViolation {
                    time: self.now,
                    topic: topic.to_string(),
                    attempted_by: id,
                    holder,
                });
                return Err(BusError::RoleViolation {
                    topic: topic.to_string(),
                    attempted_by: id,
                    holder,
                });
            }
        }
        self.writers.insert(topic.to_string(), id);
        let version = self.topics.get(topic).map_or(1, |s| s.version + 1);
        self.topics.insert(
            topic.to_string(),
            Sample { value: value.clone(), version, writer: id },
        );
        let namespace = self.participants[&id].namespace.clone();
        self.log.push(PublishRecord {
            time: self.now,
            writer: id,
            namespace,
            topic: topic.to_string(),
            version,
            value,
        });
        self.publish_count += 1;
        Ok(version)
    }

    /// Heartbeat heard from a participant in another process; unknown
    /// namespaces get a local record.
    pub fn remote_heartbeat(&mut self, namespace: &str) -> Result<ParticipantId, BusError> {
        match self.lookup(namespace) {
            Some(id) => {
                self.announce(id)?;
                Ok(id)
            }
            None => self.join(namespace),
        }
    }

    pub fn remote_bye(&mut self, namespace: &str) {
        if let Some(id) = self.lookup(namespace) {
            self.leave(id);
        }
    }

    /// Applies a sample written in another process, last-writer-wins by
    /// version. Merged samples are not logged as publishes.
    pub fn merge_remote(&mut self, namespace: &str, topic: &str, version: u64, value: Value) -> Result<bool, BusError> {
        validate_topic(topic)?;
        let id = self.remote_heartbeat(namespace)?;
        if self.topics.get(topic).is_some_and(|s| s.version >= version) {
            return Ok(false);
        }
        self.writers.insert(topic.to_string(), id);
        self.topics.insert(topic.to_string(), Sample { value, version, writer: id });
        Ok(true)
    }

    /// Last committed value and its version, or `None` if never written.
    pub fn read(&mut self, topic: &str) -> Option<(&Value, u64)> {
        self.read_steps += 1;
        self.topics.get(topic).map(|s| (&s.value, s.version))
    }

    pub fn peek(&self, topic: &str) -> Option<&Sample> {
        self.topics.get(topic)
    }

    pub fn topics(&self) -> impl Iterator<Item = (&String, &Sample)> {
        self.topics.iter()
    }

    /// Drains the publish log accumulated since the previous call.
    pub fn take_log(&mut self) -> Vec<PublishRecord> {
        std::mem::take(&mut self.log)
    }

    pub fn publish_count(&self) -> u64 {
        self.publish_count
    }

    pub fn violations(&self) -> &[RoleViolation] {
        &self.violations
    }

    /// Total number of lookups served by [`read`](Self::read).
    pub fn read_steps(&self) -> u64 {
        self.read_steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remote_samples_merge_by_version_and_keep_writers_live() {
        let mut bus = GlobalDataSpace::new();
        let me = bus.join("robot1").unwrap();
        assert!(bus.merge_remote("tpu", "/robot1/a/cmd", 4, Value::Int(1)).unwrap());
        assert!(!bus.merge_remote("tpu", "/robot1/a/cmd", 3, Value::Int(2)).unwrap());
        assert_eq!(bus.peek("/robot1/a/cmd").unwrap().value, Value::Int(1));
        let tpu = bus.lookup("tpu").unwrap();
        assert_eq!(bus.writer_of("/robot1/a/cmd"), Some(tpu));
        assert!(bus.publish(me, "/robot1/a/cmd", Value::Int(9)).is_err());
        assert_eq!(bus.publish_count(), 0);
        bus.set_time(bus.liveliness_window() + 1);
        assert_eq!(bus.lookup("tpu"), None);
        bus.remote_heartbeat("tpu").unwrap();
        assert!(bus.lookup("tpu").is_some());
        bus.remote_bye("tpu");
        assert_eq!(bus.lookup("tpu"), None);
    }

    #[test]
    fn resolve_examples() {
        assert_eq!(resolve_topic("robot1", "goal").unwrap(), "/robot1/goal");
        assert_eq!(resolve_topic("tpu", "goal1").unwrap(), "/tpu/goal1");
        assert_eq!(resolve_topic("robot1", "navigate/cmd").unwrap(), "/robot1/navigate/cmd");
        assert!(matches!(resolve_topic("", "goal"), Err(TopicError::EmptySegment(_))));
        assert!(matches!(resolve_topic("a b", "goal"), Err(TopicError::BadSegment(_))));
        assert!(resolve_topic("robot1", "nav//cmd").is_err());
    }

    #[test]
    fn join_discover_and_uniqueness() {
        let mut d = GlobalDataSpace::new();
        let a = d.join("robot1").unwrap();
        let b = d.join("tpu").unwrap();
        let seen: Vec<_> = d.discover(b).unwrap().into_iter().map(|r| r.namespace).collect();
        assert!(seen.contains(&"robot1".to_string()));
        assert_eq!(d.join("robot1"), Err(BusError::DuplicateNamespace("robot1".into())));
        d.leave(a);
        assert!(d.join("robot1").is_ok());
    }

    #[test]
    fn silent_participant_expires_after_window() {
        let mut d = GlobalDataSpace::new();
        let ids: Vec<_> = ["r1", "r2", "r3"].iter().map(|n| d.join(n).unwrap()).collect();
        assert_eq!(d.discover(ids[0]).unwrap().len(), 3);
        let w = d.liveliness_window();
        let mut t = 0;
        while t <= w {
            t += d.announce_period();
            d.set_time(t);
            d.announce(ids[0]).unwrap();
            d.announce(ids[1]).unwrap();
        }
        let live: Vec<_> = d.discover(ids[0]).unwrap().into_iter().map(|r| r.namespace).collect();
        assert_eq!(live, vec!["r1".to_string(), "r2".to_string()]);
    }

    #[test]
    fn late_joiner_is_seen_by_everyone() {
        let mut d = GlobalDataSpace::new();
        let early: Vec<_> = ["a", "b"].iter().map(|n| d.join(n).unwrap()).collect();
        d.set_time(1200);
        for &p in &early {
            d.announce(p).unwrap();
        }
        d.join("late").unwrap();
        for &p in &early {
            assert!(d.discover(p).unwrap().iter().any(|r| r.namespace == "late"));
        }
    }

    #[test]
    fn publish_read_versions() {
        let mut d = GlobalDataSpace::new();
        let p = d.join("robot1").unwrap();
        assert!(d.read("/robot1/goal").is_none());
        let v = Value::Coord(crate::geom::Cell::new(10, 0));
        assert_eq!(d.publish(p, "/robot1/goal", v.clone()).unwrap(), 1);
        assert_eq!(d.read("/robot1/goal"), Some((&v, 1)));
        let w = Value::Coord(crate::geom::Cell::new(3, 0));
        assert_eq!(d.publish(p, "/robot1/goal", w.clone()).unwrap(), 2);
        assert_eq!(d.read("/robot1/goal"), Some((&w, 2)));
    }

    #[test]
    fn content_survives_departure_and_role_is_released() {
        let mut d = GlobalDataSpace::new();
        let a = d.join("a").unwrap();
        let b = d.join("b").unwrap();
        d.publish(a, "/a/x", Value::Int(1)).unwrap();
        assert!(d.publish(b, "/a/x", Value::Int(2)).is_err());
        d.leave(a);
        assert_eq!(d.read("/a/x").map(|(v, _)| v.clone()), Some(Value::Int(1)));
        assert_eq!(d.publish(b, "/a/x", Value::Int(2)).unwrap(), 2);
    }
}
