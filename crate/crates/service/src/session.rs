//! Bounded session store with least-recently-used eviction.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use contourflow_core::dsp::{MelSpectrogram, Spectrogram};
use contourflow_core::features::{ControlFeature, ControlSignal};
use contourflow_core::AudioClip;

/// One uploaded clip and everything derived from it so far.
#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub clip: AudioClip,
    pub spectrogram: Spectrogram,
    pub mel: MelSpectrogram,
    pub controls: HashMap<ControlFeature, ControlSignal>,
}

pub type SharedSession = Arc<Mutex<Session>>;

#[derive(Debug)]
pub struct SessionStore {
    capacity: usize,
    tick: u64,
    next_id: u64,
    entries: HashMap<String, (u64, SharedSession)>,
}

impl SessionStore {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            tick: 0,
            next_id: 1,
            entries: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_id(&mut self) -> String {
        let id = format!("s{:06}", self.next_id);
        self.next_id += 1;
        id
    }

    /// Inserts a session, evicting the least recently used one when full.
    /// Returns the evicted id, if any.
    pub fn insert(&mut self, session: Session) -> Option<String> {
        let mut evicted = None;
        if self.entries.len() >= self.capacity && !self.entries.contains_key(&session.id) {
            if let Some(oldest) = self
                .entries
                .iter()
                .min_by_key(|(_, (t, _))| *t)
                .map(|(k, _)| k.clone())
            {
                self.entries.remove(&oldest);
                evicted = Some(oldest);
            }
        }
        self.tick += 1;
        self.entries.insert(
            session.id.clone(),
            (self.tick, Arc::new(Mutex::new(session))),
        );
        evicted
    }

    /// Looks up a session and marks it most recently used.
    pub fn get(&mut self, id: &str) -> Option<SharedSession> {
        self.tick += 1;
        let tick = self.tick;
        self.entries.get_mut(id).map(|(t, s)| {
            *t = tick;
            Arc::clone(s)
        })
    }

    pub fn remove(&mut self, id: &str) -> bool {
        self.entries.remove(id).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use contourflow_core::cfm::AnalysisConfig;

    fn session(id: &str) -> Session {
        let clip = AudioClip::silence(4096, 44_100);
        let (spectrogram, mel) = AnalysisConfig::default().analyze(&clip).unwrap();
        Session {
            id: id.into(),
            clip,
            spectrogram,
            mel,
            controls: HashMap::new(),
        }
    }

    #[test]
    fn evicts_least_recently_used() {
        let mut store = SessionStore::new(2);
        assert_eq!(store.insert(session("a")), None);
        assert_eq!(store.insert(session("b")), None);
        assert!(store.get("a").is_some());
        assert_eq!(store.insert(session("c")).as_deref(), Some("b"));
        assert!(store.get("b").is_none());
        assert!(store.get("a").is_some() && store.get("c").is_some());
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn ids_are_unique_and_remove_works() {
        let mut store = SessionStore::new(4);
        let (a, b) = (store.next_id(), store.next_id());
        assert_ne!(a, b);
        store.insert(session(&a));
        assert!(store.remove(&a));
        assert!(!store.remove(&a));
        assert!(store.is_empty());
    }
}
