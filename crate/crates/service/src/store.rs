//! Deck registry with append-only JSON-lines event logs and periodic
//! snapshots. The log is the source of truth; a snapshot only saves replay
//! work and is ignored when it does not fit the log.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::deck::{creation_event, Deck, DeckEvent, DeckSpec, DeckStats, ReviewOutcome, TicketView};
use crate::error::{ServiceError, ServiceResult};

/// A snapshot is written whenever the event count is a multiple of this.
pub const SNAPSHOT_EVERY: u64 = 64;

#[derive(Serialize, Deserialize)]
struct Snapshot {
    deck: Deck,
}

struct Entry {
    deck: Deck,
    log: Option<File>,
    dir: Option<PathBuf>,
}

impl Entry {
    /// Applies `event` to a copy, appends it durably, then publishes the copy.
    fn commit(&mut self, event: &DeckEvent) -> ServiceResult<()> {
        let mut next = self.deck.clone();
        next.apply(event)?;
        if let Some(log) = self.log.as_mut() {
            append(log, event)?;
        }
        self.deck = next;
        if self.deck.events % SNAPSHOT_EVERY == 0 {
            if let Some(dir) = &self.dir {
                write_snapshot(dir, &self.deck)?;
            }
        }
        Ok(())
    }
}

fn append(log: &mut File, event: &DeckEvent) -> ServiceResult<()> {
    let mut line = serde_json::to_vec(event)?;
    line.push(b'\n');
    log.write_all(&line)?;
    log.sync_data()?;
    Ok(())
}

fn log_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.log"))
}

fn snapshot_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.snapshot.json"))
}

fn write_snapshot(dir: &Path, deck: &Deck) -> ServiceResult<()> {
    let tmp = dir.join(format!("{}.snapshot.tmp", deck.id));
    fs::write(&tmp, serde_json::to_vec(&Snapshot { deck: deck.clone() })?)?;
    fs::rename(tmp, snapshot_path(dir, &deck.id))?;
    Ok(())
}

/// Events of a deck log. A torn final line (no trailing newline) from a
/// crash mid-append is dropped; any other unreadable line is an error.
pub fn read_events(path: &Path) -> ServiceResult<Vec<DeckEvent>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    let mut offset = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let read = reader.read_line(&mut line)?;
        if read == 0 {
            break;
        }
        match serde_json::from_str(line.trim_end()) {
            Ok(e) => events.push(e),
            Err(_) if !line.ends_with('\n') => {
                tracing::warn!(path = %path.display(), offset, "dropping torn final log line");
                break;
            }
            Err(e) => {
                return Err(ServiceError::CorruptLog(format!(
                    "{} at byte offset {offset}: {e}",
                    path.display()
                )))
            }
        }
        offset += read as u64;
    }
    Ok(events)
}

/// State after replaying a whole log from its creation event.
pub fn replay(events: &[DeckEvent]) -> ServiceResult<Deck> {
    let (first, rest) = events
        .split_first()
        .ok_or_else(|| ServiceError::CorruptLog("empty log".into()))?;
    let mut deck = Deck::create(first)?;
    for e in rest {
        deck.apply(e)?;
    }
    Ok(deck)
}

/// Loads a deck from its snapshot plus the log tail, or from the full log.
pub fn load_deck(dir: &Path, id: &str) -> ServiceResult<Deck> {
    let events = read_events(&log_path(dir, id))?;
    let snapshot = fs::read(snapshot_path(dir, id))
        .ok()
        .and_then(|b| serde_json::from_slice::<Snapshot>(&b).ok())
        .map(|s| s.deck)
        .filter(|d| d.id == id && d.events >= 1 && d.events as usize <= events.len());
    let Some(mut deck) = snapshot else {
        return replay(&events);
    };
    deck.reindex();
    for e in &events[deck.events as usize..] {
        deck.apply(e)?;
    }
    Ok(deck)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

/// All decks, each behind its own lock: commands on one deck serialise,
/// distinct decks proceed independently.
pub struct DeckStore {
    dir: Option<PathBuf>,
    decks: RwLock<BTreeMap<String, Arc<Mutex<Entry>>>>,
}

impl DeckStore {
    pub fn in_memory() -> Self {
        DeckStore {
            dir: None,
            decks: RwLock::new(BTreeMap::new()),
        }
    }

    /// Opens `dir`, creating it if needed, and loads every deck log in it.
    pub fn open(dir: impl Into<PathBuf>) -> ServiceResult<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut decks = BTreeMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            let Some(id) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".log"))
            else {
                continue;
            };
            let deck = load_deck(&dir, id)?;
            let log = OpenOptions::new().append(true).open(&path)?;
            tracing::info!(deck = id, events = deck.events, "deck loaded");
            decks.insert(
                id.to_string(),
                Arc::new(Mutex::new(Entry {
                    deck,
                    log: Some(log),
                    dir: Some(dir.clone()),
                })),
            );
        }
        Ok(DeckStore {
            dir: Some(dir),
            decks: RwLock::new(decks),
        })
    }

    fn entry(&self, id: &str) -> ServiceResult<Arc<Mutex<Entry>>> {
        self.decks
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::DeckNotFound(id.into()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.decks.read().keys().cloned().collect()
    }

    pub fn create(&self, spec: &DeckSpec, now: f64) -> ServiceResult<DeckStats> {
        let mut decks = self.decks.write();
        let id = match &spec.id {
            Some(id) if !valid_id(id) => {
                return Err(ServiceError::BadRequest(format!(
                    "deck id `{id}` must be 1-64 characters from [A-Za-z0-9_-]"
                )))
            }
            Some(id) => id.clone(),
            None => (decks.len() + 1..)
                .map(|k| format!("deck-{k}"))
                .find(|id| !decks.contains_key(id))
                .expect("unbounded range"),
        };
        if decks.contains_key(&id) {
            return Err(ServiceError::DeckExists(id));
        }
        let event = creation_event(spec, id.clone(), now)?;
        let deck = Deck::create(&event)?;
        let log = match &self.dir {
            Some(dir) => {
                let mut log = OpenOptions::new()
                    .create_new(true)
                    .append(true)
                    .open(log_path(dir, &id))?;
                append(&mut log, &event)?;
                Some(log)
            }
            None => None,
        };
        let stats = deck.stats(now);
        decks.insert(
            id,
            Arc::new(Mutex::new(Entry {
                deck,
                log,
                dir: self.dir.clone(),
            })),
        );
        Ok(stats)
    }

    /// The ticket valid at `now`, issuing one if needed; `None` when no card
    /// has a proposal.
    pub fn next(&self, id: &str, now: f64) -> ServiceResult<Option<TicketView>> {
        let entry = self.entry(id)?;
        let mut entry = entry.lock();
        loop {
            let events = entry.deck.plan_next(now);
            if events.is_empty() {
                break;
            }
            for e in &events {
                entry.commit(e)?;
            }
        }
        Ok(entry.deck.ticket_view(now))
    }

    pub fn submit(&self, id: &str, ticket_id: &str, recall: bool, at: f64) -> ServiceResult<ReviewOutcome> {
        let entry = self.entry(id)?;
        let mut entry = entry.lock();
        let event = entry.deck.plan_review(ticket_id, recall, at)?;
        entry.commit(&event)?;
        Ok(entry.deck.review_outcome(&event).expect("review event"))
    }

    pub fn stats(&self, id: &str, now: f64) -> ServiceResult<DeckStats> {
        Ok(self.entry(id)?.lock().deck.stats(now))
    }

    /// Copy of the live deck state.
    pub fn deck(&self, id: &str) -> ServiceResult<Deck> {
        Ok(self.entry(id)?.lock().deck.clone())
    }
}
