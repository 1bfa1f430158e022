//! Deck state machine. Every mutation is an event; live state and replayed
//! state go through the same [`Deck::apply`], so they cannot diverge.

use std::collections::{BTreeMap, HashMap};

use memorize_core::estimation::FittedModel;
use memorize_core::quadrature;
use memorize_core::rng::{self, StreamRng};
use memorize_core::schedule::{Memorize, Schedule};
use memorize_core::{ItemParams, MemoryState, ModelKind};
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

/// One model time unit is one day; the API speaks Unix seconds.
pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const DEFAULT_Q: f64 = 0.01;
pub const DEFAULT_TICKET_TTL: f64 = 3_600.0;
/// Sampling window, in expected inter-review gaps.
pub const HORIZON_GAPS: f64 = 10.0;
/// Windows tried before a card is left without a proposal.
const MAX_WINDOWS: usize = 1_000;

/// Per-card parameters filled in for anything a card leaves unset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CardDefaults {
    pub alpha: f64,
    pub beta: f64,
    pub n0: f64,
    pub q: f64,
}

impl Default for CardDefaults {
    fn default() -> Self {
        let p = ItemParams::default();
        CardDefaults {
            alpha: p.alpha,
            beta: p.beta,
            n0: p.n0,
            q: DEFAULT_Q,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CardSpec {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

/// Body of `POST /decks`.
///
/// Parameter precedence per card: the card's own fields, then `fitted`
/// (its `alpha`, `beta`, per-item `n0` and memory model), then `defaults`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeckSpec {
    pub id: Option<String>,
    /// Defaults to a hash of the deck id.
    pub seed: Option<u64>,
    /// Unix seconds; every card is first exposed at this time.
    pub created_at: Option<f64>,
    pub model: Option<ModelKind>,
    pub defaults: CardDefaults,
    pub fitted: Option<FittedModel>,
    /// Seconds a ticket stays valid past `max(proposed_time, issued_at)`.
    pub ticket_ttl: Option<f64>,
    pub cards: Vec<CardSpec>,
}

/// Fully resolved card parameters, as written to the log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CardConfig {
    pub item_id: String,
    pub alpha: f64,
    pub beta: f64,
    pub n0: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionTicket {
    pub ticket_id: String,
    pub deck_id: String,
    pub item_id: String,
    /// Unix seconds.
    pub proposed_time: f64,
    pub issued_at: f64,
    pub expiry: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DeckEvent {
    Created {
        deck_id: String,
        seed: u64,
        created_at: f64,
        model: ModelKind,
        ticket_ttl: f64,
        cards: Vec<CardConfig>,
    },
    Ticket(SessionTicket),
    /// The outstanding ticket lapsed; its card is resampled from the expiry.
    Expired { ticket_id: String },
    Review {
        ticket_id: String,
        item_id: String,
        recall: bool,
        at: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub at: f64,
    pub recall: bool,
    /// Forgetting rate after the review, per day.
    pub n: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Card {
    pub config: CardConfig,
    pub state: MemoryState,
    pub history: Vec<HistoryEntry>,
    /// Model time of the next sampled review.
    pub proposal: Option<f64>,
    rng: StreamRng,
}

impl Card {
    fn params(&self) -> ItemParams {
        ItemParams {
            alpha: self.config.alpha,
            beta: self.config.beta,
            n0: self.config.n0,
        }
    }

    fn schedule(&self) -> Memorize {
        Memorize::new(self.config.q)
    }

    /// First event of the MEMORIZE process after `from`, searched over
    /// consecutive windows of `HORIZON_GAPS` expected gaps.
    fn resample(&mut self, from: f64) -> ServiceResult<()> {
        let schedule = self.schedule();
        let window = HORIZON_GAPS * expected_gap(&schedule, &self.state);
        let mut start = from;
        self.proposal = None;
        for _ in 0..MAX_WINDOWS {
            if let Some(t) = schedule.sample_next(&self.state, start, start + window, &mut self.rng)? {
                self.proposal = Some(t);
                break;
            }
            start += window;
        }
        Ok(())
    }

    pub fn successes(&self) -> usize {
        self.history.iter().filter(|h| h.recall).count()
    }
}

/// Mean waiting time to the first review of a fresh MEMORIZE process started
/// at the last review: `∫ exp(-Λ(s)) ds`.
pub fn expected_gap(schedule: &Memorize, state: &MemoryState) -> f64 {
    let t0 = state.t_last();
    let lambda = |s: f64| schedule.integrated_intensity(state, t0, t0 + s);
    let mut upper = state.kind().half_life(state.n()).max(1.0 / schedule.max_rate());
    for _ in 0..200 {
        if lambda(upper) >= 40.0 {
            break;
        }
        upper *= 2.0;
    }
    quadrature::integrate(|s| (-lambda(s)).exp(), 0.0, upper, 1e-9 * upper)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retired {
    Used,
    Expired,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deck {
    pub id: String,
    pub seed: u64,
    pub created_at: f64,
    pub model: ModelKind,
    pub ticket_ttl: f64,
    pub cards: Vec<Card>,
    pub outstanding: Option<SessionTicket>,
    pub retired: BTreeMap<String, Retired>,
    pub tickets_issued: u64,
    /// Events applied so far, the creation event included.
    pub events: u64,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

/// What `POST /decks/{id}/reviews` returns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewOutcome {
    pub ticket_id: String,
    pub item_id: String,
    pub recall: bool,
    pub at: f64,
    pub n: f64,
    pub recall_probability: f64,
    pub intensity: f64,
    pub reviews: usize,
    pub next_proposed_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TicketView {
    #[serde(flatten)]
    pub ticket: SessionTicket,
    /// Reviewing intensity at the query time, per day.
    pub intensity: f64,
    pub recall_probability: f64,
    /// The proposed time has passed.
    pub due: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CardStats {
    pub item_id: String,
    pub alpha: f64,
    pub beta: f64,
    pub q: f64,
    /// Per day.
    pub n: f64,
    pub recall_probability: f64,
    pub intensity: f64,
    pub reviews: usize,
    pub successes: usize,
    pub last_review: f64,
    pub proposed_time: Option<f64>,
    pub history: Vec<HistoryEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeckStats {
    pub deck_id: String,
    pub now: f64,
    pub created_at: f64,
    pub events: u64,
    pub cards: Vec<CardStats>,
}

/// Seed derived from a deck id (FNV-1a) so it is stable across builds.
pub fn seed_for(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Resolves a creation request into its log event.
pub fn creation_event(spec: &DeckSpec, id: String, now: f64) -> ServiceResult<DeckEvent> {
    let created_at = spec.created_at.unwrap_or(now);
    if !created_at.is_finite() {
        return Err(ServiceError::BadRequest("created_at must be finite".into()));
    }
    let ticket_ttl = spec.ticket_ttl.unwrap_or(DEFAULT_TICKET_TTL);
    if !(ticket_ttl > 0.0 && ticket_ttl.is_finite()) {
        return Err(ServiceError::BadRequest("ticket_ttl must be positive".into()));
    }
    let model = spec
        .model
        .or(spec.fitted.as_ref().map(|f| f.model))
        .unwrap_or_default();
    model.validate()?;
    let mut seen = std::collections::HashSet::new();
    let mut cards = Vec::with_capacity(spec.cards.len());
    for c in &spec.cards {
        if !seen.insert(c.item_id.as_str()) {
            return Err(ServiceError::BadRequest(format!("duplicate item id `{}`", c.item_id)));
        }
        let fitted = spec.fitted.as_ref().map(|f| f.params_for(&c.item_id));
        let d = &spec.defaults;
        let card = CardConfig {
            item_id: c.item_id.clone(),
            alpha: c.alpha.or(fitted.map(|p| p.alpha)).unwrap_or(d.alpha),
            beta: c.beta.or(fitted.map(|p| p.beta)).unwrap_or(d.beta),
            n0: c.n0.or(fitted.map(|p| p.n0)).unwrap_or(d.n0),
            q: c.q.unwrap_or(d.q),
        };
        ItemParams::new(card.alpha, card.beta, card.n0)?;
        if !(card.q > 0.0 && card.q.is_finite()) {
            return Err(ServiceError::BadRequest(format!("q must be positive for `{}`", card.item_id)));
        }
        cards.push(card);
    }
    Ok(DeckEvent::Created {
        seed: spec.seed.unwrap_or_else(|| seed_for(&id)),
        deck_id: id,
        created_at,
        model,
        ticket_ttl,
        cards,
    })
}

impl Deck {
    /// Deck from its creation event. Card `i` samples from stream `i` of the deck seed.
    pub fn create(event: &DeckEvent) -> ServiceResult<Deck> {
        let DeckEvent::Created {
            deck_id,
            seed,
            created_at,
            model,
            ticket_ttl,
            cards,
        } = event
        else {
            return Err(ServiceError::CorruptLog("log must start with a creation event".into()));
        };
        let mut deck = Deck {
            id: deck_id.clone(),
            seed: *seed,
            created_at: *created_at,
            model: *model,
            ticket_ttl: *ticket_ttl,
            cards: Vec::with_capacity(cards.len()),
            outstanding: None,
            retired: BTreeMap::new(),
            tickets_issued: 0,
            events: 1,
            index: HashMap::new(),
        };
        for (i, config) in cards.iter().enumerate() {
            let mut card = Card {
                state: MemoryState::new(config.n0, 0.0, *model)?,
                config: config.clone(),
                history: Vec::new(),
                proposal: None,
                rng: rng::stream(*seed, i as u64),
            };
            card.resample(0.0)?;
            deck.cards.push(card);
        }
        deck.reindex();
        Ok(deck)
    }

    /// Rebuilds the item lookup after deserialisation.
    pub fn reindex(&mut self) {
        self.index = self
            .cards
            .iter()
            .enumerate()
            .map(|(i, c)| (c.config.item_id.clone(), i))
            .collect();
    }

    pub fn to_model_time(&self, wall: f64) -> f64 {
        (wall - self.created_at) / SECONDS_PER_DAY
    }

    pub fn to_wall_time(&self, model: f64) -> f64 {
        self.created_at + model * SECONDS_PER_DAY
    }

    fn card_index(&self, item: &str) -> ServiceResult<usize> {
        self.index
            .get(item)
            .copied()
            .ok_or_else(|| ServiceError::CorruptLog(format!("unknown item `{item}`")))
    }

    pub fn apply(&mut self, event: &DeckEvent) -> ServiceResult<()> {
        match event {
            DeckEvent::Created { .. } => {
                return Err(ServiceError::CorruptLog("second creation event".into()));
            }
            DeckEvent::Ticket(t) => {
                if self.outstanding.is_some() {
                    return Err(ServiceError::CorruptLog("ticket issued while another is outstanding".into()));
                }
                self.card_index(&t.item_id)?;
                self.tickets_issued += 1;
                self.outstanding = Some(t.clone());
            }
            DeckEvent::Expired { ticket_id } => {
                let t = self.take_outstanding(ticket_id)?;
                let from = self.to_model_time(t.expiry);
                let i = self.card_index(&t.item_id)?;
                self.cards[i].resample(from)?;
                self.retired.insert(t.ticket_id, Retired::Expired);
            }
            DeckEvent::Review {
                ticket_id,
                item_id,
                recall,
                at,
            } => {
                let t = self.take_outstanding(ticket_id)?;
                if &t.item_id != item_id {
                    return Err(ServiceError::CorruptLog(format!("ticket `{ticket_id}` is for another item")));
                }
                let at_model = self.to_model_time(*at);
                let i = self.card_index(item_id)?;
                let card = &mut self.cards[i];
                card.state = card.state.apply_review(at_model, *recall, &card.params())?;
                card.history.push(HistoryEntry {
                    at: *at,
                    recall: *recall,
                    n: card.state.n(),
                });
                card.resample(at_model)?;
                self.retired.insert(t.ticket_id, Retired::Used);
            }
        }
        self.events += 1;
        Ok(())
    }

    fn take_outstanding(&mut self, ticket_id: &str) -> ServiceResult<SessionTicket> {
        match self.outstanding.take() {
            Some(t) if t.ticket_id == ticket_id => Ok(t),
            other => {
                self.outstanding = other;
                Err(ServiceError::CorruptLog(format!("ticket `{ticket_id}` is not outstanding")))
            }
        }
    }

    /// Next event towards a valid ticket at `now`: the expiry of a lapsed
    /// ticket, or a new ticket for the earliest proposal. Empty when the
    /// outstanding ticket is still valid or no card has a proposal. After an
    /// expiry, apply it and plan again.
    pub fn plan_next(&self, now: f64) -> Vec<DeckEvent> {
        if let Some(t) = &self.outstanding {
            if now <= t.expiry {
                return Vec::new();
            }
            return vec![DeckEvent::Expired {
                ticket_id: t.ticket_id.clone(),
            }];
        }
        let earliest = self
            .cards
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.proposal.map(|t| (i, t)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let mut events = Vec::new();
        if let Some((i, t)) = earliest {
            let proposed_time = self.to_wall_time(t);
            events.push(DeckEvent::Ticket(SessionTicket {
                ticket_id: format!("{}-{}", self.id, self.tickets_issued + 1),
                deck_id: self.id.clone(),
                item_id: self.cards[i].config.item_id.clone(),
                proposed_time,
                issued_at: now,
                expiry: proposed_time.max(now) + self.ticket_ttl,
            }));
        }
        events
    }

    pub fn ticket_view(&self, now: f64) -> Option<TicketView> {
        let t = self.outstanding.as_ref()?;
        let card = &self.cards[self.index[&t.item_id]];
        let (m, u) = self.recall_and_intensity(card, now);
        Some(TicketView {
            ticket: t.clone(),
            intensity: u,
            recall_probability: m,
            due: t.proposed_time <= now,
        })
    }

    fn recall_and_intensity(&self, card: &Card, now: f64) -> (f64, f64) {
        let t = self.to_model_time(now).max(card.state.t_last());
        (card.state.recall_at(t), card.schedule().intensity(&card.state, t))
    }

    /// Validates a submission against the outstanding ticket and returns its event.
    pub fn plan_review(&self, ticket_id: &str, recall: bool, at: f64) -> ServiceResult<DeckEvent> {
        match self.retired.get(ticket_id) {
            Some(Retired::Used) => return Err(ServiceError::TicketReplayed(ticket_id.into())),
            Some(Retired::Expired) => return Err(ServiceError::TicketExpired(ticket_id.into())),
            None => {}
        }
        let t = match &self.outstanding {
            Some(t) if t.ticket_id == ticket_id => t,
            _ => return Err(ServiceError::TicketNotFound(ticket_id.into())),
        };
        if at > t.expiry {
            return Err(ServiceError::TicketExpired(ticket_id.into()));
        }
        let card = &self.cards[self.index[&t.item_id]];
        if !at.is_finite() || self.to_model_time(at) < card.state.t_last() {
            return Err(ServiceError::BadRequest(format!(
                "review time {at} precedes the card's last review"
            )));
        }
        Ok(DeckEvent::Review {
            ticket_id: ticket_id.into(),
            item_id: t.item_id.clone(),
            recall,
            at,
        })
    }

    pub fn review_outcome(&self, event: &DeckEvent) -> Option<ReviewOutcome> {
        let DeckEvent::Review {
            ticket_id,
            item_id,
            recall,
            at,
        } = event
        else {
            return None;
        };
        let card = &self.cards[*self.index.get(item_id)?];
        let (m, u) = self.recall_and_intensity(card, *at);
        Some(ReviewOutcome {
            ticket_id: ticket_id.clone(),
            item_id: item_id.clone(),
            recall: *recall,
            at: *at,
            n: card.state.n(),
            recall_probability: m,
            intensity: u,
            reviews: card.history.len(),
            next_proposed_time: card.proposal.map(|t| self.to_wall_time(t)),
        })
    }

    pub fn stats(&self, now: f64) -> DeckStats {
        DeckStats {
            deck_id: self.id.clone(),
            now,
            created_at: self.created_at,
            events: self.events,
            cards: self
                .cards
                .iter()
                .map(|c| {
                    let (m, u) = self.recall_and_intensity(c, now);
                    CardStats {
                        item_id: c.config.item_id.clone(),
                        alpha: c.config.alpha,
                        beta: c.config.beta,
                        q: c.config.q,
                        n: c.state.n(),
                        recall_probability: m,
                        intensity: u,
                        reviews: c.history.len(),
                        successes: c.successes(),
                        last_review: self.to_wall_time(c.state.t_last()),
                        proposed_time: c.proposal.map(|t| self.to_wall_time(t)),
                        history: c.history.clone(),
                    }
                })
                .collect(),
        }
    }
}
