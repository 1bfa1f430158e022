//! HTTP routes. Times are Unix seconds; `now` / `at` default to the wall clock.

use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::deck::{DeckSpec, DeckStats, ReviewOutcome, TicketView};
use crate::error::{ServiceError, ServiceResult};
use crate::store::DeckStore;

pub fn wall_clock() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn time_or_now(t: Option<f64>) -> ServiceResult<f64> {
    match t {
        Some(t) if !t.is_finite() => Err(ServiceError::BadRequest("time must be finite".into())),
        Some(t) => Ok(t),
        None => Ok(wall_clock()),
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct AtQuery {
    pub now: Option<f64>,
}

/// Response of `GET /decks/{id}/next`; `ticket` is null when nothing is scheduled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NextResponse {
    pub ticket: Option<TicketView>,
}

/// Recall accepted as `0`/`1` or `false`/`true`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Recall {
    Flag(bool),
    Bit(u8),
}

impl Recall {
    fn value(self) -> ServiceResult<bool> {
        match self {
            Recall::Flag(b) => Ok(b),
            Recall::Bit(0) => Ok(false),
            Recall::Bit(1) => Ok(true),
            Recall::Bit(b) => Err(ServiceError::BadRequest(format!("recall must be 0 or 1, got {b}"))),
        }
    }
}

/// Body of `POST /decks/{id}/reviews`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub ticket_id: String,
    pub recall: Recall,
    #[serde(default)]
    pub at: Option<f64>,
}

pub fn router(store: Arc<DeckStore>) -> Router {
    Router::new()
        .route("/decks", post(create_deck))
        .route("/decks/{id}/next", get(next_review))
        .route("/decks/{id}/reviews", post(submit_review))
        .route("/decks/{id}/stats", get(deck_stats))
        .with_state(store)
}

async fn create_deck(
    State(store): State<Arc<DeckStore>>,
    Json(spec): Json<DeckSpec>,
) -> ServiceResult<(StatusCode, Json<DeckStats>)> {
    let now = wall_clock();
    Ok((StatusCode::CREATED, Json(store.create(&spec, now)?)))
}

async fn next_review(
    State(store): State<Arc<DeckStore>>,
    Path(id): Path<String>,
    Query(q): Query<AtQuery>,
) -> ServiceResult<Json<NextResponse>> {
    let now = time_or_now(q.now)?;
    Ok(Json(NextResponse {
        ticket: store.next(&id, now)?,
    }))
}

async fn submit_review(
    State(store): State<Arc<DeckStore>>,
    Path(id): Path<String>,
    Json(req): Json<ReviewRequest>,
) -> ServiceResult<Json<ReviewOutcome>> {
    let at = time_or_now(req.at)?;
    Ok(Json(store.submit(&id, &req.ticket_id, req.recall.value()?, at)?))
}

async fn deck_stats(
    State(store): State<Arc<DeckStore>>,
    Path(id): Path<String>,
    Query(q): Query<AtQuery>,
) -> ServiceResult<Json<DeckStats>> {
    let now = time_or_now(q.now)?;
    Ok(Json(store.stats(&id, now)?))
}
