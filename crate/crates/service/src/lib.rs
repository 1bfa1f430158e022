//! Live MEMORIZE review service.
//!
//! Each card of a deck runs its own MEMORIZE process; `GET /decks/{id}/next`
//! hands out a single-use ticket for the card with the earliest sampled
//! review time, and `POST /decks/{id}/reviews` applies the learner's recall
//! outcome. Deck state is an append-only event log (see [`deck::DeckEvent`])
//! replayed on startup.
//!
//! | Route | Body / query | Response |
//! |---|---|---|
//! | `POST /decks` | [`deck::DeckSpec`] | 201, [`deck::DeckStats`] |
//! | `GET /decks/{id}/next?now=` | | [`api::NextResponse`] |
//! | `POST /decks/{id}/reviews` | [`api::ReviewRequest`] | [`deck::ReviewOutcome`] |
//! | `GET /decks/{id}/stats?now=` | | [`deck::DeckStats`] |
//!
//! Errors are `{"error": "..."}` with 400 (invalid input, duplicate item
//! ids), 404 (unknown deck or ticket), 409 (deck id taken, ticket replayed)
//! or 410 (ticket expired).

pub mod api;
pub mod deck;
pub mod error;
pub mod store;

use std::sync::Arc;

pub use api::router;
pub use error::{ServiceError, ServiceResult};
pub use store::DeckStore;

/// Serves the API on an already bound listener until the process stops.
pub async fn serve(listener: tokio::net::TcpListener, store: DeckStore) -> ServiceResult<()> {
    tracing::info!(addr = %listener.local_addr()?, decks = store.ids().len(), "serving");
    axum::serve(listener, router(Arc::new(store))).await?;
    Ok(())
}
