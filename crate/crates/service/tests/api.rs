use std::io::Write;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use memorize_service::store::{load_deck, read_events, replay, SNAPSHOT_EVERY};
use memorize_service::{router, DeckStore};
use serde_json::{json, Value};
use tower::ServiceExt;

const T0: f64 = 1_700_000_000.0;
const DAY: f64 = 86_400.0;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

fn cards(ids: &[&str]) -> Value {
    Value::Array(ids.iter().map(|i| json!({ "item_id": i })).collect())
}

async fn create(app: &Router, body: Value) -> Value {
    let (s, v) = call(app, "POST", "/decks", Some(body)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v
}

async fn next(app: &Router, deck: &str, now: f64) -> Value {
    let (s, v) = call(app, "GET", &format!("/decks/{deck}/next?now={now}"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v["ticket"].clone()
}

async fn review(app: &Router, deck: &str, ticket: &str, recall: Value, at: f64) -> (StatusCode, Value) {
    call(
        app,
        "POST",
        &format!("/decks/{deck}/reviews"),
        Some(json!({ "ticket_id": ticket, "recall": recall, "at": at })),
    )
    .await
}

async fn stats(app: &Router, deck: &str, now: f64) -> Value {
    let (s, v) = call(app, "GET", &format!("/decks/{deck}/stats?now={now}"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v
}

fn app() -> Router {
    router(Arc::new(DeckStore::in_memory()))
}

/// Reviews the ticketed card at its proposed time (or `now` if later).
async fn review_next(app: &Router, deck: &str, now: f64, recall: bool) -> (Value, Value) {
    let t = next(app, deck, now).await;
    let at = t["proposed_time"].as_f64().unwrap().max(now);
    let (s, out) = review(app, deck, t["ticket_id"].as_str().unwrap(), json!(recall), at).await;
    assert_eq!(s, StatusCode::OK, "{out}");
    (t, out)
}

#[tokio::test]
async fn empty_deck_is_valid() {
    let app = app();
    let d = create(&app, json!({ "id": "empty", "created_at": T0 })).await;
    assert_eq!(d["cards"], json!([]));
    assert_eq!(next(&app, "empty", T0).await, Value::Null);
    assert_eq!(stats(&app, "empty", T0 + DAY).await["cards"], json!([]));
}

#[tokio::test]
async fn defaults_and_fresh_card_stats() {
    let app = app();
    create(&app, json!({ "id": "d", "created_at": T0, "cards": cards(&["a"]) })).await;
    let s = stats(&app, "d", T0 + DAY).await;
    let c = &s["cards"][0];
    assert_eq!((c["alpha"].as_f64(), c["beta"].as_f64(), c["n"].as_f64()), (Some(0.5), Some(1.0), Some(1.0)));
    assert_eq!(c["q"].as_f64(), Some(0.01));
    assert_eq!(c["reviews"], 0);
    assert_eq!(c["last_review"].as_f64(), Some(T0));
    // One day after exposure at n = 1/day.
    let m = c["recall_probability"].as_f64().unwrap();
    assert!((m - (-1.0f64).exp()).abs() < 1e-12);
    let u = c["intensity"].as_f64().unwrap();
    assert!((u - 10.0 * (1.0 - m)).abs() < 1e-9);
    assert_eq!(stats(&app, "d", T0).await["cards"][0]["recall_probability"], 1.0);
}

#[tokio::test]
async fn fitted_model_supplies_item_rates() {
    let app = app();
    let fitted = json!({
        "model": { "kind": "exponential" },
        "alpha": 0.3, "beta": 0.8,
        "n0": { "a": 2.0 }, "default_n0": 0.5
    });
    create(
        &app,
        json!({ "id": "f", "created_at": T0, "fitted": fitted,
                "cards": [{ "item_id": "a" }, { "item_id": "b" }, { "item_id": "c", "alpha": 0.1 }] }),
    )
    .await;
    let s = stats(&app, "f", T0).await;
    let got: Vec<(f64, f64, f64)> = s["cards"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| (c["alpha"].as_f64().unwrap(), c["beta"].as_f64().unwrap(), c["n"].as_f64().unwrap()))
        .collect();
    assert_eq!(got, vec![(0.3, 0.8, 2.0), (0.3, 0.8, 0.5), (0.1, 0.8, 0.5)]);
}

#[tokio::test]
async fn success_halves_failure_doubles_and_recall_resets() {
    let app = app();
    create(&app, json!({ "id": "d", "created_at": T0, "cards": cards(&["a"]) })).await;
    let (t, out) = review_next(&app, "d", T0, true).await;
    assert_eq!(out["n"].as_f64(), Some(0.5));
    assert_eq!(out["recall_probability"].as_f64(), Some(1.0));
    assert_eq!(out["intensity"].as_f64(), Some(0.0));
    assert_eq!(out["reviews"], 1);
    assert!(out["next_proposed_time"].as_f64().unwrap() > t["proposed_time"].as_f64().unwrap());

    let at = out["at"].as_f64().unwrap();
    let (_, out) = review_next(&app, "d", at, false).await;
    assert_eq!(out["n"].as_f64(), Some(1.0));

    // Recall accepted as a bit too.
    let at = out["at"].as_f64().unwrap();
    let t = next(&app, "d", at).await;
    let (s, out) = review(&app, "d", t["ticket_id"].as_str().unwrap(), json!(0), t["proposed_time"].as_f64().unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(out["n"].as_f64(), Some(2.0));

    let s = stats(&app, "d", out["at"].as_f64().unwrap()).await;
    let c = &s["cards"][0];
    assert_eq!(c["reviews"], 3);
    assert_eq!(c["successes"], 1);
    let hist: Vec<bool> = c["history"].as_array().unwrap().iter().map(|h| h["recall"].as_bool().unwrap()).collect();
    assert_eq!(hist, vec![true, false, false]);
    assert_eq!(c["intensity"].as_f64(), Some(0.0));
}

#[tokio::test]
async fn error_statuses() {
    let app = app();
    for (method, uri) in [("GET", "/decks/nope/next"), ("GET", "/decks/nope/stats")] {
        assert_eq!(call(&app, method, uri, None).await.0, StatusCode::NOT_FOUND);
    }
    assert_eq!(review(&app, "nope", "x", json!(1), T0).await.0, StatusCode::NOT_FOUND);

    let (s, v) = call(&app, "POST", "/decks", Some(json!({ "cards": cards(&["a", "a"]) }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
    assert!(v["error"].as_str().unwrap().contains("duplicate"));
    let (s, _) = call(&app, "POST", "/decks", Some(json!({ "cards": [{ "item_id": "a", "alpha": 1.5 }] }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/decks", Some(json!({ "id": "../x" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    create(&app, json!({ "id": "d", "created_at": T0, "cards": cards(&["a"]) })).await;
    let (s, _) = call(&app, "POST", "/decks", Some(json!({ "id": "d" }))).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let t = next(&app, "d", T0).await;
    let id = t["ticket_id"].as_str().unwrap().to_string();
    let at = t["proposed_time"].as_f64().unwrap();
    assert_eq!(review(&app, "d", "d-99", json!(1), at).await.0, StatusCode::NOT_FOUND);
    assert_eq!(review(&app, "d", &id, json!(2), at).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(review(&app, "d", &id, json!(1), T0 - 1.0).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(review(&app, "d", &id, json!(1), at).await.0, StatusCode::OK);
    let (s, v) = review(&app, "d", &id, json!(1), at).await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");
}

#[tokio::test]
async fn tickets_expire_and_are_reissued() {
    let app = app();
    create(&app, json!({ "id": "d", "created_at": T0, "ticket_ttl": 60.0, "cards": cards(&["a", "b"]) })).await;
    let t1 = next(&app, "d", T0).await;
    // Polling before expiry returns the same ticket.
    assert_eq!(next(&app, "d", T0 + 1.0).await["ticket_id"], t1["ticket_id"]);
    let expiry = t1["expiry"].as_f64().unwrap();
    assert_eq!(expiry, t1["proposed_time"].as_f64().unwrap().max(T0) + 60.0);

    let t2 = next(&app, "d", expiry + 1.0).await;
    assert_ne!(t2["ticket_id"], t1["ticket_id"]);
    let (s, _) = review(&app, "d", t1["ticket_id"].as_str().unwrap(), json!(1), expiry + 1.0).await;
    assert_eq!(s, StatusCode::GONE);
    // Submitting after the expiry of the current ticket is also refused.
    let late = t2["expiry"].as_f64().unwrap() + 1.0;
    let (s, _) = review(&app, "d", t2["ticket_id"].as_str().unwrap(), json!(1), late).await;
    assert_eq!(s, StatusCode::GONE);
}

#[tokio::test]
async fn stats_are_read_only() {
    let app = app();
    create(&app, json!({ "id": "d", "created_at": T0, "cards": cards(&["a", "b"]) })).await;
    review_next(&app, "d", T0, true).await;
    let a = stats(&app, "d", T0 + 3.0 * DAY).await;
    let b = stats(&app, "d", T0 + 3.0 * DAY).await;
    assert_eq!(a, b);
    let total: u64 = a["cards"].as_array().unwrap().iter().map(|c| c["reviews"].as_u64().unwrap()).sum();
    assert_eq!(total, 1);
}

#[tokio::test]
async fn small_q_proposes_soon_after_exposure() {
    let app = app();
    let ids: Vec<String> = (0..100).map(|i| format!("c{i}")).collect();
    let body = json!({ "id": "fast", "created_at": T0, "defaults": { "q": 1e-8 },
                       "cards": ids.iter().map(|i| json!({ "item_id": i })).collect::<Vec<_>>() });
    create(&app, body).await;
    let s = stats(&app, "fast", T0).await;
    let soon = s["cards"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["proposed_time"].as_f64().unwrap() - T0 < 0.1 * DAY)
        .count();
    // Intensity ~ 1e4 (n t) per day: the first review comes within about an hour.
    assert!(soon >= 95, "{soon}");
    for c in s["cards"].as_array().unwrap() {
        assert_eq!(c["intensity"].as_f64(), Some(0.0));
    }
}

#[tokio::test]
async fn identical_cards_get_independent_times() {
    let app = app();
    create(&app, json!({ "id": "twins", "created_at": T0, "seed": 3, "cards": cards(&["a", "b"]) })).await;
    let s = stats(&app, "twins", T0).await;
    let p: Vec<f64> = s["cards"].as_array().unwrap().iter().map(|c| c["proposed_time"].as_f64().unwrap()).collect();
    assert_ne!(p[0], p[1]);
}

#[tokio::test]
async fn same_seed_same_log_same_tickets() {
    let run = || async {
        let app = app();
        create(&app, json!({ "id": "d", "created_at": T0, "seed": 42, "cards": cards(&["a", "b", "c"]) })).await;
        let mut now = T0;
        let mut trace = Vec::new();
        for k in 0..20 {
            let (t, out) = review_next(&app, "d", now, k % 3 != 0).await;
            now = out["at"].as_f64().unwrap();
            trace.push((t, out));
        }
        trace
    };
    assert_eq!(run().await, run().await);
}

#[tokio::test]
async fn concurrent_submissions_serialise() {
    let store = Arc::new(DeckStore::in_memory());
    let app = router(store.clone());
    create(&app, json!({ "id": "d", "created_at": T0, "cards": cards(&["a", "b"]) })).await;
    create(&app, json!({ "id": "e", "created_at": T0, "cards": cards(&["a"]) })).await;
    let t = next(&app, "d", T0).await;
    let id = t["ticket_id"].as_str().unwrap().to_string();
    let at = t["proposed_time"].as_f64().unwrap();
    let tasks: Vec<_> = (0..16)
        .map(|_| {
            let app = app.clone();
            let id = id.clone();
            tokio::spawn(async move { review(&app, "d", &id, json!(1), at).await.0 })
        })
        .collect();
    let other = tokio::spawn({
        let app = app.clone();
        async move { review_next(&app, "e", T0, false).await }
    });
    let mut codes = Vec::new();
    for t in tasks {
        codes.push(t.await.unwrap());
    }
    other.await.unwrap();
    assert_eq!(codes.iter().filter(|c| **c == StatusCode::OK).count(), 1);
    assert_eq!(codes.iter().filter(|c| **c == StatusCode::CONFLICT).count(), 15);
    assert_eq!(store.deck("d").unwrap().cards.iter().map(|c| c.history.len()).sum::<usize>(), 1);
}

#[tokio::test]
async fn restart_replays_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(DeckStore::open(dir.path()).unwrap());
    let app = router(store.clone());
    create(&app, json!({ "id": "d", "created_at": T0, "ticket_ttl": 600.0, "cards": cards(&["a", "b", "c"]) })).await;
    let mut now = T0;
    let mut k = 0;
    // Enough events to write a snapshot, with some expiries mixed in.
    while store.deck("d").unwrap().events < SNAPSHOT_EVERY + 10 {
        if k % 5 == 4 {
            let t = next(&app, "d", now).await;
            now = t["expiry"].as_f64().unwrap() + 1.0;
        } else {
            let (_, out) = review_next(&app, "d", now, k % 4 != 0).await;
            now = out["at"].as_f64().unwrap();
        }
        k += 1;
    }
    next(&app, "d", now).await;
    let live = store.deck("d").unwrap();
    assert!(dir.path().join("d.snapshot.json").exists());

    let reopened = DeckStore::open(dir.path()).unwrap();
    assert_eq!(reopened.deck("d").unwrap(), live);
    let full = replay(&read_events(&dir.path().join("d.log")).unwrap()).unwrap();
    assert_eq!(full, live);
    assert_eq!(
        full.events as usize,
        read_events(&dir.path().join("d.log")).unwrap().len()
    );

    // The reopened deck carries on exactly as the live one would have.
    let app2 = router(Arc::new(reopened));
    assert_eq!(next(&app2, "d", now).await, next(&app, "d", now).await);
    let s1 = stats(&app, "d", now).await;
    let s2 = stats(&app2, "d", now).await;
    assert_eq!(s1, s2);
    let per_card: u64 = s1["cards"].as_array().unwrap().iter().map(|c| c["reviews"].as_u64().unwrap()).sum();
    let logged = read_events(&dir.path().join("d.log"))
        .unwrap()
        .iter()
        .filter(|e| matches!(e, memorize_service::deck::DeckEvent::Review { .. }))
        .count();
    assert_eq!(per_card as usize, logged);
}

#[tokio::test]
async fn torn_tail_is_dropped_but_corruption_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    {
        let store = Arc::new(DeckStore::open(dir.path()).unwrap());
        let app = router(store);
        create(&app, json!({ "id": "d", "created_at": T0, "cards": cards(&["a"]) })).await;
        review_next(&app, "d", T0, true).await;
    }
    let path = dir.path().join("d.log");
    let intact = load_deck(dir.path(), "d").unwrap();
    std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .unwrap()
        .write_all(b"{\"type\":\"tick")
        .unwrap();
    assert_eq!(load_deck(dir.path(), "d").unwrap(), intact);

    let text = std::fs::read_to_string(&path).unwrap();
    let broken = text.replacen("\"type\":\"ticket\"", "\"type\":\"bogus\"", 1);
    std::fs::write(&path, broken).unwrap();
    let err = load_deck(dir.path(), "d").unwrap_err().to_string();
    assert!(err.contains("byte offset"), "{err}");
}
