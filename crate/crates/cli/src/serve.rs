//! HTTP front for the enforcer: `POST /authorize` and
//! `POST /producer-response`.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use bolaz_core::runtime::wire::{
    handle_authorize, handle_producer_response, AuthorizeRequest, ProducerResponseRequest,
    WireError, WireFailure,
};
use bolaz_core::runtime::{AuthzError, Enforcer};
use bolaz_core::store::InMemoryStore;

pub struct AppState {
    pub enforcer: Enforcer,
    pub store: InMemoryStore,
}

fn failure(f: WireFailure) -> Response {
    let (status, body) = match f {
        WireFailure::BadRequest(e) => (StatusCode::BAD_REQUEST, e),
        WireFailure::Authz(e) => {
            let status = match e {
                AuthzError::UnknownEndpoint(_)
                | AuthzError::UnknownPoint(_)
                | AuthzError::MissingClaim(_) => StatusCode::BAD_REQUEST,
                AuthzError::StoreUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            };
            (status, WireError::new(e))
        }
    };
    (status, Json(body)).into_response()
}

fn bad_body(e: JsonRejection) -> Response {
    (StatusCode::BAD_REQUEST, Json(WireError::new(e.body_text()))).into_response()
}

async fn authorize(
    State(st): State<Arc<AppState>>,
    body: Result<Json<AuthorizeRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return bad_body(e),
    };
    match handle_authorize(&st.enforcer, &st.store, &req) {
        Ok(resp) => Json(resp).into_response(),
        Err(f) => failure(f),
    }
}

async fn producer_response(
    State(st): State<Arc<AppState>>,
    body: Result<Json<ProducerResponseRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return bad_body(e),
    };
    match handle_producer_response(&st.enforcer, &req) {
        Ok(ack) => Json(ack).into_response(),
        Err(f) => failure(f),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/authorize", post(authorize))
        .route("/producer-response", post(producer_response))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(addr: &str, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
