//! HTTP front end over a loaded [`poroviz::engine::Ensemble`].

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use poroviz::engine::{self, ApiError, ApiResult, Ensemble, VolumeQuery};
use poroviz::ingest::Manifest;
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

pub const PMDM_MEDIA_TYPE: &str = "application/x-pmdm";
pub const PMVB_MEDIA_TYPE: &str = "application/x-pmvb";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub manifest: PathBuf,
    pub bind: String,
    pub cache_size: usize,
    /// Query strings whose matrices are computed before serving,
    /// e.g. `"metric=wasserstein&mode=group"`.
    pub precompute: Vec<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            manifest: PathBuf::from("manifest.toml"),
            bind: "127.0.0.1:8080".into(),
            cache_size: engine::DEFAULT_CACHE_SIZE,
            precompute: Vec::new(),
        }
    }
}

impl ServerConfig {
    pub fn validate(&self) -> poroviz::Result<SocketAddr> {
        if self.cache_size == 0 {
            return Err(poroviz::Error::Config("cache size must be at least 1".into()));
        }
        self.bind
            .parse()
            .map_err(|_| poroviz::Error::Config(format!("bind address {:?} is not host:port", self.bind)))
    }

    pub fn load_ensemble(&self) -> poroviz::Result<Ensemble> {
        let manifest = Manifest::load(&engine::locate_manifest(&self.manifest))?;
        Ensemble::load_with_cache(manifest, self.cache_size)
    }
}

/// Split a query string into key/value pairs.
pub fn parse_query_string(qs: &str) -> Vec<(String, String)> {
    qs.split('&')
        .filter(|p| !p.is_empty())
        .map(|p| match p.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => (p.to_string(), String::new()),
        })
        .collect()
}

/// Compute the matrices named in `config.precompute`.
pub fn precompute(ensemble: &Ensemble, config: &ServerConfig) -> ApiResult<()> {
    for qs in &config.precompute {
        let q = engine::Query::from_params(&parse_query_string(qs))?;
        ensemble.distance_matrix(&q)?;
        log::info!("precomputed {qs}");
    }
    Ok(())
}

type AppState = Arc<Ensemble>;
type Params = Query<Vec<(String, String)>>;

struct Failure(ApiError);

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure(e)
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, [(header::CONTENT_TYPE, "application/json")], self.0.body()).into_response()
    }
}

fn json(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn binary(media: &'static str, body: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, media)], Body::from(body)).into_response()
}

/// Run CPU-bound engine work off the async executor.
async fn blocking<T, F>(state: AppState, f: F) -> Result<T, Failure>
where
    T: Send + 'static,
    F: FnOnce(&Ensemble) -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ApiError::new(500, "internal", e.to_string(), None))?
        .map_err(Failure)
}

async fn summary(State(state): State<AppState>) -> Response {
    json(state.summary_json())
}

async fn projection(State(state): State<AppState>, Query(params): Params) -> Result<Response, Failure> {
    let q = engine::Query::from_params(&params)?;
    Ok(json(blocking(state, move |e| e.projection_json(&q)).await?))
}

#[derive(Clone, Copy)]
enum MatrixFormat {
    Json,
    Pmdm,
    Csv,
}

fn negotiate(headers: &HeaderMap) -> MatrixFormat {
    let accept = headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_ascii_lowercase();
    if accept.contains(PMDM_MEDIA_TYPE) || accept.contains("application/octet-stream") {
        MatrixFormat::Pmdm
    } else if accept.contains("text/csv") {
        MatrixFormat::Csv
    } else {
        MatrixFormat::Json
    }
}

async fn distances(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(params): Params,
) -> Result<Response, Failure> {
    let q = engine::Query::from_params(&params)?;
    Ok(match negotiate(&headers) {
        MatrixFormat::Json => json(blocking(state, move |e| e.distances_json(&q)).await?),
        MatrixFormat::Pmdm => binary(PMDM_MEDIA_TYPE, blocking(state, move |e| e.distances_pmdm(&q)).await?),
        MatrixFormat::Csv => {
            let body = blocking(state, move |e| e.distances_csv(&q)).await?;
            ([(header::CONTENT_TYPE, HeaderValue::from_static("text/csv"))], body).into_response()
        }
    })
}

async fn volume(
    State(state): State<AppState>,
    UrlPath(run): UrlPath<String>,
    Query(params): Params,
) -> Result<Response, Failure> {
    let q = VolumeQuery::from_params(&params)?;
    Ok(binary(PMVB_MEDIA_TYPE, blocking(state, move |e| e.volume_brick(&run, &q)).await?))
}

async fn timeseries(
    State(state): State<AppState>,
    UrlPath(run): UrlPath<String>,
    Query(params): Params,
) -> Result<Response, Failure> {
    let mut measurable = None;
    for (k, v) in params {
        match k.as_str() {
            "measurable" => measurable = Some(v),
            _ => return Err(ApiError::bad_param(&k, format!("unknown parameter {k:?}")).into()),
        }
    }
    Ok(json(state.timeseries_json(&run, measurable.as_deref())?))
}

async fn first_presence(State(state): State<AppState>, Query(params): Params) -> Result<Response, Failure> {
    Ok(json(blocking(state, move |e| e.first_presence_params(&params)).await?))
}

async fn fallback() -> Failure {
    Failure(ApiError::not_found("no_route", "no such endpoint", None))
}

pub fn router(state: Arc<Ensemble>) -> Router {
    Router::new()
        .route("/api/ensemble", get(summary))
        .route("/api/projection", get(projection))
        .route("/api/distances", get(distances))
        .route("/api/volume/{run}", get(volume))
        .route("/api/timeseries/{run}", get(timeseries))
        .route("/api/events/first_presence", get(first_presence))
        .fallback(fallback)
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Load, precompute and serve until interrupted.
pub async fn serve(config: ServerConfig) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let addr = config.validate()?;
    let cfg = config.clone();
    let ensemble = tokio::task::spawn_blocking(move || -> Result<Ensemble, Box<dyn std::error::Error + Send + Sync>> {
        let e = cfg.load_ensemble()?;
        precompute(&e, &cfg)?;
        Ok(e)
    })
    .await??;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving {} runs on http://{}", ensemble.runs().count(), listener.local_addr()?);
    axum::serve(listener, router(Arc::new(ensemble)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
