//! HTTP gateway over a single-node commons.
//!
//! The gateway is stateless: every request is served from the backing
//! [`Commons`], so a restart loses nothing that was committed. Principals
//! arrive pre-authenticated in a configurable request header; an absent
//! header means the anonymous principal.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use commons_core::{
    capacity_report, parse_alias, Allocation, Attributes, Commons, CommonsConfig, CommonsError,
    DigestSet, HttpPeer, MetadataSchema, Period, Predicate, PrincipalId, RecordPatch, Rights,
    UsageEvent, UsageKind,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Service configuration: a TOML file with environment-variable overrides
/// (`COMMONS_BIND`, `COMMONS_AUTHORITY`, `COMMONS_DATA_DIR`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatewayConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_principal_header")]
    pub principal_header: String,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    pub commons: CommonsConfig,
}

fn default_bind() -> String {
    "127.0.0.1:8080".to_string()
}

fn default_principal_header() -> String {
    "X-Commons-Principal".to_string()
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("commons-data")
}

impl GatewayConfig {
    pub fn new(authority: impl Into<String>) -> GatewayConfig {
        GatewayConfig {
            bind: default_bind(),
            principal_header: default_principal_header(),
            data_dir: default_data_dir(),
            commons: CommonsConfig::new(authority),
        }
    }

    /// Parse the TOML file (when given), then apply environment overrides.
    pub fn load(path: Option<&std::path::Path>) -> Result<GatewayConfig, String> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                toml::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?
            }
            None => GatewayConfig::new("commons"),
        };
        if let Ok(bind) = std::env::var("COMMONS_BIND") {
            config.bind = bind;
        }
        if let Ok(authority) = std::env::var("COMMONS_AUTHORITY") {
            config.commons.authority = authority;
        }
        if let Ok(dir) = std::env::var("COMMONS_DATA_DIR") {
            config.data_dir = PathBuf::from(dir);
        }
        if config.commons.authority.is_empty() {
            return Err("authority must be non-empty".to_string());
        }
        Ok(config)
    }
}

#[derive(Clone)]
struct Gateway {
    commons: Arc<Commons>,
    principal_header: Arc<str>,
}

/// Every route the gateway serves, as (method, path template). The CLI's
/// coverage test enumerates this table.
pub const ROUTE_TABLE: &[(&str, &str)] = &[
    ("GET", "/alias/{*alias}"),
    ("POST", "/alias"),
    ("PUT", "/alias/{*alias}"),
    ("DELETE", "/alias/{*alias}"),
    ("GET", "/urls/"),
    ("GET", "/meta/{*alias}"),
    ("PUT", "/meta/{*alias}"),
    ("POST", "/meta/query"),
    ("POST", "/schema"),
    ("GET", "/acl/{*alias}"),
    ("PUT", "/acl/{*alias}"),
    ("GET", "/attr/{*alias}"),
    ("PUT", "/attr/{*alias}"),
    ("GET", "/peer/changes"),
    ("GET", "/peer/object"),
    ("POST", "/peer/object"),
    ("POST", "/peer/sync"),
    ("POST", "/peer/migrate"),
    ("POST", "/bundle/export"),
    ("POST", "/bundle/import"),
    ("POST", "/objects"),
    ("POST", "/usage/events"),
    ("POST", "/usage/allocation"),
    ("GET", "/usage/invoice"),
    ("GET", "/usage/thresholds"),
    ("GET", "/usage/capacity"),
    ("GET", "/dedup"),
];

pub fn router(commons: Arc<Commons>, principal_header: &str) -> Router {
    let state = Gateway {
        commons,
        principal_header: principal_header.into(),
    };
    Router::new()
        .route("/alias/{*alias}", get(alias_get).put(alias_put).delete(alias_delete))
        .route("/alias", post(alias_mint))
        .route("/urls/", get(urls_get))
        .route("/meta/{*alias}", get(meta_get).put(meta_put))
        .route("/meta/query", post(meta_query))
        .route("/schema", post(schema_post))
        .route("/acl/{*alias}", get(acl_get).put(acl_put))
        .route("/attr/{*alias}", get(attr_get).put(attr_put))
        .route("/peer/changes", get(peer_changes))
        .route("/peer/object", get(peer_object_get).post(peer_object_post))
        .route("/peer/sync", post(peer_sync))
        .route("/peer/migrate", post(peer_migrate))
        .route("/bundle/export", post(bundle_export))
        .route("/bundle/import", post(bundle_import))
        .route("/objects", post(objects_post))
        .route("/usage/events", post(usage_event_post))
        .route("/usage/allocation", post(usage_allocation_post))
        .route("/usage/invoice", get(usage_invoice))
        .route("/usage/thresholds", get(usage_thresholds))
        .route("/usage/capacity", get(usage_capacity))
        .route("/dedup", get(dedup_get))
        .with_state(state)
}

/// Open the commons and serve until interrupted. Blocks the calling thread.
pub fn run(config: GatewayConfig) -> Result<(), String> {
    let commons =
        Commons::open(&config.data_dir, config.commons.clone()).map_err(|e| e.to_string())?;
    let app = router(Arc::new(commons), &config.principal_header);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&config.bind)
            .await
            .map_err(|e| format!("bind {}: {e}", config.bind))?;
        eprintln!("commons gateway listening on {}", config.bind);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| e.to_string())
    })
}

/// Serve an already-open commons on an ephemeral port from a background
/// thread. Returns the bound address; the thread runs until process exit.
pub fn spawn_ephemeral(commons: Arc<Commons>, principal_header: &str) -> SocketAddr {
    let app = router(commons, principal_header);
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let runtime = tokio::runtime::Runtime::new().expect("runtime");
        runtime.block_on(async {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
            tx.send(listener.local_addr().expect("addr")).expect("send addr");
            axum::serve(listener, app).await.expect("serve");
        });
    });
    rx.recv().expect("server failed to start")
}

// ---------------------------------------------------------------------------
// Request plumbing

struct ApiError(CommonsError);

impl From<CommonsError> for ApiError {
    fn from(e: CommonsError) -> ApiError {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            CommonsError::MalformedAlias(_)
            | CommonsError::UnsupportedAlgorithm(_)
            | CommonsError::MalformedDigest(_)
            | CommonsError::MalformedSchema(_)
            | CommonsError::ValidationFailed { .. }
            | CommonsError::MalformedPredicate(_)
            | CommonsError::MalformedQuery(_) => StatusCode::BAD_REQUEST,
            CommonsError::AccessDenied(_) => StatusCode::FORBIDDEN,
            CommonsError::NotFound(_)
            | CommonsError::UnknownSubject(_)
            | CommonsError::BucketMissing(_)
            | CommonsError::UnknownPeer(_) => StatusCode::NOT_FOUND,
            CommonsError::AliasExists(_)
            | CommonsError::HashConflict { .. }
            | CommonsError::SchemaExists(_)
            | CommonsError::AllocationExceeded { .. }
            | CommonsError::HashMismatch { .. }
            | CommonsError::BundleCorrupt(_) => StatusCode::CONFLICT,
            // Feed clients recognize 410 as "cursor fell off the log".
            CommonsError::FeedGap { .. } => StatusCode::GONE,
            CommonsError::PeerUnreachable(_) => StatusCode::BAD_GATEWAY,
            CommonsError::Io(_) | CommonsError::Serde(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({"error": self.0.code(), "message": self.0.to_string()});
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

impl Gateway {
    fn principal(&self, headers: &HeaderMap) -> PrincipalId {
        headers
            .get(self.principal_header.as_ref())
            .and_then(|v| v.to_str().ok())
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                serde_json::from_value(Value::String(s.to_string()))
                    .unwrap_or(PrincipalId::Anonymous)
            })
            .unwrap_or(PrincipalId::Anonymous)
    }
}

/// Run a blocking commons operation off the async worker threads.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> commons_core::Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(CommonsError::Io(std::io::Error::other(e))))?
        .map_err(ApiError)
}

fn param<'a>(q: &'a BTreeMap<String, String>, key: &str) -> commons_core::Result<&'a str> {
    q.get(key)
        .map(String::as_str)
        .ok_or_else(|| CommonsError::MalformedQuery(format!("missing parameter: {key}")))
}

fn parse_param<T: std::str::FromStr>(q: &BTreeMap<String, String>, key: &str) -> commons_core::Result<T> {
    param(q, key)?
        .parse()
        .map_err(|_| CommonsError::MalformedQuery(format!("bad parameter: {key}")))
}

/// Split "alg:hexdigest" into its two parts.
fn parse_hash_param(raw: &str) -> commons_core::Result<(String, String)> {
    match raw.split_once(':') {
        Some((alg, digest)) if !alg.is_empty() && !digest.is_empty() => {
            Ok((alg.to_string(), digest.to_string()))
        }
        _ => Err(CommonsError::MalformedQuery(format!(
            "hash must look like alg:digest, got {raw:?}"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Identifier endpoints

async fn alias_get(
    State(gw): State<Gateway>,
    UrlPath(alias): UrlPath<String>,
    headers: HeaderMap,
) -> ApiResult<Json<Value>> {
    let actor = gw.principal(&headers);
    let record = blocking(move || gw.commons.resolve_with_suffix(&alias, &actor)).await?;
    Ok(Json(serde_json::to_value(record).map_err(CommonsError::from)?))
}

#[derive(Deserialize)]
struct MintRequest {
    name: String,
    hashes: BTreeMap<String, String>,
    size: u64,
    #[serde(default)]
    urls: Vec<String>,
    release: commons_core::Release,
}

async fn alias_mint(
    State(gw): State<Gateway>,
    headers: HeaderMap,
    Json(req): Json<MintRequest>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let actor = gw.principal(&headers);
    let record = blocking(move || {
        let alias = parse_alias(&req.name)?;
        let hashes = DigestSet::new(req.hashes)?;
        gw.commons
            .mint(&alias, hashes, req.size, req.urls, req.release, &actor)
    })
    .await?;
    Ok((
        StatusCode::CREATED,
        Json(serde_json::to_value(record).map_err(CommonsError::from)?),
    ))
}

async fn alias_put(
    State(gw): State<Gateway>,
    UrlPath(alias): UrlPath<String>,
    headers: HeaderMap,
    Json(patch): Json<RecordPatch>,
) -> ApiResult<Json<Value>> {
    let actor = gw.principal(&headers);
    let record = blocking(move || gw.commons.update_record(&alias, patch, &actor)).await?;
    Ok(Json(serde_json::to_value(record).map_err(CommonsError::from)?))
}

async fn alias_delete(
    State(gw): State<Gateway>,
    UrlPath(alias): UrlPath<String>,
    headers: HeaderMap,
) -> ApiResult<Json<Value>> {
    let actor = gw.principal(&headers);
    let deleted = alias.clone();
    blocking(move || gw.commons.delete_alias(&alias, &actor)).await?;
    Ok(Json(json!({"deleted": deleted})))
}

async fn urls_get(
    State(gw): State<Gateway>,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let record = blocking(move || {
        let (alg, digest) = parse_hash_param(param(&q, "hash")?)?;
        let size: u64 = parse_param(&q, "size")?;
        gw.commons.resolve_hash(&alg, &digest, size)
    })
    .await?;
    Ok(Json(serde_json::to_value(record).map_err(CommonsError::from)?))
}

async fn dedup_get(State(gw): State<Gateway>) -> ApiResult<Json<Value>> {
    let groups = blocking(move || Ok(gw.commons.detect_duplicates())).await?;
    let body: Vec<Value> = groups
        .into_iter()
        .map(|(record, aliases)| json!({"record": record, "aliases": aliases}))
        .collect();
    Ok(Json(Value::Array(body)))
}

// ---------------------------------------------------------------------------
// Metadata endpoints

async fn meta_get(
    State(gw): State<Gateway>,
    UrlPath(alias): UrlPath<String>,
    Query(q): Query<BTreeMap<String, String>>,
    headers: HeaderMap,
) -> ApiResult<Json<Value>> {
    let actor = gw.principal(&headers);
    let doc = blocking(move || {
        gw.commons
            .get_document(&alias, q.get("type").map(String::as_str), &actor)
    })
    .await?;
    Ok(Json(serde_json::to_value(doc).map_err(CommonsError::from)?))
}

async fn meta_put(
    State(gw): State<Gateway>,
    UrlPath(alias): UrlPath<String>,
    Query(q): Query<BTreeMap<String, String>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> ApiResult<Json<Value>> {
    let actor = gw.principal(&headers);
    let doc = blocking(move || {
        let subject = parse_alias(&alias)?;
        gw.commons
            .put_document(&subject, q.get("type").cloned(), body, &actor)
    })
    .await?;
    Ok(Json(serde_json::to_value(doc).map_err(CommonsError::from)?))
}

async fn meta_query(
    State(gw): State<Gateway>,
    headers: HeaderMap,
    Json(predicate): Json<Predicate>,
) -> ApiResult<Json<Value>> {
    let actor = gw.principal(&headers);
    let aliases = blocking(move || gw.commons.query_metadata(&predicate, &actor)).await?;
    Ok(Json(serde_json::to_value(aliases).map_err(CommonsError::from)?))
}

async fn schema_post(
    State(gw): State<Gateway>,
    headers: HeaderMap,
    Json(schema): Json<MetadataSchema>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let actor = gw.principal(&headers);
    let type_name = schema.type_name.clone();
    blocking(move || gw.commons.register_schema(schema, &actor)).await?;
    Ok((StatusCode::CREATED, Json(json!({"registered": type_name}))))
}

// ---------------------------------------------------------------------------
// ACL and attribute endpoints

async fn acl_get(
    State(gw): State<Gateway>,
    UrlPath(alias): UrlPath<String>,
    headers: HeaderMap,
) -> ApiResult<Json<Value>> {
    let actor = gw.principal(&headers);
    let acl = blocking(move || {
        // Seeing an ACL requires read on the record it protects.
        gw.commons.resolve_alias(&alias, &actor)?;
        Ok(gw.commons.acl_of(&alias))
    })
    .await?;
    Ok(Json(serde_json::to_value(acl).map_err(CommonsError::from)?))
}

#[derive(Deserialize)]
struct AclUpdate {
    principal: PrincipalId,
    rights: Rights,
    /// true grants, false revokes.
    grant: bool,
}

async fn acl_put(
    State(gw): State<Gateway>,
    UrlPath(alias): UrlPath<String>,
    headers: HeaderMap,
    Json(update): Json<AclUpdate>,
) -> ApiResult<Json<Value>> {
    let actor = gw.principal(&headers);
    let acl = blocking(move || {
        if update.grant {
            gw.commons.grant(&alias, update.principal, update.rights, &actor)
        } else {
            gw.commons.revoke(&alias, &update.principal, update.rights, &actor)
        }
    })
    .await?;
    Ok(Json(serde_json::to_value(acl).map_err(CommonsError::from)?))
}

async fn attr_get(
    State(gw): State<Gateway>,
    UrlPath(alias): UrlPath<String>,
    headers: HeaderMap,
) -> ApiResult<Json<Value>> {
    let actor = gw.principal(&headers);
    let attrs = blocking(move || gw.commons.attributes_get(&alias, &actor)).await?;
    Ok(Json(serde_json::to_value(attrs).map_err(CommonsError::from)?))
}

async fn attr_put(
    State(gw): State<Gateway>,
    UrlPath(alias): UrlPath<String>,
    headers: HeaderMap,
    Json(attrs): Json<Attributes>,
) -> ApiResult<Json<Value>> {
    let actor = gw.principal(&headers);
    let merged = blocking(move || gw.commons.attributes_set(&alias, attrs, &actor)).await?;
    Ok(Json(serde_json::to_value(merged).map_err(CommonsError::from)?))
}

// ---------------------------------------------------------------------------
// Peering endpoints

async fn peer_changes(
    State(gw): State<Gateway>,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let batch = blocking(move || {
        let since: u64 = match q.get("since") {
            Some(_) => parse_param(&q, "since")?,
            None => 0,
        };
        let limit: usize = match q.get("limit") {
            Some(_) => parse_param(&q, "limit")?,
            None => 500,
        };
        gw.commons.changes_feed(since, limit)
    })
    .await?;
    Ok(Json(serde_json::to_value(batch).map_err(CommonsError::from)?))
}

async fn peer_object_get(
    State(gw): State<Gateway>,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Bytes> {
    let bytes = blocking(move || {
        let (alg, digest) = parse_hash_param(param(&q, "hash")?)?;
        if alg != "md5" {
            return Err(CommonsError::UnsupportedAlgorithm(alg));
        }
        let size: u64 = parse_param(&q, "size")?;
        gw.commons.peer_object(&digest, size)
    })
    .await?;
    Ok(Bytes::from(bytes))
}

async fn peer_object_post(
    State(gw): State<Gateway>,
    Query(q): Query<BTreeMap<String, String>>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let locator = blocking(move || {
        let (alg, digest) = parse_hash_param(param(&q, "hash")?)?;
        if alg != "md5" {
            return Err(CommonsError::UnsupportedAlgorithm(alg));
        }
        let size: u64 = parse_param(&q, "size")?;
        let expected = commons_core::HashRecord {
            hashes: DigestSet::from_md5(&digest)?,
            size,
            urls: Vec::new(),
        };
        gw.commons.receive_object(&expected, &body)
    })
    .await?;
    Ok(Json(json!({"locator": locator})))
}

#[derive(Deserialize)]
struct SyncRequest {
    peer: String,
    #[serde(default)]
    since: Option<u64>,
}

async fn peer_sync(
    State(gw): State<Gateway>,
    headers: HeaderMap,
    Json(req): Json<SyncRequest>,
) -> ApiResult<Json<Value>> {
    let actor = gw.principal(&headers);
    let report = blocking(move || {
        let agreement = gw
            .commons
            .config()
            .peer(&req.peer)
            .ok_or_else(|| CommonsError::UnknownPeer(req.peer.clone()))?
            .clone();
        let peer = HttpPeer::new(agreement);
        gw.commons.sync_from_peer(&peer, req.since, &actor)
    })
    .await?;
    Ok(Json(serde_json::to_value(report).map_err(CommonsError::from)?))
}

#[derive(Deserialize)]
struct MigrateRequest {
    peer: String,
    aliases: Vec<String>,
    #[serde(default)]
    step_budget: Option<u32>,
}

async fn peer_migrate(
    State(gw): State<Gateway>,
    headers: HeaderMap,
    Json(req): Json<MigrateRequest>,
) -> ApiResult<Json<Value>> {
    let actor = gw.principal(&headers);
    let statuses = blocking(move || {
        let agreement = gw
            .commons
            .config()
            .peer(&req.peer)
            .ok_or_else(|| CommonsError::UnknownPeer(req.peer.clone()))?
            .clone();
        let peer = HttpPeer::new(agreement);
        Ok(gw
            .commons
            .staged_migration(&req.aliases, &peer, &actor, req.step_budget))
    })
    .await?;
    let body: Vec<Value> = statuses
        .into_iter()
        .map(|(alias, status)| json!({"alias": alias, "status": status}))
        .collect();
    Ok(Json(Value::Array(body)))
}

#[derive(Deserialize)]
struct ExportRequest {
    aliases: Vec<String>,
    #[serde(default)]
    include_payload: bool,
    /// Directory on the server's filesystem to write the bundle into.
    out_dir: PathBuf,
}

async fn bundle_export(
    State(gw): State<Gateway>,
    headers: HeaderMap,
    Json(req): Json<ExportRequest>,
) -> ApiResult<Json<Value>> {
    let actor = gw.principal(&headers);
    let manifest = blocking(move || {
        gw.commons
            .export_bundle(&req.aliases, req.include_payload, &req.out_dir, &actor)
    })
    .await?;
    Ok(Json(serde_json::to_value(manifest).map_err(CommonsError::from)?))
}

#[derive(Deserialize)]
struct ImportRequest {
    /// Bundle directory on the server's filesystem.
    dir: PathBuf,
    #[serde(default = "default_bucket")]
    bucket: String,
}

fn default_bucket() -> String {
    "data".to_string()
}

async fn bundle_import(
    State(gw): State<Gateway>,
    headers: HeaderMap,
    Json(req): Json<ImportRequest>,
) -> ApiResult<Json<Value>> {
    let actor = gw.principal(&headers);
    let report = blocking(move || gw.commons.import_bundle(&req.dir, &req.bucket, &actor)).await?;
    Ok(Json(serde_json::to_value(report).map_err(CommonsError::from)?))
}

async fn objects_post(
    State(gw): State<Gateway>,
    Query(q): Query<BTreeMap<String, String>>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let stored = blocking(move || {
        let bucket = q.get("bucket").cloned().unwrap_or_else(default_bucket);
        let key = param(&q, "key")?.to_string();
        if !gw.commons.objects().bucket_exists(&bucket) {
            gw.commons.objects().create_bucket(&bucket)?;
        }
        gw.commons.objects().put(&bucket, &key, body.as_ref())
    })
    .await?;
    Ok((
        StatusCode::CREATED,
        Json(serde_json::to_value(stored).map_err(CommonsError::from)?),
    ))
}

// ---------------------------------------------------------------------------
// Metering endpoints

#[derive(Deserialize)]
struct UsageEventRequest {
    #[serde(default)]
    actor: Option<PrincipalId>,
    kind: UsageKind,
    quantity: f64,
    #[serde(default)]
    unit_price: Option<f64>,
    #[serde(default)]
    timestamp: Option<chrono::DateTime<chrono::Utc>>,
    #[serde(default)]
    peer_tag: Option<String>,
}

async fn usage_event_post(
    State(gw): State<Gateway>,
    headers: HeaderMap,
    Json(req): Json<UsageEventRequest>,
) -> ApiResult<Json<Value>> {
    let principal = gw.principal(&headers);
    let outcome = blocking(move || {
        let config = gw.commons.config();
        let unit_price = req.unit_price.unwrap_or(match req.kind {
            UsageKind::CoreHours => config.core_hour_price,
            UsageKind::EgressBytes => config.egress_byte_price,
            UsageKind::StorageByteHours => 0.0,
        });
        let event = UsageEvent {
            actor: req.actor.unwrap_or(principal),
            kind: req.kind,
            quantity: req.quantity,
            unit_price,
            timestamp: req.timestamp.unwrap_or_else(chrono::Utc::now),
            peer_tag: req.peer_tag,
        };
        gw.commons.meter().record_usage(event)
    })
    .await?;
    Ok(Json(serde_json::to_value(outcome).map_err(CommonsError::from)?))
}

async fn usage_allocation_post(
    State(gw): State<Gateway>,
    Json(allocation): Json<Allocation>,
) -> ApiResult<Json<Value>> {
    blocking(move || gw.commons.meter().set_allocation(allocation)).await?;
    Ok(Json(json!({"ok": true})))
}

fn parse_period(raw: &str) -> commons_core::Result<Period> {
    serde_json::from_value(Value::String(raw.to_string()))
        .map_err(|_| CommonsError::MalformedQuery(format!("bad period: {raw:?}")))
}

async fn usage_invoice(
    State(gw): State<Gateway>,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let invoice = blocking(move || {
        let actor: PrincipalId =
            serde_json::from_value(Value::String(param(&q, "actor")?.to_string()))
                .map_err(|_| CommonsError::MalformedQuery("bad actor".into()))?;
        let period = parse_period(param(&q, "period")?)?;
        Ok(gw.commons.meter().monthly_invoice(&actor, period))
    })
    .await?;
    Ok(Json(serde_json::to_value(invoice).map_err(CommonsError::from)?))
}

async fn usage_thresholds(
    State(gw): State<Gateway>,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let report = blocking(move || {
        let period = parse_period(param(&q, "period")?)?;
        let cutoffs: Vec<f64> = param(&q, "cutoffs")?
            .split(',')
            .map(|c| {
                c.trim()
                    .parse()
                    .map_err(|_| CommonsError::MalformedQuery(format!("bad cutoff: {c:?}")))
            })
            .collect::<commons_core::Result<_>>()?;
        gw.commons.meter().threshold_report(period, &cutoffs)
    })
    .await?;
    let body: Vec<Value> = report
        .into_iter()
        .map(|(cutoff, count)| json!({"cutoff": cutoff, "count": count}))
        .collect();
    Ok(Json(Value::Array(body)))
}

async fn usage_capacity(
    State(gw): State<Gateway>,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let report = blocking(move || {
        let config = gw.commons.config();
        capacity_report(
            parse_param(&q, "compute_used")?,
            parse_param(&q, "compute_total")?,
            parse_param(&q, "storage_used")?,
            parse_param(&q, "storage_total")?,
            config.compute_target,
            config.storage_target,
        )
    })
    .await?;
    Ok(Json(serde_json::to_value(report).map_err(CommonsError::from)?))
}
