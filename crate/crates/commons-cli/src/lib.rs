//! Command-line client for a commons gateway, plus the `serve` launcher.

use std::io::Read;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use reqwest::blocking::{Client, RequestBuilder, Response};
use serde::Deserialize;
use serde_json::{json, Value};

pub mod exit_code {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const DENIED: i32 = 3;
    pub const NOT_FOUND: i32 = 4;
    pub const CONFLICT: i32 = 5;
    pub const INTEGRITY: i32 = 6;
    pub const NETWORK: i32 = 7;
}

/// Which gateway routes each subcommand exercises. The coverage test checks
/// that every gateway route appears here.
pub const COMMAND_ROUTES: &[(&str, &[(&str, &str)])] = &[
    ("serve", &[]),
    ("mint", &[("POST", "/alias")]),
    ("resolve", &[("GET", "/alias/{*alias}")]),
    ("resolve-hash", &[("GET", "/urls/")]),
    ("put-object", &[("POST", "/objects")]),
    ("update-urls", &[("PUT", "/alias/{*alias}")]),
    ("delete", &[("DELETE", "/alias/{*alias}")]),
    ("meta put", &[("PUT", "/meta/{*alias}")]),
    ("meta get", &[("GET", "/meta/{*alias}")]),
    ("meta query", &[("POST", "/meta/query")]),
    ("schema", &[("POST", "/schema")]),
    ("acl grant", &[("PUT", "/acl/{*alias}")]),
    ("acl revoke", &[("PUT", "/acl/{*alias}")]),
    ("acl show", &[("GET", "/acl/{*alias}")]),
    ("attr set", &[("PUT", "/attr/{*alias}")]),
    ("attr get", &[("GET", "/attr/{*alias}")]),
    ("export", &[("POST", "/bundle/export")]),
    ("import", &[("POST", "/bundle/import")]),
    ("sync", &[("POST", "/peer/sync")]),
    ("migrate", &[("POST", "/peer/migrate")]),
    ("changes", &[("GET", "/peer/changes")]),
    ("fetch-object", &[("GET", "/peer/object")]),
    ("push-object", &[("POST", "/peer/object")]),
    ("usage record", &[("POST", "/usage/events")]),
    ("usage allocate", &[("POST", "/usage/allocation")]),
    ("usage invoice", &[("GET", "/usage/invoice")]),
    ("usage report", &[("GET", "/usage/thresholds")]),
    ("usage capacity", &[("GET", "/usage/capacity")]),
    ("dedup", &[("GET", "/dedup")]),
];

#[derive(Debug, Deserialize, Default)]
struct Profile {
    endpoint: Option<String>,
    principal: Option<String>,
}

#[derive(Parser)]
#[command(name = "commons", version, about = "Data commons client")]
pub struct Cli {
    /// Gateway base url, e.g. http://127.0.0.1:8080
    #[arg(long, global = true, env = "COMMONS_ENDPOINT")]
    endpoint: Option<String>,
    /// Principal sent with every request, e.g. user:alice
    #[arg(long, global = true, env = "COMMONS_PRINCIPAL")]
    principal: Option<String>,
    /// Profile file with endpoint/principal defaults
    #[arg(long, global = true)]
    profile: Option<PathBuf>,
    /// Emit the raw response document instead of pretty-printing
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run gateway and stores in one process
    Serve {
        /// Gateway configuration file (TOML)
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Mint a new digital ID
    Mint {
        /// Alias, e.g. ark:/31807/name
        name: String,
        #[arg(long)]
        md5: String,
        #[arg(long)]
        sha1: Option<String>,
        #[arg(long)]
        sha256: Option<String>,
        #[arg(long)]
        size: u64,
        #[arg(long = "url")]
        urls: Vec<String>,
        #[arg(long, default_value = "public")]
        release: String,
    },
    /// Resolve an alias (suffix pass-through applies)
    Resolve { alias: String },
    /// Resolve a hash-layer identifier
    ResolveHash {
        /// alg:hexdigest, e.g. md5:1e2448...
        #[arg(long)]
        hash: String,
        #[arg(long)]
        size: u64,
    },
    /// Store a file in the gateway's object store
    PutObject {
        #[arg(long, default_value = "data")]
        bucket: String,
        #[arg(long)]
        key: String,
        /// Read from this file instead of stdin
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Replace the location list of an alias
    UpdateUrls {
        alias: String,
        #[arg(long = "url", required = true)]
        urls: Vec<String>,
    },
    /// Delete an alias (the hash layer entry is kept)
    Delete { alias: String },
    #[command(subcommand)]
    Meta(MetaCommand),
    /// Register a metadata schema from a JSON file
    Schema {
        #[arg(long)]
        file: PathBuf,
    },
    #[command(subcommand)]
    Acl(AclCommand),
    #[command(subcommand)]
    Attr(AttrCommand),
    /// Export aliases into a bundle directory on the server
    Export {
        aliases: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Include object payloads
        #[arg(long)]
        payload: bool,
    },
    /// Import a bundle directory on the server
    Import {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "data")]
        bucket: String,
    },
    /// Pull changes from a configured peer
    Sync {
        #[arg(long)]
        peer: String,
        #[arg(long)]
        since: Option<u64>,
    },
    /// Staged migration of aliases to a configured peer
    Migrate {
        aliases: Vec<String>,
        #[arg(long)]
        peer: String,
        #[arg(long)]
        step_budget: Option<u32>,
    },
    /// Read this commons's change feed
    Changes {
        #[arg(long, default_value_t = 0)]
        since: u64,
        #[arg(long, default_value_t = 500)]
        limit: usize,
    },
    /// Fetch verified object bytes by hash
    FetchObject {
        #[arg(long)]
        hash: String,
        #[arg(long)]
        size: u64,
        /// Write to this file instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Push object bytes into the peer-object endpoint
    PushObject {
        #[arg(long)]
        hash: String,
        #[arg(long)]
        size: u64,
        #[arg(long)]
        file: PathBuf,
    },
    #[command(subcommand)]
    Usage(UsageCommand),
    /// List duplicate digital IDs sharing content
    Dedup,
}

#[derive(Subcommand)]
enum MetaCommand {
    /// Attach or replace a metadata document
    Put {
        alias: String,
        #[arg(long, name = "type")]
        type_name: Option<String>,
        /// Inline JSON body; reads stdin when omitted
        #[arg(long)]
        body: Option<String>,
    },
    Get {
        alias: String,
        #[arg(long, name = "type")]
        type_name: Option<String>,
    },
    /// Conjunctive exact-match query, e.g. '{"instrument":"NEXRAD"}'
    Query { predicate: String },
}

#[derive(Subcommand)]
enum AclCommand {
    Grant {
        alias: String,
        /// Principal receiving the rights, e.g. user:bob or group:geo
        #[arg(long)]
        grantee: String,
        /// Comma-separated rights: read,write
        #[arg(long)]
        rights: String,
    },
    Revoke {
        alias: String,
        #[arg(long)]
        grantee: String,
        #[arg(long)]
        rights: String,
    },
    Show { alias: String },
}

#[derive(Subcommand)]
enum AttrCommand {
    /// Merge key=value pairs into an alias's attributes
    Set {
        alias: String,
        /// key=value
        pairs: Vec<String>,
    },
    Get { alias: String },
}

#[derive(Subcommand)]
enum UsageCommand {
    /// Record a usage event
    Record {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        quantity: f64,
        #[arg(long)]
        actor: Option<String>,
        #[arg(long)]
        price: Option<f64>,
        /// RFC 3339; defaults to now
        #[arg(long)]
        timestamp: Option<String>,
    },
    /// Set a monthly allocation cap
    Allocate {
        #[arg(long)]
        actor: String,
        #[arg(long)]
        kind: String,
        #[arg(long)]
        cap: f64,
        /// Reject instead of flag when exceeded
        #[arg(long)]
        hard: bool,
    },
    Invoice {
        #[arg(long)]
        actor: String,
        /// YYYY-MM
        #[arg(long)]
        period: String,
    },
    /// Actor counts at core-hour thresholds
    Report {
        #[arg(long)]
        thresholds: String,
        #[arg(long)]
        period: String,
    },
    /// Utilization against capacity targets
    Capacity {
        #[arg(long)]
        compute_used: f64,
        #[arg(long)]
        compute_total: f64,
        #[arg(long)]
        storage_used: f64,
        #[arg(long)]
        storage_total: f64,
    },
}

struct Remote {
    client: Client,
    endpoint: String,
    principal: Option<String>,
    raw_json: bool,
}

enum CliError {
    Usage(String),
    Network(String),
    /// HTTP error response already shaped as {"error", "message"}.
    Api { code: String, message: String },
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit_code::USAGE,
            CliError::Network(_) => exit_code::NETWORK,
            CliError::Api { code, .. } => match code.as_str() {
                "access_denied" => exit_code::DENIED,
                "not_found" | "unknown_subject" | "bucket_missing" | "unknown_peer" => {
                    exit_code::NOT_FOUND
                }
                "alias_exists" | "hash_conflict" | "schema_exists" | "allocation_exceeded" => {
                    exit_code::CONFLICT
                }
                "hash_mismatch" | "bundle_corrupt" | "feed_gap" => exit_code::INTEGRITY,
                "peer_unreachable" => exit_code::NETWORK,
                c if c.starts_with("malformed") || c == "validation_failed"
                    || c == "unsupported_algorithm" =>
                {
                    exit_code::USAGE
                }
                _ => exit_code::FAILURE,
            },
        }
    }

    fn print(&self) {
        let (code, message) = match self {
            CliError::Usage(m) => ("usage", m.as_str()),
            CliError::Network(m) => ("network", m.as_str()),
            CliError::Api { code, message } => (code.as_str(), message.as_str()),
        };
        // One line, machine-parseable.
        eprintln!("{}", json!({"error": code, "message": message}));
    }
}

impl Remote {
    fn request(&self, method: reqwest::Method, path: &str) -> RequestBuilder {
        let mut req = self
            .client
            .request(method, format!("{}{path}", self.endpoint.trim_end_matches('/')));
        if let Some(p) = &self.principal {
            req = req.header("X-Commons-Principal", p);
        }
        req
    }

    fn execute(&self, req: RequestBuilder) -> Result<Response, CliError> {
        let resp = req.send().map_err(|e| CliError::Network(e.to_string()))?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status();
        let body: Value = resp.json().unwrap_or_else(|_| json!({}));
        Err(CliError::Api {
            code: body["error"].as_str().unwrap_or("http_error").to_string(),
            message: body["message"]
                .as_str()
                .map(String::from)
                .unwrap_or_else(|| format!("HTTP {status}")),
        })
    }

    fn print_body(&self, resp: Response) -> Result<(), CliError> {
        let text = resp.text().map_err(|e| CliError::Network(e.to_string()))?;
        if self.raw_json {
            println!("{text}");
            return Ok(());
        }
        match serde_json::from_str::<Value>(&text) {
            Ok(v) => println!("{}", serde_json::to_string_pretty(&v).expect("serialize")),
            Err(_) => println!("{text}"),
        }
        Ok(())
    }

    fn round_trip(&self, req: RequestBuilder) -> Result<(), CliError> {
        let resp = self.execute(req)?;
        self.print_body(resp)
    }
}

fn parse_rights(raw: &str) -> Result<Vec<String>, CliError> {
    let rights: Vec<String> = raw
        .split(',')
        .map(|r| r.trim().to_string())
        .filter(|r| !r.is_empty())
        .collect();
    if rights.is_empty() || rights.iter().any(|r| r != "read" && r != "write") {
        return Err(CliError::Usage(format!("bad rights list: {raw:?}")));
    }
    Ok(rights)
}

fn read_input(file: Option<&PathBuf>) -> Result<Vec<u8>, CliError> {
    match file {
        Some(path) => std::fs::read(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display()))),
        None => {
            let mut buf = Vec::new();
            std::io::stdin()
                .read_to_end(&mut buf)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(buf)
        }
    }
}

fn parse_json_arg(raw: &str) -> Result<Value, CliError> {
    serde_json::from_str(raw).map_err(|e| CliError::Usage(format!("bad JSON: {e}")))
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version itself with code 0.
            let _ = e.print();
            return if e.use_stderr() { exit_code::USAGE } else { exit_code::OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => exit_code::OK,
        Err(e) => {
            e.print();
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Command::Serve { config } = &cli.command {
        let config = commons_gateway::GatewayConfig::load(config.as_deref())
            .map_err(CliError::Usage)?;
        return commons_gateway::run(config).map_err(CliError::Network);
    }

    let mut profile = Profile::default();
    if let Some(path) = &cli.profile {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        profile = toml::from_str(&text).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let endpoint = cli
        .endpoint
        .or(profile.endpoint)
        .ok_or_else(|| CliError::Usage("no endpoint: use --endpoint, COMMONS_ENDPOINT, or a profile".into()))?;
    let remote = Remote {
        client: Client::new(),
        endpoint,
        principal: cli.principal.or(profile.principal),
        raw_json: cli.json,
    };

    use reqwest::Method;
    match cli.command {
        Command::Serve { .. } => unreachable!("handled above"),
        Command::Mint { name, md5, sha1, sha256, size, urls, release } => {
            let mut hashes = serde_json::Map::new();
            hashes.insert("md5".into(), json!(md5));
            if let Some(v) = sha1 {
                hashes.insert("sha1".into(), json!(v));
            }
            if let Some(v) = sha256 {
                hashes.insert("sha256".into(), json!(v));
            }
            let body = json!({"name": name, "hashes": hashes, "size": size, "urls": urls, "release": release});
            remote.round_trip(remote.request(Method::POST, "/alias").json(&body))
        }
        Command::Resolve { alias } => {
            remote.round_trip(remote.request(Method::GET, &format!("/alias/{alias}")))
        }
        Command::ResolveHash { hash, size } => remote.round_trip(
            remote
                .request(Method::GET, "/urls/")
                .query(&[("hash", hash.as_str()), ("size", &size.to_string())]),
        ),
        Command::PutObject { bucket, key, file } => {
            let bytes = read_input(file.as_ref())?;
            remote.round_trip(
                remote
                    .request(Method::POST, "/objects")
                    .query(&[("bucket", bucket.as_str()), ("key", key.as_str())])
                    .body(bytes),
            )
        }
        Command::UpdateUrls { alias, urls } => remote.round_trip(
            remote
                .request(Method::PUT, &format!("/alias/{alias}"))
                .json(&json!({"urls": urls})),
        ),
        Command::Delete { alias } => {
            remote.round_trip(remote.request(Method::DELETE, &format!("/alias/{alias}")))
        }
        Command::Meta(MetaCommand::Put { alias, type_name, body }) => {
            let body = match body {
                Some(raw) => parse_json_arg(&raw)?,
                None => {
                    let bytes = read_input(None)?;
                    serde_json::from_slice(&bytes).map_err(|e| CliError::Usage(e.to_string()))?
                }
            };
            let mut req = remote.request(Method::PUT, &format!("/meta/{alias}"));
            if let Some(t) = type_name {
                req = req.query(&[("type", t)]);
            }
            remote.round_trip(req.json(&body))
        }
        Command::Meta(MetaCommand::Get { alias, type_name }) => {
            let mut req = remote.request(Method::GET, &format!("/meta/{alias}"));
            if let Some(t) = type_name {
                req = req.query(&[("type", t)]);
            }
            remote.round_trip(req)
        }
        Command::Meta(MetaCommand::Query { predicate }) => {
            let body = parse_json_arg(&predicate)?;
            remote.round_trip(remote.request(Method::POST, "/meta/query").json(&body))
        }
        Command::Schema { file } => {
            let schema: Value = serde_json::from_slice(&read_input(Some(&file))?)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            remote.round_trip(remote.request(Method::POST, "/schema").json(&schema))
        }
        Command::Acl(AclCommand::Grant { alias, grantee, rights }) => remote.round_trip(
            remote.request(Method::PUT, &format!("/acl/{alias}")).json(
                &json!({"principal": grantee, "rights": parse_rights(&rights)?, "grant": true}),
            ),
        ),
        Command::Acl(AclCommand::Revoke { alias, grantee, rights }) => remote.round_trip(
            remote.request(Method::PUT, &format!("/acl/{alias}")).json(
                &json!({"principal": grantee, "rights": parse_rights(&rights)?, "grant": false}),
            ),
        ),
        Command::Acl(AclCommand::Show { alias }) => {
            remote.round_trip(remote.request(Method::GET, &format!("/acl/{alias}")))
        }
        Command::Attr(AttrCommand::Set { alias, pairs }) => {
            let mut map = serde_json::Map::new();
            for pair in &pairs {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| CliError::Usage(format!("expected key=value, got {pair:?}")))?;
                map.insert(k.to_string(), json!(v));
            }
            remote.round_trip(
                remote
                    .request(Method::PUT, &format!("/attr/{alias}"))
                    .json(&Value::Object(map)),
            )
        }
        Command::Attr(AttrCommand::Get { alias }) => {
            remote.round_trip(remote.request(Method::GET, &format!("/attr/{alias}")))
        }
        Command::Export { aliases, out, payload } => remote.round_trip(
            remote.request(Method::POST, "/bundle/export").json(
                &json!({"aliases": aliases, "include_payload": payload, "out_dir": out}),
            ),
        ),
        Command::Import { dir, bucket } => remote.round_trip(
            remote
                .request(Method::POST, "/bundle/import")
                .json(&json!({"dir": dir, "bucket": bucket})),
        ),
        Command::Sync { peer, since } => remote.round_trip(
            remote
                .request(Method::POST, "/peer/sync")
                .json(&json!({"peer": peer, "since": since})),
        ),
        Command::Migrate { aliases, peer, step_budget } => remote.round_trip(
            remote.request(Method::POST, "/peer/migrate").json(
                &json!({"peer": peer, "aliases": aliases, "step_budget": step_budget}),
            ),
        ),
        Command::Changes { since, limit } => remote.round_trip(
            remote
                .request(Method::GET, "/peer/changes")
                .query(&[("since", since.to_string()), ("limit", limit.to_string())]),
        ),
        Command::FetchObject { hash, size, out } => {
            let resp = remote.execute(
                remote
                    .request(Method::GET, "/peer/object")
                    .query(&[("hash", hash.as_str()), ("size", &size.to_string())]),
            )?;
            let bytes = resp.bytes().map_err(|e| CliError::Network(e.to_string()))?;
            match out {
                Some(path) => std::fs::write(&path, &bytes)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display()))),
                None => {
                    use std::io::Write;
                    std::io::stdout()
                        .write_all(&bytes)
                        .map_err(|e| CliError::Usage(e.to_string()))
                }
            }
        }
        Command::PushObject { hash, size, file } => remote.round_trip(
            remote
                .request(Method::POST, "/peer/object")
                .query(&[("hash", hash.as_str()), ("size", &size.to_string())])
                .body(read_input(Some(&file))?),
        ),
        Command::Usage(UsageCommand::Record { kind, quantity, actor, price, timestamp }) => {
            let mut body = json!({"kind": kind, "quantity": quantity});
            if let Some(a) = actor {
                body["actor"] = json!(a);
            }
            if let Some(p) = price {
                body["unit_price"] = json!(p);
            }
            if let Some(t) = timestamp {
                body["timestamp"] = json!(t);
            }
            remote.round_trip(remote.request(Method::POST, "/usage/events").json(&body))
        }
        Command::Usage(UsageCommand::Allocate { actor, kind, cap, hard }) => remote.round_trip(
            remote
                .request(Method::POST, "/usage/allocation")
                .json(&json!({"actor": actor, "kind": kind, "cap": cap, "hard": hard})),
        ),
        Command::Usage(UsageCommand::Invoice { actor, period }) => remote.round_trip(
            remote
                .request(Method::GET, "/usage/invoice")
                .query(&[("actor", actor.as_str()), ("period", period.as_str())]),
        ),
        Command::Usage(UsageCommand::Report { thresholds, period }) => remote.round_trip(
            remote
                .request(Method::GET, "/usage/thresholds")
                .query(&[("cutoffs", thresholds.as_str()), ("period", period.as_str())]),
        ),
        Command::Usage(UsageCommand::Capacity {
            compute_used,
            compute_total,
            storage_used,
            storage_total,
        }) => remote.round_trip(remote.request(Method::GET, "/usage/capacity").query(&[
            ("compute_used", compute_used.to_string()),
            ("compute_total", compute_total.to_string()),
            ("storage_used", storage_used.to_string()),
            ("storage_total", storage_total.to_string()),
        ])),
        Command::Dedup => remote.round_trip(remote.request(Method::GET, "/dedup")),
    }
}
