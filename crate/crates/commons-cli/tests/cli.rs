use std::net::SocketAddr;
use std::process::{Command, Output};
use std::sync::Arc;

use commons_core::{Commons, CommonsConfig};
use tempfile::TempDir;

const ARK: &str = "ark:/31807/DC0-7b2c1002-e3c4-41ea-8edc-8fcee4ff3f47";
const MD5: &str = "1e24480435408b664b756be0822028a3";

#[test]
fn every_gateway_route_has_a_command() {
    let covered: Vec<(&str, &str)> = commons_cli::COMMAND_ROUTES
        .iter()
        .flat_map(|(_, routes)| routes.iter().copied())
        .collect();
    for route in commons_gateway::ROUTE_TABLE {
        assert!(
            covered.contains(route),
            "no CLI command covers {} {}",
            route.0,
            route.1
        );
    }
}

struct Fixture {
    addr: SocketAddr,
    _dir: TempDir,
}

fn start_gateway() -> Fixture {
    let dir = TempDir::new().unwrap();
    let commons = Commons::open(dir.path(), CommonsConfig::new("noaa-commons")).unwrap();
    let addr = commons_gateway::spawn_ephemeral(Arc::new(commons), "X-Commons-Principal");
    Fixture { addr, _dir: dir }
}

fn commons_cmd(fixture: &Fixture, principal: Option<&str>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_commons"));
    cmd.arg("--endpoint")
        .arg(format!("http://{}", fixture.addr))
        .env_remove("COMMONS_ENDPOINT")
        .env_remove("COMMONS_PRINCIPAL");
    if let Some(p) = principal {
        cmd.arg("--principal").arg(p);
    }
    cmd.args(args).output().unwrap()
}

fn mint_nexrad(fixture: &Fixture) {
    let out = commons_cmd(
        fixture,
        Some("user:owner"),
        &[
            "mint", ARK, "--md5", MD5, "--size", "45893621760",
            "--url", "https://osdc.example/noaa-nexrad-l2/NWS_NEXRAD_NXL2DP_KDVN_201509_01.tar",
            "--url", "https://osdc.example/noaa-nexrad-l2/NWS_NEXRAD_NXL2DP_KDVN_201509_02.tar",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn resolve_fixture_record() {
    let fixture = start_gateway();
    mint_nexrad(&fixture);
    let out = commons_cmd(&fixture, None, &["resolve", ARK]);
    assert_eq!(out.status.code(), Some(0));
    let body: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(body["authority"], "noaa-commons");
    assert_eq!(body["release"], "public");
    assert_eq!(body["size"], 45893621760u64);
}

#[test]
fn json_output_round_trips_canonically() {
    let fixture = start_gateway();
    mint_nexrad(&fixture);
    let out = commons_cmd(&fixture, None, &["--json", "resolve", ARK]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(commons_core::canonical_json(&value).unwrap(), text.trim_end());
}

#[test]
fn exit_code_classes() {
    let fixture = start_gateway();
    mint_nexrad(&fixture);

    // Not found.
    let out = commons_cmd(&fixture, None, &["resolve", "no-such-id"]);
    assert_eq!(out.status.code(), Some(4));
    // Errors are one line of JSON on stderr.
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1);
    let err: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(err["error"], "not_found");

    // Conflict.
    let out = commons_cmd(
        &fixture,
        Some("user:owner"),
        &["mint", ARK, "--md5", MD5, "--size", "45893621760"],
    );
    assert_eq!(out.status.code(), Some(5));

    // Denied: anonymous mint.
    let out = commons_cmd(
        &fixture,
        None,
        &["mint", "ark:/31807/other", "--md5", MD5, "--size", "1"],
    );
    assert_eq!(out.status.code(), Some(3));

    // Usage: bad rights list is rejected client-side.
    let out = commons_cmd(
        &fixture,
        Some("user:owner"),
        &["acl", "grant", ARK, "--grantee", "user:bob", "--rights", "admin"],
    );
    assert_eq!(out.status.code(), Some(2));

    // Network: nothing listens on the endpoint.
    let out = Command::new(env!("CARGO_BIN_EXE_commons"))
        .args(["--endpoint", "http://127.0.0.1:9", "resolve", ARK])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(7));

    // Usage: no endpoint configured at all.
    let out = Command::new(env!("CARGO_BIN_EXE_commons"))
        .env_remove("COMMONS_ENDPOINT")
        .args(["resolve", ARK])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn profile_and_env_supply_endpoint() {
    let fixture = start_gateway();
    mint_nexrad(&fixture);

    let dir = TempDir::new().unwrap();
    let profile = dir.path().join("profile.toml");
    std::fs::write(
        &profile,
        format!("endpoint = \"http://{}\"\nprincipal = \"user:owner\"\n", fixture.addr),
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_commons"))
        .env_remove("COMMONS_ENDPOINT")
        .args(["--profile", profile.to_str().unwrap(), "resolve", ARK])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));

    let out = Command::new(env!("CARGO_BIN_EXE_commons"))
        .env("COMMONS_ENDPOINT", format!("http://{}", fixture.addr))
        .env("COMMONS_PRINCIPAL", "user:owner")
        .args(["resolve", ARK])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn workflow_meta_acl_attr_usage() {
    let fixture = start_gateway();
    mint_nexrad(&fixture);

    let out = commons_cmd(
        &fixture,
        Some("user:owner"),
        &["meta", "put", ARK, "--body", r#"{"instrument":"NEXRAD"}"#],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = commons_cmd(&fixture, None, &["meta", "query", r#"{"instrument":"NEXRAD"}"#]);
    assert_eq!(out.status.code(), Some(0));
    let hits: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(hits, serde_json::json!([ARK]));

    let out = commons_cmd(
        &fixture,
        Some("user:owner"),
        &["acl", "grant", ARK, "--grantee", "user:bob", "--rights", "read,write"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = commons_cmd(&fixture, Some("user:bob"), &["acl", "show", ARK]);
    assert_eq!(out.status.code(), Some(0));

    let out = commons_cmd(&fixture, Some("user:owner"), &["attr", "set", ARK, "project=matsu"]);
    assert_eq!(out.status.code(), Some(0));
    let out = commons_cmd(&fixture, None, &["attr", "get", ARK]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("matsu"));

    let out = commons_cmd(
        &fixture,
        Some("user:alice"),
        &["usage", "record", "--kind", "core_hours", "--quantity", "100000",
          "--timestamp", "2026-03-01T00:00:00Z"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = commons_cmd(
        &fixture,
        None,
        &["usage", "invoice", "--actor", "user:alice", "--period", "2026-03"],
    );
    let invoice: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(invoice["total_cents"], 4_000_000);
}
