#![allow(dead_code)]

use std::path::Path;

use commons_core::{
    parse_alias, Commons, CommonsConfig, DigestSet, DigitalIdRecord, PeerAgreement, PrincipalId,
    Release,
};

pub const NEXRAD_ARK: &str = "ark:/31807/DC0-7b2c1002-e3c4-41ea-8edc-8fcee4ff3f47";
pub const NEXRAD_MD5: &str = "1e24480435408b664b756be0822028a3";
pub const NEXRAD_SIZE: u64 = 45893621760;

pub fn open_commons(dir: &Path) -> Commons {
    let mut config = CommonsConfig::new("noaa-commons");
    config.admins.push("admin".to_string());
    config.groups.add_member("geo", "alice");
    Commons::open(dir, config).unwrap()
}

pub fn open_peered(dir: &Path, peer_name: &str, endpoint: &str) -> Commons {
    let mut config = CommonsConfig::new("noaa-commons");
    config.admins.push("admin".to_string());
    config.peers.push(PeerAgreement {
        peer_name: peer_name.to_string(),
        endpoint: endpoint.to_string(),
        no_cost: true,
    });
    Commons::open(dir, config).unwrap()
}

pub fn open_public(dir: &Path, public_base: &str) -> Commons {
    let mut config = CommonsConfig::new("noaa-commons");
    config.admins.push("admin".to_string());
    config.public_base = Some(public_base.to_string());
    Commons::open(dir, config).unwrap()
}

pub fn owner() -> PrincipalId {
    PrincipalId::user("owner")
}

/// Mint the record from the published resolution example.
pub fn mint_nexrad(commons: &Commons) -> DigitalIdRecord {
    commons
        .mint(
            &parse_alias(NEXRAD_ARK).unwrap(),
            DigestSet::from_md5(NEXRAD_MD5).unwrap(),
            NEXRAD_SIZE,
            vec![
                "https://osdc.example/noaa-nexrad-l2/NWS_NEXRAD_NXL2DP_KDVN_201509_01.tar".into(),
                "https://osdc.example/noaa-nexrad-l2/NWS_NEXRAD_NXL2DP_KDVN_201509_02.tar".into(),
            ],
            Release::Public,
            &owner(),
        )
        .unwrap()
}

/// Mint an alias over in-memory content stored in the local object store.
pub fn mint_with_content(
    commons: &Commons,
    alias: &str,
    content: &[u8],
    release: Release,
) -> DigitalIdRecord {
    let stored = commons
        .objects()
        .put("data", alias, content)
        .unwrap();
    commons
        .mint(
            &parse_alias(alias).unwrap(),
            stored.hashes,
            stored.size,
            vec![stored.locator],
            release,
            &owner(),
        )
        .unwrap()
}
