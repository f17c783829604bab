mod common;

use std::collections::BTreeMap;

use commons_core::{
    parse_alias, CommonsError, FieldSpec, FieldType, MetadataSchema, Predicate, PrincipalId,
    Release, Rights,
};
use common::*;
use serde_json::{json, Value};
use tempfile::TempDir;

fn granule_schema() -> MetadataSchema {
    MetadataSchema {
        type_name: "granule".into(),
        required: vec!["instrument".into(), "date".into()],
        fields: BTreeMap::from([(
            "instrument".to_string(),
            FieldSpec {
                field_type: FieldType::String,
                enum_values: None,
            },
        )]),
    }
}

fn admin() -> PrincipalId {
    PrincipalId::user("admin")
}

fn predicate(pairs: &[(&str, Value)]) -> Predicate {
    Predicate {
        conjuncts: pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
    }
}

#[test]
fn schema_registration_rules() {
    let dir = TempDir::new().unwrap();
    let commons = open_commons(dir.path());
    commons.register_schema(granule_schema(), &admin()).unwrap();
    assert!(matches!(
        commons.register_schema(granule_schema(), &admin()),
        Err(CommonsError::SchemaExists(_))
    ));
    assert!(matches!(
        commons.register_schema(granule_schema(), &owner()),
        Err(CommonsError::AccessDenied(_))
    ));
    let mut bad = granule_schema();
    bad.type_name = "bad".into();
    bad.fields.get_mut("instrument").unwrap().enum_values = Some(vec![json!(7)]);
    assert!(matches!(
        commons.register_schema(bad, &admin()),
        Err(CommonsError::MalformedSchema(_))
    ));
}

#[test]
fn typed_document_validation() {
    let dir = TempDir::new().unwrap();
    let commons = open_commons(dir.path());
    commons.register_schema(granule_schema(), &admin()).unwrap();
    mint_nexrad(&commons);
    let subject = parse_alias(NEXRAD_ARK).unwrap();

    let err = commons
        .put_document(
            &subject,
            Some("granule".into()),
            json!({"date": "2015-09-01"}),
            &owner(),
        )
        .unwrap_err();
    match err {
        CommonsError::ValidationFailed { paths } => {
            assert_eq!(paths, vec!["instrument".to_string()])
        }
        other => panic!("unexpected: {other}"),
    }

    let doc = commons
        .put_document(
            &subject,
            Some("granule".into()),
            json!({"instrument": "NEXRAD", "date": "2015-09-01"}),
            &owner(),
        )
        .unwrap();
    // The index record now links to the document.
    let record = commons.resolve_alias(NEXRAD_ARK, &owner()).unwrap();
    assert_eq!(record.metadata.as_deref(), Some(doc.doc_id.as_str()));
    // Stored typed documents still validate at read time.
    assert!(commons.revalidate_documents().is_empty());
}

#[test]
fn untyped_documents_unrestricted() {
    let dir = TempDir::new().unwrap();
    let commons = open_commons(dir.path());
    mint_nexrad(&commons);
    let subject = parse_alias(NEXRAD_ARK).unwrap();
    let body = json!({"free": ["form", {"nested": true}], "n": 1.5});
    commons.put_document(&subject, None, body.clone(), &owner()).unwrap();
    let doc = commons.get_document(NEXRAD_ARK, None, &owner()).unwrap();
    // Byte-identical after canonical serialization.
    assert_eq!(
        commons_core::canonical_json(&doc.body).unwrap(),
        commons_core::canonical_json(&body).unwrap()
    );
}

#[test]
fn unknown_subject_rejected() {
    let dir = TempDir::new().unwrap();
    let commons = open_commons(dir.path());
    assert!(matches!(
        commons.put_document(&parse_alias("ghost").unwrap(), None, json!({}), &owner()),
        Err(CommonsError::UnknownSubject(_))
    ));
}

#[test]
fn query_matches_linear_scan_oracle() {
    let dir = TempDir::new().unwrap();
    let commons = open_commons(dir.path());
    let actor = owner();
    let docs = [
        ("g-1", json!({"instrument": "NEXRAD", "site": "KDVN"})),
        ("g-2", json!({"instrument": "NEXRAD", "site": "KLOT"})),
        ("g-3", json!({"instrument": "MODIS", "site": "KDVN"})),
    ];
    for (alias, body) in &docs {
        mint_with_content(&commons, alias, alias.as_bytes(), Release::Public);
        commons
            .put_document(&parse_alias(alias).unwrap(), None, body.clone(), &actor)
            .unwrap();
    }

    let p = predicate(&[("instrument", json!("NEXRAD"))]);
    let got: Vec<String> = commons
        .query_metadata(&p, &PrincipalId::Anonymous)
        .unwrap()
        .into_iter()
        .map(|a| a.raw().to_string())
        .collect();
    // Linear-scan oracle over the fixture corpus.
    let mut expected: Vec<String> = docs
        .iter()
        .filter(|(_, body)| body["instrument"] == json!("NEXRAD"))
        .map(|(alias, _)| alias.to_string())
        .collect();
    expected.sort();
    assert_eq!(got, expected);

    // Empty predicate: all readable subjects.
    assert_eq!(
        commons
            .query_metadata(&Predicate::default(), &PrincipalId::Anonymous)
            .unwrap()
            .len(),
        3
    );
    // Absent field matches nothing.
    assert!(commons
        .query_metadata(&predicate(&[("nope", json!(1))]), &PrincipalId::Anonymous)
        .unwrap()
        .is_empty());
    // Bad path is malformed.
    assert!(matches!(
        commons.query_metadata(&predicate(&[("a..b", json!(1))]), &actor),
        Err(CommonsError::MalformedPredicate(_))
    ));
}

#[test]
fn query_filters_unreadable_subjects() {
    let dir = TempDir::new().unwrap();
    let commons = open_commons(dir.path());
    let actor = owner();
    mint_with_content(&commons, "open", b"open", Release::Public);
    mint_with_content(&commons, "closed", b"closed", Release::Controlled);
    for alias in ["open", "closed"] {
        commons
            .put_document(
                &parse_alias(alias).unwrap(),
                None,
                json!({"kind": "dataset"}),
                &actor,
            )
            .unwrap();
    }
    let p = predicate(&[("kind", json!("dataset"))]);
    let anon: Vec<String> = commons
        .query_metadata(&p, &PrincipalId::Anonymous)
        .unwrap()
        .into_iter()
        .map(|a| a.raw().to_string())
        .collect();
    assert_eq!(anon, vec!["open"]);
    let owned = commons.query_metadata(&p, &actor).unwrap();
    assert_eq!(owned.len(), 2);
}

#[test]
fn document_write_control() {
    let dir = TempDir::new().unwrap();
    let commons = open_commons(dir.path());
    mint_nexrad(&commons);
    let subject = parse_alias(NEXRAD_ARK).unwrap();
    let stranger = PrincipalId::user("stranger");
    // Creating needs write on the subject record.
    assert!(matches!(
        commons.put_document(&subject, None, json!({}), &stranger),
        Err(CommonsError::AccessDenied(_))
    ));
    let doc = commons
        .put_document(&subject, None, json!({"v": 1}), &owner())
        .unwrap();
    // Modifying needs write on the document.
    assert!(matches!(
        commons.put_document(&subject, None, json!({"v": 2}), &stranger),
        Err(CommonsError::AccessDenied(_))
    ));
    commons
        .update_document_acl(&doc.doc_id, stranger.clone(), Rights::ALL, true, &owner())
        .unwrap();
    let updated = commons
        .put_document(&subject, None, json!({"v": 2}), &stranger)
        .unwrap();
    assert_eq!(updated.doc_id, doc.doc_id);
    assert_eq!(updated.body, json!({"v": 2}));
}

#[test]
fn one_document_per_subject_and_type() {
    let dir = TempDir::new().unwrap();
    let commons = open_commons(dir.path());
    mint_nexrad(&commons);
    let subject = parse_alias(NEXRAD_ARK).unwrap();
    let d1 = commons
        .put_document(&subject, Some("t".into()), json!({"v": 1}), &owner())
        .unwrap();
    let d2 = commons
        .put_document(&subject, Some("t".into()), json!({"v": 2}), &owner())
        .unwrap();
    assert_eq!(d1.doc_id, d2.doc_id);
    let untyped = commons
        .put_document(&subject, None, json!({"v": 3}), &owner())
        .unwrap();
    assert_ne!(untyped.doc_id, d1.doc_id);
    assert_eq!(commons.read(|s| s.docs.len()), 2);
}
