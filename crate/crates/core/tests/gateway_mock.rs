//! Gateway client driven against the mock server over real HTTP.

use std::collections::BTreeMap;

use radlabel::condition::{ConditionSpec, Granularity};
use radlabel::corpus::segment_sections;
use radlabel::gateway::{write_label_records, ClientConfig, GatewayClient, GatewayError};
use radlabel::mock::{serve, LogitPair, Rule, RuleTable};
use radlabel::prompt::{build_direct_query, build_summary_request, Strategy};
use radlabel::Report;

fn test_table() -> RuleTable {
    RuleTable {
        rules: vec![Rule {
            keyword: "metastasis".into(),
            logit_yes: 0.0,
            logit_no: -4.0,
            canned_summary: "The report describes metastasis.".into(),
        }],
        default_logits: LogitPair { yes: -2.0, no: 0.0 },
        default_summary: "Nothing relevant found.".into(),
    }
}

fn client_for(endpoint: String) -> GatewayClient {
    GatewayClient::new(ClientConfig {
        endpoint,
        model_name: "mock".into(),
        retry_backoff_ms: 1,
        ..ClientConfig::default()
    })
    .unwrap()
}

fn cancer() -> ConditionSpec {
    ConditionSpec {
        name: "cancer".into(),
        definition: "Cancer is present when the report describes metastasis.".into(),
        granularity: Granularity::ScanLevel,
        exclude_clinical_history: true,
        levels: None,
    }
}

fn report(id: &str, text: &str) -> Report {
    Report {
        id: id.into(),
        patient_id: format!("p-{id}"),
        study_id: format!("s-{id}"),
        raw_text: text.into(),
        meta: BTreeMap::new(),
        sections: segment_sections(text),
    }
}

#[tokio::test]
async fn scores_matched_rule_logits() {
    let server = serve(test_table(), "127.0.0.1:0".parse().unwrap())
        .await
        .unwrap();
    let client = client_for(server.endpoint());

    let bundle =
        build_direct_query(&cancer(), "FINDINGS: metastasis in the spine", None).unwrap();
    let score = client.score_yes_no(&bundle).await.unwrap();
    assert_eq!(score.logit_yes, 0.0);
    assert_eq!(score.logit_no, -4.0);
    // Closed form: 1 / (1 + e^-4).
    assert!((score.p_yes - 0.9820137900379085).abs() < 1e-15);
    server.shutdown().await;
}

#[tokio::test]
async fn unmatched_prompt_falls_back_to_default_logits() {
    let server = serve(test_table(), "127.0.0.1:0".parse().unwrap())
        .await
        .unwrap();
    let client = client_for(server.endpoint());

    let bundle = build_direct_query(&cancer(), "FINDINGS: unremarkable scan", None).unwrap();
    let score = client.score_yes_no(&bundle).await.unwrap();
    // Closed form for defaults (-2, 0): 1 / (1 + e^2).
    assert!((score.p_yes - 0.11920292202211755).abs() < 1e-15);
    server.shutdown().await;
}

#[tokio::test]
async fn summary_generation_returns_the_canned_text() {
    let server = serve(test_table(), "127.0.0.1:0".parse().unwrap())
        .await
        .unwrap();
    let client = client_for(server.endpoint());

    let with_kw = build_summary_request(&cancer(), "FINDINGS: metastasis at T10").unwrap();
    assert_eq!(
        client.generate_summary(&with_kw).await.unwrap(),
        "The report describes metastasis."
    );
    let without = build_summary_request(&cancer(), "FINDINGS: clear").unwrap();
    assert_eq!(
        client.generate_summary(&without).await.unwrap(),
        "Nothing relevant found."
    );
    server.shutdown().await;
}

#[tokio::test]
async fn strategy_preconditions_are_enforced() {
    let server = serve(test_table(), "127.0.0.1:0".parse().unwrap())
        .await
        .unwrap();
    let client = client_for(server.endpoint());

    let query = build_direct_query(&cancer(), "FINDINGS: x", None).unwrap();
    assert!(matches!(
        client.generate_summary(&query).await,
        Err(GatewayError::WrongStrategy { .. })
    ));
    let request = build_summary_request(&cancer(), "FINDINGS: x").unwrap();
    assert!(matches!(
        client.score_yes_no(&request).await,
        Err(GatewayError::WrongStrategy { .. })
    ));
    server.shutdown().await;
}

#[tokio::test]
async fn offline_server_yields_transport_error_after_retry_limit() {
    // Bind and drop to find a port that refuses connections.
    let port = {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().port()
    };
    let client = GatewayClient::new(ClientConfig {
        endpoint: format!("http://127.0.0.1:{port}"),
        model_name: "mock".into(),
        retry_limit: 3,
        retry_backoff_ms: 1,
        ..ClientConfig::default()
    })
    .unwrap();
    let bundle = build_direct_query(&cancer(), "FINDINGS: x", None).unwrap();
    match client.score_yes_no(&bundle).await {
        Err(GatewayError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected transport error, got {other:?}"),
    }
}

#[tokio::test]
async fn label_corpus_ranks_planted_reports_above_clean_ones() {
    let server = serve(test_table(), "127.0.0.1:0".parse().unwrap())
        .await
        .unwrap();
    let client = client_for(server.endpoint());

    let mut reports = Vec::new();
    for i in 0..10 {
        let planted = i % 3 == 0; // reports 0, 3, 6, 9
        let text = if planted {
            format!("FINDINGS: lesion {i}\nCONCLUSION: metastasis present")
        } else {
            format!("FINDINGS: normal {i}\nCONCLUSION: no abnormality")
        };
        reports.push(report(&format!("r{i}"), &text));
    }

    let records = client
        .label_corpus(&reports, &cancer(), Strategy::SummaryQuery, 0.5)
        .await
        .unwrap();
    assert_eq!(records.len(), 10);
    // Output order equals input order.
    for (record, report) in records.iter().zip(&reports) {
        assert_eq!(record.report_id, report.id);
        assert!(record.error.is_none());
        assert!(record.summary.is_some());
    }
    let planted_min = records
        .iter()
        .step_by(3)
        .map(|r| r.p_yes.unwrap())
        .fold(f64::INFINITY, f64::min);
    let clean_max = records
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 3 != 0)
        .map(|(_, r)| r.p_yes.unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(planted_min > clean_max);
    // Calibrated labels at the default 0.5 threshold.
    for (i, record) in records.iter().enumerate() {
        assert_eq!(record.label.unwrap(), u8::from(i % 3 == 0));
        assert_eq!(record.threshold, 0.5);
    }
    server.shutdown().await;
}

#[tokio::test]
async fn ivd_level_condition_yields_one_record_per_level() {
    let server = serve(test_table(), "127.0.0.1:0".parse().unwrap())
        .await
        .unwrap();
    let client = client_for(server.endpoint());

    let stenosis = ConditionSpec {
        name: "stenosis".into(),
        definition: "Stenosis is narrowing of the canal.".into(),
        granularity: Granularity::IvdLevel,
        exclude_clinical_history: false,
        levels: Some(vec!["L3-L4".into(), "L4-L5".into(), "L5-S1".into()]),
    };
    let reports: Vec<Report> = (0..5)
        .map(|i| report(&format!("r{i}"), "FINDINGS: narrowing at L4/5"))
        .collect();
    let records = client
        .label_corpus(&reports, &stenosis, Strategy::DirectQuery, 0.5)
        .await
        .unwrap();
    assert_eq!(records.len(), 15);
    for (i, record) in records.iter().enumerate() {
        assert_eq!(record.report_id, format!("r{}", i / 3));
        assert_eq!(
            record.level.as_deref().unwrap(),
            ["L3-L4", "L4-L5", "L5-S1"][i % 3]
        );
    }
    server.shutdown().await;
}

#[tokio::test]
async fn reruns_produce_byte_identical_label_files() {
    let server = serve(test_table(), "127.0.0.1:0".parse().unwrap())
        .await
        .unwrap();
    let client = client_for(server.endpoint());

    let reports: Vec<Report> = (0..8)
        .map(|i| {
            let text = if i % 2 == 0 {
                "CLINICAL HISTORY: ?metastasis\nFINDINGS: metastasis at T10"
            } else {
                "CLINICAL HISTORY: back pain\nFINDINGS: clear"
            };
            report(&format!("r{i}"), text)
        })
        .collect();

    let dir = tempfile::tempdir().unwrap();
    let mut contents = Vec::new();
    for run in 0..2 {
        let records = client
            .label_corpus(&reports, &cancer(), Strategy::SummaryQuery, 0.5)
            .await
            .unwrap();
        let path = dir.path().join(format!("labels{run}.jsonl"));
        write_label_records(&path, &records).unwrap();
        contents.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(contents[0], contents[1]);
    server.shutdown().await;
}

#[tokio::test]
async fn empty_report_text_becomes_an_error_record() {
    let server = serve(test_table(), "127.0.0.1:0".parse().unwrap())
        .await
        .unwrap();
    let client = client_for(server.endpoint());

    // The whole report is clinical history, so exclusion leaves nothing.
    let r = report("r0", "CLINICAL HISTORY: ?metastasis known primary");
    let records = client
        .label_corpus(&[r], &cancer(), Strategy::DirectQuery, 0.5)
        .await
        .unwrap();
    assert_eq!(records.len(), 1);
    assert!(records[0].p_yes.is_none());
    assert!(records[0].error.as_deref().unwrap().contains("empty"));
    server.shutdown().await;
}
