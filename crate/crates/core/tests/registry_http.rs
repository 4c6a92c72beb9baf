use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde_json::{json, Value};

use gnnfp::extraction::{run_extraction, AttackConfig, AttackType, HttpOracle};
use gnnfp::fingerprint::{build_training_set, train_csim, CsimConfig, NamedModel};
use gnnfp::gnn::{train, Architecture, GnnConfig, GnnModel};
use gnnfp::graph_data::{generate_synthetic, GraphDataset, SyntheticGraphSpec};
use gnnfp::registry::{serve, Registry, ServerState, VerifierContext};

fn dataset() -> GraphDataset {
    generate_synthetic(&SyntheticGraphSpec {
        nodes_per_class: 40,
        num_classes: 2,
        intra_edge_prob: 0.12,
        inter_edge_prob: 0.01,
        feature_dim: 6,
        feature_noise: 0.5,
        seed: 4,
    })
    .unwrap()
}

fn model(ds: &GraphDataset, arch: Architecture, seed: u64) -> GnnModel {
    let mut cfg = GnnConfig::new(arch).with_hidden_dim(8).with_seed(seed);
    cfg.attention_heads = 1;
    cfg.max_epochs = 20;
    let nodes: Vec<usize> = (0..ds.node_count()).collect();
    train(&cfg, ds, &nodes).unwrap().0
}

/// Start a server on an ephemeral port and return its base URL.
fn start(state: std::sync::Arc<ServerState>) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            serve(state, listener).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

fn post(url: &str, body: Value) -> Value {
    ureq::post(url).send_json(body).unwrap().body_mut().read_json().unwrap()
}

fn status_of(r: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> u16 {
    match r {
        Ok(resp) => resp.status().as_u16(),
        Err(ureq::Error::StatusCode(s)) => s,
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn register_extract_and_resolve_over_http() {
    let ds = dataset();
    let d_v: Vec<usize> = (0..ds.node_count()).step_by(2).collect();
    let state = ServerState::new(
        Registry::in_memory(),
        Some(VerifierContext {
            graph: ds.graph().clone(),
            d_v: d_v.clone(),
            seed: 5,
        }),
    );
    let base = start(state);

    let target = model(&ds, Architecture::GraphSage, 1);
    let target_bytes = target.to_bytes();
    let rec = post(
        &format!("{base}/models"),
        json!({"owner_id": "owner", "model_base64": STANDARD.encode(&target_bytes)}),
    );
    assert_eq!(rec["model_id"], "m1");
    assert_eq!(rec["sequence"], 1);
    let fetched: Value = ureq::get(&format!("{base}/models/m1")).call().unwrap().body_mut().read_json().unwrap();
    assert_eq!(fetched, rec);
    assert_eq!(status_of(ureq::get(&format!("{base}/models/m9")).call()), 404);

    // The attacker only sees the deployed endpoint.
    let endpoint = format!("{base}/models/m1/embed");
    let mut cfg = AttackConfig::new(AttackType::TypeI, Architecture::GraphSage, 7);
    cfg.epochs = 30;
    let stolen = run_extraction(&HttpOracle::new(endpoint.clone()), &ds, &cfg).unwrap().model;
    let stolen_bytes = stolen.to_bytes();
    let rec2 = post(
        &format!("{base}/models"),
        json!({"owner_id": "thief", "model_base64": STANDARD.encode(&stolen_bytes)}),
    );
    assert_eq!(rec2["model_id"], "m2");

    let surrogates = [target.clone(), stolen.clone()];
    let independents = [model(&ds, Architecture::Gin, 2), model(&ds, Architecture::GraphSage, 3)];
    let names = |v: &[GnnModel], p: &str| -> Vec<(String, GnnModel)> {
        v.iter().enumerate().map(|(i, m)| (format!("{p}{i}"), m.clone())).collect()
    };
    let (sn, inn) = (names(&surrogates, "s"), names(&independents, "i"));
    let ts = build_training_set(
        NamedModel::new("t", &target),
        &sn.iter().map(|(n, m)| NamedModel::new(n, m)).collect::<Vec<_>>(),
        &inn.iter().map(|(n, m)| NamedModel::new(n, m)).collect::<Vec<_>>(),
        ds.graph(),
        &d_v,
        5,
    )
    .unwrap();
    let csim = train_csim(&ts, &CsimConfig::default(), 5).unwrap();
    let csim_json: Value = serde_json::from_str(&csim.to_json()).unwrap();
    assert_eq!(post(&format!("{base}/models/m1/csim"), csim_json)["ok"], true);

    let dispute = |accuser: &str, responder: &str, tb: &[u8], sb: &[u8]| {
        post(
            &format!("{base}/disputes"),
            json!({
                "accuser_id": accuser,
                "responder_id": responder,
                "target_base64": STANDARD.encode(tb),
                "suspect_base64": STANDARD.encode(sb),
            }),
        )
    };
    // The later registrant cannot accuse the earlier one.
    let late = dispute("m2", "m1", &stolen_bytes, &target_bytes);
    assert_eq!(late["status"], "rejected-timestamp");
    // Submitted bytes must match the commitments.
    let forged = dispute("m1", "m2", &target_bytes, &target_bytes);
    assert_eq!(forged["status"], "rejected-commitment");

    let open = dispute("m1", "m2", &target_bytes, &stolen_bytes);
    assert_eq!(open["status"], "opened");
    let id = open["id"].as_str().unwrap().to_string();
    let resolved = post(
        &format!("{base}/disputes/{id}/resolve"),
        json!({"target_endpoint": endpoint, "suspect_endpoint": format!("{base}/models/m2/embed")}),
    );
    assert_eq!(resolved["status"], "verified-surrogate", "{resolved}");
    let stored: Value = ureq::get(&format!("{base}/disputes/{id}")).call().unwrap().body_mut().read_json().unwrap();
    assert_eq!(stored, resolved);

    assert_eq!(status_of(ureq::post(&format!("{base}/disputes/d99/resolve")).send_json(json!({}))), 404);
    assert_eq!(
        status_of(ureq::post(&format!("{base}/models")).send_json(json!({"owner_id": "x", "model_base64": "AAAA"}))),
        400
    );
}
