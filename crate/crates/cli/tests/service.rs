use std::collections::BTreeMap;
use std::sync::Arc;

use artqa_cli::service::{router, AppState, Artwork};
use artqa_core::classifier::{ClassifierConfig, ClassifierModel};
use artqa_core::datasets::sample::generate_sample;
use artqa_core::neural::ParamSet;
use artqa_core::qa::{QaConfig, QaModel};
use artqa_core::text::{tokenize, Vocabulary};
use artqa_core::transformer::EncoderConfig;
use artqa_core::vqa::{build_answer_vocab, extract_grid_features, VqaConfig, VqaModel};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const REGION_DIM: usize = 32;

fn encoder() -> EncoderConfig {
    EncoderConfig {
        width: 8,
        depth: 1,
        heads: 2,
        ffn: 16,
    }
}

fn state(with_models: bool) -> AppState {
    let items = generate_sample(3);
    let texts: Vec<Vec<String>> = items
        .iter()
        .flat_map(|i| i.questions.iter().map(|q| tokenize(&q.question)))
        .chain(items.iter().flat_map(|i| i.record.contextual_sentences.iter().map(|s| tokenize(s))))
        .collect();
    let vocab = Vocabulary::build(texts.iter().map(Vec::as_slice), 1).unwrap();
    let mut artworks = BTreeMap::new();
    for it in items.iter().take(4) {
        let regions = extract_grid_features(&it.record.id, &it.image, 3, REGION_DIM).unwrap();
        let mut record = it.record.clone();
        record.image = Some(format!("images/{}.png", record.id));
        artworks.insert(
            record.id.clone(),
            Artwork {
                record,
                regions: Some(regions),
            },
        );
    }
    if !with_models {
        return AppState {
            artworks,
            ..AppState::default()
        };
    }
    let classifier = ClassifierModel::new(
        ClassifierConfig {
            encoder: encoder(),
            max_len: 40,
            seed: 1,
        },
        vocab.clone(),
    )
    .unwrap();
    let qa = QaModel::new(
        QaConfig {
            encoder: encoder(),
            max_len: 80,
            max_answer: 30,
            seed: 2,
        },
        vocab.clone(),
    )
    .unwrap();
    let answers = build_answer_vocab(["red", "blue", "boat", "yes"], 10).unwrap();
    let vqa = VqaModel::new(
        VqaConfig {
            embed_dim: 4,
            hidden: 6,
            region_dim: REGION_DIM,
            attention_dim: 4,
            common_dim: 6,
            head_dim: 6,
            seed: 3,
        },
        vocab,
        answers,
        None,
    )
    .unwrap();
    AppState {
        classifier: Some(Arc::new(classifier)),
        qa: Some(Arc::new(qa)),
        vqa: Some(Arc::new(vqa)),
        artworks,
    }
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn param_snapshot(p: &ParamSet) -> Vec<(String, Vec<u64>)> {
    p.iter()
        .map(|(n, t)| (n.to_string(), t.data().iter().map(|x| x.to_bits()).collect()))
        .collect()
}

#[tokio::test]
async fn health_and_artworks() {
    let app = router(Arc::new(state(true)));
    let (s, v) = call(&app, "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["artworks"], 4);

    let (s, v) = call(&app, "GET", "/artworks", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 4);
    assert_eq!(v[0]["id"], "s01");
    assert_eq!(v[0]["thumbnail"], "images/s01.png");

    let (s, v) = call(&app, "GET", "/artworks/s02", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["boxes"].as_array().unwrap().len(), 9);
    assert!(!v["contextual_sentences"].as_array().unwrap().is_empty());

    let (s, v) = call(&app, "GET", "/artworks/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "ARTWORK_NOT_FOUND");
}

#[tokio::test]
async fn classify_contract() {
    let app = router(Arc::new(state(true)));
    let (s, v) = call(&app, "POST", "/classify", Some(json!({"question": "who painted this ?"}))).await;
    assert_eq!(s, StatusCode::OK);
    let label = v["label"].as_str().unwrap();
    assert!(label == "visual" || label == "contextual");
    assert!(v["confidence"].as_f64().unwrap() >= 0.5);

    let (s, v) = call(&app, "POST", "/classify", Some(json!({"question": "  "}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "EMPTY_QUESTION");

    let (s, v) = call(&app, "POST", "/classify", Some(json!({"q": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "BAD_REQUEST");
}

#[tokio::test]
async fn answer_contract() {
    let st = Arc::new(state(true));
    let before = [
        param_snapshot(&st.classifier.as_ref().unwrap().params),
        param_snapshot(&st.qa.as_ref().unwrap().params),
        param_snapshot(&st.vqa.as_ref().unwrap().params),
    ];
    let app = router(st.clone());
    for q in ["who painted this work ?", "what color is the background ?", "when was it made ?"] {
        let (s, v) = call(&app, "POST", "/answer", Some(json!({"question": q, "artwork_id": "s01"}))).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        let branch = v["branch"].as_str().unwrap();
        let label = v["route"]["label"].as_str().unwrap();
        assert_eq!(branch, if label == "visual" { "vqa" } else { "qa" });
        assert!(v["route"]["confidence"].as_f64().unwrap() >= 0.5);
        let timings = v["timings"].as_array().unwrap();
        assert_eq!(timings.len(), 2);
        assert_eq!(timings[1]["stage"], branch);
        match v["evidence"]["kind"].as_str().unwrap() {
            "visual" => {
                let att = v["evidence"]["distribution"]["attention"].as_array().unwrap();
                assert_eq!(att.len(), 9);
                assert_eq!(v["evidence"]["boxes"].as_array().unwrap().len(), 9);
            }
            "contextual" => {
                let span = &v["evidence"]["span"];
                assert_eq!(span["text"], v["answer"]);
                assert!(span["char_start"].as_u64().unwrap() < span["char_end"].as_u64().unwrap());
            }
            other => panic!("unexpected evidence {other}"),
        }
    }

    let (s, v) = call(&app, "POST", "/answer", Some(json!({"question": "who ?", "artwork_id": "zzz"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "ARTWORK_NOT_FOUND");
    let (s, v) = call(&app, "POST", "/answer", Some(json!({"question": "", "artwork_id": "s01"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "EMPTY_QUESTION");

    let after = [
        param_snapshot(&st.classifier.as_ref().unwrap().params),
        param_snapshot(&st.qa.as_ref().unwrap().params),
        param_snapshot(&st.vqa.as_ref().unwrap().params),
    ];
    assert_eq!(before, after);
}

#[tokio::test]
async fn concurrent_answers_agree() {
    let app = router(Arc::new(state(true)));
    let body = json!({"question": "who commissioned the work ?", "artwork_id": "s03"});
    let mut handles = Vec::new();
    for _ in 0..8 {
        let app = app.clone();
        let body = body.clone();
        handles.push(tokio::spawn(async move { call(&app, "POST", "/answer", Some(body)).await }));
    }
    let mut answers = Vec::new();
    for h in handles {
        let (s, v) = h.await.unwrap();
        assert_eq!(s, StatusCode::OK);
        answers.push((v["answer"].clone(), v["route"].clone()));
    }
    assert!(answers.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn missing_models_report_503() {
    let app = router(Arc::new(state(false)));
    let (s, v) = call(&app, "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "degraded");
    let (s, v) = call(&app, "POST", "/classify", Some(json!({"question": "who ?"}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["error"]["code"], "MODEL_NOT_LOADED");
    let (s, v) = call(&app, "POST", "/answer", Some(json!({"question": "who ?", "artwork_id": "s01"}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["error"]["code"], "MODEL_NOT_LOADED");
}
