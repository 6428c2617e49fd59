mod common;

use std::sync::Arc;
use std::thread;

use common::*;
use occkit::distort::{distort_dataset, DistortContext, DistortionSpec};
use occkit::metrics::{cut_occlusion, di_index, RunEnsemble, RunPair};
use occkit::modelio::{
    input_gradient_saliency, predict_dataset, Arch, PredictionProvider, RemoteProvider, ReplayProvider, SaliencyProvider,
    SaliencyTarget, TinyModel,
};
use occkit::{Error, ImageTensor, Split};
use serde_json::{json, Value};

#[derive(Clone, Copy)]
enum Mode {
    Honest,
    ShortLogits,
    Broken,
}

/// Serves a tiny model over the wire protocol on an ephemeral port.
fn serve(model: TinyModel, mode: Mode) -> String {
    let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let (status, reply) = match mode {
                Mode::Broken => (500, json!({"error": "model not loaded"})),
                _ => (200, handle(&model, req.url(), &body, mode)),
            };
            let resp = tiny_http::Response::from_string(reply.to_string()).with_status_code(status);
            let _ = req.respond(resp);
        }
    });
    url
}

fn images(v: &Value) -> Vec<ImageTensor> {
    v["images"]
        .as_array()
        .unwrap()
        .iter()
        .map(|img| {
            let a = img.as_array().unwrap();
            let (c, h, w) = (a.len(), a[0].as_array().unwrap().len(), a[0][0].as_array().unwrap().len());
            ImageTensor::from_fn(c, h, w, |ch, y, x| a[ch][y][x].as_f64().unwrap() as f32).unwrap()
        })
        .collect()
}

fn handle(model: &TinyModel, url: &str, body: &str, mode: Mode) -> Value {
    let (c, h, w) = model.input_shape;
    match url {
        "/v1/info" => json!({"input_shape": [c, h, w], "num_classes": model.num_classes, "name": "mock"}),
        "/v1/predict" => {
            let v: Value = serde_json::from_str(body).unwrap();
            let (mut preds, mut logits) = (Vec::new(), Vec::new());
            for img in images(&v) {
                let (p, mut l) = model.predict_image(&img).unwrap();
                if let Mode::ShortLogits = mode {
                    l.pop();
                }
                preds.push(p);
                logits.push(l);
            }
            if v["return_logits"] == true {
                json!({"pred": preds, "logits": logits})
            } else {
                json!({"pred": preds})
            }
        }
        "/v1/saliency" => {
            let v: Value = serde_json::from_str(body).unwrap();
            let target = match v["target"].as_u64() {
                Some(j) => SaliencyTarget::Class(j as usize),
                None => SaliencyTarget::Predicted,
            };
            let maps: Vec<Vec<Vec<f64>>> = images(&v)
                .iter()
                .map(|img| {
                    let m = input_gradient_saliency(model, img, target).unwrap();
                    m.values().chunks(w).map(|r| r.to_vec()).collect()
                })
                .collect();
            json!({ "maps": maps })
        }
        _ => json!({}),
    }
}

fn model() -> TinyModel {
    let mut rng = occkit::derive_stream(8, "remote-model", 0);
    TinyModel::init(Arch::Mlp { hidden: 5 }, (3, 8, 8), 3, &mut rng).unwrap()
}

#[test]
fn info_predict_and_saliency_match_local_model() {
    let m = model();
    let remote = RemoteProvider::connect(&serve(m.clone(), Mode::Honest)).unwrap().with_max_batch(7);
    let info = remote.info();
    assert_eq!(info.num_classes, 3);
    assert_eq!(info.input_shape, Some((3, 8, 8)));
    assert_eq!(remote.remote_info().name, "mock");

    let ds = random_dataset(30, 3, 4, Split::Test);
    let via_remote = predict_dataset(&remote, &ds, "test", true).unwrap();
    let local = predict_dataset(&m, &ds, "test", true).unwrap();
    assert_eq!(via_remote.records(), local.records());

    let imgs: Vec<&ImageTensor> = ds.items().iter().take(4).map(|s| &s.image).collect();
    let maps = remote.saliency(&imgs, SaliencyTarget::Class(1)).unwrap();
    let expected = m.saliency(&imgs, SaliencyTarget::Class(1)).unwrap();
    assert_eq!(maps, expected);
}

#[test]
fn wrong_logit_length_is_a_schema_error() {
    let remote = RemoteProvider::connect(&serve(model(), Mode::ShortLogits)).unwrap();
    let ds = random_dataset(3, 3, 4, Split::Test);
    match predict_dataset(&remote, &ds, "test", true) {
        Err(Error::Schema(msg)) => assert!(msg.contains("logits"), "{msg}"),
        other => panic!("expected schema error, got {other:?}"),
    }
}

#[test]
fn http_failure_is_a_transport_error() {
    match RemoteProvider::connect(&serve(model(), Mode::Broken)) {
        Err(Error::Transport(msg)) => assert!(msg.contains("500"), "{msg}"),
        other => panic!("expected transport error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn metrics_via_remote_equal_metrics_via_replay() {
    let m = model();
    let remote = RemoteProvider::connect(&serve(m, Mode::Honest)).unwrap();
    let ds = random_dataset(60, 3, 9, Split::Test);
    let spec: DistortionSpec = "occlude:mask=fourier,p=0.4".parse().unwrap();
    let occluded = distort_dataset(&ds, &spec, 2, DistortContext::default()).unwrap().dataset;

    let orig = predict_dataset(&remote, &ds, "test", false).unwrap();
    let dist = predict_dataset(&remote, &occluded, "test@occ", false).unwrap();

    let t = tempfile::tempdir().unwrap();
    write(&orig, &t.path().join("test.jsonl"));
    write(&dist, &t.path().join("test@occ.jsonl"));
    let replay = ReplayProvider::from_dir(t.path()).unwrap();
    let r_orig = predict_dataset(&replay, &ds, "test", false).unwrap();
    let r_dist = predict_dataset(&replay, &occluded, "test@occ", false).unwrap();

    let ens = |o, d| RunEnsemble::new(vec![RunPair { original: o, distorted: d }]).unwrap();
    assert_eq!(cut_occlusion(&dist).unwrap(), cut_occlusion(&r_dist).unwrap());
    assert_eq!(di_index(&ens(orig, dist)).unwrap(), di_index(&ens(r_orig, r_dist)).unwrap());
}
