//! Starts an in-process model service speaking the HTTP/JSON wire protocol,
//! then drives it through `RemoteProvider`: info, predictions, saliency maps
//! and a saliency-guided occlusion.
//!
//!     cargo run --example remote_client [URL]
//!
//! Pass the URL of a running service to use that instead of the built-in one.

use std::sync::Arc;

use occkit::distort::{distort_dataset, DistortContext, DistortionSpec};
use occkit::metrics::cut_occlusion;
use occkit::modelio::{
    input_gradient_saliency, predict_dataset, train_tiny, PredictionProvider, RemoteProvider, SaliencyProvider,
    SaliencyTarget, TinyModel, TrainConfig,
};
use occkit::synth::BlobConfig;
use occkit::{ImageTensor, Result, Split};
use serde_json::{json, Value};

fn images(v: &Value) -> Vec<ImageTensor> {
    v["images"]
        .as_array()
        .map(|a| a.as_slice())
        .unwrap_or_default()
        .iter()
        .filter_map(|img| {
            let a = img.as_array()?;
            let (h, w) = (a[0].as_array()?.len(), a[0][0].as_array()?.len());
            ImageTensor::from_fn(a.len(), h, w, |c, y, x| a[c][y][x].as_f64().unwrap_or(0.0) as f32).ok()
        })
        .collect()
}

fn reply(model: &TinyModel, url: &str, body: &str) -> (u16, Value) {
    let v: Value = serde_json::from_str(body).unwrap_or(Value::Null);
    let (c, h, w) = model.input_shape;
    match url {
        "/v1/info" => (200, json!({"input_shape": [c, h, w], "num_classes": model.num_classes, "name": "tiny-demo"})),
        "/v1/predict" => {
            let out: Vec<(usize, Vec<f64>)> = images(&v).iter().filter_map(|i| model.predict_image(i).ok()).collect();
            let preds: Vec<usize> = out.iter().map(|o| o.0).collect();
            let logits: Vec<&Vec<f64>> = out.iter().map(|o| &o.1).collect();
            (200, json!({"pred": preds, "logits": logits}))
        }
        "/v1/saliency" => {
            let target = v["target"].as_u64().map_or(SaliencyTarget::Predicted, |j| SaliencyTarget::Class(j as usize));
            let maps: Vec<Vec<Vec<f64>>> = images(&v)
                .iter()
                .filter_map(|i| input_gradient_saliency(model, i, target).ok())
                .map(|m| m.values().chunks(w).map(<[f64]>::to_vec).collect())
                .collect();
            (200, json!({ "maps": maps }))
        }
        _ => (404, json!({"error": "not found"})),
    }
}

fn spawn_service(model: TinyModel) -> String {
    let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind"));
    let url = format!("http://{}", server.server_addr().to_ip().expect("tcp address"));
    std::thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = String::new();
            let _ = req.as_reader().read_to_string(&mut body);
            let (status, v) = reply(&model, req.url(), &body);
            let _ = req.respond(tiny_http::Response::from_string(v.to_string()).with_status_code(status));
        }
    });
    url
}

fn main() -> Result<()> {
    let blobs = BlobConfig { per_class: 30, ..BlobConfig::default() };
    let test = blobs.generate(Split::Test, 2)?;
    let url = match std::env::args().nth(1) {
        Some(u) => u,
        None => spawn_service(train_tiny(&blobs.generate(Split::Train, 1)?, &TrainConfig::default().with_epochs(20))?),
    };
    let remote = RemoteProvider::connect(&url)?.with_max_batch(32);
    println!("connected to {url}: {:?}", remote.remote_info());

    let log = predict_dataset(&remote, &test, "test", true)?;
    println!("{}: clean accuracy {:.3} on {} images", remote.info().name, log.accuracy()?, log.len());

    let first: Vec<&ImageTensor> = test.items().iter().take(2).map(|s| &s.image).collect();
    for (i, m) in remote.saliency(&first, SaliencyTarget::Predicted)?.iter().enumerate() {
        let peak = m.values().iter().cloned().fold(0.0, f64::max);
        println!("saliency map {i}: {}x{}, max {peak:.2}", m.height(), m.width());
    }
    for mode in ["most", "least"] {
        let spec: DistortionSpec = format!("occlude:mask=saliency,p=0.2,mode={mode}").parse()?;
        let ctx = DistortContext { donor: None, saliency: Some(&remote), workers: None };
        let occluded = distort_dataset(&test, &spec, 3, ctx)?;
        let cut = cut_occlusion(&predict_dataset(&remote, &occluded.dataset, "test@sal", false)?)?;
        println!("occluding the 20% {mode} salient pixels: accuracy {cut:.1}%");
    }
    Ok(())
}
