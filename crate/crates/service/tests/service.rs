use std::time::Duration;

use bshsplat::io::png::decode_png;
use bshsplat::io::synthetic::random_subject;
use bshsplat::scene::{Primitive, Scene};
use bshsplat_service::{serve, AppState, EnvMaps, InfoResponse, Limits};
use futures_util::{SinkExt, StreamExt};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio_tungstenite::tungstenite::Message;

struct Server {
    base: String,
    stop: Option<oneshot::Sender<()>>,
    handle: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Server {
    async fn start(scene: Scene<f32>, limits: Limits) -> Server {
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = oneshot::channel::<()>();
        let state = AppState::new(scene, limits, EnvMaps::new());
        let handle = tokio::spawn(serve(listener, state, async move {
            let _ = rx.await;
        }));
        Server { base: format!("http://{addr}"), stop: Some(tx), handle }
    }

    async fn info(&self) -> InfoResponse {
        reqwest::get(format!("{}/info", self.base)).await.unwrap().json().await.unwrap()
    }

    async fn shutdown(mut self) {
        self.stop.take().unwrap().send(()).unwrap();
        tokio::time::timeout(Duration::from_secs(10), self.handle).await.unwrap().unwrap().unwrap();
    }
}

fn subject() -> Scene<f32> {
    random_subject(40, 3).cast()
}

fn request(lights: serde_json::Value) -> serde_json::Value {
    json!({
        "camera": {"kind": "look_at", "eye": [0.0, 1.0, 4.0], "target": [0.0, 0.0, 0.0], "width": 32, "height": 24},
        "lights": lights,
    })
}

async fn post(base: &str, body: &serde_json::Value) -> reqwest::Response {
    reqwest::Client::new().post(format!("{base}/render")).body(body.to_string()).send().await.unwrap()
}

#[tokio::test]
async fn info_reports_large_model_accounting() {
    let scene = Scene::new(vec![Primitive::<f32>::default(); 16_693]);
    let server = Server::start(scene, Limits::default()).await;
    let info = server.info().await;
    assert_eq!(info.primitives, 16_693);
    assert_eq!(info.parameters, 18_178_677);
    assert_eq!(info.parameters_per_primitive, 1_089);
    assert_eq!(info.bytes_per_primitive, 4_356);
    assert_eq!(info.memory_bytes, 16_693 * 4_356);
    server.shutdown().await;
}

#[tokio::test]
async fn render_zero_lights_is_black_and_deterministic() {
    let server = Server::start(subject(), Limits::default()).await;
    let resp = post(&server.base, &request(json!([]))).await;
    assert_eq!(resp.status(), 200);
    assert_eq!(resp.headers()["content-type"], "image/png");
    let png = resp.bytes().await.unwrap();
    let img = decode_png(&png).unwrap();
    assert_eq!((img.width, img.height), (32, 24));
    assert!(img.data.iter().all(|&v| v == 0));

    let lit = request(json!([{"kind": "point", "position": [2.0, 3.0, 2.0], "intensity": [16.0, 16.0, 16.0]}]));
    let a = post(&server.base, &lit).await.bytes().await.unwrap();
    let b = post(&server.base, &lit).await.bytes().await.unwrap();
    assert_eq!(a, b);
    assert!(decode_png(&a).unwrap().data.iter().any(|&v| v > 0));
    server.shutdown().await;
}

async fn error_of(resp: reqwest::Response) -> (u16, String) {
    let status = resp.status().as_u16();
    let body: serde_json::Value = resp.json().await.unwrap();
    assert!(body["message"].is_string());
    (status, body["error"].as_str().unwrap().to_string())
}

#[tokio::test]
async fn malformed_requests_get_machine_readable_4xx() {
    let limits = Limits { max_width: 64, max_height: 64, max_lights: 2, ..Limits::default() };
    let server = Server::start(subject(), limits).await;
    let client = reqwest::Client::new();
    let resp = client.post(format!("{}/render", server.base)).body("{not json").send().await.unwrap();
    assert_eq!(error_of(resp).await, (400, "malformed_request".to_string()));

    let mut big = request(json!([]));
    big["camera"]["width"] = json!(65);
    assert_eq!(error_of(post(&server.base, &big).await).await, (422, "resolution_too_large".to_string()));

    let light = json!({"kind": "directional", "direction": [0.0, 1.0, 0.0], "radiance": [1.0, 1.0, 1.0]});
    let many = request(json!([light, light, light]));
    assert_eq!(error_of(post(&server.base, &many).await).await, (422, "too_many_lights".to_string()));

    let mut mask = request(json!([]));
    mask["mask"] = json!("sparkle");
    assert_eq!(error_of(post(&server.base, &mask).await).await, (422, "invalid_mask".to_string()));

    let env = request(json!([{"kind": "environment", "map": "studio"}]));
    assert_eq!(error_of(post(&server.base, &env).await).await, (422, "unknown_env_map".to_string()));

    let neg = request(json!([{"kind": "point", "position": [0.0, 3.0, 0.0], "intensity": [-1.0, 1.0, 1.0]}]));
    assert_eq!(error_of(post(&server.base, &neg).await).await, (422, "invalid_light".to_string()));
    server.shutdown().await;
}

#[tokio::test]
async fn render_failure_is_5xx_with_diagnostic() {
    // A point light placed exactly on a primitive center has no direction.
    let scene = Scene::new(vec![Primitive::<f32>::default()]);
    let server = Server::start(scene, Limits::default()).await;
    let bad = request(json!([{"kind": "point", "position": [0.0, 0.0, 0.0], "intensity": [1.0, 1.0, 1.0]}]));
    let (status, code) = error_of(post(&server.base, &bad).await).await;
    assert_eq!((status, code.as_str()), (500, "render_failed"));
    server.shutdown().await;
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn connect(base: &str) -> Ws {
    let url = format!("{}/interactive", base.replace("http://", "ws://"));
    tokio_tungstenite::connect_async(url).await.unwrap().0
}

async fn next_frame(ws: &mut Ws) -> (u64, Vec<u8>) {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(30), ws.next()).await.unwrap().unwrap().unwrap();
        match msg {
            Message::Binary(b) => {
                let seq = u64::from_le_bytes(b[..8].try_into().unwrap());
                return (seq, b[8..].to_vec());
            }
            Message::Text(t) => panic!("unexpected error message {t}"),
            _ => continue,
        }
    }
}

fn camera_at(x: f64) -> serde_json::Value {
    json!({"kind": "look_at", "eye": [x, 1.0, 4.0], "target": [0.0, 0.0, 0.0], "width": 32, "height": 32})
}

#[tokio::test]
async fn interactive_camera_updates_reuse_lighting() {
    let server = Server::start(subject(), Limits::default()).await;
    let mut ws = connect(&server.base).await;
    let light = json!([{"kind": "point", "position": [2.0, 3.0, 2.0], "intensity": [16.0, 16.0, 16.0]}]);
    ws.send(Message::text(json!({"seq": 1, "camera": camera_at(0.0), "lights": light}).to_string())).await.unwrap();
    assert_eq!(next_frame(&mut ws).await.0, 1);
    let after_light = server.info().await.relight_evaluations;
    assert_eq!(after_light, 1);

    for seq in 2..5u64 {
        ws.send(Message::text(json!({"seq": seq, "camera": camera_at(seq as f64 * 0.3)}).to_string())).await.unwrap();
        assert_eq!(next_frame(&mut ws).await.0, seq);
    }
    assert_eq!(server.info().await.relight_evaluations, after_light);

    let moved = json!([{"kind": "point", "position": [-2.0, 3.0, 2.0], "intensity": [16.0, 16.0, 16.0]}]);
    ws.send(Message::text(json!({"seq": 5, "lights": moved}).to_string())).await.unwrap();
    assert_eq!(next_frame(&mut ws).await.0, 5);
    assert_eq!(server.info().await.relight_evaluations, after_light + 1);

    // The streamed frame matches a one-shot render of the same state.
    let (_, frame) = {
        ws.send(Message::text(json!({"seq": 6, "mask": "indirect"}).to_string())).await.unwrap();
        next_frame(&mut ws).await
    };
    let body = json!({"camera": camera_at(4.0 * 0.3), "lights": moved, "mask": "indirect"});
    let oneshot = post(&server.base, &body).await.bytes().await.unwrap();
    assert_eq!(frame, oneshot.to_vec());
    ws.close(None).await.unwrap();
    server.shutdown().await;
}

#[tokio::test]
async fn interactive_bursts_coalesce_to_latest() {
    let server = Server::start(random_subject(400, 5).cast(), Limits::default()).await;
    let mut ws = connect(&server.base).await;
    let k = 12u64;
    for seq in 1..=k {
        let lights = json!([{"kind": "point", "position": [seq as f64 * 0.2, 3.0, 2.0], "intensity": [16.0, 16.0, 16.0]}]);
        let update = json!({"seq": seq, "camera": camera_at(0.0), "lights": lights});
        ws.send(Message::text(update.to_string())).await.unwrap();
    }
    let mut seqs = Vec::new();
    loop {
        let (seq, _) = next_frame(&mut ws).await;
        seqs.push(seq);
        if seq == k {
            break;
        }
    }
    assert!(!seqs.is_empty() && seqs.len() as u64 <= k, "{seqs:?}");
    assert!(seqs.windows(2).all(|w| w[0] < w[1]), "{seqs:?}");
    // Nothing further arrives once the final state has been delivered.
    let extra = tokio::time::timeout(Duration::from_millis(300), ws.next()).await;
    assert!(extra.is_err(), "unexpected extra message");
    server.shutdown().await;
}

#[tokio::test]
async fn interactive_reports_bad_updates_without_dropping_session() {
    let server = Server::start(subject(), Limits::default()).await;
    let mut ws = connect(&server.base).await;
    ws.send(Message::text(json!({"seq": 1, "mask": "full"}).to_string())).await.unwrap();
    let msg = ws.next().await.unwrap().unwrap();
    let err: serde_json::Value = serde_json::from_str(msg.to_text().unwrap()).unwrap();
    assert_eq!(err["error"], "missing_camera");
    assert_eq!(err["seq"], 1);
    ws.send(Message::text("nonsense")).await.unwrap();
    let msg = ws.next().await.unwrap().unwrap();
    let err: serde_json::Value = serde_json::from_str(msg.to_text().unwrap()).unwrap();
    assert_eq!(err["error"], "malformed_update");
    ws.send(Message::text(json!({"seq": 2, "camera": camera_at(0.0)}).to_string())).await.unwrap();
    assert_eq!(next_frame(&mut ws).await.0, 2);
    server.shutdown().await;
}

#[tokio::test]
async fn shutdown_closes_open_sessions() {
    let server = Server::start(subject(), Limits::default()).await;
    let mut ws = connect(&server.base).await;
    ws.send(Message::text(json!({"seq": 1, "camera": camera_at(0.0)}).to_string())).await.unwrap();
    next_frame(&mut ws).await;
    server.shutdown().await;
    let end = tokio::time::timeout(Duration::from_secs(5), async {
        while let Some(Ok(m)) = ws.next().await {
            if m.is_close() {
                break;
            }
        }
    })
    .await;
    assert!(end.is_ok());
}
