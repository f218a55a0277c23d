use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio::time::timeout;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use predator_cli::serve::{start, ServeOptions, ServerHandle, ServerMessage};
use predator_core::sim::{Detector, EpisodeConfig, Pose, PreyBehavior};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn server() -> ServerHandle {
    let config = EpisodeConfig {
        duration_s: 1e9,
        prey: PreyBehavior::Teleop,
        prey_start: Some(Pose::new(2.0, 3.35, 0.0)),
        predator_start: Some(Pose::new(8.0, 1.2, std::f64::consts::PI)),
        predator_active: false,
        stop_on_capture: false,
        ..EpisodeConfig::default()
    };
    let detector = Detector::from_config(&config, None).unwrap();
    start("127.0.0.1:0", ServeOptions::new(config, detector)).await.unwrap()
}

async fn connect(handle: &ServerHandle) -> Ws {
    let url = format!("ws://{}", handle.local_addr());
    tokio_tungstenite::connect_async(url).await.unwrap().0
}

async fn next_state(ws: &mut Ws) -> ServerMessage {
    loop {
        let msg = timeout(Duration::from_secs(5), ws.next())
            .await
            .expect("broadcast within 5 s")
            .expect("stream open")
            .expect("valid frame");
        if let Message::Text(text) = msg {
            let state: ServerMessage = serde_json::from_str(text.as_str()).unwrap();
            assert_eq!(state.kind, "state");
            let total: f64 = state.outputs.iter().sum();
            assert!((total - 1.0).abs() < 1e-6, "outputs sum {total}");
            return state;
        }
    }
}

async fn send(ws: &mut Ws, text: &str) {
    ws.send(Message::text(text.to_string())).await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn prey_advances_then_stops_when_driver_leaves() {
    let handle = server().await;
    let mut driver = connect(&handle).await;
    let mut watcher = connect(&handle).await;
    send(&mut driver, r#"{"type":"prey_cmd","v":1,"w":0}"#).await;

    // Let the command land, then require strict progress on every tick.
    let mut prev = next_state(&mut watcher).await;
    while prev.prey.x <= 2.0 {
        prev = next_state(&mut watcher).await;
    }
    for _ in 0..8 {
        let s = next_state(&mut watcher).await;
        assert!(s.prey.x > prev.prey.x, "{} then {}", prev.prey.x, s.prey.x);
        assert!(s.prey.x - prev.prey.x <= 0.05 + 1e-9, "one tick is 50 ms at 1 m/s");
        assert!(s.t > prev.t);
        prev = s;
    }

    driver.close(None).await.unwrap();
    drop(driver);
    // Motion may finish the tick in flight; after that the prey is still.
    let mut xs = Vec::new();
    for _ in 0..6 {
        xs.push(next_state(&mut watcher).await.prey.x);
    }
    for w in xs[1..].windows(2) {
        assert_eq!(w[0], w[1], "prey still moving after disconnect: {xs:?}");
    }
    handle.shutdown();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn out_of_range_commands_are_clamped() {
    let handle = server().await;
    let mut ws = connect(&handle).await;
    send(&mut ws, r#"{"type":"prey_cmd","v":50,"w":0}"#).await;
    let mut prev = next_state(&mut ws).await;
    while prev.prey.x <= 2.0 {
        prev = next_state(&mut ws).await;
    }
    for _ in 0..4 {
        let s = next_state(&mut ws).await;
        let dx = s.prey.x - prev.prey.x;
        assert!(dx > 0.0 && dx <= 0.1 + 1e-9, "dx {dx}");
        prev = s;
    }
    handle.shutdown();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn last_writer_wins() {
    let handle = server().await;
    let mut a = connect(&handle).await;
    let mut b = connect(&handle).await;
    send(&mut a, r#"{"type":"prey_cmd","v":1,"w":0}"#).await;
    // Sockets are not ordered against each other; wait for a's command to land.
    while next_state(&mut b).await.prey.x <= 2.0 {}
    send(&mut b, r#"{"type":"prey_cmd","v":0,"w":0}"#).await;
    let mut xs = Vec::new();
    for _ in 0..6 {
        xs.push(next_state(&mut b).await.prey.x);
    }
    assert_eq!(xs[4], xs[5], "{xs:?}");
    // b keeps control after a leaves.
    a.close(None).await.unwrap();
    send(&mut b, r#"{"type":"prey_cmd","v":1,"w":0}"#).await;
    let mut last = next_state(&mut b).await.prey.x;
    let mut moved = false;
    for _ in 0..6 {
        let x = next_state(&mut b).await.prey.x;
        moved |= x > last;
        last = x;
    }
    assert!(moved);
    handle.shutdown();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_messages_are_counted_and_ignored() {
    let handle = server().await;
    let mut ws = connect(&handle).await;
    send(&mut ws, "{not json").await;
    send(&mut ws, r#"{"type":"warp","x":3}"#).await;
    ws.send(Message::binary(vec![1u8, 2, 3])).await.unwrap();
    send(&mut ws, r#"{"type":"prey_cmd","v":1,"w":0}"#).await;
    let mut s = next_state(&mut ws).await;
    for _ in 0..40 {
        if handle.errors() == 3 && s.prey.x > 2.0 {
            break;
        }
        s = next_state(&mut ws).await;
    }
    assert_eq!(handle.errors(), 3);
    assert!(s.prey.x > 2.0, "valid command after bad ones still applies");
    handle.shutdown();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pause_and_reset() {
    let handle = server().await;
    let mut ws = connect(&handle).await;
    send(&mut ws, r#"{"type":"pause","paused":true}"#).await;
    next_state(&mut ws).await;
    let a = next_state(&mut ws).await;
    let b = next_state(&mut ws).await;
    assert_eq!(a.t, b.t);

    send(&mut ws, r#"{"type":"pause"}"#).await;
    next_state(&mut ws).await;
    let c = next_state(&mut ws).await;
    assert!(c.t > b.t);

    send(&mut ws, r#"{"type":"prey_cmd","v":1,"w":0}"#).await;
    for _ in 0..4 {
        next_state(&mut ws).await;
    }
    send(&mut ws, r#"{"type":"reset","seed":9}"#).await;
    let mut s = next_state(&mut ws).await;
    for _ in 0..4 {
        if s.t < c.t {
            break;
        }
        s = next_state(&mut ws).await;
    }
    assert!(s.t < c.t, "reset restarts the clock");
    handle.shutdown();
}
