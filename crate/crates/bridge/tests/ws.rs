use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tileil_bridge::protocol::{ErrorCode, Role};
use tileil_bridge::{decode_server, serve, BridgeError, ServeConfig, ServerMsg};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn ephemeral() -> ServeConfig {
    ServeConfig { addr: SocketAddr::from(([127, 0, 0, 1], 0)), ..ServeConfig::default() }
}

async fn connect(addr: SocketAddr) -> Ws {
    connect_async(format!("ws://{addr}/ws")).await.expect("websocket handshake").0
}

async fn next_msg(ws: &mut Ws) -> ServerMsg {
    loop {
        let frame = tokio::time::timeout(Duration::from_secs(5), ws.next())
            .await
            .expect("server went quiet")
            .expect("stream ended")
            .expect("websocket error");
        if let Message::Text(t) = frame {
            return decode_server(&t).expect("server frames are valid TELEOP1");
        }
    }
}

/// Skips ticking state frames until `pred` matches.
async fn wait_for(ws: &mut Ws, pred: impl Fn(&ServerMsg) -> bool) -> ServerMsg {
    for _ in 0..500 {
        let m = next_msg(ws).await;
        if pred(&m) {
            return m;
        }
    }
    panic!("expected frame never arrived");
}

async fn send(ws: &mut Ws, text: &str) {
    ws.send(Message::Text(text.into())).await.unwrap();
}

#[tokio::test]
async fn driver_reset_broadcasts_step_zero() {
    let server = serve(ephemeral()).await.unwrap();
    let mut ws = connect(server.addr).await;
    assert!(matches!(next_msg(&mut ws).await, ServerMsg::Hello { role: Role::Driver, .. }));
    assert!(matches!(next_msg(&mut ws).await, ServerMsg::State(_)));
    send(&mut ws, r#"{"v":"TELEOP1","type":"reset","seed":42}"#).await;
    let m = wait_for(&mut ws, |m| matches!(m, ServerMsg::State(s) if s.step == 0)).await;
    let ServerMsg::State(s) = m else { unreachable!() };
    assert!(!s.done && !s.attached);
    assert_eq!(s.reward, 0.0);
    let session = server.shutdown().await;
    let mut expected = tileil::tilesim::TileEnv::new(Default::default());
    expected.reset(42);
    assert_eq!(session.env().state().tile, expected.state().tile);
}

#[tokio::test]
async fn second_client_watches_only() {
    let server = serve(ephemeral()).await.unwrap();
    let mut driver = connect(server.addr).await;
    assert!(matches!(next_msg(&mut driver).await, ServerMsg::Hello { role: Role::Driver, .. }));
    let mut viewer = connect(server.addr).await;
    assert!(matches!(next_msg(&mut viewer).await, ServerMsg::Hello { role: Role::Viewer, .. }));
    send(&mut viewer, r#"{"v":"TELEOP1","type":"reset","seed":1}"#).await;
    wait_for(&mut viewer, |m| matches!(m, ServerMsg::Error { code: ErrorCode::ViewOnly, .. })).await;
    // Viewers still receive the simulation stream.
    wait_for(&mut viewer, |m| matches!(m, ServerMsg::State(s) if s.step > 0)).await;

    drop(driver);
    wait_for(&mut viewer, |m| matches!(m, ServerMsg::Hello { role: Role::Driver, .. })).await;
    server.shutdown().await;
}

#[tokio::test]
async fn bad_frames_get_errors_and_keep_the_connection() {
    let server = serve(ephemeral()).await.unwrap();
    let mut ws = connect(server.addr).await;
    send(&mut ws, "{not json").await;
    wait_for(&mut ws, |m| matches!(m, ServerMsg::Error { code: ErrorCode::Malformed, .. })).await;
    send(&mut ws, r#"{"v":"TELEOP0","type":"reset","seed":1}"#).await;
    wait_for(&mut ws, |m| matches!(m, ServerMsg::Error { code: ErrorCode::Version, .. })).await;
    send(&mut ws, r#"{"v":"TELEOP1","type":"warp"}"#).await;
    wait_for(&mut ws, |m| matches!(m, ServerMsg::Error { code: ErrorCode::UnknownType, .. })).await;
    send(&mut ws, r#"{"v":"TELEOP1","type":"reset","seed":3}"#).await;
    wait_for(&mut ws, |m| matches!(m, ServerMsg::State(s) if s.step == 0)).await;
    server.shutdown().await;
}

#[tokio::test]
async fn commands_move_the_arm() {
    let server = serve(ephemeral()).await.unwrap();
    let mut ws = connect(server.addr).await;
    let ServerMsg::State(start) = wait_for(&mut ws, |m| matches!(m, ServerMsg::State(_))).await else {
        unreachable!()
    };
    for _ in 0..5 {
        send(&mut ws, r#"{"v":"TELEOP1","type":"cmd","target_delta":[0,0,0.01],"rot_delta":[0,0,0],"gesture":"hold"}"#)
            .await;
        tokio::time::sleep(Duration::from_millis(60)).await;
    }
    let m = wait_for(&mut ws, |m| {
        matches!(m, ServerMsg::State(s) if s.effector_pose.position[2] > start.effector_pose.position[2] + 0.01)
    })
    .await;
    assert!(matches!(m, ServerMsg::State(_)));
    server.shutdown().await;
}

#[tokio::test]
async fn index_page_is_served() {
    let server = serve(ephemeral()).await.unwrap();
    let mut tcp = TcpStream::connect(server.addr).await.unwrap();
    tcp.write_all(b"GET / HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").await.unwrap();
    let mut body = String::new();
    tcp.read_to_string(&mut body).await.unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.contains("<html") && body.contains("TELEOP1"));
    server.shutdown().await;
}

#[tokio::test]
async fn occupied_port_is_reported() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = held.local_addr().unwrap();
    let cfg = ServeConfig { addr, ..ServeConfig::default() };
    match serve(cfg).await {
        Err(BridgeError::PortInUse(a)) => assert_eq!(a, addr),
        Err(e) => panic!("wrong error {e}"),
        Ok(_) => panic!("bound an occupied port"),
    }
}
