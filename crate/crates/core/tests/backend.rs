use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use unroll_core::backend_adapter::{health_check, register_remote, EndpointSpec, InvokeRequest};
use unroll_core::evalharness::{SuiteKind, SuiteSpec};
use unroll_core::policy::{Engine, Pipeline, PolicyConfig, Step};
use unroll_core::primitives::{builtin_registry, NoiseSpec, PrimitiveDescriptor};
use unroll_core::workspace::{replay, Modality, Origin, Payload, StepStatus, Trace};

/// Serves a fixed body on every path and remembers request bodies.
fn mock_server(body: String) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut req = vec![0u8; len];
            let _ = reader.read_exact(&mut req);
            log.lock().unwrap().push(String::from_utf8_lossy(&req).into_owned());
            let resp = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    (format!("http://{addr}"), seen)
}

fn text_body(modality: &str, text: &str, cost: usize) -> String {
    serde_json::json!({
        "version": 1,
        "items": [{"modality": modality, "payload": {"kind": "text", "data": text}, "cost": cost}]
    })
    .to_string()
}

fn remote_engine(base: &str) -> Engine {
    let ep = EndpointSpec::new(base, Duration::from_secs(5));
    let desc = PrimitiveDescriptor {
        id: "remote_caption".into(),
        produces: Modality::Text,
        expected_cost: 4,
        noise: NoiseSpec::none(),
    };
    Engine::new(register_remote(&builtin_registry(), &ep, desc).unwrap())
}

fn task() -> unroll_core::evalharness::SuiteTask {
    SuiteSpec::new(SuiteKind::Counting, 3, 1).build().unwrap().tasks.remove(0)
}

#[test]
fn remote_text_item_lands_in_workspace() {
    let (base, seen) = mock_server(text_body("text", "three objects on the floor", 5));
    let engine = remote_engine(&base);
    let t = task();
    let p = Pipeline::new("remote", vec![Step::new("remote_caption")]);
    let run = engine.run_unroll(&t.input(), &t.scene, &p, &PolicyConfig::default()).unwrap();
    assert_eq!(run.workspace.len(), 1);
    assert_eq!(run.workspace.items()[0].payload(), &Payload::Text("three objects on the floor".into()));
    assert_eq!(run.trace.records[0].origin, Origin::Remote);
    let req: InvokeRequest = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
    assert_eq!(req.primitive_id, "remote_caption");
    assert_eq!(req.task.id, t.spec.id);
}

#[test]
fn malformed_response_skips_step() {
    let (base, _) = mock_server(text_body("smell", "three objects", 2));
    let engine = remote_engine(&base);
    let t = task();
    let p = Pipeline::new("remote", vec![Step::new("remote_caption"), Step::new("text_think_short")]);
    let run = engine.run_unroll(&t.input(), &t.scene, &p, &PolicyConfig::default()).unwrap();
    match &run.trace.records[0].status {
        StepStatus::Failed(cause) => assert!(cause.contains("schema violation"), "{cause}"),
        s => panic!("expected a failed step, got {s:?}"),
    }
    assert!(run.trace.records[1].status.is_applied());
    assert_eq!(run.skipped_steps(), 1);
}

#[test]
fn remote_trace_replays_without_the_endpoint() {
    let (base, seen) = mock_server(text_body("text", "two cubes and a sphere", 5));
    let engine = remote_engine(&base);
    let t = task();
    let p = Pipeline::new("remote", vec![Step::new("remote_caption"), Step::new("text_think_short")]);
    let run = engine.run_unroll(&t.input(), &t.scene, &p, &PolicyConfig::default()).unwrap();
    let calls = seen.lock().unwrap().len();
    let back = Trace::from_bytes(&run.trace.to_bytes()).unwrap();
    let ws = replay(&back).unwrap();
    assert_eq!(ws.to_bytes(), run.workspace.to_bytes());
    assert_eq!(seen.lock().unwrap().len(), calls);
}

#[test]
fn unreachable_endpoint_is_unhealthy_within_timeout() {
    // Bind then drop so the port is closed.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let ep = EndpointSpec::new(&format!("http://127.0.0.1:{port}"), Duration::from_millis(500));
    let started = Instant::now();
    let h = health_check(&ep);
    assert!(!h.healthy);
    assert!(started.elapsed() < Duration::from_millis(1500));
    let bad = EndpointSpec::new("ftp://example", Duration::from_millis(500));
    assert!(!health_check(&bad).healthy);
}

#[test]
fn healthy_mock_reports_ok() {
    let (base, _) = mock_server("{}".into());
    let ep = EndpointSpec::new(&base, Duration::from_secs(2));
    for _ in 0..3 {
        let h = health_check(&ep);
        assert!(h.healthy, "{}", h.detail);
    }
}
