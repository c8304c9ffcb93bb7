use serde_json::{json, Value};
use std::collections::HashMap;
use tspsense::solver::solve_exact;
use tspsense::{generate_instance, SolveConstraints};
use tspsense_service::{router, AppState, ServiceConfig};

const SQUARE: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];

async fn spawn(config: ServiceConfig) -> String {
    let state = AppState::new(config, HashMap::new()).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    format!("http://{addr}")
}

struct Api {
    base: String,
    http: reqwest::Client,
}

impl Api {
    async fn new() -> Self {
        Self::with(ServiceConfig::default()).await
    }

    async fn with(config: ServiceConfig) -> Self {
        Api { base: spawn(config).await, http: reqwest::Client::new() }
    }

    async fn send(&self, req: reqwest::RequestBuilder) -> (u16, String) {
        let resp = req.send().await.unwrap();
        (resp.status().as_u16(), resp.text().await.unwrap())
    }

    async fn post(&self, path: &str, body: Value) -> (u16, String) {
        self.send(self.http.post(format!("{}{path}", self.base)).json(&body)).await
    }

    async fn get(&self, path: &str) -> (u16, String) {
        self.send(self.http.get(format!("{}{path}", self.base))).await
    }

    async fn delete(&self, path: &str) -> (u16, String) {
        self.send(self.http.delete(format!("{}{path}", self.base))).await
    }

    async fn create(&self, body: Value) -> Value {
        let (status, text) = self.post("/api/instances", body).await;
        assert_eq!(status, 200, "{text}");
        serde_json::from_str(&text).unwrap()
    }

    async fn scores(&self, sid: &str, task: &str, method: &str) -> Value {
        let (status, text) = self.get(&format!("/api/sessions/{sid}/sensitivity?task={task}&method={method}")).await;
        assert_eq!(status, 200, "{text}");
        serde_json::from_str(&text).unwrap()
    }
}

fn all_close(v: &Value, expected: f64) -> bool {
    v.as_array().unwrap().iter().all(|x| (x.as_f64().unwrap() - expected).abs() < 1e-3)
}

#[tokio::test]
async fn unit_square_numbers_through_the_api() {
    let api = Api::new().await;
    let created = api.create(json!({ "coords": SQUARE })).await;
    assert_eq!(created["length"], json!(400.0));
    assert_eq!(created["exact"], json!(true));
    assert_eq!(created["instance"]["n"], json!(4));
    let sid = created["session_id"].as_str().unwrap();

    let removal = api.scores(sid, "remove", "exact").await;
    assert_eq!(removal["candidates"], json!([0, 1, 2, 3]));
    assert!(all_close(&removal["scores"], 14.6447));
    assert!(all_close(&removal["deltas_pct"], 14.6447));
    assert_eq!(removal["solve_seconds"].as_array().unwrap().len(), 4);
    assert!(all_close(&api.scores(sid, "forbid", "exact").await["scores"], 20.7107));
    assert!(all_close(&api.scores(sid, "remove", "splice").await["scores"], 14.6447));
    assert!(all_close(&api.scores(sid, "forbid", "detour").await["scores"], 141.4214));
    assert!(all_close(&api.scores(sid, "forbid", "2opt").await["scores"], 82.8427));
    assert!(api.scores(sid, "remove", "nn").await["deltas_pct"].is_null());

    let (status, _) = api.get(&format!("/api/sessions/{sid}/sensitivity?task=remove&method=probe.x")).await;
    assert_eq!(status, 409);
    let (status, _) = api.get(&format!("/api/sessions/{sid}/sensitivity?task=remove&method=detour")).await;
    assert_eq!(status, 422);
    let (status, _) = api.get(&format!("/api/sessions/{sid}/sensitivity?task=sideways")).await;
    assert_eq!(status, 422);
    let (status, body) = api.get("/api/sessions/nope/sensitivity?task=remove&method=exact").await;
    assert_eq!(status, 404);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["status"], json!(404));
}

#[tokio::test]
async fn apply_undo_apply_is_byte_identical() {
    let api = Api::new().await;
    let sid = api.create(json!({ "coords": SQUARE })).await["session_id"].as_str().unwrap().to_string();
    let apply = format!("/api/sessions/{sid}/apply");

    let (status, first) = api.post(&apply, json!({ "action": "remove", "node": 0 })).await;
    assert_eq!(status, 200, "{first}");
    let r: Value = serde_json::from_str(&first).unwrap();
    assert!((r["length"].as_f64().unwrap() - 341.4214).abs() < 1e-3);
    assert!((r["delta_pct_vs_base"].as_f64().unwrap() + 14.6447).abs() < 1e-3);
    assert!((r["delta_pct_vs_previous"].as_f64().unwrap() + 14.6447).abs() < 1e-3);
    assert_eq!(r["exact"], json!(true));
    let scores_after = api.get(&format!("/api/sessions/{sid}/sensitivity?task=remove&method=splice")).await;

    let (status, undone) = api.delete(&format!("/api/sessions/{sid}/actions/last")).await;
    assert_eq!(status, 200);
    let u: Value = serde_json::from_str(&undone).unwrap();
    assert_eq!((u["length"].as_f64(), u["cache_hit"].as_bool(), u["step"].as_u64()), (Some(400.0), Some(true), Some(0)));

    let (status, second) = api.post(&apply, json!({ "action": "remove", "node": 0 })).await;
    assert_eq!(status, 200);
    assert_eq!(first, second);
    assert_eq!(api.get(&format!("/api/sessions/{sid}/sensitivity?task=remove&method=splice")).await, scores_after);
}

#[tokio::test]
async fn action_boundaries() {
    let api = Api::new().await;
    let sid = api.create(json!({ "coords": SQUARE })).await["session_id"].as_str().unwrap().to_string();
    let apply = format!("/api/sessions/{sid}/apply");
    let undo = format!("/api/sessions/{sid}/actions/last");

    assert_eq!(api.delete(&undo).await.0, 409);
    assert_eq!(api.post(&apply, json!({ "action": "remove", "node": 7 })).await.0, 422);
    assert_eq!(api.post(&apply, json!({ "action": "teleport" })).await.0, 422);
    assert_eq!(api.post(&apply, json!({ "action": "remove", "node": 0 })).await.0, 200);
    assert_eq!(api.post(&apply, json!({ "action": "remove", "node": 0 })).await.0, 409);
    assert_eq!(api.post(&apply, json!({ "action": "remove", "node": 1 })).await.0, 422);
    let (status, body) = api.post(&apply, json!({ "action": "forbid", "edge": [1, 2] })).await;
    assert_eq!(status, 409, "{body}");
    assert_eq!(api.post(&apply, json!({ "action": "forbid", "edge": [0, 2] })).await.0, 409);

    let big = api.create(json!({ "n": 8, "seed": 3 })).await;
    let sid = big["session_id"].as_str().unwrap();
    let apply = format!("/api/sessions/{sid}/apply");
    assert_eq!(api.post(&apply, json!({ "action": "forbid", "edge": [2, 5] })).await.0, 200);
    assert_eq!(api.post(&apply, json!({ "action": "forbid", "edge": [5, 2] })).await.0, 409);
    assert_eq!(api.post(&apply, json!({ "action": "forbid", "edge": [4, 4] })).await.0, 422);
    assert_eq!(api.post(&apply, json!({ "action": "remove", "node": 5 })).await.0, 409);
}

#[tokio::test]
async fn instance_creation_limits() {
    let api = Api::new().await;
    let c = api.create(json!({ "n": 16, "seed": 1 })).await;
    assert_eq!(c["tour"].as_array().unwrap().len(), 16);
    assert_eq!(c["exact"], json!(true));
    assert!(c["warnings"].as_array().unwrap().is_empty());

    assert_eq!(api.post("/api/instances", json!({ "n": 30, "seed": 1 })).await.0, 413);
    let h = api.create(json!({ "n": 30, "seed": 1, "heuristic": true })).await;
    assert_eq!(h["exact"], json!(false));
    assert_eq!(h["tour"].as_array().unwrap().len(), 30);
    assert_eq!(h["warnings"].as_array().unwrap().len(), 1);

    assert_eq!(api.post("/api/instances", json!({ "n": 3 })).await.0, 422);
    assert_eq!(api.post("/api/instances", json!({})).await.0, 422);
    assert_eq!(api.post("/api/instances", json!({ "coords": [[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [0.0, 1.0]] })).await.0, 422);
    assert_eq!(api.post("/api/instances", json!({ "coords": SQUARE, "n": 4 })).await.0, 422);

    let small_cap = Api::with(ServiceConfig { exact_cap: 6, ..ServiceConfig::default() }).await;
    let w = small_cap.create(json!({ "n": 7, "seed": 2 })).await;
    assert_eq!((w["exact"].as_bool(), w["warnings"].as_array().unwrap().len()), (Some(true), 1));

    let (status, body) = api.get("/api/health").await;
    assert_eq!(status, 200);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["sessions"], json!(2));
}

#[tokio::test]
async fn state_snapshots_and_isolation() {
    let api = Api::new().await;
    let a = api.create(json!({ "coords": SQUARE })).await["session_id"].as_str().unwrap().to_string();
    let b = api.create(json!({ "coords": SQUARE })).await["session_id"].as_str().unwrap().to_string();

    let (status, fresh) = api.get(&format!("/api/sessions/{a}/state")).await;
    assert_eq!(status, 200);
    let fresh: Value = serde_json::from_str(&fresh).unwrap();
    assert_eq!(fresh["actions"], json!([]));
    assert_eq!(fresh["tours"].as_array().unwrap().len(), 1);
    assert_eq!(fresh["scores"], json!([]));

    api.post(&format!("/api/sessions/{a}/apply"), json!({ "action": "remove", "node": 2 })).await;
    api.scores(&a, "remove", "exact").await;
    let first = api.get(&format!("/api/sessions/{a}/state")).await;
    assert_eq!(first, api.get(&format!("/api/sessions/{a}/state")).await);
    let s: Value = serde_json::from_str(&first.1).unwrap();
    let actions = s["actions"].as_array().unwrap();
    assert_eq!(actions.len(), 1);
    assert_eq!((actions[0]["action"].as_str(), actions[0]["node"].as_u64()), (Some("remove"), Some(2)));
    assert!(chrono::DateTime::parse_from_rfc3339(actions[0]["applied_at"].as_str().unwrap()).is_ok());
    assert_eq!(s["constraints"]["removed"], json!([2]));
    assert_eq!(s["scores"].as_array().unwrap().len(), 1);
    assert_eq!(s["scores"][0]["method"], json!("exact"));

    let other: Value = serde_json::from_str(&api.get(&format!("/api/sessions/{b}/state")).await.1).unwrap();
    assert_eq!(other["actions"], json!([]));
    assert_eq!(other["current"]["length"], json!(400.0));
    assert_eq!(api.get("/api/sessions/missing/state").await.0, 404);
}

#[tokio::test]
async fn exact_lengths_match_fresh_solves() {
    let api = Api::new().await;
    for seed in 0..4u64 {
        let inst = generate_instance(9, seed).unwrap();
        let sid = api.create(json!({ "n": 9, "seed": seed })).await["session_id"].as_str().unwrap().to_string();
        let mut cons = SolveConstraints::new();
        let actions = [
            (json!({ "action": "remove", "node": (seed as usize) % 9 }), 0),
            (json!({ "action": "forbid", "edge": [(seed as usize + 3) % 9, (seed as usize + 5) % 9] }), 1),
            (json!({ "action": "remove", "node": (seed as usize + 1) % 9 }), 2),
        ];
        for (body, k) in actions {
            let (status, text) = api.post(&format!("/api/sessions/{sid}/apply"), body.clone()).await;
            assert_eq!(status, 200, "{text}");
            cons = match k {
                1 => {
                    let e = body["edge"].as_array().unwrap();
                    cons.forbidding(e[0].as_u64().unwrap() as usize, e[1].as_u64().unwrap() as usize)
                }
                _ => cons.removing(body["node"].as_u64().unwrap() as usize),
            };
            let r: Value = serde_json::from_str(&text).unwrap();
            assert_eq!(r["exact"], json!(true));
            assert_eq!(r["length"].as_f64().unwrap(), solve_exact(&inst, &cons).unwrap().length);
        }
    }
}

#[tokio::test]
async fn journal_replays_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig { journal_dir: Some(dir.path().to_path_buf()), ..ServiceConfig::default() };
    let api = Api::with(config.clone()).await;
    let sid = api.create(json!({ "n": 7, "seed": 11 })).await["session_id"].as_str().unwrap().to_string();
    for node in [1, 4] {
        api.post(&format!("/api/sessions/{sid}/apply"), json!({ "action": "remove", "node": node })).await;
    }
    api.delete(&format!("/api/sessions/{sid}/actions/last")).await;
    let before: Value = serde_json::from_str(&api.get(&format!("/api/sessions/{sid}/state")).await.1).unwrap();

    let restarted = Api::with(config).await;
    let after: Value = serde_json::from_str(&restarted.get(&format!("/api/sessions/{sid}/state")).await.1).unwrap();
    for field in ["actions", "current", "base", "constraints", "instance"] {
        assert_eq!(before[field], after[field], "{field}");
    }
}
