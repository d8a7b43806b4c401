use std::sync::Arc;

use labnet_core::alert::{AlertEngine, HttpPoster, Notifier};
use labnet_core::api::{Api, ApiError, ApiRequest, ApiServer, QueryDoc, WriteReport};
use labnet_core::sink::HttpSink;
use labnet_core::{DataPoint, ManualClock, PointSink, Store};
use parking_lot::Mutex;
use serde_json::Value;

const T0: i64 = 1_600_000_000_000_000_000;

struct NoPost;

impl HttpPoster for NoPost {
    fn post_json(&self, _: &str, _: &str) -> Result<u16, String> {
        Ok(200)
    }
}

fn api() -> (tempfile::TempDir, Api) {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path()).unwrap());
    let clock = Arc::new(ManualClock::new(T0 + 3_600_000_000_000));
    (dir, Api::new(store, clock))
}

fn write(api: &Api, body: &str) -> labnet_core::api::ApiResponse {
    api.handle(&ApiRequest::new("POST", "/write").body(body))
}

fn get(api: &Api, url: &str) -> labnet_core::api::ApiResponse {
    api.handle(&ApiRequest::new("GET", url))
}

fn error_of(resp: &labnet_core::api::ApiResponse) -> ApiError {
    serde_json::from_slice(&resp.body).expect("error body is JSON")
}

#[test]
fn write_then_query_round_trip() {
    let (_d, api) = api();
    let body = format!(
        "temperature,RoomID=Lab03,DevID=Dev01 T1=21.5 {T0}\n\
         # comment\n\n\
         temperature,RoomID=Lab03,DevID=Dev01 T1=21.7 {}\n",
        T0 + 1_000_000_000
    );
    let r = write(&api, &body);
    assert_eq!(r.status, 204, "{}", r.body_str());
    assert!(r.headers.contains(&("X-Labnet-Accepted".into(), "2".into())));

    let r = get(&api, "/query?measurement=temperature&tag.RoomID=Lab03&field=T1");
    assert_eq!(r.status, 200);
    let doc: QueryDoc = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(doc.frames.len(), 1);
    let f = &doc.frames[0];
    assert_eq!(f.time, vec![T0, T0 + 1_000_000_000]);
    assert_eq!(f.value, vec![21.5, 21.7]);
    assert_eq!(f.tags["DevID"], "Dev01");

    let r = get(&api, "/query?measurement=temperature&tag.RoomID=Lab04");
    let doc: QueryDoc = serde_json::from_slice(&r.body).unwrap();
    assert!(doc.frames.is_empty());
}

#[test]
fn rfc3339_bounds_and_aggregation() {
    let (_d, api) = api();
    let minute = T0 + 20_000_000_000;
    let mut body = String::new();
    for i in 0..120 {
        body.push_str(&format!("pressure,RoomID=Lab01 P1={} {}\n", i as f64, minute + i * 1_000_000_000));
    }
    assert_eq!(write(&api, &body).status, 204);
    let start = chrono::DateTime::from_timestamp_nanos(minute).to_rfc3339();
    let url = format!(
        "/query?measurement=pressure&start={}&agg=mean&bucket_s=60",
        form_encode(&start)
    );
    let r = get(&api, &url);
    assert_eq!(r.status, 200, "{}", r.body_str());
    let doc: QueryDoc = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(doc.frames[0].value.len(), 2);
    assert_eq!(doc.frames[0].value[0], 29.5);
}

fn form_encode(s: &str) -> String {
    s.replace('+', "%2B").replace(':', "%3A")
}

#[test]
fn partial_write_reports_rejected_lines() {
    let (_d, api) = api();
    let body = format!("a,RoomID=L1 x=1 {T0}\nnot a line\na,RoomID=L1 x=2 {}\n", T0 + 1);
    let r = write(&api, &body);
    assert_eq!(r.status, 200);
    let rep: WriteReport = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(rep.accepted, 2);
    assert_eq!(rep.rejected.len(), 1);
    assert_eq!(rep.rejected[0].line, 2);
}

#[test]
fn fully_rejected_write_is_400_with_position() {
    let (_d, api) = api();
    let r = write(&api, "\nbad line here\n");
    assert_eq!(r.status, 400);
    let e = error_of(&r);
    assert_eq!(e.code, "invalid_line");
    assert_eq!(e.line, Some(2));
}

#[test]
fn oversize_and_non_utf8_bodies() {
    let (_d, api) = api();
    let big = vec![b'a'; labnet_core::api::MAX_BODY_BYTES + 1];
    assert_eq!(api.handle(&ApiRequest::new("POST", "/write").body(big)).status, 413);
    let r = api.handle(&ApiRequest::new("POST", "/write").body(vec![0xff, 0xfe]));
    assert_eq!(r.status, 400);
    assert_eq!(error_of(&r).code, "invalid_encoding");
}

#[test]
fn csv_output_single_and_multi_series() {
    let (_d, api) = api();
    let body = format!("t,RoomID=A v=1 {T0}\nt,RoomID=B v=2 {T0}\n");
    write(&api, &body);
    let r = get(&api, "/query?measurement=t&tag.RoomID=A&format=csv");
    assert_eq!(r.content_type.as_deref(), Some("text/csv"));
    assert_eq!(r.body_str(), format!("time,value\n{T0},1\n"));
    let r = api.handle(&ApiRequest::new("GET", "/query?measurement=t").header("Accept", "text/csv"));
    assert_eq!(r.body_str(), format!("series,time,value\n\"t,RoomID=A v\",{T0},1\n\"t,RoomID=B v\",{T0},2\n"));
}

#[test]
fn bad_queries_get_json_errors() {
    let (_d, api) = api();
    for url in [
        "/query",
        "/query?measurement=t&agg=mean",
        "/query?measurement=t&agg=median&bucket_s=1",
        "/query?measurement=t&start=yesterday",
        "/query?measurement=t&bogus=1",
        "/query?measurement=t&start=10&end=5",
    ] {
        let r = get(&api, url);
        assert_eq!(r.status, 400, "{url}");
        assert_eq!(error_of(&r).code, "invalid_query", "{url}");
    }
    let r = get(&api, "/nowhere");
    assert_eq!(r.status, 404);
    assert_eq!(error_of(&r).status, 404);
    assert_eq!(api.handle(&ApiRequest::new("DELETE", "/write")).status, 405);
}

#[test]
fn health_counts_requests() {
    let (_d, api) = api();
    write(&api, &format!("a,RoomID=L1 x=1 {T0}\n"));
    get(&api, "/query?measurement=a");
    get(&api, "/query?measurement=a");
    let r = get(&api, "/health");
    let h: Value = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(h["status"], "ok");
    assert_eq!(h["writes"], 1);
    assert_eq!(h["lines_accepted"], 1);
    assert_eq!(h["queries"], 2);
    assert_eq!(h["storage"]["series"], 1);
    assert!(h["collector"].is_null());
}

#[test]
fn alert_rule_crud() {
    let (_d, api) = api();
    let engine = Arc::new(Mutex::new(AlertEngine::new(Notifier::new(Arc::new(NoPost)))));
    let api = api.with_engine(engine.clone());
    let rule = r#"{"selector": {"measurement": "temperature", "tags": {"RoomID": "Lab03"}, "field": "T1"},
                   "kind": "threshold", "comparator": ">", "limit": 30}"#;
    let r = api.handle(&ApiRequest::new("POST", "/alerts").body(rule));
    assert_eq!(r.status, 201, "{}", r.body_str());
    let created: Value = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(created["id"], "rule-1");

    let with_id = rule.replacen('{', r#"{"id": "rule-1", "#, 1);
    assert_eq!(api.handle(&ApiRequest::new("POST", "/alerts").body(with_id)).status, 409);

    let list: Value = serde_json::from_slice(&get(&api, "/alerts").body).unwrap();
    assert_eq!(list.as_array().unwrap().len(), 1);
    assert_eq!(list[0]["firing"], false);

    let updated = rule.replace("30", "25");
    let r = api.handle(&ApiRequest::new("PUT", "/alerts/rule-1").body(updated));
    assert_eq!(r.status, 200);
    let got: Value = serde_json::from_slice(&get(&api, "/alerts/rule-1").body).unwrap();
    assert_eq!(got["limit"], 25.0);

    assert_eq!(api.handle(&ApiRequest::new("PUT", "/alerts/rule-9").body(rule)).status, 404);
    let r = api.handle(&ApiRequest::new("POST", "/alerts").body("{\"selector\": 3}"));
    assert_eq!(r.status, 400);
    assert_eq!(error_of(&r).code, "invalid_json");
    let r = api.handle(&ApiRequest::new("POST", "/alerts").body(rule.replace("30", "\"x\"")));
    assert_eq!(r.status, 400);

    assert_eq!(api.handle(&ApiRequest::new("DELETE", "/alerts/rule-1")).status, 204);
    assert_eq!(api.handle(&ApiRequest::new("DELETE", "/alerts/rule-1")).status, 404);
    let events: Value = serde_json::from_slice(&get(&api, "/events?since=0").body).unwrap();
    assert!(events.as_array().unwrap().is_empty());
}

#[test]
fn dashboard_crud() {
    let (_d, api) = api();
    let layout = r#"{"name": "Lab03", "panels": [{"title": "T", "queries": [{"measurement": "temperature"}]}]}"#;
    let r = api.handle(&ApiRequest::new("POST", "/dashboards").body(layout));
    assert_eq!(r.status, 201);
    let d: Value = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(d["id"], "dash-1");
    assert_eq!(get(&api, "/dashboards/dash-1").status, 200);
    let r = api.handle(&ApiRequest::new("PUT", "/dashboards/dash-1").body(layout.replace("Lab03", "Lab04")));
    assert_eq!(r.status, 200);
    let all: Value = serde_json::from_slice(&get(&api, "/dashboards").body).unwrap();
    assert_eq!(all[0]["name"], "Lab04");
    let r = api.handle(&ApiRequest::new("POST", "/dashboards").body(r#"{"name": ""}"#));
    assert_eq!(error_of(&r).code, "invalid_dashboard");
    assert_eq!(api.handle(&ApiRequest::new("DELETE", "/dashboards/dash-1")).status, 204);
    assert_eq!(get(&api, "/dashboards/dash-1").status, 404);
}

#[test]
fn ui_assets_and_traversal() {
    let (_d, api) = api();
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("app.js"), "console.log(1)").unwrap();
    let api = api.with_ui_dir(Some(ui.path().to_path_buf()));
    let r = get(&api, "/ui/app.js");
    assert_eq!(r.status, 200);
    assert_eq!(r.content_type.as_deref(), Some("text/javascript"));
    let r = get(&api, "/ui/");
    assert_eq!(r.status, 200);
    assert!(r.body_str().contains("labnet"));
    assert_eq!(get(&api, "/ui/../Cargo.toml").status, 404);
    assert_eq!(get(&api, "/ui/%2e%2e/x").status, 404);
}

#[test]
fn bearer_token_guards_everything_but_health_and_ui() {
    let (_d, api) = api();
    let api = api.with_token(Some("s3cret".into()));
    assert_eq!(get(&api, "/health").status, 200);
    assert_eq!(get(&api, "/ui/").status, 200);
    let r = get(&api, "/query?measurement=a");
    assert_eq!(r.status, 401);
    assert_eq!(error_of(&r).code, "unauthorized");
    let r = api.handle(&ApiRequest::new("GET", "/query?measurement=a").header("Authorization", "Bearer s3cret"));
    assert_eq!(r.status, 200);
}

#[test]
fn http_server_and_remote_sink() {
    let (_d, api) = api();
    let store = api.store().clone();
    let server = ApiServer::start(Arc::new(api.with_token(Some("tok".into()))), "127.0.0.1:0", 2).unwrap();
    let base = format!("http://{}", server.local_addr());
    let sink = HttpSink::new(&base, Some("tok".into()), std::time::Duration::from_secs(5));
    let points: Vec<DataPoint> = (0..5)
        .map(|i| DataPoint::new("humidity").tag("RoomID", "Lab05").field("H1", 40.0 + i as f64).at(T0 + i))
        .collect();
    assert_eq!(sink.write_points(&points).unwrap(), 5);
    assert_eq!(store.stats().points_written, 5);

    let unauth = HttpSink::new(&base, None, std::time::Duration::from_secs(5));
    assert!(unauth.write_points(&points).is_err());

    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let mut resp = agent
        .get(&format!("{base}/query?measurement=humidity&format=csv"))
        .header("Authorization", "Bearer tok")
        .call()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 200);
    let text = resp.body_mut().read_to_string().unwrap();
    assert_eq!(text.lines().count(), 6);
    let mut resp = agent
        .get(&format!("{base}/missing"))
        .header("Authorization", "Bearer tok")
        .call()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 404);
    let e: ApiError = serde_json::from_str(&resp.body_mut().read_to_string().unwrap()).unwrap();
    assert_eq!(e.code, "not_found");
    server.shutdown();
}
