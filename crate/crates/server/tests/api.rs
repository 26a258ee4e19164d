use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use http_body_util::BodyExt;
use poroviz::engine::{decode_pmvb, Ensemble, Query};
use poroviz::metrics::DistanceMatrix;
use poroviz::synth::{generate_ensemble, standard_variants, PhantomLayout};
use poroviz::GridSpec;
use poroviz_server::{parse_query_string, router, PMDM_MEDIA_TYPE};
use tower::ServiceExt;

fn coarse_grid() -> GridSpec {
    GridSpec {
        x_min: 0.025,
        x_max: 2.825,
        y_min: 0.025,
        y_max: 1.225,
        dx: 0.05,
        dy: 0.05,
        ..GridSpec::canonical()
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    ensemble: Arc<Ensemble>,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) =
        generate_ensemble(&standard_variants(3, 1, 5), &PhantomLayout::default(), &coarse_grid(), dir.path()).unwrap();
    Fixture {
        _dir: dir,
        ensemble: Arc::new(Ensemble::load(manifest).unwrap()),
    }
}

async fn get(f: &Fixture, uri: &str, accept: Option<&str>) -> (StatusCode, Option<String>, Vec<u8>) {
    let mut req = Request::builder().uri(uri).header(header::ORIGIN, "http://localhost:5173");
    if let Some(a) = accept {
        req = req.header(header::ACCEPT, a);
    }
    let resp = router(f.ensemble.clone()).oneshot(req.body(Body::empty()).unwrap()).await.unwrap();
    let status = resp.status();
    let ctype = resp.headers().get(header::CONTENT_TYPE).map(|v| v.to_str().unwrap().to_string());
    assert!(resp.headers().contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN), "{uri}: no CORS header");
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, ctype, body)
}

fn json(body: &[u8]) -> serde_json::Value {
    serde_json::from_slice(body).unwrap()
}

#[tokio::test]
async fn ensemble_summary() {
    let f = fixture();
    let (s, ctype, body) = get(&f, "/api/ensemble", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("application/json"));
    let doc = json(&body);
    assert_eq!(doc["runs"].as_array().unwrap().len(), 4);
    assert_eq!(doc["patches_per_run"], 48);
    let (_, _, again) = get(&f, "/api/ensemble", None).await;
    assert_eq!(body, again);
}

#[tokio::test]
async fn projection_is_stable_and_matches_the_engine() {
    let f = fixture();
    let uri = "/api/projection?metric=euclidean&mode=group&runs=sim1,sim2,sim3&seed=4";
    let (s, _, first) = get(&f, uri, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(json(&first)["points"].as_array().unwrap().len(), 3);
    let (_, _, second) = get(&f, uri, None).await;
    assert_eq!(first, second);
    let q = Query::from_params(&parse_query_string(uri.split_once('?').unwrap().1)).unwrap();
    assert_eq!(first, f.ensemble.projection_json(&q).unwrap().into_bytes());
}

#[tokio::test]
async fn projection_errors() {
    let f = fixture();
    let (s, _, body) = get(&f, "/api/projection?mode=group&runs=sim1,exp1", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let err = json(&body);
    assert_eq!(err["code"], "incompatible_runs");
    assert!(err["message"].as_str().unwrap().contains("exp1"));
    let (s, _, body) = get(&f, "/api/projection?metric=cosine", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(json(&body)["param"], "metric");
    let (s, _, _) = get(&f, "/api/projection?mode=group&runs=ghost", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _, _) = get(&f, "/api/projection?algo=tsne&mode=group&runs=sim1,sim2,sim3", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn segmented_queries_admit_experiments() {
    let f = fixture();
    let (s, _, body) = get(&f, "/api/projection?metric=wasserstein&segmented=true&runs=exp1,sim1&mode=group", None).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    assert_eq!(json(&body)["points"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn distances_in_both_encodings() {
    let f = fixture();
    let uri = "/api/distances?mode=group&runs=sim1,sim2,sim3";
    let (s, _, body) = get(&f, uri, None).await;
    assert_eq!(s, StatusCode::OK);
    let doc = json(&body);
    let rows = doc["values"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[i], 0.0);
        for (j, other) in rows.iter().enumerate() {
            assert_eq!(row[j], other[i]);
        }
    }
    let (s, ctype, bin) = get(&f, uri, Some(PMDM_MEDIA_TYPE)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some(PMDM_MEDIA_TYPE));
    assert_eq!(&bin[..4], b"PMDM");
    let (n, values) = DistanceMatrix::decode_pmdm(&bin).unwrap();
    assert_eq!(n, 3);
    assert_eq!(values[1], rows[0][1].as_f64().unwrap());
}

#[tokio::test]
async fn volume_bricks() {
    let f = fixture();
    let g = coarse_grid();
    let (s, ctype, body) = get(&f, "/api/volume/sim1", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("application/x-pmvb"));
    assert_eq!(decode_pmvb(&body).unwrap().dim(), (145, g.ny(), g.nx()));
    let (s, _, body) = get(&f, "/api/volume/sim1?variable=concentration&t0=3&t1=6&downsample=2", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(decode_pmvb(&body).unwrap().dim(), (3, g.ny().div_ceil(2), g.nx().div_ceil(2)));
    let (s, _, body) = get(&f, "/api/volume/exp1", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(decode_pmvb(&body).unwrap().iter().all(|&c| c == 0.0 || c == 1.0 || c == 2.0));
    assert_eq!(get(&f, "/api/volume/sim1?t0=4&t1=4", None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&f, "/api/volume/sim1?x1=9999", None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&f, "/api/volume/ghost", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn timeseries() {
    let f = fixture();
    let (s, _, body) = get(&f, "/api/timeseries/sim1?measurable=dissolved_B", None).await;
    assert_eq!(s, StatusCode::OK);
    let doc = json(&body);
    assert_eq!(doc["values"].as_array().unwrap().len(), 145);
    assert_eq!(doc["flags"][0], "measured");
    let (s, _, body) = get(&f, "/api/timeseries/exp1?measurable=dissolved_B", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(json(&body)["message"].as_str().unwrap().contains("no time series"));
    assert_eq!(get(&f, "/api/timeseries/sim1?measurable=nope", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&f, "/api/timeseries/ghost", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn first_presence() {
    let f = fixture();
    let (s, _, body) = get(&f, "/api/events/first_presence?run=sim1&box=B&channel=co2_presence&threshold=0.001", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(json(&body), serde_json::json!(250.0));
    let (s, _, body) = get(&f, "/api/events/first_presence?run=sim2&box=B", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(json(&body), serde_json::json!(260.0));
    assert_eq!(get(&f, "/api/events/first_presence?run=sim1&box=Z", None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&f, "/api/events/first_presence?run=ghost&box=B", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn unknown_route_is_json_404() {
    let f = fixture();
    let (s, _, body) = get(&f, "/api/nothing", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(json(&body)["code"], "no_route");
}
