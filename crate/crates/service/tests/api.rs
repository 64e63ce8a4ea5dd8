use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::{Arc, OnceLock};

use base64::Engine;
use contourflow_core::audio::WavEncoding;
use contourflow_core::cfm::{train, FlowModel, TrainConfig};
use contourflow_core::corpus::{generate, CorpusConfig};
use contourflow_core::features::{extract, ControlFeature, ControlSignal};
use contourflow_core::pipeline::{restore_clip, RestoreRequest};
use contourflow_core::AudioClip;
use contourflow_service::{
    decode_wav, serve, ApiRequest, ApiResponse, RestoreReply, Service, ServiceConfig,
    SpectrogramReply, UploadReply, OUTPUT_WAV,
};

fn clips() -> &'static Vec<AudioClip> {
    static CLIPS: OnceLock<Vec<AudioClip>> = OnceLock::new();
    CLIPS.get_or_init(|| {
        let cfg = CorpusConfig {
            n_clips: 3,
            clip_seconds: 1.5,
            seed: 21,
            ..Default::default()
        };
        generate(&cfg)
            .unwrap()
            .into_iter()
            .map(|c| c.clip)
            .collect()
    })
}

/// A few steps of training on a tiny estimator: enough for a valid model.
fn model() -> &'static FlowModel {
    static MODEL: OnceLock<FlowModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let cfg = TrainConfig {
            steps: 5,
            hidden: 8,
            items_per_step: 2,
            variants_per_clip: 1,
            val_items: 4,
            eval_every: 5,
            ..Default::default()
        };
        train(&clips()[..2], &clips()[2..], &cfg).unwrap().0
    })
}

fn service(with_model: bool, max_sessions: usize) -> Service {
    let cfg = ServiceConfig {
        max_sessions,
        ..Default::default()
    };
    Service::new(with_model.then(|| model().clone()), cfg)
}

fn wav_bytes(clip: &AudioClip) -> Vec<u8> {
    clip.to_wav_bytes(WavEncoding::Pcm16).unwrap()
}

fn upload(svc: &Service, clip: &AudioClip) -> UploadReply {
    let r =
        svc.handle(&ApiRequest::new("POST", "/v1/clips").with_body("audio/wav", wav_bytes(clip)));
    assert_eq!(r.status, 201, "{}", String::from_utf8_lossy(&r.body));
    serde_json::from_slice(&r.body).unwrap()
}

fn get(svc: &Service, url: &str) -> ApiResponse {
    svc.handle(&ApiRequest::new("GET", url))
}

fn restore(svc: &Service, id: &str, body: serde_json::Value) -> ApiResponse {
    svc.handle(
        &ApiRequest::new("POST", &format!("/v1/clips/{id}/restore"))
            .with_body("application/json", body.to_string()),
    )
}

#[test]
fn health_reports_checkpoint() {
    let with = service(true, 4);
    let v = get(&with, "/v1/health").json_value().unwrap();
    assert_eq!(v["checkpoint_loaded"], true);
    assert_eq!(v["checkpoint_id"].as_str(), with.checkpoint_id());
    assert_eq!(with.checkpoint_id().unwrap().len(), 16);
    let without = get(&service(false, 4), "/v1/health").json_value().unwrap();
    assert_eq!(without["checkpoint_loaded"], false);
    assert!(without["checkpoint_id"].is_null());
}

#[test]
fn upload_then_spectrogram_shape() {
    let svc = service(false, 4);
    let clip = &clips()[0];
    let up = upload(&svc, clip);
    assert_eq!(up.sample_rate, 44_100);
    assert!((up.duration - 1.5).abs() < 1e-9);
    let n_frames = 1 + clip.len() / 512;
    assert_eq!(up.n_frames, n_frames);

    let r = get(&svc, &format!("/v1/clips/{}/spectrogram", up.session_id));
    assert_eq!(r.status, 200);
    let spec: SpectrogramReply = serde_json::from_slice(&r.body).unwrap();
    assert_eq!((spec.n_frames, spec.n_bins), (n_frames, 1025));
    let data = base64::engine::general_purpose::STANDARD
        .decode(&spec.data)
        .unwrap();
    assert_eq!(data.len(), n_frames * 1025);
    assert_eq!(*data.iter().max().unwrap(), 255);
    assert_eq!(spec.db_floor, -80.0);
    assert!((spec.bin_hz - 44_100.0 / 2048.0).abs() < 1e-12);

    let r = get(
        &svc,
        &format!("/v1/clips/{}/spectrogram?db_floor=-40", up.session_id),
    );
    let spec: SpectrogramReply = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(spec.db_floor, -40.0);
    assert_eq!(
        get(
            &svc,
            &format!("/v1/clips/{}/spectrogram?db_floor=abc", up.session_id)
        )
        .status,
        400
    );
}

#[test]
fn multipart_upload() {
    let svc = service(false, 4);
    let mut body = b"--XyZ\r\nContent-Disposition: form-data; name=\"file\"; filename=\"a.wav\"\r\nContent-Type: audio/wav\r\n\r\n".to_vec();
    body.extend(wav_bytes(&clips()[1]));
    body.extend(b"\r\n--XyZ--\r\n");
    let r = svc.handle(
        &ApiRequest::new("POST", "/v1/clips").with_body("multipart/form-data; boundary=XyZ", body),
    );
    assert_eq!(r.status, 201);
}

#[test]
fn bad_uploads() {
    let svc = service(false, 4);
    let r = svc
        .handle(&ApiRequest::new("POST", "/v1/clips").with_body("audio/wav", b"nonsense".to_vec()));
    assert_eq!(r.status, 400);
    let wrong_rate = AudioClip::new(vec![0.1; 8000], 16_000).unwrap();
    let r = svc.handle(
        &ApiRequest::new("POST", "/v1/clips").with_body("audio/wav", wav_bytes(&wrong_rate)),
    );
    assert_eq!(r.status, 422);
    let small = Service::new(
        None,
        ServiceConfig {
            max_body_bytes: 10,
            ..Default::default()
        },
    );
    let r = small.handle(
        &ApiRequest::new("POST", "/v1/clips").with_body("audio/wav", wav_bytes(&clips()[0])),
    );
    assert_eq!(r.status, 413);
}

#[test]
fn controls_match_direct_extraction_and_are_cached() {
    let svc = service(false, 4);
    let clip = &clips()[0];
    let id = upload(&svc, clip).session_id;
    for feature in [
        ControlFeature::Dsc,
        ControlFeature::Centroid,
        ControlFeature::Rolloff,
    ] {
        let url = format!("/v1/clips/{id}/controls?feature={}", feature.name());
        let r = get(&svc, &url);
        assert_eq!((r.status, r.content_type), (200, "text/csv"));
        let got = ControlSignal::from_csv(std::str::from_utf8(&r.body).unwrap()).unwrap();
        let uploaded = AudioClip::from_wav_bytes(&wav_bytes(clip)).unwrap();
        let want = extract(&uploaded, feature, &Default::default(), Default::default()).unwrap();
        assert_eq!(got.track(0), want.track(0));
        assert_eq!(get(&svc, &url).body, r.body);
    }
    assert_eq!(
        get(&svc, &format!("/v1/clips/{id}/controls?feature=loudness")).status,
        400
    );
}

fn dsc(clip: &AudioClip) -> ControlSignal {
    extract(
        clip,
        ControlFeature::Dsc,
        &model().analysis.dsc,
        model().analysis.stft,
    )
    .unwrap()
}

#[test]
fn restore_matches_pipeline_exactly() {
    let svc = service(true, 4);
    let clip = &clips()[0];
    let id = upload(&svc, clip).session_id;
    let target = dsc(clip);
    let r = restore(
        &svc,
        &id,
        serde_json::json!({ "control": target.to_csv(), "w": 1.0, "cutoff_hz": 6000.0, "gl_iters": 4 }),
    );
    assert_eq!(r.status, 200, "{}", String::from_utf8_lossy(&r.body));
    let reply: RestoreReply = serde_json::from_slice(&r.body).unwrap();

    // The service decoded a 16-bit upload; the pipeline must see the same samples.
    let uploaded = AudioClip::from_wav_bytes(&wav_bytes(clip)).unwrap();
    let req = RestoreRequest {
        w: 1.0,
        cutoff_hz: Some(6000.0),
        gl_iters: 4,
        ..Default::default()
    };
    let direct = restore_clip(model(), &uploaded, &target, &req).unwrap();
    assert_eq!(reply.adherence.to_bits(), direct.adherence.to_bits());
    assert_eq!(reply.clipped, direct.clipped);
    assert_eq!(reply.realized, direct.realized.track(0));
    assert_eq!(
        decode_wav(&reply).unwrap(),
        AudioClip::from_wav_bytes(&direct.clip.to_wav_bytes(OUTPUT_WAV).unwrap()).unwrap()
    );

    // Bare per-frame values are the same control.
    let r2 = restore(
        &svc,
        &id,
        serde_json::json!({ "control": target.track(0), "w": 1.0, "cutoff_hz": 6000.0, "gl_iters": 4 }),
    );
    assert_eq!(r2.body, r.body);
}

#[test]
fn control_length_tolerance() {
    let svc = service(true, 4);
    let clip = &clips()[1];
    let id = upload(&svc, clip).session_id;
    let track = dsc(clip).track(0);
    for delta in [-2isize, -1, 1, 2] {
        let n = (track.len() as isize + delta) as usize;
        let frames: Vec<f64> = (0..n).map(|i| track[i.min(track.len() - 1)]).collect();
        let r = restore(
            &svc,
            &id,
            serde_json::json!({ "control": frames, "gl_iters": 2 }),
        );
        assert_eq!(r.status, 200, "delta {delta}");
        let reply: RestoreReply = serde_json::from_slice(&r.body).unwrap();
        assert_eq!(reply.target.len(), track.len());
    }
    for delta in [-3isize, 3, 40] {
        let n = (track.len() as isize + delta) as usize;
        let r = restore(&svc, &id, serde_json::json!({ "control": vec![3000.0; n] }));
        assert_eq!(r.status, 422, "delta {delta}");
    }
    assert_eq!(
        restore(
            &svc,
            &id,
            serde_json::json!({ "control": [f64::MAX, -1.0] })
        )
        .status,
        422
    );
}

#[test]
fn error_statuses() {
    let svc = service(true, 4);
    let id = upload(&svc, &clips()[0]).session_id;
    assert_eq!(
        restore(&svc, "s999999", serde_json::json!({ "control": [1.0] })).status,
        404
    );
    assert_eq!(get(&svc, "/v1/clips/s999999/spectrogram").status, 404);
    assert_eq!(get(&svc, "/v1/nowhere").status, 404);
    assert_eq!(get(&svc, "/elsewhere").status, 404);
    assert_eq!(
        svc.handle(&ApiRequest::new("PUT", "/v1/health")).status,
        405
    );
    assert_eq!(get(&svc, &format!("/v1/clips/{id}/restore")).status, 405);
    let bad = svc.handle(
        &ApiRequest::new("POST", &format!("/v1/clips/{id}/restore"))
            .with_body("application/json", "{"),
    );
    assert_eq!(bad.status, 400);
    assert_eq!(
        restore(
            &svc,
            &id,
            serde_json::json!({ "control": [1.0], "bogus": 1 })
        )
        .status,
        400
    );
    let e = bad.json_value().unwrap();
    assert!(e["error"].as_str().is_some());

    // No checkpoint: 409 for a known session, 404 still wins for an unknown one.
    let none = service(false, 4);
    let id2 = upload(&none, &clips()[0]).session_id;
    assert_eq!(
        restore(&none, &id2, serde_json::json!({ "control": [1.0] })).status,
        409
    );
    assert_eq!(
        restore(&none, "s424242", serde_json::json!({ "control": [1.0] })).status,
        404
    );

    // Delete.
    let del = svc.handle(&ApiRequest::new("DELETE", &format!("/v1/clips/{id}")));
    assert_eq!(del.status, 200);
    assert_eq!(
        svc.handle(&ApiRequest::new("DELETE", &format!("/v1/clips/{id}")))
            .status,
        404
    );
    assert_eq!(
        get(&svc, &format!("/v1/clips/{id}/spectrogram")).status,
        404
    );
}

#[test]
fn eviction_is_least_recently_used() {
    let svc = service(false, 2);
    let a = upload(&svc, &clips()[0]).session_id;
    let b = upload(&svc, &clips()[1]).session_id;
    assert_eq!(get(&svc, &format!("/v1/clips/{a}/controls")).status, 200);
    let c = upload(&svc, &clips()[2]).session_id;
    assert_eq!(get(&svc, &format!("/v1/clips/{b}/spectrogram")).status, 404);
    assert_eq!(get(&svc, &format!("/v1/clips/{a}/spectrogram")).status, 200);
    assert_eq!(get(&svc, &format!("/v1/clips/{c}/spectrogram")).status, 200);
    assert_eq!(get(&svc, "/v1/health").json_value().unwrap()["sessions"], 2);
}

#[test]
fn replaying_a_request_log_is_deterministic() {
    let target = dsc(&clips()[2]);
    let log = vec![
        ApiRequest::new("POST", "/v1/clips").with_body("audio/wav", wav_bytes(&clips()[2])),
        ApiRequest::new("GET", "/v1/clips/s000001/spectrogram"),
        ApiRequest::new("GET", "/v1/clips/s000001/controls?feature=dsc"),
        ApiRequest::new("POST", "/v1/clips/s000001/restore")
            .with_body("application/json", serde_json::json!({ "control": target.to_csv(), "scale": 0.5, "gl_iters": 3 }).to_string()),
        ApiRequest::new("POST", "/v1/clips/s000001/restore")
            .with_body("application/json", serde_json::json!({ "control": target.to_csv(), "w": 2.0, "steps": 2, "seed": 7, "gl_iters": 3 }).to_string()),
        ApiRequest::new("DELETE", "/v1/clips/s000001"),
        ApiRequest::new("GET", "/v1/health"),
    ];
    let replay = || {
        let svc = service(true, 4);
        log.iter().map(|r| svc.handle(r)).collect::<Vec<_>>()
    };
    let (first, second) = (replay(), replay());
    assert!(
        first.iter().all(|r| r.status < 300),
        "{:?}",
        first.iter().map(|r| r.status).collect::<Vec<_>>()
    );
    assert_eq!(first, second);
}

fn http(addr: std::net::SocketAddr, raw: &[u8]) -> (u16, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    s.write_all(raw).unwrap();
    let mut out = Vec::new();
    s.read_to_end(&mut out).unwrap();
    let text = String::from_utf8_lossy(&out).into_owned();
    let status = text.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = text
        .split_once("\r\n\r\n")
        .map(|(_, b)| b.to_string())
        .unwrap_or_default();
    (status, body)
}

#[test]
fn serves_over_tcp() {
    let handle = serve(Arc::new(service(false, 4)), "127.0.0.1:0").unwrap();
    let addr = handle.addr();
    let (status, body) = http(
        addr,
        b"GET /v1/health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n",
    );
    assert_eq!(status, 200);
    assert!(body.contains("\"checkpoint_loaded\":false"));

    let wav = wav_bytes(&clips()[0]);
    let mut req = format!("POST /v1/clips HTTP/1.1\r\nHost: x\r\nContent-Type: audio/wav\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", wav.len()).into_bytes();
    req.extend(&wav);
    let (status, body) = http(addr, &req);
    assert_eq!(status, 201);
    let up: UploadReply = serde_json::from_str(&body).unwrap();
    let (status, body) = http(
        addr,
        format!(
            "GET /v1/clips/{}/controls HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n",
            up.session_id
        )
        .as_bytes(),
    );
    assert_eq!(status, 200);
    assert!(body.starts_with("# contourflow control"), "{body}");
    let (status, _) = http(
        addr,
        b"GET /nope HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n",
    );
    assert_eq!(status, 404);
    handle.shutdown();
}
