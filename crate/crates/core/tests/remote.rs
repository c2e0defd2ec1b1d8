use std::io::{BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

use flowforge::backend::wire::{read_frame, send_json, write_frame, Request, Response, Status, WireTensor};
use flowforge::backend::{
    AnalyticCodec, Branch, LinearBackend, LinearField, LoopbackServer, PointMassBackend, PromptPair, RecordingBackend,
    RemoteBackend, RetryPolicy, VelocityBackend, VelocityQuery,
};
use flowforge::editor::{run_edit, EditConfig, EditMode, Silent, StepRecord};
use flowforge::field::{Grid, Shape};
use flowforge::mask::LatentMask;
use flowforge::oracle::random_grid;
use flowforge::Error;

const SHAPE: Shape = Shape {
    channels: 4,
    height: 3,
    width: 5,
};

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        initial_backoff_ms: 5,
        timeout_ms: 5_000,
    }
}

fn point_mass() -> PointMassBackend {
    PointMassBackend::new(AnalyticCodec::default())
        .with_mean("sunny", random_grid(SHAPE, 1))
        .with_mean("snowy", random_grid(SHAPE, 2))
}

fn constant_field() -> LinearBackend {
    LinearBackend::new(AnalyticCodec::default())
        .with_field("sunny", LinearField::constant(random_grid(SHAPE, 3)))
        .unwrap()
        .with_field("snowy", LinearField::constant(random_grid(SHAPE, 4)))
        .unwrap()
}

fn query<'a>(latent: &'a Grid, prompt: &'a str) -> VelocityQuery<'a> {
    VelocityQuery {
        latent,
        t: 0.42,
        prompt,
        step: 21,
        branch: Branch::Target,
    }
}

#[test]
fn hello_reports_capabilities() {
    let server = LoopbackServer::spawn(Box::new(point_mass())).unwrap();
    let remote = RemoteBackend::connect(server.addr().to_string(), fast_retry()).unwrap();
    let caps = remote.capabilities();
    assert_eq!(caps, point_mass().capabilities());
    remote.shutdown().unwrap();
    server.join();
}

#[test]
fn calls_match_local_backend_at_f32() {
    let server = LoopbackServer::spawn(Box::new(point_mass())).unwrap();
    let mut remote = RemoteBackend::connect(server.addr().to_string(), fast_retry()).unwrap();
    let mut local = point_mass();

    let z = random_grid(SHAPE, 9).quantized_f32();
    let v = remote.velocity(&query(&z, "snowy")).unwrap();
    assert_eq!(v.shape(), z.shape());
    assert_eq!(v, local.velocity(&query(&z, "snowy")).unwrap().quantized_f32());

    let image = random_grid(Shape::new(3, 24, 40), 10).map(|x| 0.5 + 0.5 * x);
    let latent = remote.encode(&image).unwrap();
    assert_eq!(latent.shape(), SHAPE);
    assert_eq!(latent, local.encode(&image.quantized_f32()).unwrap().quantized_f32());
    let back = remote.decode(&latent).unwrap();
    assert_eq!(back.shape(), image.shape());
    assert_eq!(back, local.decode(&latent).unwrap().quantized_f32());

    remote.shutdown().unwrap();
    server.join();
}

#[test]
fn server_errors_are_remote_errors() {
    let server = LoopbackServer::spawn(Box::new(point_mass())).unwrap();
    let mut remote = RemoteBackend::connect(server.addr().to_string(), fast_retry()).unwrap();
    let z = Grid::zeros(SHAPE).unwrap();
    let err = remote.velocity(&query(&z, "foggy")).unwrap_err();
    assert!(matches!(err, Error::Remote(ref m) if m.contains("foggy")), "{err}");
    assert_eq!(err.exit_code(), 4);
    // the connection stays usable after an error response
    remote.velocity(&query(&z, "sunny")).unwrap();
    remote.shutdown().unwrap();
    server.join();
}

#[test]
fn remote_edit_reproduces_recorded_local_edit() {
    let server = LoopbackServer::spawn(Box::new(constant_field())).unwrap();
    let mut remote = RemoteBackend::connect(server.addr().to_string(), fast_retry()).unwrap();
    let mut local = RecordingBackend::new(constant_field());
    let prompts = PromptPair::new("sunny", "snowy").unwrap();
    let cfg = EditConfig {
        steps: 20,
        n_max: 14,
        ..EditConfig::default()
    };
    let mut mask = LatentMask::zeros(SHAPE.height, SHAPE.width);
    mask.set(1, 2, true);
    let z0 = random_grid(SHAPE, 11);
    let a = run_edit(&z0, Some(&mask), &mut remote, &prompts, &cfg, &mut Silent).unwrap();
    let b = run_edit(&z0, Some(&mask), &mut local, &prompts, &cfg, &mut Silent).unwrap();
    assert_eq!(a.latent, b.latent);
    let untimed = |steps: Vec<StepRecord>| -> Vec<StepRecord> {
        steps.into_iter().map(|s| StepRecord { micros: 0, ..s }).collect()
    };
    assert_eq!(untimed(a.steps), untimed(b.steps));
    remote.shutdown().unwrap();
    server.join();
}

#[test]
fn point_mass_edit_through_remote_is_close() {
    let server = LoopbackServer::spawn(Box::new(point_mass())).unwrap();
    let mut remote = RemoteBackend::connect(server.addr().to_string(), fast_retry()).unwrap();
    let prompts = PromptPair::new("sunny", "snowy").unwrap();
    let cfg = EditConfig {
        mode: EditMode::Flowedit,
        steps: 10,
        n_max: 10,
        ..EditConfig::default()
    };
    let z0 = random_grid(SHAPE, 12);
    let out = run_edit(&z0, None, &mut remote, &prompts, &cfg, &mut Silent).unwrap();
    let expected = z0
        .add(&random_grid(SHAPE, 2).sub(&random_grid(SHAPE, 1)).unwrap())
        .unwrap();
    assert!(out.latent.max_abs_diff(&expected).unwrap() < 1e-5);
    remote.shutdown().unwrap();
    server.join();
}

#[test]
fn malformed_frames_get_error_responses() {
    let server = LoopbackServer::spawn(Box::new(point_mass())).unwrap();
    let stream = TcpStream::connect(server.addr()).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;

    write_frame(&mut writer, br#"{"op":"teleport","id":77}"#).unwrap();
    writer.flush().unwrap();
    let resp: Response = serde_json::from_slice(&read_frame(&mut reader).unwrap().unwrap()).unwrap();
    assert_eq!((resp.id, resp.status), (Some(77), Some(Status::Error)));

    write_frame(&mut writer, b"not json").unwrap();
    writer.flush().unwrap();
    let resp: Response = serde_json::from_slice(&read_frame(&mut reader).unwrap().unwrap()).unwrap();
    assert_eq!((resp.id, resp.status), (None, Some(Status::Error)));

    let bad_tensor = Request::Velocity {
        id: 78,
        latent: WireTensor {
            shape: [1, 2, 2],
            data: "AACAPw==".into(),
        },
        t: 0.5,
        prompt: "sunny".into(),
    };
    send_json(&mut writer, &bad_tensor).unwrap();
    let resp: Response = serde_json::from_slice(&read_frame(&mut reader).unwrap().unwrap()).unwrap();
    assert_eq!((resp.id, resp.status), (Some(78), Some(Status::Error)));

    send_json(&mut writer, &Request::Shutdown { id: 79 }).unwrap();
    let resp: Response = serde_json::from_slice(&read_frame(&mut reader).unwrap().unwrap()).unwrap();
    assert_eq!((resp.id, resp.status), (Some(79), Some(Status::Ok)));
    server.join();
}

#[test]
fn dropped_connections_are_retried() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = thread::spawn(move || {
        let mut backend = point_mass();
        let mut incoming = listener.incoming();
        // first connection: read the request, hang up without answering
        let mut first = incoming.next().unwrap().unwrap();
        let _ = read_frame(&mut first);
        drop(first);
        let second = incoming.next().unwrap().unwrap();
        flowforge::backend::serve_connection(second, &mut backend).unwrap()
    });
    let remote = RemoteBackend::connect(addr.to_string(), fast_retry()).unwrap();
    assert_eq!(remote.capabilities().model_id, "analytic/point_mass");
    remote.shutdown().unwrap();
    assert!(handle.join().unwrap());
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let addr = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    match RemoteBackend::connect(addr.to_string(), fast_retry()) {
        Err(e @ Error::Transport { attempts: 3, .. }) => assert_eq!(e.exit_code(), 4),
        other => panic!("{other:?}"),
    }
}
