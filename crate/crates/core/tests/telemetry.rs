use std::net::UdpSocket;
use std::path::Path;
use std::process::Command;
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use stringpose::kinematics::SolverConfig;
use stringpose::scenario::Scenario;
use stringpose::telemetry::{
    run_client, ClientConfig, ClientPipeline, ClientRunOptions, CountPacket, PosePacket, SolveStatus,
    LOG_HEADER, POSE_PACKET_LEN,
};

fn ideal() -> Scenario {
    Scenario::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/scenarios/ideal.json")).unwrap()
}

fn pipeline(s: &Scenario) -> ClientPipeline {
    ClientPipeline::new(ClientConfig {
        geometry: s.geometry.clone(),
        encoders: s.encoders,
        offset_mm: s.document.offset_mm,
        solver: SolverConfig::default(),
        chain: None,
    })
}

fn packet(sequence: u32) -> CountPacket {
    CountPacket {
        sequence,
        timestamp_us: sequence as u64 * 1000,
        index_flags: [false; 6],
        counts: [0; 6],
    }
}

#[test]
fn client_counts_gaps_and_reordering_over_udp() {
    let s = ideal();
    let rx = UdpSocket::bind("127.0.0.1:0").unwrap();
    let addr = rx.local_addr().unwrap();
    let publish_rx = UdpSocket::bind("127.0.0.1:0").unwrap();
    publish_rx.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let opts = ClientRunOptions {
        publish: Some(publish_rx.local_addr().unwrap()),
        idle_timeout: Duration::from_millis(300),
        ..ClientRunOptions::default()
    };
    let stop = AtomicBool::new(false);
    let order = [0u32, 1, 2, 5, 4, 6, 6, 9];
    let (stats, log) = std::thread::scope(|scope| {
        let h = scope.spawn(|| {
            let mut log = Vec::new();
            let stats = run_client(rx, pipeline(&s), &opts, &mut log, &stop).unwrap();
            (stats, String::from_utf8(log).unwrap())
        });
        let tx = UdpSocket::bind("127.0.0.1:0").unwrap();
        for seq in order {
            tx.send_to(&packet(seq).encode(), addr).unwrap();
            std::thread::sleep(Duration::from_millis(5));
        }
        tx.send_to(b"garbage", addr).unwrap();
        h.join().unwrap()
    });
    assert_eq!(stats.received, order.len() as u64);
    assert_eq!(stats.decode_errors, 1);
    assert_eq!(stats.gaps, 2 + 2);
    assert_eq!(stats.out_of_order, 2);
    assert_eq!(stats.processed, 6);
    assert_eq!(stats.not_homed, 6);

    let mut lines = log.lines();
    assert_eq!(lines.next(), Some(LOG_HEADER));
    let seqs: Vec<u32> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(seqs, vec![0, 1, 2, 5, 6, 9]);

    let mut buf = [0u8; 128];
    for expected in [0u32, 1, 2, 5, 6, 9] {
        let n = publish_rx.recv(&mut buf).unwrap();
        assert_eq!(n, POSE_PACKET_LEN);
        let p = PosePacket::decode(&buf[..n]).unwrap();
        assert_eq!(p.sequence, expected);
        assert_eq!(p.status, SolveStatus::NotHomed);
    }
}

#[test]
fn serve_and_stream_subcommands_talk_over_loopback() {
    let exe = env!("CARGO_BIN_EXE_stringpose");
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/scenarios/ideal.json");
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("poses.csv");
    let port = UdpSocket::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");

    let mut client = Command::new(exe)
        .args(["stream", "--bind", &addr, "--idle-timeout-ms", "1000", "--scenario"])
        .arg(&scenario)
        .arg("--log")
        .arg(&log)
        .spawn()
        .unwrap();
    std::thread::sleep(Duration::from_millis(300));
    let server = Command::new(exe)
        .args(["serve", "--connect", &addr, "--rate-hz", "2000", "--packets", "3000", "--drop-seq", "2500", "--scenario"])
        .arg(&scenario)
        .output()
        .unwrap();
    assert_eq!(server.status.code(), Some(0), "{}", String::from_utf8_lossy(&server.stderr));
    let status = client.wait().unwrap();
    assert_eq!(status.code(), Some(0));

    let text = std::fs::read_to_string(&log).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2999);
    assert!(rows.iter().all(|r| r[0] != "2500"));
    assert!(rows.iter().any(|r| r[2] == "not_homed"));
    assert_eq!(rows.last().unwrap()[2], "ok");
    assert!(dir.path().join("poses.csv.manifest.json").exists());
}
