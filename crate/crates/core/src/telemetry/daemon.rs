//! Paced UDP sender standing in for the FPGA acquisition board.

use std::collections::BTreeSet;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use crate::simulator::CountStream;

use super::packet::CountPacket;
use super::TelemetryError;

pub const MIN_RATE_HZ: f64 = 1.0;
pub const MAX_RATE_HZ: f64 = 2000.0;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ServeOptions {
    pub rate_hz: f64,
    /// Stop after this many sequence numbers; `None` runs until stopped.
    pub packets: Option<u64>,
    /// Sequence numbers that are generated but never sent.
    pub drop_sequences: BTreeSet<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ServeStats {
    /// Sequence numbers generated (sent plus deliberately dropped).
    pub generated: u64,
    pub sent: u64,
    pub dropped: u64,
    pub send_errors: u64,
}

pub fn validate_rate(rate_hz: f64) -> Result<(), TelemetryError> {
    if !(MIN_RATE_HZ..=MAX_RATE_HZ).contains(&rate_hz) {
        return Err(TelemetryError::InvalidRate(rate_hz));
    }
    Ok(())
}

/// Packet `sequence` of a stream. Past the end of the stream the last
/// sample is held and the timestamp keeps advancing at the stream rate.
pub fn packet_at(stream: &CountStream, sequence: u32, rate_hz: f64) -> CountPacket {
    let n = sequence as usize;
    let last = stream.samples.len().saturating_sub(1);
    let s = &stream.samples[n.min(last)];
    let timestamp_us = if n <= last {
        s.time_us
    } else {
        (sequence as f64 * 1e6 / rate_hz).round() as u64
    };
    CountPacket {
        sequence,
        timestamp_us,
        index_flags: if n <= last { s.index } else { [false; 6] },
        counts: s.raw_counts.map(|c| c as i32),
    }
}

/// Sends the stream to `target` at `rate_hz`, one packet per deadline.
pub fn serve(
    socket: &UdpSocket,
    target: SocketAddr,
    stream: &CountStream,
    options: &ServeOptions,
    stop: &AtomicBool,
) -> Result<ServeStats, TelemetryError> {
    validate_rate(options.rate_hz)?;
    if stream.samples.is_empty() {
        return Err(TelemetryError::EmptyStream);
    }
    let period = Duration::from_secs_f64(1.0 / options.rate_hz);
    let start = Instant::now();
    let mut stats = ServeStats::default();
    let mut seq: u64 = 0;
    while options.packets.map_or(true, |n| seq < n) && seq <= u32::MAX as u64 && !stop.load(Ordering::Relaxed) {
        let deadline = start + period.mul_f64(seq as f64);
        let now = Instant::now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
        let sequence = seq as u32;
        stats.generated += 1;
        if options.drop_sequences.contains(&sequence) {
            stats.dropped += 1;
        } else {
            let bytes = packet_at(stream, sequence, options.rate_hz).encode();
            match socket.send_to(&bytes, target) {
                Ok(_) => stats.sent += 1,
                Err(e) => {
                    stats.send_errors += 1;
                    log::warn!("send of sequence {sequence} failed: {e}");
                }
            }
        }
        seq += 1;
    }
    Ok(stats)
}

/// Binds `bind` and serves to `target`.
pub fn bind_and_serve(
    bind: &str,
    target: SocketAddr,
    stream: &CountStream,
    options: &ServeOptions,
    stop: &AtomicBool,
) -> Result<ServeStats, TelemetryError> {
    validate_rate(options.rate_hz)?;
    let socket = UdpSocket::bind(bind).map_err(|source| TelemetryError::Bind {
        address: bind.to_string(),
        source,
    })?;
    serve(&socket, target, stream, options, stop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{Phase, StreamSample};

    fn tiny_stream() -> CountStream {
        CountStream {
            samples: (0..3)
                .map(|n| StreamSample {
                    time_us: n * 1000,
                    phase: Phase::Motion,
                    raw_counts: [n as i64; 6],
                    deltas: [1; 6],
                    index: [n == 1; 6],
                    truth_lengths: [50.0; 6],
                    truth_pose: None,
                })
                .collect(),
        }
    }

    #[test]
    fn rate_limits() {
        assert!(validate_rate(0.5).is_err());
        assert!(validate_rate(2001.0).is_err());
        validate_rate(1.0).unwrap();
        validate_rate(2000.0).unwrap();
    }

    #[test]
    fn holds_last_sample() {
        let s = tiny_stream();
        let p = packet_at(&s, 1, 1000.0);
        assert_eq!(p.counts, [1; 6]);
        assert_eq!(p.index_flags, [true; 6]);
        let late = packet_at(&s, 10, 1000.0);
        assert_eq!(late.counts, [2; 6]);
        assert_eq!(late.index_flags, [false; 6]);
        assert_eq!(late.timestamp_us, 10_000);
    }

    #[test]
    fn sends_sequences_in_order_with_drops() {
        let rx = UdpSocket::bind("127.0.0.1:0").unwrap();
        rx.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
        let tx = UdpSocket::bind("127.0.0.1:0").unwrap();
        let opts = ServeOptions {
            rate_hz: 2000.0,
            packets: Some(20),
            drop_sequences: [5u32].into_iter().collect(),
        };
        let stats = serve(&tx, rx.local_addr().unwrap(), &tiny_stream(), &opts, &AtomicBool::new(false)).unwrap();
        assert_eq!(stats.generated, 20);
        assert_eq!(stats.sent, 19);
        let mut seqs = Vec::new();
        let mut buf = [0u8; 64];
        for _ in 0..19 {
            let n = rx.recv(&mut buf).unwrap();
            seqs.push(CountPacket::decode(&buf[..n]).unwrap().sequence);
        }
        let expected: Vec<u32> = (0..20).filter(|s| *s != 5).collect();
        assert_eq!(seqs, expected);
    }
}
