//! Receiving end: homes the channels from the count stream, solves FK per
//! packet and republishes poses.

use std::io::Write;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::sync_channel;
use std::time::{Duration, Instant};

use crate::encoder::{EncoderChannel, EncoderSpec};
use crate::geometry::{pose_to_matrix, PlatformGeometry, Pose, LEG_COUNT};
use crate::kinematics::{forward_kinematics, KinematicsError, LegLengths, SolverConfig};
use crate::registration::{encoder_pose_in_robot_frame, FrameChain};

use super::packet::{CountPacket, PosePacket, SolveStatus};
use super::TelemetryError;

pub const LOG_HEADER: &str = "sequence,timestamp_us,status,iterations,residual_mm,x,y,z,roll,pitch,yaw";

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    pub geometry: PlatformGeometry,
    pub encoders: [EncoderSpec; LEG_COUNT],
    /// Added to every homed length before FK, mm.
    pub offset_mm: f64,
    pub solver: SolverConfig,
    /// When set, poses are reported in the robot frame.
    pub chain: Option<FrameChain>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClientStats {
    pub received: u64,
    pub decode_errors: u64,
    pub processed: u64,
    /// Sequence numbers skipped over (lost or dropped upstream).
    pub gaps: u64,
    /// Packets discarded because their sequence was not newer than the last one.
    pub out_of_order: u64,
    pub solved: u64,
    pub not_homed: u64,
    pub no_convergence: u64,
    /// Largest number of packets waiting between receive and solve.
    pub max_backlog: usize,
    /// Largest receive-to-solved delay, microseconds.
    pub max_latency_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRecord {
    pub timestamp_us: u64,
    pub packet: PosePacket,
}

impl PoseRecord {
    pub fn csv_row(&self) -> String {
        let p = &self.packet;
        let status = p.status.label();
        if p.status == SolveStatus::NotHomed {
            return format!("{},{},{status},0,NA,NA,NA,NA,NA,NA,NA", p.sequence, self.timestamp_us);
        }
        let a = p.pose.to_array();
        format!(
            "{},{},{status},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            p.sequence, self.timestamp_us, p.iterations, p.residual_mm, a[0], a[1], a[2], a[3], a[4], a[5]
        )
    }
}

/// Per-packet state machine, independent of sockets and threads.
#[derive(Debug, Clone)]
pub struct ClientPipeline {
    config: ClientConfig,
    channels: [EncoderChannel; LEG_COUNT],
    last_sequence: Option<u32>,
    seed: Pose,
    stats: ClientStats,
}

impl ClientPipeline {
    pub fn new(config: ClientConfig) -> Self {
        Self {
            channels: config.encoders.map(EncoderChannel::new),
            config,
            last_sequence: None,
            seed: Pose::IDENTITY,
            stats: ClientStats::default(),
        }
    }

    pub fn stats(&self) -> ClientStats {
        self.stats
    }

    pub fn is_homed(&self) -> bool {
        self.channels.iter().all(|c| c.index_latched)
    }

    pub fn channels(&self) -> &[EncoderChannel; LEG_COUNT] {
        &self.channels
    }

    /// Handles one packet; stale or duplicate sequences return `None`.
    pub fn process(&mut self, packet: &CountPacket) -> Option<PoseRecord> {
        if let Some(last) = self.last_sequence {
            if packet.sequence <= last {
                self.stats.out_of_order += 1;
                return None;
            }
            self.stats.gaps += (packet.sequence - last - 1) as u64;
        } else {
            self.stats.gaps += packet.sequence as u64;
        }
        self.last_sequence = Some(packet.sequence);
        self.stats.processed += 1;

        for (ch, (&count, &flag)) in self
            .channels
            .iter_mut()
            .zip(packet.counts.iter().zip(&packet.index_flags))
        {
            ch.set_raw_count(count as i64, flag);
        }
        let out = if self.is_homed() {
            self.solve(packet.sequence)
        } else {
            self.stats.not_homed += 1;
            PosePacket::not_homed(packet.sequence)
        };
        Some(PoseRecord {
            timestamp_us: packet.timestamp_us,
            packet: out,
        })
    }

    fn solve(&mut self, sequence: u32) -> PosePacket {
        let lengths: [f64; LEG_COUNT] = std::array::from_fn(|i| {
            self.channels[i].absolute_length().expect("homed") + self.config.offset_mm
        });
        let result = LegLengths::new(lengths)
            .and_then(|l| forward_kinematics(&self.config.geometry, &l, &self.seed, &self.config.solver));
        match result {
            Ok(sol) => {
                self.stats.solved += 1;
                self.seed = if self.config.geometry.workspace.contains(&sol.pose) {
                    sol.pose
                } else {
                    Pose::IDENTITY
                };
                PosePacket {
                    sequence,
                    status: SolveStatus::Ok,
                    converged: true,
                    iterations: sol.iterations,
                    pose: self.report_frame(sol.pose),
                    residual_mm: sol.residual,
                }
            }
            Err(e) => {
                self.stats.no_convergence += 1;
                self.seed = Pose::IDENTITY;
                let (pose, iterations, residual_mm) = match e {
                    KinematicsError::NoConvergence(best) if best.pose.is_finite() => {
                        (self.report_frame(best.pose), best.iterations, best.residual)
                    }
                    KinematicsError::NoConvergence(best) => (Pose::IDENTITY, best.iterations, f64::NAN),
                    _ => (Pose::IDENTITY, 0, f64::NAN),
                };
                PosePacket {
                    sequence,
                    status: SolveStatus::NoConvergence,
                    converged: false,
                    iterations,
                    pose,
                    residual_mm,
                }
            }
        }
    }

    fn report_frame(&self, pose: Pose) -> Pose {
        match &self.config.chain {
            None => pose,
            Some(chain) => encoder_pose_in_robot_frame(chain, &pose_to_matrix(&pose)).unwrap_or(pose),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientRunOptions {
    /// Where to send PosePackets, if anywhere.
    pub publish: Option<SocketAddr>,
    /// Stop after this long without a packet.
    pub idle_timeout: Duration,
    /// Stop once this many packets were received.
    pub max_packets: Option<u64>,
    /// Capacity of the queue between the receive and solve stages.
    pub queue_capacity: usize,
}

impl Default for ClientRunOptions {
    fn default() -> Self {
        Self {
            publish: None,
            idle_timeout: Duration::from_secs(2),
            max_packets: None,
            queue_capacity: 1024,
        }
    }
}

/// Receives on `socket` in one thread and solves on the calling thread,
/// writing one log row per accepted packet.
pub fn run_client<W: Write>(
    socket: UdpSocket,
    mut pipeline: ClientPipeline,
    options: &ClientRunOptions,
    mut log: W,
    stop: &AtomicBool,
) -> Result<ClientStats, TelemetryError> {
    writeln!(log, "{LOG_HEADER}")?;
    socket.set_read_timeout(Some(Duration::from_millis(20)))?;
    let publisher = match options.publish {
        Some(_) => Some(socket.try_clone()?),
        None => None,
    };
    let (tx, rx) = sync_channel::<(CountPacket, Instant)>(options.queue_capacity.max(1));
    let backlog = AtomicUsize::new(0);
    let recv_done = AtomicBool::new(false);

    let (recv_stats, max_latency_us, write_result) = std::thread::scope(|scope| {
        let receiver = scope.spawn(|| {
            let tx = tx;
            let mut buf = [0u8; 512];
            let mut received = 0u64;
            let mut decode_errors = 0u64;
            let mut max_backlog = 0usize;
            let mut last_activity = Instant::now();
            while !stop.load(Ordering::Relaxed)
                && options.max_packets.map_or(true, |n| received < n)
                && last_activity.elapsed() < options.idle_timeout
            {
                match socket.recv(&mut buf) {
                    Ok(n) => {
                        last_activity = Instant::now();
                        match CountPacket::decode(&buf[..n]) {
                            Ok(p) => {
                                received += 1;
                                let depth = backlog.fetch_add(1, Ordering::SeqCst) + 1;
                                max_backlog = max_backlog.max(depth);
                                if tx.send((p, last_activity)).is_err() {
                                    break;
                                }
                            }
                            Err(e) => {
                                decode_errors += 1;
                                log::warn!("discarding malformed packet: {e}");
                            }
                        }
                    }
                    Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                    Err(e) => {
                        log::error!("receive failed: {e}");
                        break;
                    }
                }
            }
            recv_done.store(true, Ordering::SeqCst);
            (received, decode_errors, max_backlog)
        });

        let mut max_latency_us = 0u64;
        let mut write_result: std::io::Result<()> = Ok(());
        // The channel disconnects once the receiver exits and the queue is empty.
        for (packet, arrived) in rx.iter() {
            backlog.fetch_sub(1, Ordering::SeqCst);
            if let Some(rec) = pipeline.process(&packet) {
                if let (Some(sock), Some(addr)) = (&publisher, options.publish) {
                    if let Err(e) = sock.send_to(&rec.packet.encode(), addr) {
                        log::warn!("publishing sequence {} failed: {e}", rec.packet.sequence);
                    }
                }
                if write_result.is_ok() {
                    write_result = writeln!(log, "{}", rec.csv_row());
                }
            }
            max_latency_us = max_latency_us.max(arrived.elapsed().as_micros() as u64);
        }
        (receiver.join(), max_latency_us, write_result)
    });
    let (received, decode_errors, max_backlog) = recv_stats.map_err(|_| TelemetryError::ReceiverPanicked)?;
    write_result?;
    log.flush()?;
    let mut stats = pipeline.stats();
    stats.received = received;
    stats.decode_errors = decode_errors;
    stats.max_backlog = max_backlog;
    stats.max_latency_us = max_latency_us;
    Ok(stats)
}
