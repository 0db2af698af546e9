//! C ABI over the stringpose core.
//!
//! Every function returns an [`SpStatus`]; results are written through out
//! pointers. Geometry and encoder channels are opaque handles created by a
//! `*_new` function and released by the matching `*_free`. Poses are
//! `double[6]` in the order x, y, z (mm), roll, pitch, yaw (deg); lengths are
//! `double[6]` in mm.

#![allow(clippy::missing_safety_doc)]

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use stringpose::config::SystemConfig;
use stringpose::encoder::{EncoderChannel, EncoderSpec};
use stringpose::geometry::{PlatformGeometry, Pose};
use stringpose::kinematics::{forward_kinematics, inverse_kinematics, KinematicsError, LegLengths, SolverConfig};
use stringpose::telemetry::{CountPacket, PosePacket, SolveStatus, COUNT_PACKET_LEN, POSE_PACKET_LEN};

pub const SP_LEG_COUNT: usize = 6;
pub const SP_COUNT_PACKET_LEN: usize = 42;
pub const SP_POSE_PACKET_LEN: usize = 71;
const _: () = assert!(SP_COUNT_PACKET_LEN == COUNT_PACKET_LEN && SP_POSE_PACKET_LEN == POSE_PACKET_LEN);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NoConvergence = 3,
    SingularConfiguration = 4,
    DegenerateLeg = 5,
    NotHomed = 6,
    BadPacket = 7,
    BufferTooSmall = 8,
    ConfigError = 9,
    Panic = 10,
}

/// Opaque platform geometry.
pub struct SpGeometry {
    inner: PlatformGeometry,
}

/// Opaque encoder channel.
pub struct SpEncoder {
    inner: EncoderChannel,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpSolverConfig {
    /// Stop once the leg-length residual falls below this, mm.
    pub length_tolerance: f64,
    /// Maximum inverse-kinematics evaluations.
    pub max_iterations: u32,
    /// Tikhonov damping of the pseudo-inverse; 0 disables it.
    pub damping: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpSolveResult {
    pub pose: [f64; 6],
    pub iterations: u32,
    pub residual: f64,
    /// 1 when the residual met the tolerance.
    pub converged: u8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpCountPacket {
    pub sequence: u32,
    pub timestamp_us: u64,
    /// Bit i set: index pulse seen on channel i since the previous packet.
    pub index_flags: u8,
    pub counts: [i32; 6],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpPosePacket {
    pub sequence: u32,
    /// 0 ok, 1 not homed, 2 no convergence.
    pub status: u8,
    pub converged: u8,
    pub iterations: u32,
    pub pose: [f64; 6],
    pub residual: f64,
}

fn guard(f: impl FnOnce() -> SpStatus) -> SpStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(SpStatus::Panic)
}

fn kinematics_status(e: &KinematicsError) -> SpStatus {
    match e {
        KinematicsError::DegenerateLeg { .. } => SpStatus::DegenerateLeg,
        KinematicsError::SingularConfiguration { .. } => SpStatus::SingularConfiguration,
        KinematicsError::NoConvergence(_) => SpStatus::NoConvergence,
        KinematicsError::NonPositiveLength { .. } | KinematicsError::InvalidConfig(_) => SpStatus::InvalidArgument,
    }
}

fn to_result(r: &stringpose::SolveResult) -> SpSolveResult {
    SpSolveResult {
        pose: r.pose.to_array(),
        iterations: r.iterations,
        residual: r.residual,
        converged: r.converged as u8,
    }
}

/// Human-readable name of a status code. The string is static.
#[no_mangle]
pub extern "C" fn sp_status_message(status: SpStatus) -> *const c_char {
    let s: &'static CStr = match status {
        SpStatus::Ok => c"ok",
        SpStatus::NullPointer => c"null pointer argument",
        SpStatus::InvalidArgument => c"invalid argument",
        SpStatus::NoConvergence => c"forward kinematics did not converge",
        SpStatus::SingularConfiguration => c"singular configuration",
        SpStatus::DegenerateLeg => c"degenerate leg",
        SpStatus::NotHomed => c"encoder channel is not homed",
        SpStatus::BadPacket => c"malformed packet",
        SpStatus::BufferTooSmall => c"buffer too small",
        SpStatus::ConfigError => c"invalid configuration",
        SpStatus::Panic => c"internal error",
    };
    s.as_ptr()
}

/// Creates the packaged default geometry.
#[no_mangle]
pub unsafe extern "C" fn sp_geometry_new_default(out: *mut *mut SpGeometry) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return SpStatus::NullPointer;
        }
        *out = Box::into_raw(Box::new(SpGeometry {
            inner: PlatformGeometry::default(),
        }));
        SpStatus::Ok
    })
}

/// Creates a geometry from a NUL-terminated JSON configuration document.
#[no_mangle]
pub unsafe extern "C" fn sp_geometry_from_json(json: *const c_char, out: *mut *mut SpGeometry) -> SpStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return SpStatus::NullPointer;
        }
        let Ok(text) = CStr::from_ptr(json).to_str() else {
            return SpStatus::InvalidArgument;
        };
        match SystemConfig::from_json(text) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(SpGeometry { inner: cfg.geometry }));
                SpStatus::Ok
            }
            Err(_) => SpStatus::ConfigError,
        }
    })
}

/// Releases a geometry. Passing NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn sp_geometry_free(geometry: *mut SpGeometry) {
    if !geometry.is_null() {
        drop(Box::from_raw(geometry));
    }
}

/// Default solver settings (0.01 mm tolerance, 50 iterations, no damping).
#[no_mangle]
pub extern "C" fn sp_solver_config_default() -> SpSolverConfig {
    let d = SolverConfig::default();
    SpSolverConfig {
        length_tolerance: d.length_tolerance,
        max_iterations: d.max_iterations,
        damping: d.damping,
    }
}

/// Leg lengths for `pose`.
#[no_mangle]
pub unsafe extern "C" fn sp_inverse_kinematics(
    geometry: *const SpGeometry,
    pose: *const f64,
    out_lengths: *mut f64,
) -> SpStatus {
    guard(|| {
        if geometry.is_null() || pose.is_null() || out_lengths.is_null() {
            return SpStatus::NullPointer;
        }
        let p = Pose::from_array(*(pose as *const [f64; 6]));
        if !p.is_finite() {
            return SpStatus::InvalidArgument;
        }
        match inverse_kinematics(&(*geometry).inner, &p) {
            Ok(l) => {
                *(out_lengths as *mut [f64; 6]) = *l.as_array();
                SpStatus::Ok
            }
            Err(e) => kinematics_status(&e),
        }
    })
}

/// Pose for measured `lengths`. `guess` and `config` may be NULL (nominal
/// pose, default settings). On `NO_CONVERGENCE` the best iterate is still
/// written to `out`.
#[no_mangle]
pub unsafe extern "C" fn sp_forward_kinematics(
    geometry: *const SpGeometry,
    lengths: *const f64,
    guess: *const f64,
    config: *const SpSolverConfig,
    out: *mut SpSolveResult,
) -> SpStatus {
    guard(|| {
        if geometry.is_null() || lengths.is_null() || out.is_null() {
            return SpStatus::NullPointer;
        }
        let Ok(measured) = LegLengths::new(*(lengths as *const [f64; 6])) else {
            return SpStatus::InvalidArgument;
        };
        let guess = if guess.is_null() {
            Pose::IDENTITY
        } else {
            Pose::from_array(*(guess as *const [f64; 6]))
        };
        let cfg = if config.is_null() {
            SolverConfig::default()
        } else {
            let c = &*config;
            SolverConfig {
                length_tolerance: c.length_tolerance,
                max_iterations: c.max_iterations,
                damping: c.damping,
                ..SolverConfig::default()
            }
        };
        match forward_kinematics(&(*geometry).inner, &measured, &guess, &cfg) {
            Ok(r) => {
                *out = to_result(&r);
                SpStatus::Ok
            }
            Err(KinematicsError::NoConvergence(best)) => {
                *out = to_result(&best);
                SpStatus::NoConvergence
            }
            Err(e) => kinematics_status(&e),
        }
    })
}

/// Creates an encoder channel with the default 60 counts/mm, 200 mm range
/// and 4000-count index spacing.
#[no_mangle]
pub unsafe extern "C" fn sp_encoder_new(first_index_length_mm: f64, out: *mut *mut SpEncoder) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return SpStatus::NullPointer;
        }
        let spec = EncoderSpec::with_first_index(first_index_length_mm);
        if spec.validate().is_err() {
            return SpStatus::InvalidArgument;
        }
        *out = Box::into_raw(Box::new(SpEncoder {
            inner: EncoderChannel::new(spec),
        }));
        SpStatus::Ok
    })
}

/// Releases an encoder channel. Passing NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn sp_encoder_free(encoder: *mut SpEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

/// Advances the count by `delta`; a nonzero `index_seen` latches the first index.
#[no_mangle]
pub unsafe extern "C" fn sp_encoder_feed(encoder: *mut SpEncoder, delta: i64, index_seen: u8) -> SpStatus {
    guard(|| {
        if encoder.is_null() {
            return SpStatus::NullPointer;
        }
        (*encoder).inner.feed_counts(delta, index_seen != 0);
        SpStatus::Ok
    })
}

/// Clears the index latch so the channel can be homed again.
#[no_mangle]
pub unsafe extern "C" fn sp_encoder_reset_latch(encoder: *mut SpEncoder) -> SpStatus {
    guard(|| {
        if encoder.is_null() {
            return SpStatus::NullPointer;
        }
        (*encoder).inner.reset_latch();
        SpStatus::Ok
    })
}

/// Writes 1 to `out` when the channel has latched an index pulse.
#[no_mangle]
pub unsafe extern "C" fn sp_encoder_is_homed(encoder: *const SpEncoder, out: *mut u8) -> SpStatus {
    guard(|| {
        if encoder.is_null() || out.is_null() {
            return SpStatus::NullPointer;
        }
        *out = (*encoder).inner.index_latched as u8;
        SpStatus::Ok
    })
}

/// Absolute string length in mm; `NOT_HOMED` before the first index pulse.
#[no_mangle]
pub unsafe extern "C" fn sp_encoder_absolute_length(encoder: *const SpEncoder, out_mm: *mut f64) -> SpStatus {
    guard(|| {
        if encoder.is_null() || out_mm.is_null() {
            return SpStatus::NullPointer;
        }
        match (*encoder).inner.absolute_length() {
            Ok(l) => {
                *out_mm = l;
                SpStatus::Ok
            }
            Err(_) => SpStatus::NotHomed,
        }
    })
}

/// Serializes a count packet into `buf` (at least `SP_COUNT_PACKET_LEN` bytes).
#[no_mangle]
pub unsafe extern "C" fn sp_count_packet_encode(packet: *const SpCountPacket, buf: *mut u8, len: usize) -> SpStatus {
    guard(|| {
        if packet.is_null() || buf.is_null() {
            return SpStatus::NullPointer;
        }
        if len < COUNT_PACKET_LEN {
            return SpStatus::BufferTooSmall;
        }
        let p = &*packet;
        if p.index_flags & 0xc0 != 0 {
            return SpStatus::InvalidArgument;
        }
        let bytes = CountPacket {
            sequence: p.sequence,
            timestamp_us: p.timestamp_us,
            index_flags: std::array::from_fn(|i| p.index_flags & (1 << i) != 0),
            counts: p.counts,
        }
        .encode();
        std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf, COUNT_PACKET_LEN);
        SpStatus::Ok
    })
}

/// Parses exactly `len` bytes as a count packet.
#[no_mangle]
pub unsafe extern "C" fn sp_count_packet_decode(buf: *const u8, len: usize, out: *mut SpCountPacket) -> SpStatus {
    guard(|| {
        if buf.is_null() || out.is_null() {
            return SpStatus::NullPointer;
        }
        match CountPacket::decode(std::slice::from_raw_parts(buf, len)) {
            Ok(p) => {
                *out = SpCountPacket {
                    sequence: p.sequence,
                    timestamp_us: p.timestamp_us,
                    index_flags: p.flags_byte(),
                    counts: p.counts,
                };
                SpStatus::Ok
            }
            Err(_) => SpStatus::BadPacket,
        }
    })
}

/// Serializes a pose packet into `buf` (at least `SP_POSE_PACKET_LEN` bytes).
#[no_mangle]
pub unsafe extern "C" fn sp_pose_packet_encode(packet: *const SpPosePacket, buf: *mut u8, len: usize) -> SpStatus {
    guard(|| {
        if packet.is_null() || buf.is_null() {
            return SpStatus::NullPointer;
        }
        if len < POSE_PACKET_LEN {
            return SpStatus::BufferTooSmall;
        }
        let p = &*packet;
        let status = match p.status {
            0 => SolveStatus::Ok,
            1 => SolveStatus::NotHomed,
            2 => SolveStatus::NoConvergence,
            _ => return SpStatus::InvalidArgument,
        };
        if p.converged > 1 {
            return SpStatus::InvalidArgument;
        }
        let bytes = PosePacket {
            sequence: p.sequence,
            status,
            converged: p.converged == 1,
            iterations: p.iterations,
            pose: Pose::from_array(p.pose),
            residual_mm: p.residual,
        }
        .encode();
        std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf, POSE_PACKET_LEN);
        SpStatus::Ok
    })
}

/// Parses exactly `len` bytes as a pose packet.
#[no_mangle]
pub unsafe extern "C" fn sp_pose_packet_decode(buf: *const u8, len: usize, out: *mut SpPosePacket) -> SpStatus {
    guard(|| {
        if buf.is_null() || out.is_null() {
            return SpStatus::NullPointer;
        }
        match PosePacket::decode(std::slice::from_raw_parts(buf, len)) {
            Ok(p) => {
                *out = SpPosePacket {
                    sequence: p.sequence,
                    status: p.status as u8,
                    converged: p.converged as u8,
                    iterations: p.iterations,
                    pose: p.pose.to_array(),
                    residual: p.residual_mm,
                };
                SpStatus::Ok
            }
            Err(_) => SpStatus::BadPacket,
        }
    })
}
