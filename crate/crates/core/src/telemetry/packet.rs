//! Wire formats. All multi-byte fields are little-endian.
//!
//! CountPacket, 42 bytes:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `SENC`                            |
//! | 4      | 1    | version (1)                             |
//! | 5      | 1    | flags: bit i = index seen on channel i  |
//! | 6      | 4    | sequence (u32)                          |
//! | 10     | 8    | timestamp, microseconds (u64)           |
//! | 18     | 24   | six raw counts (i32)                    |
//!
//! PosePacket, 71 bytes:
//!
//! | offset | size | field                                          |
//! |--------|------|------------------------------------------------|
//! | 0      | 4    | magic `SPOS`                                   |
//! | 4      | 1    | version (1)                                    |
//! | 5      | 4    | sequence echo (u32)                            |
//! | 9      | 1    | status: 0 ok, 1 not homed, 2 no convergence    |
//! | 10     | 1    | converged (0 or 1)                             |
//! | 11     | 4    | iterations (u32)                               |
//! | 15     | 48   | x, y, z (mm), roll, pitch, yaw (deg) as f64    |
//! | 63     | 8    | residual, mm (f64)                             |

use thiserror::Error;

use crate::geometry::{Pose, LEG_COUNT};

pub const COUNT_MAGIC: [u8; 4] = *b"SENC";
pub const POSE_MAGIC: [u8; 4] = *b"SPOS";
pub const PROTOCOL_VERSION: u8 = 1;
pub const COUNT_PACKET_LEN: usize = 42;
pub const POSE_PACKET_LEN: usize = 71;
const RESERVED_FLAG_BITS: u8 = 0b1100_0000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PacketError {
    #[error("wrong packet size: expected {expected} bytes, got {found}")]
    WrongSize { expected: usize, found: usize },
    #[error("wrong magic {0:?}")]
    WrongMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    WrongVersion(u8),
    #[error("reserved flag bits set: {0:#04x}")]
    ReservedBits(u8),
    #[error("invalid status byte {0}")]
    InvalidStatus(u8),
    #[error("invalid converged byte {0}")]
    InvalidConverged(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountPacket {
    pub sequence: u32,
    pub timestamp_us: u64,
    pub index_flags: [bool; LEG_COUNT],
    pub counts: [i32; LEG_COUNT],
}

impl CountPacket {
    pub fn flags_byte(&self) -> u8 {
        self.index_flags
            .iter()
            .enumerate()
            .fold(0u8, |acc, (i, &f)| acc | ((f as u8) << i))
    }

    pub fn encode(&self) -> [u8; COUNT_PACKET_LEN] {
        let mut b = [0u8; COUNT_PACKET_LEN];
        b[0..4].copy_from_slice(&COUNT_MAGIC);
        b[4] = PROTOCOL_VERSION;
        b[5] = self.flags_byte();
        b[6..10].copy_from_slice(&self.sequence.to_le_bytes());
        b[10..18].copy_from_slice(&self.timestamp_us.to_le_bytes());
        for (i, c) in self.counts.iter().enumerate() {
            b[18 + 4 * i..22 + 4 * i].copy_from_slice(&c.to_le_bytes());
        }
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self, PacketError> {
        check_header(b, COUNT_PACKET_LEN, COUNT_MAGIC)?;
        let flags = b[5];
        if flags & RESERVED_FLAG_BITS != 0 {
            return Err(PacketError::ReservedBits(flags));
        }
        Ok(Self {
            sequence: u32::from_le_bytes(b[6..10].try_into().unwrap()),
            timestamp_us: u64::from_le_bytes(b[10..18].try_into().unwrap()),
            index_flags: std::array::from_fn(|i| flags & (1 << i) != 0),
            counts: std::array::from_fn(|i| i32::from_le_bytes(b[18 + 4 * i..22 + 4 * i].try_into().unwrap())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Ok = 0,
    NotHomed = 1,
    NoConvergence = 2,
}

impl SolveStatus {
    pub fn label(self) -> &'static str {
        match self {
            SolveStatus::Ok => "ok",
            SolveStatus::NotHomed => "not_homed",
            SolveStatus::NoConvergence => "no_convergence",
        }
    }

    fn from_byte(b: u8) -> Result<Self, PacketError> {
        match b {
            0 => Ok(SolveStatus::Ok),
            1 => Ok(SolveStatus::NotHomed),
            2 => Ok(SolveStatus::NoConvergence),
            other => Err(PacketError::InvalidStatus(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosePacket {
    pub sequence: u32,
    pub status: SolveStatus,
    pub converged: bool,
    pub iterations: u32,
    pub pose: Pose,
    pub residual_mm: f64,
}

impl PosePacket {
    pub fn not_homed(sequence: u32) -> Self {
        Self {
            sequence,
            status: SolveStatus::NotHomed,
            converged: false,
            iterations: 0,
            pose: Pose::IDENTITY,
            residual_mm: f64::NAN,
        }
    }

    pub fn encode(&self) -> [u8; POSE_PACKET_LEN] {
        let mut b = [0u8; POSE_PACKET_LEN];
        b[0..4].copy_from_slice(&POSE_MAGIC);
        b[4] = PROTOCOL_VERSION;
        b[5..9].copy_from_slice(&self.sequence.to_le_bytes());
        b[9] = self.status as u8;
        b[10] = self.converged as u8;
        b[11..15].copy_from_slice(&self.iterations.to_le_bytes());
        for (i, v) in self.pose.to_array().iter().enumerate() {
            b[15 + 8 * i..23 + 8 * i].copy_from_slice(&v.to_le_bytes());
        }
        b[63..71].copy_from_slice(&self.residual_mm.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self, PacketError> {
        check_header(b, POSE_PACKET_LEN, POSE_MAGIC)?;
        let converged = match b[10] {
            0 => false,
            1 => true,
            other => return Err(PacketError::InvalidConverged(other)),
        };
        let f = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        Ok(Self {
            sequence: u32::from_le_bytes(b[5..9].try_into().unwrap()),
            status: SolveStatus::from_byte(b[9])?,
            converged,
            iterations: u32::from_le_bytes(b[11..15].try_into().unwrap()),
            pose: Pose::from_array(std::array::from_fn(|i| f(15 + 8 * i))),
            residual_mm: f(63),
        })
    }
}

fn check_header(b: &[u8], len: usize, magic: [u8; 4]) -> Result<(), PacketError> {
    if b.len() != len {
        return Err(PacketError::WrongSize {
            expected: len,
            found: b.len(),
        });
    }
    let m: [u8; 4] = b[0..4].try_into().unwrap();
    if m != magic {
        return Err(PacketError::WrongMagic(m));
    }
    if b[4] != PROTOCOL_VERSION {
        return Err(PacketError::WrongVersion(b[4]));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn count_packet_layout() {
        let p = CountPacket {
            sequence: 0x0403_0201,
            timestamp_us: 0x0c0b_0a09_0807_0605,
            index_flags: [true, false, true, false, false, true],
            counts: [1, -1, 2, -2, 0x7fff_ffff, i32::MIN],
        };
        let b = p.encode();
        assert_eq!(b.len(), 42);
        assert_eq!(&b[0..4], b"SENC");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 0b0010_0101);
        assert_eq!(&b[6..10], &[1, 2, 3, 4]);
        assert_eq!(&b[10..18], &[5, 6, 7, 8, 9, 10, 11, 12]);
        assert_eq!(&b[18..22], &[1, 0, 0, 0]);
        assert_eq!(&b[22..26], &[0xff, 0xff, 0xff, 0xff]);
        assert_eq!(&b[38..42], &[0, 0, 0, 0x80]);
    }

    #[test]
    fn pose_packet_layout() {
        let p = PosePacket {
            sequence: 7,
            status: SolveStatus::NoConvergence,
            converged: false,
            iterations: 50,
            pose: Pose::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0),
            residual_mm: 0.25,
        };
        let b = p.encode();
        assert_eq!(b.len(), 71);
        assert_eq!(&b[0..4], b"SPOS");
        assert_eq!(&b[5..9], &[7, 0, 0, 0]);
        assert_eq!(b[9], 2);
        assert_eq!(b[10], 0);
        assert_eq!(&b[11..15], &[50, 0, 0, 0]);
        assert_eq!(&b[15..23], &1.0f64.to_le_bytes());
        assert_eq!(&b[63..71], &0.25f64.to_le_bytes());
    }

    #[test]
    fn decode_rejects_malformed() {
        let good = CountPacket {
            sequence: 1,
            timestamp_us: 2,
            index_flags: [false; 6],
            counts: [0; 6],
        }
        .encode();
        assert!(matches!(CountPacket::decode(&good[..41]), Err(PacketError::WrongSize { .. })));
        let mut extra = good.to_vec();
        extra.push(0);
        assert!(matches!(CountPacket::decode(&extra), Err(PacketError::WrongSize { .. })));
        let mut bad = good;
        bad[0] = b'X';
        assert!(matches!(CountPacket::decode(&bad), Err(PacketError::WrongMagic(_))));
        let mut bad = good;
        bad[4] = 2;
        assert_eq!(CountPacket::decode(&bad), Err(PacketError::WrongVersion(2)));
        let mut bad = good;
        bad[5] = 0x40;
        assert_eq!(CountPacket::decode(&bad), Err(PacketError::ReservedBits(0x40)));
        assert!(PosePacket::decode(&good).is_err());

        let mut pose = PosePacket::not_homed(3).encode();
        pose[9] = 9;
        assert_eq!(PosePacket::decode(&pose), Err(PacketError::InvalidStatus(9)));
    }

    fn any_pose_packet() -> impl Strategy<Value = PosePacket> {
        (
            any::<u32>(),
            0u8..3,
            any::<bool>(),
            any::<u32>(),
            prop::array::uniform6(any::<f64>()),
            any::<f64>(),
        )
            .prop_map(|(sequence, s, converged, iterations, p, residual_mm)| PosePacket {
                sequence,
                status: SolveStatus::from_byte(s).unwrap(),
                converged,
                iterations,
                pose: Pose::from_array(p),
                residual_mm,
            })
    }

    proptest! {
        #[test]
        fn count_packet_round_trip(
            sequence in any::<u32>(),
            timestamp_us in any::<u64>(),
            flags in prop::array::uniform6(any::<bool>()),
            counts in prop::array::uniform6(any::<i32>()),
        ) {
            let p = CountPacket { sequence, timestamp_us, index_flags: flags, counts };
            let b = p.encode();
            prop_assert_eq!(CountPacket::decode(&b).unwrap(), p);
            prop_assert_eq!(b[5] & 0xc0, 0);
        }

        #[test]
        fn count_packet_bytes_round_trip(bytes in prop::array::uniform32(any::<u8>()), tail in prop::array::uniform10(any::<u8>()), flags in 0u8..64) {
            let mut b = [0u8; COUNT_PACKET_LEN];
            b[..32].copy_from_slice(&bytes);
            b[32..].copy_from_slice(&tail);
            b[0..4].copy_from_slice(b"SENC");
            b[4] = 1;
            b[5] = flags;
            prop_assert_eq!(CountPacket::decode(&b).unwrap().encode(), b);
        }

        #[test]
        fn pose_packet_round_trip(p in any_pose_packet()) {
            let b = p.encode();
            let back = PosePacket::decode(&b).unwrap();
            prop_assert_eq!(back.encode(), b);
            prop_assert_eq!(back.sequence, p.sequence);
            prop_assert_eq!(back.status, p.status);
            prop_assert_eq!(back.iterations, p.iterations);
        }
    }
}
