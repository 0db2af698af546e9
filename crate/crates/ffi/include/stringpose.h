#ifndef STRINGPOSE_H
#define STRINGPOSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SP_LEG_COUNT 6

#define SP_COUNT_PACKET_LEN 42

#define SP_POSE_PACKET_LEN 71

typedef enum SpStatus {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_POINTER = 1,
  SP_STATUS_INVALID_ARGUMENT = 2,
  SP_STATUS_NO_CONVERGENCE = 3,
  SP_STATUS_SINGULAR_CONFIGURATION = 4,
  SP_STATUS_DEGENERATE_LEG = 5,
  SP_STATUS_NOT_HOMED = 6,
  SP_STATUS_BAD_PACKET = 7,
  SP_STATUS_BUFFER_TOO_SMALL = 8,
  SP_STATUS_CONFIG_ERROR = 9,
  SP_STATUS_PANIC = 10,
} SpStatus;

/**
 * Opaque encoder channel.
 */
typedef struct SpEncoder SpEncoder;

/**
 * Opaque platform geometry.
 */
typedef struct SpGeometry SpGeometry;

typedef struct SpSolverConfig {
  /**
   * Stop once the leg-length residual falls below this, mm.
   */
  double length_tolerance;
  /**
   * Maximum inverse-kinematics evaluations.
   */
  uint32_t max_iterations;
  /**
   * Tikhonov damping of the pseudo-inverse; 0 disables it.
   */
  double damping;
} SpSolverConfig;

typedef struct SpSolveResult {
  double pose[6];
  uint32_t iterations;
  double residual;
  /**
   * 1 when the residual met the tolerance.
   */
  uint8_t converged;
} SpSolveResult;

typedef struct SpCountPacket {
  uint32_t sequence;
  uint64_t timestamp_us;
  /**
   * Bit i set: index pulse seen on channel i since the previous packet.
   */
  uint8_t index_flags;
  int32_t counts[6];
} SpCountPacket;

typedef struct SpPosePacket {
  uint32_t sequence;
  /**
   * 0 ok, 1 not homed, 2 no convergence.
   */
  uint8_t status;
  uint8_t converged;
  uint32_t iterations;
  double pose[6];
  double residual;
} SpPosePacket;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Human-readable name of a status code. The string is static.
 */
const char *sp_status_message(enum SpStatus status);

/**
 * Creates the packaged default geometry.
 */
enum SpStatus sp_geometry_new_default(struct SpGeometry **out);

/**
 * Creates a geometry from a NUL-terminated JSON configuration document.
 */
enum SpStatus sp_geometry_from_json(const char *json, struct SpGeometry **out);

/**
 * Releases a geometry. Passing NULL is a no-op.
 */
void sp_geometry_free(struct SpGeometry *geometry);

/**
 * Default solver settings (0.01 mm tolerance, 50 iterations, no damping).
 */
struct SpSolverConfig sp_solver_config_default(void);

/**
 * Leg lengths for `pose`.
 */
enum SpStatus sp_inverse_kinematics(const struct SpGeometry *geometry,
                                    const double *pose,
                                    double *out_lengths);

/**
 * Pose for measured `lengths`. `guess` and `config` may be NULL (nominal
 * pose, default settings). On `NO_CONVERGENCE` the best iterate is still
 * written to `out`.
 */
enum SpStatus sp_forward_kinematics(const struct SpGeometry *geometry,
                                    const double *lengths,
                                    const double *guess,
                                    const struct SpSolverConfig *config,
                                    struct SpSolveResult *out);

/**
 * Creates an encoder channel with the default 60 counts/mm, 200 mm range
 * and 4000-count index spacing.
 */
enum SpStatus sp_encoder_new(double first_index_length_mm, struct SpEncoder **out);

/**
 * Releases an encoder channel. Passing NULL is a no-op.
 */
void sp_encoder_free(struct SpEncoder *encoder);

/**
 * Advances the count by `delta`; a nonzero `index_seen` latches the first index.
 */
enum SpStatus sp_encoder_feed(struct SpEncoder *encoder, int64_t delta, uint8_t index_seen);

/**
 * Clears the index latch so the channel can be homed again.
 */
enum SpStatus sp_encoder_reset_latch(struct SpEncoder *encoder);

/**
 * Writes 1 to `out` when the channel has latched an index pulse.
 */
enum SpStatus sp_encoder_is_homed(const struct SpEncoder *encoder, uint8_t *out);

/**
 * Absolute string length in mm; `NOT_HOMED` before the first index pulse.
 */
enum SpStatus sp_encoder_absolute_length(const struct SpEncoder *encoder, double *out_mm);

/**
 * Serializes a count packet into `buf` (at least `SP_COUNT_PACKET_LEN` bytes).
 */
enum SpStatus sp_count_packet_encode(const struct SpCountPacket *packet, uint8_t *buf, size_t len);

/**
 * Parses exactly `len` bytes as a count packet.
 */
enum SpStatus sp_count_packet_decode(const uint8_t *buf, size_t len, struct SpCountPacket *out);

/**
 * Serializes a pose packet into `buf` (at least `SP_POSE_PACKET_LEN` bytes).
 */
enum SpStatus sp_pose_packet_encode(const struct SpPosePacket *packet, uint8_t *buf, size_t len);

/**
 * Parses exactly `len` bytes as a pose packet.
 */
enum SpStatus sp_pose_packet_decode(const uint8_t *buf, size_t len, struct SpPosePacket *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STRINGPOSE_H */
