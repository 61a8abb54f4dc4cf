#ifndef TCPMETRO_H
#define TCPMETRO_H

#include <stdint.h>
#include <stddef.h>

typedef enum TmStatus {
  TM_STATUS_OK = 0,
  TM_STATUS_NULL_ARGUMENT = 1,
  TM_STATUS_INVALID_UTF8 = 2,
  TM_STATUS_BAD_KEY = 3,
  TM_STATUS_CONFIG = 4,
  /**
   * Unreadable or malformed capture file.
   */
  TM_STATUS_INGEST = 5,
  TM_STATUS_IO = 6,
  /**
   * Report construction or output failed.
   */
  TM_STATUS_REPORT = 7,
  /**
   * No key was configured, so nothing address-bearing is written.
   */
  TM_STATUS_REFUSES_RAW_ADDRESSES = 8,
  TM_STATUS_PANIC = 9,
} TmStatus;

/**
 * Result of analyzing the traces named by a run config.
 */
typedef struct TmAnalysis TmAnalysis;

/**
 * Keyed prefix-preserving address map.
 */
typedef struct TmAnonymizer TmAnonymizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL after a
 * successful one. Valid until the next call into this library.
 */
const char *tm_last_error(void);

/**
 * Creates an anonymizer from a 32-character hex key.
 *
 * # Safety
 * `key_hex` must be NULL or a NUL-terminated string; `out` must be NULL or
 * writable.
 */
enum TmStatus tm_anonymizer_new(const char *key_hex, struct TmAnonymizer **out);

/**
 * Maps one host-order IPv4 address.
 *
 * # Safety
 * `h` must come from [`tm_anonymizer_new`]; `out` must be writable.
 */
enum TmStatus tm_anonymizer_map(const struct TmAnonymizer *h, uint32_t addr, uint32_t *out);

/**
 * Rewrites every IPv4 address of a pcap file into a new file.
 *
 * # Safety
 * `h` must come from [`tm_anonymizer_new`]; paths must be NUL-terminated.
 */
enum TmStatus tm_anonymizer_rewrite_trace(const struct TmAnonymizer *h,
                                          const char *input,
                                          const char *output);

/**
 * # Safety
 * `h` must be NULL or come from [`tm_anonymizer_new`], and not be used again.
 */
void tm_anonymizer_free(struct TmAnonymizer *h);

/**
 * Loads a TOML run config and analyzes its traces. The key is taken from
 * `TCPMETRO_ANON_KEY` or the config, as for the command line tool.
 *
 * # Safety
 * `config_path` must be NUL-terminated; `out` must be writable.
 */
enum TmStatus tm_analysis_run(const char *config_path, struct TmAnalysis **out);

/**
 * Number of flows found.
 *
 * # Safety
 * `h` must be NULL or come from [`tm_analysis_run`].
 */
uint64_t tm_analysis_flow_count(const struct TmAnalysis *h);

/**
 * Number of captured frames read, decodable or not.
 *
 * # Safety
 * `h` must be NULL or come from [`tm_analysis_run`].
 */
uint64_t tm_analysis_packet_count(const struct TmAnalysis *h);

/**
 * Number of congestion events over all TCP flows.
 *
 * # Safety
 * `h` must be NULL or come from [`tm_analysis_run`].
 */
uint64_t tm_analysis_congestion_events(const struct TmAnalysis *h);

/**
 * Writes the report files into `out_dir`, or into the config's `out` when
 * `out_dir` is NULL.
 *
 * # Safety
 * `h` must come from [`tm_analysis_run`]; `out_dir` must be NULL or
 * NUL-terminated.
 */
enum TmStatus tm_analysis_write(const struct TmAnalysis *h, const char *out_dir);

/**
 * # Safety
 * `h` must be NULL or come from [`tm_analysis_run`], and not be used again.
 */
void tm_analysis_free(struct TmAnalysis *h);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TCPMETRO_H */
