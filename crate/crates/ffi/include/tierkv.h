#ifndef TIERKV_H
#define TIERKV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum KvtStatus {
  KVT_STATUS_OK = 0,
  KVT_STATUS_NULL_POINTER = 1,
  KVT_STATUS_INVALID_ARGUMENT = 2,
  KVT_STATUS_CONFIG = 3,
  KVT_STATUS_CAPACITY = 4,
  KVT_STATUS_CONSISTENCY = 5,
  KVT_STATUS_STATE = 6,
  KVT_STATUS_PARSE = 7,
  KVT_STATUS_VALIDATION = 8,
  KVT_STATUS_IO = 9,
  KVT_STATUS_INTERNAL = 10,
  KVT_STATUS_PANIC = 11,
} KvtStatus;

// Architecture codes accepted by [`kvt_simulate`].
enum KvtArchitecture
#if __STDC_VERSION__ >= 202311L
  : uint32_t
#endif // __STDC_VERSION__ >= 202311L
 {
  KVT_ARCHITECTURE_SSD_BASELINE = 0,
  KVT_ARCHITECTURE_PREFETCH = 1,
  KVT_ARCHITECTURE_CSD = 2,
  KVT_ARCHITECTURE_CSD_APP = 3,
};
#if __STDC_VERSION__ >= 202311L
typedef enum KvtArchitecture KvtArchitecture;
#else
typedef uint32_t KvtArchitecture;
#endif // __STDC_VERSION__ >= 202311L

// One layer's CPU/SSD pools.
typedef struct KvtPool KvtPool;

// Result of one simulated run.
typedef struct KvtReport KvtReport;

// Run configuration. `beta <= 0` selects the throughput ratio;
// `hit_decay <= 0` disables decay.
typedef struct KvtSimConfig {
  uint64_t n_prompt;
  uint64_t output_len;
  uint64_t layers;
  uint64_t heads;
  uint64_t dims;
  double alpha;
  uint64_t block_size;
  double beta;
  uint64_t batch;
  uint64_t seed;
  double hot_fraction;
  double temperature;
  double hit_decay;
} KvtSimConfig;

typedef struct KvtDeviceProfile {
  double f_c;
  double f_s;
  double bw_ssd_host;
  double bw_host_gpu;
  uint64_t m0;
  uint64_t headroom;
  double gpu_layer_time;
  double gpu_token_time;
  double fixed_latency;
  // Nonzero to fetch SSD-resident KV straight to the GPU.
  uint8_t p2p_fetch;
} KvtDeviceProfile;

typedef struct KvtCapacityPlan {
  double target_beta;
  double beta;
  double m_c;
  double m_s;
  double total;
  uint8_t capped;
} KvtCapacityPlan;

typedef struct KvtMetrics {
  uint64_t steps;
  double makespan;
  double decode_start;
  double decode_makespan;
  double mean_step_latency;
  double gpu_busy;
  double gpu_idle;
  double gpu_idle_fraction;
  double serialized_makespan;
  uint64_t bytes_ssd_host;
  uint64_t bytes_host_gpu;
  uint64_t score_bytes;
  uint64_t spill_bytes;
  uint64_t migration_bytes;
  uint64_t migrations_up;
  uint64_t migrations_down;
  double realized_beta;
} KvtMetrics;

typedef struct KvtMigrationCounts {
  uint64_t up;
  uint64_t down;
  uint64_t bytes_up;
  uint64_t bytes_down;
  uint8_t insufficient_evictable;
} KvtMigrationCounts;

typedef struct KvtPoolStats {
  uint64_t tokens;
  uint64_t cpu_tokens;
  uint64_t ssd_tokens;
  uint64_t cpu_bytes;
  uint64_t ssd_bytes;
  uint64_t hit_table_bytes;
} KvtPoolStats;

// Copies the calling thread's last error message, NUL-terminated and
// truncated to `capacity` bytes, into `buffer`. Returns the full message
// length without the terminator. `buffer` may be null to query the length.
size_t kvt_last_error_message(char *buffer, size_t capacity);

// Library version as a static NUL-terminated string.
const char *kvt_version(void);

// Fills `out` with the library's default run configuration.
enum KvtStatus kvt_sim_config_default(struct KvtSimConfig *out);

// Fills `out` with the library's default device profile.
enum KvtStatus kvt_device_profile_default(struct KvtDeviceProfile *out);

// Splits `total_bytes` between CPU and SSD in the throughput ratio.
enum KvtStatus kvt_solve_beta(const struct KvtDeviceProfile *profile,
                              double total_bytes,
                              struct KvtCapacityPlan *out);

// Importance of one key (`heads * dims` floats) for one query.
enum KvtStatus kvt_score_token(const float *query,
                               const float *key,
                               size_t heads,
                               size_t dims,
                               double *out);

// Exhaustive top-`k` over `n_tokens` keys stored back to back; key `i` has
// position `i`. Writes `k` positions in rank order to `out`.
enum KvtStatus kvt_top_k(const float *query,
                         const float *keys,
                         size_t n_tokens,
                         size_t heads,
                         size_t dims,
                         size_t k,
                         uint32_t *out);

// Simulates `arch` (a [`KvtArchitecture`] code) on a synthetic trace built
// from `config`. On success `*out` owns a report for [`kvt_report_free`].
enum KvtStatus kvt_simulate(uint32_t arch,
                            const struct KvtSimConfig *config,
                            const struct KvtDeviceProfile *profile,
                            struct KvtReport **out);

enum KvtStatus kvt_report_metrics(const struct KvtReport *report, struct KvtMetrics *out);

// Latency of decode step `step`.
enum KvtStatus kvt_report_step_latency(const struct KvtReport *report, size_t step, double *out);

// Writes the run's events as JSON lines to `path`.
enum KvtStatus kvt_report_write_events(const struct KvtReport *report, const char *path);

// Writes the run's metrics as a CSV header plus one row to `path`.
enum KvtStatus kvt_report_write_csv(const struct KvtReport *report, const char *path);

// Releases a report; null is ignored.
void kvt_report_free(struct KvtReport *report);

// Creates an empty pool pair for one layer. `*out` is freed with
// [`kvt_pool_free`].
enum KvtStatus kvt_pool_new(size_t layer,
                            double alpha,
                            size_t capacity_bytes,
                            size_t heads,
                            size_t dims,
                            struct KvtPool **out);

// Appends the key (`heads * dims` floats) of token `pos`; spills are
// reported in `out` (may be null).
enum KvtStatus kvt_pool_append(struct KvtPool *pool,
                               uint32_t pos,
                               const float *key,
                               struct KvtMigrationCounts *out);

// Counts one hit for each of `count` positions.
enum KvtStatus kvt_pool_record_hits(struct KvtPool *pool, const uint32_t *positions, size_t count);

// Promotes pinned SSD tokens and demotes as many CPU tokens.
enum KvtStatus kvt_pool_rebalance(struct KvtPool *pool,
                                  double alpha,
                                  struct KvtMigrationCounts *out);

enum KvtStatus kvt_pool_stats(const struct KvtPool *pool, struct KvtPoolStats *out);

// Selects the important tokens of the pool for `query` with score blocks of
// `block_size`. Writes up to `capacity` positions in rank order to `out`
// and the selection size to `written`; `score_bytes` (may be null) receives
// the SSD-to-CPU score traffic.
enum KvtStatus kvt_pool_select(const struct KvtPool *pool,
                               const float *query,
                               size_t block_size,
                               double alpha,
                               uint32_t *out,
                               size_t capacity,
                               size_t *written,
                               uint64_t *score_bytes);

// Releases a pool; null is ignored.
void kvt_pool_free(struct KvtPool *pool);

#endif  /* TIERKV_H */
