// Copyright 2026 The StoreTorrent Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/* StoreTorrent C API.
 *
 * Every function returns an st_status. On failure a description of the
 * error is available from st_last_error() on the same thread until the next
 * call. Strings returned through char** out-parameters are heap allocated and
 * must be released with st_free(); so must buffers from st_file_get().
 */
#ifndef STORETORRENT_H
#define STORETORRENT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define ST_API __declspec(dllexport)
#else
#define ST_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum st_status {
  ST_OK = 0,
  ST_ERR_INVALID_ARGUMENT = 1,
  ST_ERR_NOT_FOUND = 2,
  ST_ERR_ALREADY_EXISTS = 3,
  ST_ERR_UNAVAILABLE = 4,
  ST_ERR_INTEGRITY = 5,
  ST_ERR_AUTH = 6,
  ST_ERR_QUOTA = 7,
  ST_ERR_CAPACITY = 8,
  ST_ERR_IO = 9,
  ST_ERR_PROTOCOL = 10,
  ST_ERR_TRACKER = 11,
  ST_ERR_TIMEOUT = 12,
  ST_ERR_DUPLICATE_RANK = 13,
  ST_ERR_PEER_FAILED = 14,
  ST_ERR_INTERNAL = 15
} st_status;

typedef struct st_config st_config;
typedef struct st_file st_file;
typedef struct st_cluster st_cluster;

ST_API const char* st_last_error(void);
ST_API const char* st_status_name(st_status status);
ST_API void st_free(void* p);

/* Logging: "trace", "debug", "info", "warn", "error", "off". */
ST_API st_status st_set_log_level(const char* level);

/* ---- client configuration ---- */

ST_API st_status st_config_new(const char* tracker_url, const char* meta_root, st_config** out);
/* Keys: client_id, op_timeout_ms, tracker_timeout_ms, pipeline_depth,
 * group_commit_size, blocksize, commit_linger_ms, retry_budget, seed,
 * local_peer ("host:port"). */
ST_API st_status st_config_set(st_config* config, const char* key, const char* value);
ST_API void st_config_free(st_config* config);

/* ---- files ---- */

ST_API st_status st_file_create(const st_config* config, const char* path, const char* ft, uint64_t est_size,
                                uint64_t quota_bytes, st_file** out);
ST_API st_status st_file_open(const st_config* config, const char* path, st_file** out);
/* Flushes outstanding puts, then releases the handle. The handle is freed
 * even when the flush fails. */
ST_API st_status st_file_close(st_file* file);

ST_API st_status st_file_put(st_file* file, const char* name, const void* data, size_t len);
/* *accepted is 0 when the pipeline is full; call st_file_poll and retry. */
ST_API st_status st_file_queue_put(st_file* file, const char* name, const void* data, size_t len, int* accepted);
/* JSON array of {"name","committed","code","message"}. */
ST_API st_status st_file_poll(st_file* file, int wait_ms, char** events_json);
ST_API st_status st_file_flush(st_file* file);

ST_API st_status st_file_get(st_file* file, const char* name, void** data, size_t* len);
/* JSON array of {"name","path"}. */
ST_API st_status st_file_get_local(st_file* file, size_t local_rank, size_t local_size, char** entries_json);
/* *deferred is 1 when the metadata delete is queued for a later retry. */
ST_API st_status st_file_remove(st_file* file, const char* name, int* deferred);
ST_API st_status st_file_rebalance(st_file* file, size_t* rewritten);

/* {"path","file_id","ft","est_size","quota_bytes","quota_used","peerlist",
 *  "failed","writable","records"} */
ST_API st_status st_file_info(st_file* file, char** info_json);
/* JSON array of {"name","size","crc","locations"}. */
ST_API st_status st_file_records(st_file* file, char** records_json);
ST_API st_status st_file_stat(st_file* file, const char* name, char** record_json);

ST_API st_status st_tracker_status(const char* tracker_url, char** status_json);

/* ---- daemons (block until SIGTERM or SIGINT) ---- */

/* {"root","bind","port","key_file","announce_ms","k_missed","seed",
 *  "target_bytes"} */
ST_API st_status st_run_tracker(const char* config_json);
/* {"base","bind","advertise","port","tracker","key_file","meta_root",
 *  "announce_ms","capacity","node_id","scrub_interval_ms",
 *  "scrub_min_age_ms","durable"} */
ST_API st_status st_run_peer(const char* config_json);
/* Scrubs one stopped peer's store against the infofiles in meta_root. */
ST_API st_status st_scrub_store(const char* peer_base, const char* meta_root, const char* path, int64_t min_age_ms,
                                size_t* removed);

/* ---- availability model ---- */

ST_API st_status st_availability_paper(int n, int copies, int g, double* out);
ST_API st_status st_availability_worked_case(int n, int copies, double* out);
ST_API st_status st_availability_exact(int n, int copies, int c, double* out);
ST_API st_status st_availability_raid1(int n, int stripe, int c, double* out);
/* {"n","copies","c","records","seed","workers","failed":[...]} ->
 * {"fraction","half_width","unavailable","records"} */
ST_API st_status st_availability_simulate(const char* model_json, char** result_json);
/* rows_json: [[N,F,c],...] */
ST_API st_status st_availability_csv(const char* rows_json, uint64_t records, uint64_t seed, unsigned workers,
                                     char** csv);

/* ---- local cluster harness ---- */

/* {"peers","base","port_base","announce_ms","k_missed","durable","key_seed",
 *  "seed","peer_capacity","target_bytes_per_peer","scrub_interval_ms",
 *  "scrub_min_age_ms","st_binary"} */
ST_API st_status st_cluster_spawn(const char* spec_json, st_cluster** out);
ST_API st_status st_cluster_attach(const char* base, st_cluster** out);
/* Releases the handle. A spawned cluster is shut down first unless
 * detached. */
ST_API void st_cluster_free(st_cluster* cluster);
ST_API st_status st_cluster_detach(st_cluster* cluster);
ST_API st_status st_cluster_shutdown(st_cluster* cluster);
/* {"base","tracker","meta_root","key_file","peers":[...]} */
ST_API st_status st_cluster_info(st_cluster* cluster, char** info_json);
ST_API st_status st_cluster_status(st_cluster* cluster, char** status_json);
/* {"peer","kind","path","name"}; kind is kill, hang, resume,
 * drop_connections, disk_corrupt, rejoin_wiped or restart. */
ST_API st_status st_cluster_fault(st_cluster* cluster, const char* action_json);
ST_API st_status st_cluster_expand(st_cluster* cluster, size_t n, char** added_json);
ST_API st_status st_cluster_scrub(st_cluster* cluster, size_t* signalled);
/* kind: "write", "read" or "get_local". */
ST_API st_status st_cluster_bench(st_cluster* cluster, const char* kind, const char* spec_json, char** report_json);
/* Writes a client config for this cluster; local_peer < 0 for none. */
ST_API st_status st_cluster_config(st_cluster* cluster, long local_peer, st_config** out);

/* Entry point of a benchmark client process. Returns a process exit code. */
ST_API int st_bench_worker_main(int in_fd, int out_fd);

#ifdef __cplusplus
}
#endif

#endif /* STORETORRENT_H */
