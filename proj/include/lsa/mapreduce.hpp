#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lsa/common.hpp"

namespace lsa::mr {

/// Key/value record with the sequence number assigned at emit time from
/// (input split id, emit counter). (key, seq) is the total order of the
/// shuffle, which makes every downstream summation order deterministic.
struct KvRecord {
  std::string key;
  std::string value;
  uint64_t seq = 0;
};

inline uint64_t make_seq(uint32_t producer_id, uint64_t counter) {
  return (uint64_t(producer_id) << 40) | (counter & ((uint64_t(1) << 40) - 1));
}

/// Stable shuffle partitioner: 64-bit FNV-1a of the key bytes, mod R.
uint32_t partition_of(std::string_view key, uint32_t partitions);

class JobError : public std::runtime_error {
 public:
  explicit JobError(const std::string& what) : std::runtime_error(what) {}
};

class BroadcastMissingError : public std::runtime_error {
 public:
  explicit BroadcastMissingError(const std::string& what) : std::runtime_error(what) {}
};

class TaskContext {
 public:
  TaskContext(const std::string* broadcast, uint64_t broadcast_hash, uint32_t task_id)
      : broadcast_(broadcast), broadcast_hash_(broadcast_hash), task_id_(task_id) {}

  /// The job's broadcast payload; every task observes identical bytes.
  /// Verified against the hash recorded in the job manifest.
  std::string_view broadcast_read() const;
  uint32_t task_id() const { return task_id_; }

 private:
  const std::string* broadcast_;
  uint64_t broadcast_hash_;
  uint32_t task_id_;
};

class Emitter {
 public:
  virtual ~Emitter() = default;
  virtual void emit(std::string_view key, std::string_view value) = 0;
};

/// Values of one key, streamed in seq order.
class ValueStream {
 public:
  virtual ~ValueStream() = default;
  virtual const std::string* next() = 0;
};

using MapFn = std::function<void(TaskContext&, std::string_view split, Emitter&)>;
using ReduceFn = std::function<void(TaskContext&, std::string_view key, ValueStream&, Emitter&)>;

class FunctionRegistry {
 public:
  void add_map(const std::string& name, MapFn fn) { maps_[name] = std::move(fn); }
  void add_reduce(const std::string& name, ReduceFn fn) { reduces_[name] = std::move(fn); }
  const MapFn& map(const std::string& name) const;
  const ReduceFn& reduce(const std::string& name) const;

 private:
  std::map<std::string, MapFn> maps_;
  std::map<std::string, ReduceFn> reduces_;
};

struct JobSpec {
  std::string name = "job";
  std::vector<std::string> splits;  // opaque descriptors handed to the map fn
  std::string map_fn;
  std::string reduce_fn;
  uint32_t partitions = 1;
  std::optional<std::string> broadcast;
  std::filesystem::path scratch;
  std::filesystem::path output_dir;
  size_t spill_bytes = size_t(256) << 20;
  int max_attempts = 3;
};

struct JobResult {
  std::vector<std::filesystem::path> outputs;  // populated partitions, ascending
  std::filesystem::path manifest_path;
  uint64_t records_mapped = 0;
  uint64_t records_reduced_in = 0;
  size_t peak_buffer_bytes = 0;
};

/// Runs map -> partitioned sorted shuffle -> reduce with the given worker
/// count. Output bytes are invariant to the worker count and to reruns:
/// every record carries (key, seq), runs are merged in that total order and
/// task outputs commit by write-temp-then-rename.
JobResult run_job(const JobSpec& spec, const FunctionRegistry& registry, int workers);

/// Streaming reader for run/output files (length-prefixed key/seq/value).
class KvFileReader {
 public:
  explicit KvFileReader(const std::filesystem::path& path);
  ~KvFileReader();
  KvFileReader(KvFileReader&&) noexcept;
  KvFileReader& operator=(KvFileReader&&) = delete;

  bool next(KvRecord& rec);

 private:
  std::ifstream is_;
};

void append_kv(std::ostream& os, std::string_view key, uint64_t seq, std::string_view value);

}  // namespace lsa::mr
