#include "lsa/mapreduce.hpp"

#include <algorithm>
#include <atomic>
#include <memory>
#include <mutex>
#include <queue>
#include <thread>

#include <nlohmann/json.hpp>

namespace lsa::mr {

using json = nlohmann::json;
namespace fs = std::filesystem;

uint32_t partition_of(std::string_view key, uint32_t partitions) {
  return uint32_t(fnv1a64(key) % partitions);
}

std::string_view TaskContext::broadcast_read() const {
  if (!broadcast_)
    throw BroadcastMissingError("task requested a broadcast payload but the job has none");
  if (fnv1a64(*broadcast_) != broadcast_hash_)
    throw JobError("broadcast payload does not match the manifest hash");
  return *broadcast_;
}

const MapFn& FunctionRegistry::map(const std::string& name) const {
  auto it = maps_.find(name);
  if (it == maps_.end()) throw JobError("unknown map function: " + name);
  return it->second;
}

const ReduceFn& FunctionRegistry::reduce(const std::string& name) const {
  auto it = reduces_.find(name);
  if (it == reduces_.end()) throw JobError("unknown reduce function: " + name);
  return it->second;
}

void append_kv(std::ostream& os, std::string_view key, uint64_t seq, std::string_view value) {
  BinaryWriter w(os);
  w.u32(uint32_t(key.size()));
  w.u32(uint32_t(value.size()));
  w.u64(seq);
  w.bytes(key);
  w.bytes(value);
}

KvFileReader::KvFileReader(const fs::path& path) : is_(open_in(path)) {}
KvFileReader::~KvFileReader() = default;
KvFileReader::KvFileReader(KvFileReader&&) noexcept = default;

bool KvFileReader::next(KvRecord& rec) {
  if (is_.peek() == std::char_traits<char>::eof()) return false;
  BinaryReader r(is_);
  uint32_t klen = r.u32();
  uint32_t vlen = r.u32();
  rec.seq = r.u64();
  rec.key.resize(klen);
  if (klen) r.raw(rec.key.data(), klen);
  rec.value.resize(vlen);
  if (vlen) r.raw(rec.value.data(), vlen);
  return true;
}

namespace {

constexpr size_t kRecordOverhead = 16 + 2 * sizeof(std::string);

/// Map-side emitter: buffers records, spills sorted per-partition runs once
/// the buffer exceeds the budget.
class SpillingEmitter : public Emitter {
 public:
  SpillingEmitter(uint32_t split_id, uint32_t partitions, size_t spill_bytes, fs::path task_dir)
      : split_id_(split_id),
        partitions_(partitions),
        spill_bytes_(spill_bytes),
        task_dir_(std::move(task_dir)) {}

  void emit(std::string_view key, std::string_view value) override {
    buffered_bytes_ += key.size() + value.size() + kRecordOverhead;
    records_.push_back(KvRecord{std::string(key), std::string(value), make_seq(split_id_, counter_++)});
    peak_bytes_ = std::max(peak_bytes_, buffered_bytes_);
    if (buffered_bytes_ >= spill_bytes_) spill();
  }

  void finish() {
    if (!records_.empty()) spill();
  }

  uint64_t emitted() const { return counter_; }
  size_t peak_bytes() const { return peak_bytes_; }

 private:
  void spill() {
    std::stable_sort(records_.begin(), records_.end(), [](const KvRecord& a, const KvRecord& b) {
      return a.key != b.key ? a.key < b.key : a.seq < b.seq;
    });
    std::vector<std::ofstream> outs(partitions_);
    for (const auto& rec : records_) {
      uint32_t p = partition_of(rec.key, partitions_);
      if (!outs[p].is_open()) {
        char name[64];
        std::snprintf(name, sizeof name, "p%05u_r%04u.run", p, run_index_);
        outs[p] = open_out(task_dir_ / name);
      }
      append_kv(outs[p], rec.key, rec.seq, rec.value);
    }
    ++run_index_;
    records_.clear();
    buffered_bytes_ = 0;
  }

  uint32_t split_id_;
  uint32_t partitions_;
  size_t spill_bytes_;
  fs::path task_dir_;
  std::vector<KvRecord> records_;
  size_t buffered_bytes_ = 0;
  size_t peak_bytes_ = 0;
  uint64_t counter_ = 0;
  uint32_t run_index_ = 0;
};

/// Reduce-side emitter writing the partition output file.
class OutputEmitter : public Emitter {
 public:
  OutputEmitter(std::ostream& os, uint32_t partition) : os_(os), partition_(partition) {}
  void emit(std::string_view key, std::string_view value) override {
    append_kv(os_, key, make_seq(partition_, counter_), value);
    ++counter_;
  }
  uint64_t emitted() const { return counter_; }

 private:
  std::ostream& os_;
  uint32_t partition_;
  uint64_t counter_ = 0;
};

struct RunCursor {
  KvFileReader reader;
  KvRecord rec;
};

struct CursorOrder {
  // Min-heap over (key, seq); (key, seq) pairs are unique within a job.
  bool operator()(const RunCursor* a, const RunCursor* b) const {
    return a->rec.key != b->rec.key ? a->rec.key > b->rec.key : a->rec.seq > b->rec.seq;
  }
};

/// Streams one key's values out of the shuffle merge heap.
class MergeValueStream : public ValueStream {
 public:
  MergeValueStream(std::priority_queue<RunCursor*, std::vector<RunCursor*>, CursorOrder>& heap,
                   std::string key)
      : heap_(heap), key_(std::move(key)) {}

  const std::string* next() override {
    if (done_) return nullptr;
    if (heap_.empty() || heap_.top()->rec.key != key_) {
      done_ = true;
      return nullptr;
    }
    RunCursor* top = heap_.top();
    heap_.pop();
    current_ = std::move(top->rec.value);
    ++consumed_;
    if (top->reader.next(top->rec)) heap_.push(top);
    return &current_;
  }

  /// Drains unread values so the merge can advance to the next key.
  void drain() {
    while (next() != nullptr) {
    }
  }

  const std::string& key() const { return key_; }
  uint64_t consumed() const { return consumed_; }

 private:
  std::priority_queue<RunCursor*, std::vector<RunCursor*>, CursorOrder>& heap_;
  std::string key_;
  std::string current_;
  bool done_ = false;
  uint64_t consumed_ = 0;
};

/// Runs tasks over a bounded worker pool with per-task retry. Task indices
/// are handed out atomically; outputs must commit idempotently.
void run_pool(size_t task_count, int workers, int max_attempts,
              const std::function<void(size_t)>& task, const std::function<std::string(size_t)>& describe) {
  std::atomic<size_t> next{0};
  std::mutex err_mutex;
  std::string first_error;

  auto body = [&]() {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= task_count) return;
      {
        std::lock_guard lock(err_mutex);
        if (!first_error.empty()) return;
      }
      int attempt = 0;
      for (;;) {
        try {
          task(i);
          break;
        } catch (const std::exception& e) {
          if (++attempt >= max_attempts) {
            std::lock_guard lock(err_mutex);
            if (first_error.empty())
              first_error = describe(i) + " failed after " + std::to_string(attempt) +
                            " attempts: " + e.what();
            return;
          }
        }
      }
    }
  };

  if (workers <= 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(size_t(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(body);
    for (auto& th : pool) th.join();
  }
  if (!first_error.empty()) throw JobError(first_error);
}

}  // namespace

JobResult run_job(const JobSpec& spec, const FunctionRegistry& registry, int workers) {
  if (spec.partitions < 1) throw JobError("job needs at least one partition");
  const MapFn& map_fn = registry.map(spec.map_fn);
  const ReduceFn& reduce_fn = registry.reduce(spec.reduce_fn);

  const fs::path job_dir = spec.scratch / spec.name;
  const fs::path maps_dir = job_dir / "maps";
  fs::create_directories(maps_dir);
  fs::create_directories(spec.output_dir);

  const uint64_t broadcast_hash = spec.broadcast ? fnv1a64(*spec.broadcast) : 0;

  // ---- map phase ----
  std::vector<uint64_t> emitted(spec.splits.size(), 0);
  std::vector<size_t> peaks(spec.splits.size(), 0);
  run_pool(
      spec.splits.size(), workers, spec.max_attempts,
      [&](size_t i) {
        char dirname[32];
        std::snprintf(dirname, sizeof dirname, "split_%05zu", i);
        fs::path done_dir = maps_dir / dirname;
        if (fs::exists(done_dir)) fs::remove_all(done_dir);  // stale retry output
        fs::path tmp_dir = maps_dir / (std::string(dirname) + ".tmp");
        if (fs::exists(tmp_dir)) fs::remove_all(tmp_dir);
        fs::create_directories(tmp_dir);

        TaskContext ctx(spec.broadcast ? &*spec.broadcast : nullptr, broadcast_hash, uint32_t(i));
        SpillingEmitter emitter(uint32_t(i), spec.partitions, spec.spill_bytes, tmp_dir);
        map_fn(ctx, spec.splits[i], emitter);
        emitter.finish();
        emitted[i] = emitter.emitted();
        peaks[i] = emitter.peak_bytes();
        fs::rename(tmp_dir, done_dir);
      },
      [&](size_t i) { return "map task for split '" + spec.splits[i] + "'"; });

  JobResult result;
  for (auto v : emitted) result.records_mapped += v;
  for (auto v : peaks) result.peak_buffer_bytes = std::max(result.peak_buffer_bytes, v);

  // Collect run files per partition in (split, run) order.
  std::vector<std::vector<fs::path>> part_runs(spec.partitions);
  for (size_t i = 0; i < spec.splits.size(); ++i) {
    char dirname[32];
    std::snprintf(dirname, sizeof dirname, "split_%05zu", i);
    fs::path dir = maps_dir / dirname;
    if (!fs::exists(dir)) continue;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      unsigned p = 0, r = 0;
      if (std::sscanf(f.filename().string().c_str(), "p%u_r%u.run", &p, &r) == 2)
        part_runs[p].push_back(f);
    }
  }

  // ---- reduce phase ----
  std::vector<uint64_t> reduced_in(spec.partitions, 0);
  std::vector<char> populated(spec.partitions, 0);
  run_pool(
      spec.partitions, workers, spec.max_attempts,
      [&](size_t p) {
        if (part_runs[p].empty()) return;
        std::vector<std::unique_ptr<RunCursor>> cursors;
        std::priority_queue<RunCursor*, std::vector<RunCursor*>, CursorOrder> heap;
        for (const auto& f : part_runs[p]) {
          cursors.push_back(std::make_unique<RunCursor>(RunCursor{KvFileReader(f), {}}));
          if (cursors.back()->reader.next(cursors.back()->rec)) heap.push(cursors.back().get());
        }

        char name[32];
        std::snprintf(name, sizeof name, "part_%05zu.kv", p);
        fs::path out_path = spec.output_dir / name;
        fs::path tmp_path = out_path;
        tmp_path += ".tmp";
        uint64_t consumed = 0;
        {
          auto os = open_out(tmp_path);
          OutputEmitter out(os, uint32_t(p));
          TaskContext ctx(spec.broadcast ? &*spec.broadcast : nullptr, broadcast_hash, uint32_t(p));
          while (!heap.empty()) {
            MergeValueStream values(heap, heap.top()->rec.key);
            reduce_fn(ctx, values.key(), values, out);
            values.drain();
            consumed += values.consumed();
          }
          if (!os) throw JobError("reduce output write failed");
        }
        fs::rename(tmp_path, out_path);
        reduced_in[p] = consumed;
        populated[p] = 1;
      },
      [&](size_t p) { return "reduce task for partition " + std::to_string(p); });

  for (auto v : reduced_in) result.records_reduced_in += v;

  // ---- manifest ----
  json manifest;
  manifest["name"] = spec.name;
  manifest["map_fn"] = spec.map_fn;
  manifest["reduce_fn"] = spec.reduce_fn;
  manifest["partitions"] = spec.partitions;
  uint64_t spec_hash = fnv1a64(spec.map_fn);
  spec_hash = fnv1a64(spec.reduce_fn, spec_hash);
  for (const auto& s : spec.splits) spec_hash = fnv1a64(s, spec_hash);
  uint32_t r = spec.partitions;
  spec_hash = fnv1a64(&r, sizeof r, spec_hash);
  manifest["spec_hash"] = hex64(spec_hash);
  manifest["broadcast_hash"] = spec.broadcast ? hex64(broadcast_hash) : "";
  manifest["records_mapped"] = result.records_mapped;
  manifest["records_reduced_in"] = result.records_reduced_in;
  json outputs = json::array();
  for (uint32_t p = 0; p < spec.partitions; ++p) {
    if (!populated[p]) continue;
    char name[32];
    std::snprintf(name, sizeof name, "part_%05u.kv", p);
    fs::path out_path = spec.output_dir / name;
    result.outputs.push_back(out_path);
    outputs.push_back({{"file", name}, {"checksum", hex64(file_checksum(out_path))}});
  }
  manifest["outputs"] = outputs;

  result.manifest_path = spec.output_dir / (spec.name + ".manifest.json");
  write_file_atomic(result.manifest_path, manifest.dump(2) + "\n");
  return result;
}

}  // namespace lsa::mr
