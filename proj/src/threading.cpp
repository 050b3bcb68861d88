#include "dcrnet/threading.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace dcrnet {

namespace {

// Activation-sized buffers are allocated and freed once per recorded op.
// Keeping them on the heap instead of per-allocation mmap regions avoids
// re-faulting the same pages on every training step.
struct MallocTuning {
  MallocTuning() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  }
};
const MallocTuning g_malloc_tuning;

int read_env_threads() {
  const char* env = std::getenv("DCRNET_THREADS");
  if (!env) return 1;
  int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

std::atomic<int> g_threads{0};  // 0 = uninitialized

thread_local bool t_inside_parallel = false;

// Persistent helpers. Chunk claims happen under the job mutex together with
// a generation check, so a worker that wakes late can never run against a
// newer job's state. The claim itself is cheap next to a chunk's work.
class Pool {
 public:
  void run(int workers, int64_t begin, int64_t end, const std::function<void(int64_t)>& fn) {
    std::lock_guard<std::mutex> region(run_mutex_);
    int64_t total = end - begin;
    int64_t chunks = std::min<int64_t>(total, static_cast<int64_t>(workers) * 4);
    uint64_t gen;
    {
      std::lock_guard<std::mutex> lk(job_mutex_);
      ensure_helpers(workers - 1);
      fn_ = &fn;
      begin_ = begin;
      end_ = end;
      chunk_size_ = (total + chunks - 1) / chunks;
      chunk_count_ = chunks;
      next_ = 0;
      pending_.store(chunks, std::memory_order_relaxed);
      gen = ++generation_;
    }
    wake_cv_.notify_all();
    drain(gen);
    std::unique_lock<std::mutex> lk(done_mutex_);
    done_cv_.wait(lk, [&] { return pending_.load(std::memory_order_acquire) == 0; });
  }

 private:
  void ensure_helpers(int helpers) {
    while (helper_count_ < helpers) {
      std::thread([this] { helper_loop(); }).detach();
      ++helper_count_;
    }
  }

  void helper_loop() {
    uint64_t seen = 0;
    for (;;) {
      uint64_t gen;
      {
        std::unique_lock<std::mutex> lk(job_mutex_);
        wake_cv_.wait(lk, [&] { return generation_ != seen; });
        seen = generation_;
        gen = seen;
      }
      drain(gen);
    }
  }

  void drain(uint64_t gen) {
    for (;;) {
      const std::function<void(int64_t)>* fn;
      int64_t lo, hi;
      {
        std::lock_guard<std::mutex> lk(job_mutex_);
        if (gen != generation_ || next_ >= chunk_count_) return;
        int64_t chunk = next_++;
        fn = fn_;
        lo = begin_ + chunk * chunk_size_;
        hi = std::min(end_, lo + chunk_size_);
      }
      t_inside_parallel = true;
      for (int64_t i = lo; i < hi; ++i) (*fn)(i);
      t_inside_parallel = false;
      if (pending_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
        std::lock_guard<std::mutex> lk(done_mutex_);
        done_cv_.notify_all();
      }
    }
  }

  std::mutex run_mutex_;
  std::mutex job_mutex_;
  std::mutex done_mutex_;
  std::condition_variable wake_cv_;
  std::condition_variable done_cv_;
  uint64_t generation_ = 0;
  int helper_count_ = 0;

  const std::function<void(int64_t)>* fn_ = nullptr;
  int64_t begin_ = 0, end_ = 0, chunk_size_ = 1;
  int64_t next_ = 0, chunk_count_ = 0;
  std::atomic<int64_t> pending_{0};
};

Pool& pool() {
  static Pool* p = new Pool;  // leaked so parked helpers never outlive it
  return *p;
}

}  // namespace

int thread_count() {
  int n = g_threads.load(std::memory_order_relaxed);
  if (n == 0) {
    n = read_env_threads();
    g_threads.store(n, std::memory_order_relaxed);
  }
  return n;
}

void set_thread_count(int n) { g_threads.store(n >= 1 ? n : 1, std::memory_order_relaxed); }

void parallel_for(int64_t begin, int64_t end, const std::function<void(int64_t)>& fn) {
  int64_t total = end - begin;
  if (total <= 0) return;
  int workers = static_cast<int>(std::min<int64_t>(thread_count(), total));
  if (workers <= 1 || t_inside_parallel) {  // nested regions run inline
    for (int64_t i = begin; i < end; ++i) fn(i);
    return;
  }
  pool().run(workers, begin, end, fn);
}

}  // namespace dcrnet
