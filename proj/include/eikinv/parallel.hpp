#pragma once

// Static-partition parallel loops over index ranges.
//
// Every loop body in this library writes only to slots owned by its own
// index, so results do not depend on the thread count or the schedule.

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace eikinv {

class ThreadPool {
public:
  explicit ThreadPool(int n_threads) : n_threads_(std::max(1, n_threads)) {
    for (int w = 1; w < n_threads_; ++w)
      workers_.emplace_back([this, w] { worker_loop(w); });
  }

  ~ThreadPool() {
    {
      std::lock_guard lock(mutex_);
      stop_ = true;
    }
    wake_.notify_all();
    for (auto& t : workers_) t.join();
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int size() const { return n_threads_; }

  // Splits [0, n) into size() contiguous chunks; chunk 0 runs on the caller.
  template <class Fn>
  void parallel_for(std::ptrdiff_t n, Fn&& fn) {
    if (n <= 0) return;
    if (n_threads_ == 1 || n < 2 * n_threads_) {
      for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
      return;
    }
    std::function<void(std::ptrdiff_t, std::ptrdiff_t)> body =
        [&fn](std::ptrdiff_t lo, std::ptrdiff_t hi) {
          for (std::ptrdiff_t i = lo; i < hi; ++i) fn(i);
        };
    {
      std::lock_guard lock(mutex_);
      job_ = &body;
      job_n_ = n;
      pending_ = n_threads_ - 1;
      error_ = nullptr;
      ++generation_;
    }
    wake_.notify_all();
    try {
      run_chunk(0, body, n);
    } catch (...) {
      std::lock_guard lock(mutex_);
      if (!error_) error_ = std::current_exception();
    }
    std::unique_lock lock(mutex_);
    done_.wait(lock, [this] { return pending_ == 0; });
    job_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

private:
  void run_chunk(int w, const std::function<void(std::ptrdiff_t, std::ptrdiff_t)>& body,
                 std::ptrdiff_t n) const {
    const std::ptrdiff_t lo = n * w / n_threads_;
    const std::ptrdiff_t hi = n * (w + 1) / n_threads_;
    body(lo, hi);
  }

  void worker_loop(int w) {
    std::size_t seen = 0;
    for (;;) {
      const std::function<void(std::ptrdiff_t, std::ptrdiff_t)>* job = nullptr;
      std::ptrdiff_t n = 0;
      {
        std::unique_lock lock(mutex_);
        wake_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        job = job_;
        n = job_n_;
      }
      try {
        run_chunk(w, *job, n);
      } catch (...) {
        std::lock_guard lock(mutex_);
        if (!error_) error_ = std::current_exception();
      }
      {
        std::lock_guard lock(mutex_);
        if (--pending_ == 0) done_.notify_one();
      }
    }
  }

  int n_threads_;
  std::vector<std::thread> workers_;
  std::mutex mutex_;
  std::condition_variable wake_;
  std::condition_variable done_;
  const std::function<void(std::ptrdiff_t, std::ptrdiff_t)>* job_ = nullptr;
  std::ptrdiff_t job_n_ = 0;
  int pending_ = 0;
  std::size_t generation_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

namespace detail {
inline std::unique_ptr<ThreadPool>& global_pool() {
  static std::unique_ptr<ThreadPool> pool;
  return pool;
}
}  // namespace detail

/// Caps worker parallelism for all library loops. 1 is the reproducibility reference.
inline void set_threads(int n) {
  auto& pool = detail::global_pool();
  if (!pool || pool->size() != std::max(1, n)) pool = std::make_unique<ThreadPool>(n);
}

inline int threads() {
  auto& pool = detail::global_pool();
  return pool ? pool->size() : 1;
}

template <class Fn>
void parallel_for(std::ptrdiff_t n, Fn&& fn) {
  auto& pool = detail::global_pool();
  if (!pool) {
    for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
    return;
  }
  pool->parallel_for(n, std::forward<Fn>(fn));
}

}  // namespace eikinv
