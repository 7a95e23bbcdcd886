#pragma once

#include <condition_variable>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace lr2 {

// Persistent barrier pool. Items are sharded by index modulo worker count,
// so a one-worker pool is the strictly sequential fallback and any worker
// count produces identical results as long as the work itself only reads
// the previous barrier's state.
class WorkerPool {
 public:
  explicit WorkerPool(int workers) : workers_(workers < 1 ? 1 : workers) {
    for (int w = 1; w < workers_; ++w)
      threads_.emplace_back([this, w] { worker_loop(w); });
  }

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  ~WorkerPool() {
    {
      std::unique_lock lock(mu_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  int workers() const { return workers_; }

  // fn(item, worker); blocks until all items complete
  void for_each(int n_items, const std::function<void(int, int)>& fn) {
    if (workers_ == 1) {
      for (int i = 0; i < n_items; ++i) fn(i, 0);
      return;
    }
    {
      std::unique_lock lock(mu_);
      fn_ = &fn;
      n_items_ = n_items;
      pending_ = workers_ - 1;
      ++generation_;
    }
    cv_.notify_all();
    run_shard(0);
    {
      std::unique_lock lock(mu_);
      done_cv_.wait(lock, [this] { return pending_ == 0; });
      fn_ = nullptr;
    }
    if (error_) {
      auto e = error_;
      error_ = nullptr;
      std::rethrow_exception(e);
    }
  }

 private:
  void run_shard(int w) {
    const auto& fn = *fn_;
    try {
      for (int i = w; i < n_items_; i += workers_) fn(i, w);
    } catch (...) {
      std::unique_lock lock(mu_);
      if (!error_) error_ = std::current_exception();
    }
  }

  void worker_loop(int w) {
    uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return generation_ != seen; });
        seen = generation_;
        if (stop_) return;
      }
      run_shard(w);
      {
        std::unique_lock lock(mu_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  int workers_;
  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(int, int)>* fn_ = nullptr;
  int n_items_ = 0;
  int pending_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

}  // namespace lr2
