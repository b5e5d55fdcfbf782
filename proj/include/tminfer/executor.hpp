#pragma once

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>

namespace tminfer {

using Task = std::function<void()>;

// FIFO task sink. Tasks posted to one executor run one at a time, in order.
class Executor {
 public:
  virtual ~Executor() = default;
  virtual void post(Task task) = 0;
};

// One background worker thread. The destructor finishes queued tasks, then joins.
class ThreadExecutor final : public Executor {
 public:
  ThreadExecutor();
  ~ThreadExecutor() override;
  ThreadExecutor(const ThreadExecutor&) = delete;
  ThreadExecutor& operator=(const ThreadExecutor&) = delete;

  void post(Task task) override;

 private:
  void loop();

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Task> queue_;
  bool closing_ = false;
  std::thread worker_;
};

// Runs tasks only when asked. Used to drive sessions step by step in tests.
class ManualExecutor final : public Executor {
 public:
  void post(Task task) override;

  bool run_one();
  std::size_t run_all();
  std::size_t pending() const;

 private:
  mutable std::mutex mu_;
  std::deque<Task> queue_;
};

}  // namespace tminfer
