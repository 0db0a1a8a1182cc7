#include "lenctl/threading.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace lenctl {

namespace {

int env_thread_cap() {
    const char* s = std::getenv("LBL_THREADS");
    if (!s) return 0;
    int v = std::atoi(s);
    return v > 0 ? v : 0;
}

int g_workers = 0;

int resolve_workers() {
    if (g_workers > 0) return g_workers;
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    int cap = env_thread_cap();
    g_workers = (cap > 0 && cap < hw) ? cap : hw;
    return g_workers;
}

// Persistent pool; spawning a thread per parallel region would dominate the
// small per-op regions the training loop issues.
class Pool {
public:
    explicit Pool(int extra_workers) : stop_(false), generation_(0), pending_(0) {
        for (int i = 0; i < extra_workers; ++i) {
            threads_.emplace_back([this, i] { worker_loop(i + 1); });
        }
    }

    ~Pool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void run(int n, const std::function<void(int, int)>& fn) {
        const int nw = static_cast<int>(threads_.size()) + 1;
        const int chunk = (n + nw - 1) / nw;
        {
            std::lock_guard<std::mutex> lk(mu_);
            job_ = &fn;
            job_n_ = n;
            job_chunk_ = chunk;
            pending_ = static_cast<int>(threads_.size());
            ++generation_;
        }
        cv_.notify_all();
        // Slot 0 runs on the calling thread.
        const int b = 0, e = std::min(chunk, n);
        if (b < e) fn(b, e);
        std::unique_lock<std::mutex> lk(mu_);
        done_cv_.wait(lk, [this] { return pending_ == 0; });
        job_ = nullptr;
    }

private:
    void worker_loop(int slot) {
        uint64_t seen = 0;
        for (;;) {
            const std::function<void(int, int)>* job = nullptr;
            int n = 0, chunk = 0;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                job = job_;
                n = job_n_;
                chunk = job_chunk_;
            }
            const int b = std::min(slot * chunk, n);
            const int e = std::min(b + chunk, n);
            if (job && b < e) (*job)(b, e);
            {
                std::lock_guard<std::mutex> lk(mu_);
                if (--pending_ == 0) done_cv_.notify_one();
            }
        }
    }

    std::vector<std::thread> threads_;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    bool stop_;
    uint64_t generation_;
    int pending_;
    const std::function<void(int, int)>* job_ = nullptr;
    int job_n_ = 0;
    int job_chunk_ = 0;
};

Pool& pool() {
    static Pool p(resolve_workers() - 1);
    return p;
}

} // namespace

int worker_count() { return resolve_workers(); }

void set_worker_count(int n) {
    if (n >= 1) g_workers = n;
}

void parallel_for(int n, const std::function<void(int, int)>& fn) {
    if (n <= 0) return;
    if (resolve_workers() == 1 || n < 32) {
        fn(0, n);
        return;
    }
    pool().run(n, fn);
}

} // namespace lenctl
