#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace ldmlab {

// Runs fn(i) for i in [0, n). Work items are pure and write only to their own
// slot; reduction happens afterwards in index order, so results do not depend
// on the worker count.
inline void parallel_for(long n, int workers, const std::function<void(long)>& fn) {
    if (workers <= 1 || n < 2) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    const int w = std::min<long>(workers, n);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(w));
    for (int t = 0; t < w; ++t) {
        pool.emplace_back([&, t]() {
            for (long i = t; i < n; i += w) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

// Streaming mean/stderr accumulator (fixed-order reduction).
struct MeanAccumulator {
    double sum = 0.0;
    double sumsq = 0.0;
    long n = 0;

    void add(double x) {
        sum += x;
        sumsq += x * x;
        ++n;
    }
    double mean() const { return n > 0 ? sum / n : 0.0; }
    double stderr_() const {
        if (n < 2) return 0.0;
        const double m = mean();
        double var = (sumsq - n * m * m) / (n - 1);
        if (var < 0) var = 0;
        return std::sqrt(var / n);
    }
};

} // namespace ldmlab
