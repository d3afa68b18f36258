#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace rlab {

// ---------------------------------------------------------------------------
// Errors. CLI maps ConfigError -> exit 2, NumericError -> exit 3.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor/layer shape mismatch; layer_index is the offending layer when known.
struct ShapeError : Error {
    int layer_index = -1;
    explicit ShapeError(const std::string& msg, int layer = -1)
        : Error(msg), layer_index(layer) {}
};

/// Non-finite value encountered; batch_index points at the example when known.
struct NumericError : Error {
    int64_t batch_index = -1;
    explicit NumericError(const std::string& msg, int64_t index = -1)
        : Error(msg), batch_index(index) {}
};

/// Malformed or mismatched file content (magic, version, truncation).
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

/// Bad experiment configuration; message names the field.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// ---------------------------------------------------------------------------
// Worker cap. 1 (the default) is the fully deterministic reference mode;
// parallel paths are partitioned so results are reproducible for a fixed
// (seed, thread count) pair.
// ---------------------------------------------------------------------------

void set_thread_count(int n);
int thread_count();

// ---------------------------------------------------------------------------
// Seedable RNG with explicit draw algorithms. std::mt19937_64 supplies the
// bit stream; the distributions are spelled out here so exact sequences do
// not depend on the standard library vendor.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    /// Uniform in [0,1), 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform in [0,n). Multiply-shift bound; bias is < n/2^64.
    int64_t uniform_int(int64_t n) {
        return static_cast<int64_t>(
            (static_cast<unsigned __int128>(next_u64()) *
             static_cast<unsigned __int128>(n)) >> 64);
    }

    /// Standard normal via Box-Muller; consumes two uniforms per pair.
    double normal();

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            int64_t j = uniform_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Derives an independent stream seed from a base seed and a stream id.
uint64_t derive_seed(uint64_t base, uint64_t stream);

/// FNV-1a over a byte range; used for provenance hashes.
uint64_t fnv1a(const void* data, size_t len);

}  // namespace rlab
