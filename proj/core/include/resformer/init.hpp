#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "resformer/tensor.hpp"

namespace resformer {

// Derives an independent 64-bit seed for a named stream. The same
// (base_seed, stream) pair always yields the same value, so any parameter
// can be regenerated without replaying the streams before it.
uint64_t mix_seed(uint64_t base_seed, uint64_t stream);

// Deterministic RNG with fixed bit-level behaviour; the standard
// distributions are implementation-defined, so sampling is done here.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }
    double uniform();  // [0, 1)
    double uniform(double lo, double hi);
    double gaussian();  // mean 0, std 1
    int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive bounds
    bool bernoulli(double p) { return uniform() < p; }

  private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Rows x cols matrix with orthonormal columns (rows >= cols) or orthonormal
// rows (rows < cols), from the QR of a Gaussian draw with the R-diagonal
// sign fix so the result is unique given the draw.
std::vector<double> orthogonal_values(int64_t rows, int64_t cols, uint64_t seed);

// Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)), fan_in = rows.
std::vector<double> xavier_uniform_values(int64_t rows, int64_t cols, uint64_t seed);

enum class ParamRole {
    Projection,  // weight matrix [in, out]
    Bias,        // zeros
    Gain,        // ones (layer-norm scale)
    Shift,       // zeros (layer-norm offset)
};

// Builds a parameter tensor for the given role. Frozen projections draw
// orthogonal values, trainable ones Xavier-uniform; vectors ignore the seed.
Tensor init_param(ParamRole role, const Shape& shape, uint64_t seed, bool frozen);

}  // namespace resformer
