#include "resformer/init.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "resformer/errors.hpp"

namespace resformer {

uint64_t mix_seed(uint64_t base_seed, uint64_t stream) {
    uint64_t z = base_seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * M_PI * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    if (lo > hi) throw ConfigError("uniform_int bounds inverted");
    const uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<int64_t>(next_u64());  // full 64-bit span
    const uint64_t threshold = (-range) % range;  // 2^64 mod range
    for (;;) {
        const uint64_t x = next_u64();
        if (x >= threshold) return lo + static_cast<int64_t>(x % range);
    }
}

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
}

std::vector<double> orthogonal_values(int64_t rows, int64_t cols, uint64_t seed) {
    if (rows <= 0 || cols <= 0) throw ShapeError("orthogonal_values needs positive dimensions");
    const bool wide = rows < cols;
    const int64_t r = wide ? cols : rows;
    const int64_t c = wide ? rows : cols;

    Rng rng(seed);
    RowMat A(r, c);
    for (int64_t i = 0; i < r; ++i) {
        for (int64_t j = 0; j < c; ++j) A(i, j) = rng.gaussian();
    }
    Eigen::HouseholderQR<RowMat> qr(A);
    RowMat Q = qr.householderQ() * RowMat::Identity(r, c);
    const RowMat& QR = qr.matrixQR();
    for (int64_t j = 0; j < c; ++j) {
        if (QR(j, j) < 0.0) Q.col(j) = -Q.col(j);
    }
    if (wide) Q.transposeInPlace();  // orthonormal rows

    std::vector<double> out(static_cast<size_t>(rows * cols));
    for (int64_t i = 0; i < rows; ++i) {
        for (int64_t j = 0; j < cols; ++j) out[static_cast<size_t>(i * cols + j)] = Q(i, j);
    }
    return out;
}

std::vector<double> xavier_uniform_values(int64_t rows, int64_t cols, uint64_t seed) {
    if (rows <= 0 || cols <= 0) throw ShapeError("xavier_uniform_values needs positive dimensions");
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Rng rng(seed);
    std::vector<double> out(static_cast<size_t>(rows * cols));
    for (auto& v : out) v = rng.uniform(-bound, bound);
    return out;
}

Tensor init_param(ParamRole role, const Shape& shape, uint64_t seed, bool frozen) {
    switch (role) {
        case ParamRole::Projection: {
            if (shape.size() != 2) {
                throw ShapeError("projection parameter must be rank 2, got " + shape_str(shape));
            }
            auto values = frozen ? orthogonal_values(shape[0], shape[1], seed)
                                 : xavier_uniform_values(shape[0], shape[1], seed);
            return make_param(shape, std::move(values), frozen);
        }
        case ParamRole::Bias:
        case ParamRole::Shift: {
            std::vector<double> values(static_cast<size_t>(shape_numel(shape)), 0.0);
            return make_param(shape, std::move(values), frozen);
        }
        case ParamRole::Gain: {
            std::vector<double> values(static_cast<size_t>(shape_numel(shape)), 1.0);
            return make_param(shape, std::move(values), frozen);
        }
    }
    throw ConfigError("unknown parameter role");
}

}  // namespace resformer
