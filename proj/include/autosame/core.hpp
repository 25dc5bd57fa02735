#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace autosame {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using MatrixD = Matrix<double>;
using MatrixF = Matrix<float>;

/// Binary mask grid, (rows, cols) = (h, w), entries in {0, 1}.
using MaskGrid = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Subpixel image point, (x, y) with x along columns and y along rows.
using Point2 = Eigen::Vector2d;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
/// Precondition or domain violation on an argument value.
struct InvalidArgument : Error {
    using Error::Error;
};
/// Tensor/grid dimensions do not satisfy an operation's contract.
struct ShapeMismatch : Error {
    using Error::Error;
};
/// Dataset, file or serialization problem.
struct DataError : Error {
    using Error::Error;
};
/// Degenerate or non-finite numeric state.
struct NumericError : Error {
    using Error::Error;
};

#define ASAME_CHECK(cond, msg)                                                 \
    do {                                                                       \
        if (!(cond)) throw ::autosame::InvalidArgument(msg);                   \
    } while (0)

#define ASAME_CHECK_SHAPE(cond, msg)                                           \
    do {                                                                       \
        if (!(cond)) throw ::autosame::ShapeMismatch(msg);                     \
    } while (0)

/// Deterministic RNG. Wraps mt19937_64 but maps bits to doubles itself so the
/// stream does not depend on the standard library's distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    /// Derive an independent stream, e.g. per (seed, epoch, item).
    static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
        std::seed_seq seq{seed, a ^ std::uint64_t{0x9e3779b97f4a7c15ULL},
                          b + std::uint64_t{0x6a09e667f3bcc909ULL}};
        std::mt19937_64 eng(seq);
        Rng r(0);
        r.eng_ = eng;
        return r;
    }

    std::uint64_t bits() { return eng_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::int64_t uniform_int(std::int64_t n) {
        return static_cast<std::int64_t>(uniform() * static_cast<double>(n)) % n;
    }

    /// Standard normal via Box-Muller (pair cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    Matrix<T> normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev) {
        Matrix<T> m(rows, cols);
        for (Eigen::Index j = 0; j < cols; ++j)
            for (Eigen::Index i = 0; i < rows; ++i)
                m(i, j) = static_cast<T>(stddev * normal());
        return m;
    }

    template <typename T>
    Matrix<T> uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
        Matrix<T> m(rows, cols);
        for (Eigen::Index j = 0; j < cols; ++j)
            for (Eigen::Index i = 0; i < rows; ++i)
                m(i, j) = static_cast<T>(uniform(lo, hi));
        return m;
    }

    template <typename V>
    void shuffle(V& v) {
        for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
            const auto j = uniform_int(i + 1);
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
        }
    }

    std::string serialize() const {
        std::ostringstream os;
        os << std::setprecision(std::numeric_limits<double>::max_digits10);
        os << eng_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << spare_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        int flag = 0;
        is >> eng_ >> flag >> spare_;
        if (!is) throw DataError("Rng::deserialize: malformed state string");
        has_spare_ = flag != 0;
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace autosame
