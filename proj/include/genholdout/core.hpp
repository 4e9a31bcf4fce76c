#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "genholdout/errors.hpp"
#include "genholdout/rng.hpp"

namespace genholdout {

/// Clamp v into [lo, hi].
inline double truncate(double v, double lo, double hi) {
  if (lo > hi) throw RangeError("truncate: lo > hi");
  if (v < lo) return lo;
  if (v > hi) return hi;
  return v;
}

namespace detail {

/// Pairwise (cascade) summation of f(lo..hi-1); keeps rounding error
/// logarithmic in the term count so long replication runs do not drift.
template <typename F>
double pairwise_accumulate(std::size_t lo, std::size_t hi, const F& term) {
  const std::size_t n = hi - lo;
  if (n <= 32) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += term(i);
    return s;
  }
  const std::size_t mid = lo + n / 2;
  return pairwise_accumulate(lo, mid, term) + pairwise_accumulate(mid, hi, term);
}

inline double pairwise_sum(std::span<const double> v) {
  return pairwise_accumulate(0, v.size(), [&](std::size_t i) { return v[i]; });
}

inline void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

/// Doubles are serialized as little-endian IEEE-754 bit patterns so that
/// hashes of test descriptions are platform-stable.
inline void append_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> v) {
  return std::sqrt(dot(v, v));
}

inline bool is_unit(std::span<const double> v, double tol = 1e-9) {
  return std::abs(l2_norm(v) - 1.0) <= tol;
}

}  // namespace detail

/// One observation: feature vector x and scalar response y.
struct Sample {
  std::vector<double> x;
  double y = 0.0;
};

/// An ordered collection of samples sharing a feature dimension. The
/// dimension is part of the value so that an empty dataset still knows it.
class Dataset {
public:
  explicit Dataset(std::size_t dimension) : d_(dimension) {
    if (d_ == 0) throw DomainError("Dataset: dimension must be >= 1");
  }

  static Dataset from_samples(std::size_t dimension, std::vector<Sample> samples) {
    Dataset out(dimension);
    out.samples_.reserve(samples.size());
    for (auto& s : samples) out.add(std::move(s));
    return out;
  }

  void add(Sample s) {
    if (s.x.size() != d_) throw DomainError("Dataset::add: sample dimension mismatch");
    if (!std::isfinite(s.y)) throw DomainError("Dataset::add: non-finite response");
    for (double v : s.x) {
      if (!std::isfinite(v)) throw DomainError("Dataset::add: non-finite feature");
    }
    samples_.push_back(std::move(s));
  }

  std::size_t size() const { return samples_.size(); }
  std::size_t dimension() const { return d_; }
  bool empty() const { return samples_.empty(); }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }

  auto begin() const { return samples_.begin(); }
  auto end() const { return samples_.end(); }

private:
  std::size_t d_;
  std::vector<Sample> samples_;
};

/// A disjoint split of a dataset into a freely inspectable exploration part
/// and a holdout part reserved for validation.
struct DataPartition {
  Dataset exploration;
  Dataset holdout;
};

/// A bounded per-sample loss with range certified inside [-1, 1]: every
/// evaluation is clamped, so tests built on top can quote Hoeffding bounds
/// for the range-2 family without trusting the callable.
class LossFunction {
public:
  static LossFunction constant(double value) {
    LossFunction out;
    out.kind_ = Kind::Constant;
    out.constant_ = value;
    out.dim_ = 0;
    return out;
  }

  /// Loss sample -> truncate(y * <w, x>). Callers are expected to pass a
  /// unit vector; see testkit's make_linear_loss for the validating factory.
  static LossFunction truncated_linear(std::vector<double> w) {
    LossFunction out;
    out.kind_ = Kind::TruncatedLinear;
    out.dim_ = w.size();
    out.w_ = std::move(w);
    return out;
  }

  /// Arbitrary callable, identified for audit purposes by `id`. The result
  /// is still clamped into [-1, 1].
  static LossFunction custom(std::string id, std::size_t dimension,
                             std::function<double(const Sample&)> fn) {
    LossFunction out;
    out.kind_ = Kind::Custom;
    out.dim_ = dimension;
    out.id_ = std::move(id);
    out.fn_ = std::move(fn);
    return out;
  }

  double operator()(const Sample& s) const {
    double raw = 0.0;
    switch (kind_) {
      case Kind::Constant:
        raw = constant_;
        break;
      case Kind::TruncatedLinear:
        raw = s.y * detail::dot(w_, s.x);
        break;
      case Kind::Custom:
        raw = fn_(s);
        break;
    }
    return truncate(raw, -1.0, 1.0);
  }

  /// 0 means dimension-agnostic.
  std::size_t dimension() const { return dim_; }

  /// The direction vector for linear losses, nullptr otherwise.
  const std::vector<double>* direction() const {
    return kind_ == Kind::TruncatedLinear ? &w_ : nullptr;
  }

  /// Canonical byte serialization of what this loss computes (labels and
  /// other presentation details excluded). Input to transcript hashing.
  std::string description_bytes() const {
    std::string out;
    switch (kind_) {
      case Kind::Constant:
        out.push_back('C');
        detail::append_f64(out, constant_);
        break;
      case Kind::TruncatedLinear:
        out.push_back('L');
        detail::append_u32(out, static_cast<std::uint32_t>(w_.size()));
        for (double v : w_) detail::append_f64(out, v);
        break;
      case Kind::Custom:
        out.push_back('X');
        out.append(id_);
        break;
    }
    return out;
  }

private:
  enum class Kind { Constant, TruncatedLinear, Custom };

  LossFunction() = default;

  Kind kind_ = Kind::Constant;
  double constant_ = 0.0;
  std::size_t dim_ = 0;
  std::vector<double> w_;
  std::string id_;
  std::function<double(const Sample&)> fn_;
};

/// Arithmetic mean of the loss over the dataset (pairwise summation).
inline double empirical_mean_loss(const LossFunction& loss, const Dataset& data) {
  if (data.empty()) throw EmptyDataError("empirical_mean_loss: empty dataset");
  if (loss.dimension() != 0 && loss.dimension() != data.dimension())
    throw DomainError("empirical_mean_loss: loss dimension does not match dataset");
  const double total =
      detail::pairwise_accumulate(0, data.size(), [&](std::size_t i) { return loss(data[i]); });
  return total / static_cast<double>(data.size());
}

/// Synthetic population over (x, y) in R^{d+1}.
///
/// GlobalNull draws every coordinate i.i.d. standard normal, so any linear
/// hypothesis "y is positively correlated with <w, x>" is false.
///
/// PlantedLinear draws x i.i.d. standard normal and sets
///     y = mu * scale * <w_true, x> + sigma_y * eps,
/// where `scale` is calibrated once (Monte Carlo bisection, 10^6 common
/// random draws, fixed internal seed) so that the truncated loss of w_true,
/// truncate(y * <w_true, x>), has population mean mu. Parameterizing by the
/// achieved loss mean keeps power experiments directly comparable with the
/// accept threshold of the gapped-loss test.
class DistributionModel {
public:
  static DistributionModel global_null(std::size_t d) {
    if (d == 0) throw DomainError("global_null: d must be >= 1");
    DistributionModel m;
    m.d_ = d;
    m.global_null_ = true;
    return m;
  }

  static DistributionModel planted_linear(std::size_t d, std::vector<double> w_true, double mu,
                                          double sigma_y) {
    if (d == 0) throw DomainError("planted_linear: d must be >= 1");
    if (w_true.size() != d) throw DomainError("planted_linear: w_true dimension mismatch");
    if (!detail::is_unit(w_true)) throw NormError("planted_linear: w_true must be unit length");
    if (!(mu > 0.0) || mu > 1.0) throw DomainError("planted_linear: mu must lie in (0, 1]");
    if (!(sigma_y >= 0.0)) throw DomainError("planted_linear: sigma_y must be >= 0");
    DistributionModel m;
    m.d_ = d;
    m.global_null_ = false;
    const double norm = detail::l2_norm(w_true);
    for (auto& v : w_true) v /= norm;
    m.w_true_ = std::move(w_true);
    m.mu_ = mu;
    m.sigma_y_ = sigma_y;
    m.scale_ = calibrated_scale(mu, sigma_y);
    return m;
  }

  std::size_t dimension() const { return d_; }
  bool is_global_null() const { return global_null_; }
  double mu() const { return mu_; }
  double sigma_y() const { return sigma_y_; }
  double scale() const { return scale_; }
  const std::vector<double>& planted_direction() const { return w_true_; }

  /// Ground-truth label for the linear hypothesis "E[y <w, x>] > 0":
  /// true when the hypothesis is null under this population. Computed from
  /// the model, never from data.
  bool is_null_hypothesis(std::span<const double> w) const {
    if (global_null_) return true;
    if (w.size() != d_) throw DomainError("is_null_hypothesis: dimension mismatch");
    // E[y <w, x>] = mu * scale * <w, w_true>, and mu * scale > 0.
    return detail::dot(w, w_true_) <= 0.0;
  }

  Sample draw(RngEngine& rng) const {
    Sample s;
    s.x.resize(d_);
    for (auto& v : s.x) v = rng.normal();
    if (global_null_) {
      s.y = rng.normal();
    } else {
      const double g = detail::dot(w_true_, s.x);
      const double noise = sigma_y_ > 0.0 ? sigma_y_ * rng.normal() : 0.0;
      s.y = mu_ * scale_ * g + noise;
    }
    return s;
  }

private:
  DistributionModel() = default;

  // The bisection upper bracket. Loss means above roughly 1 - 1e-6 are not
  // reachable with finite scale; clamping here makes mu = 1 behave as the
  // saturated "loss is 1 except on a negligible set" population.
  static constexpr double kMaxScale = 1e12;
  static constexpr std::size_t kCalibrationDraws = 1'000'000;
  static constexpr std::uint64_t kCalibrationSeed = 0x67686f6c646f7574ull;

  static double calibrated_scale(double mu, double sigma_y) {
    static std::mutex cache_mutex;
    static std::map<std::pair<std::uint64_t, std::uint64_t>, double> cache;
    const std::pair<std::uint64_t, std::uint64_t> key{std::bit_cast<std::uint64_t>(mu),
                                                      std::bit_cast<std::uint64_t>(sigma_y)};
    {
      std::scoped_lock lock(cache_mutex);
      if (auto it = cache.find(key); it != cache.end()) return it->second;
    }

    // Common random numbers: the achieved mean is then pointwise monotone
    // in the scale and the bisection is exact.
    std::vector<double> g(kCalibrationDraws), eps(kCalibrationDraws);
    RngEngine rng = RngStream(kCalibrationSeed).child(0).engine();
    for (std::size_t i = 0; i < kCalibrationDraws; ++i) {
      g[i] = rng.normal();
      eps[i] = rng.normal();
    }
    const auto achieved_mean = [&](double scale) {
      const double total = detail::pairwise_accumulate(0, kCalibrationDraws, [&](std::size_t i) {
        return truncate(mu * scale * g[i] * g[i] + sigma_y * eps[i] * g[i], -1.0, 1.0);
      });
      return total / static_cast<double>(kCalibrationDraws);
    };

    double lo = 0.0, hi = 1.0;
    while (hi < kMaxScale && achieved_mean(hi) < mu) hi = std::min(hi * 2.0, kMaxScale);
    if (achieved_mean(hi) < mu) {
      // Saturated target (mu at or near 1): use the bracket cap.
      std::scoped_lock lock(cache_mutex);
      cache.emplace(key, hi);
      return hi;
    }
    for (int iter = 0; iter < 100; ++iter) {
      const double mid = 0.5 * (lo + hi);
      if (achieved_mean(mid) < mu) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    std::scoped_lock lock(cache_mutex);
    cache.emplace(key, hi);
    return hi;
  }

  std::size_t d_ = 1;
  bool global_null_ = true;
  std::vector<double> w_true_;
  double mu_ = 0.0;
  double sigma_y_ = 0.0;
  double scale_ = 0.0;
};

/// n i.i.d. draws from the model; a pure function of (model, n, rng).
inline Dataset sample_dataset(const DistributionModel& model, std::size_t n, const RngStream& rng) {
  Dataset out(model.dimension());
  RngEngine engine = rng.engine();
  for (std::size_t i = 0; i < n; ++i) out.add(model.draw(engine));
  return out;
}

/// Split `data` into a uniformly random holdout subset of the requested size
/// and its complement. Original order is preserved within each part, and the
/// subset is chosen by a seeded shuffle, so accidental ordering structure in
/// the source cannot leak into the split.
inline DataPartition partition(const Dataset& data, std::size_t holdout_size,
                               const RngStream& rng) {
  if (holdout_size > data.size()) throw SizeError("partition: holdout_size exceeds dataset size");
  std::vector<std::size_t> index(data.size());
  std::iota(index.begin(), index.end(), std::size_t{0});
  RngEngine engine = rng.engine();
  for (std::size_t i = index.size(); i > 1; --i) {
    std::swap(index[i - 1], index[engine.below(i)]);
  }
  std::vector<bool> in_holdout(data.size(), false);
  for (std::size_t i = 0; i < holdout_size; ++i) in_holdout[index[i]] = true;

  DataPartition out{Dataset(data.dimension()), Dataset(data.dimension())};
  for (std::size_t i = 0; i < data.size(); ++i) {
    (in_holdout[i] ? out.holdout : out.exploration).add(data[i]);
  }
  return out;
}

}  // namespace genholdout
