#ifndef GMU_PARAMS_HPP
#define GMU_PARAMS_HPP

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gmu/autodiff.hpp"
#include "gmu/common.hpp"

namespace gmu {

/// Named parameter matrices in stable creation order (ordering matters for
/// deterministic optimizer steps and byte-identical checkpoints). Entries
/// flagged non-trainable hold state such as batch-norm running statistics.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Mat value;
    Mat m;  // Adam first moment
    Mat v;  // Adam second moment
    bool trainable = true;
  };

  Mat& create(const std::string& name, Mat init, bool trainable = true) {
    if (index_.count(name)) throw NumericError("parameter '" + name + "' already registered");
    index_.emplace(name, entries_.size());
    Entry e;
    e.name = name;
    e.m = Mat::Zero(init.rows(), init.cols());
    e.v = Mat::Zero(init.rows(), init.cols());
    e.value = std::move(init);
    e.trainable = trainable;
    entries_.push_back(std::move(e));
    return entries_.back().value;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Mat& at(const std::string& name) { return entry(name).value; }
  const Mat& at(const std::string& name) const { return entry(name).value; }

  Entry& entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw NumericError("unknown parameter '" + name + "'");
    return entries_[it->second];
  }
  const Entry& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw NumericError("unknown parameter '" + name + "'");
    return entries_[it->second];
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

// ---------------------------------------------------------------------------
// Initializers

inline Mat uniform_init(long rows, long cols, long fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Mat m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) m(r, c) = rng.next_uniform(-bound, bound);
  return m;
}

/// Orthogonal square matrix from the QR decomposition of a Gaussian draw,
/// sign-fixed by the diagonal of R.
inline Mat orthogonal_init(long n, Rng& rng) {
  Mat a(n, n);
  for (long r = 0; r < n; ++r)
    for (long c = 0; c < n; ++c) a(r, c) = rng.next_normal();
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ() * Mat::Identity(n, n);
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (long c = 0; c < n; ++c)
    if (r(c, c) < 0) q.col(c) = -q.col(c);
  return q;
}

// ---------------------------------------------------------------------------
// Adam

class AdamOptimizer {
 public:
  explicit AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// One update over all trainable entries; absent gradients count as zero
  /// (their moments decay, producing a zero step for never-touched params).
  void step(ParamStore& store, const std::unordered_map<std::string, Mat>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (ParamStore::Entry& e : store.entries()) {
      if (!e.trainable) continue;
      auto it = grads.find(e.name);
      const Mat g = (it != grads.end()) ? it->second : Mat::Zero(e.value.rows(), e.value.cols());
      e.m = beta1_ * e.m + (1.0 - beta1_) * g;
      e.v = beta2_ * e.v + (1.0 - beta2_) * g.cwiseProduct(g);
      const Mat mhat = e.m / bc1;
      const Mat vhat = e.v / bc2;
      e.value -= lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps_).matrix());
    }
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Tape binding

/// Binds a ParamStore to one tape: parameters become leaves on first use so a
/// forward pass only materializes (and later differentiates) what it touches.
class TapeParams {
 public:
  TapeParams(ad::Tape& tape, const ParamStore& store) : tape_(tape), store_(store) {}

  ad::Var operator[](const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    const ParamStore::Entry& e = store_.entry(name);
    const ad::Var v = e.trainable ? tape_.leaf(e.value) : tape_.constant(e.value);
    vars_.emplace(name, v);
    return v;
  }

  /// Gradients of all touched trainable parameters after tape.backward().
  std::unordered_map<std::string, Mat> collect_grads() {
    std::unordered_map<std::string, Mat> out;
    for (auto& [name, var] : vars_)
      if (tape_.requires_grad(var)) out.emplace(name, tape_.grad(var));
    return out;
  }

  const ParamStore& store() const { return store_; }

 private:
  ad::Tape& tape_;
  const ParamStore& store_;
  std::unordered_map<std::string, ad::Var> vars_;
};

}  // namespace gmu

#endif  // GMU_PARAMS_HPP
