#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cycleseg/autodiff/variable.hpp"
#include "cycleseg/core/tensor.hpp"
#include "cycleseg/nn/module.hpp"

namespace cycleseg::trainer {

/// Adam over a fixed list of named parameters. Holding Var handles means the
/// optimizer updates the same storage the networks forward from.
///
/// A parameter whose gradient is undefined after backward (no active loss
/// term reached it this step) is skipped entirely: its value, moments, and
/// step count stay untouched, so e.g. the inverse generator inside a shared
/// optimizer is bit-identical after a supervised-only step.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(nn::NamedParams<T> params, double beta1, double beta2, double epsilon)
      : params_(std::move(params)),
        m_(params_.size()),
        v_(params_.size()),
        t_(params_.size(), 0),
        beta1_(beta1),
        beta2_(beta2),
        eps_(epsilon) {}

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  /// One update with the given learning rate. Moments are stored at parameter
  /// precision; the bias-corrected update itself is computed in double.
  void step(double lr) {
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].second;
      if (!p.grad().defined()) continue;
      if (!m_[i].defined()) {
        m_[i] = Tensor<T>(p.value().shape());
        v_[i] = Tensor<T>(p.value().shape());
      }
      ++t_[i];
      const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_[i]));
      const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_[i]));
      T* w = p.value().data();
      const T* g = p.grad().data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      const int64_t n = p.value().numel();
      for (int64_t j = 0; j < n; ++j) {
        m[j] = static_cast<T>(beta1_ * m[j] + (1.0 - beta1_) * g[j]);
        v[j] = static_cast<T>(beta2_ * v[j] + (1.0 - beta2_) * static_cast<double>(g[j]) * g[j]);
        const double m_hat = m[j] / c1;
        const double v_hat = v[j] / c2;
        w[j] = static_cast<T>(w[j] - lr * m_hat / (std::sqrt(v_hat) + eps_));
      }
    }
  }

  size_t size() const { return params_.size(); }
  const nn::NamedParams<T>& params() const { return params_; }
  const std::vector<int64_t>& step_counts() const { return t_; }

  /// Moments and step counts, keyed by parameter name so a load can verify it
  /// is being applied to the same architecture.
  void save(std::ostream& os) const {
    os.write("CSEGADM1", 8);
    detail_write_u64(os, params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      detail_write_str(os, params_[i].first);
      detail_write_u64(os, static_cast<uint64_t>(t_[i]));
      detail_write_u64(os, m_[i].defined() ? 1 : 0);
      if (m_[i].defined()) {
        detail_write_tensor(os, m_[i]);
        detail_write_tensor(os, v_[i]);
      }
    }
    if (!os) throw std::runtime_error("Adam::save: write failed");
  }

  void load(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "CSEGADM1", 8) != 0)
      throw std::runtime_error("Adam::load: not an optimizer state stream");
    if (detail_read_u64(is) != params_.size())
      throw std::runtime_error("Adam::load: parameter count mismatch");
    for (size_t i = 0; i < params_.size(); ++i) {
      const std::string name = detail_read_str(is);
      if (name != params_[i].first)
        throw std::runtime_error("Adam::load: parameter name mismatch: state has " + name +
                                 ", optimizer has " + params_[i].first);
      t_[i] = static_cast<int64_t>(detail_read_u64(is));
      if (detail_read_u64(is) != 0) {
        m_[i] = detail_read_tensor(is);
        v_[i] = detail_read_tensor(is);
        if (!(m_[i].shape() == params_[i].second.value().shape()))
          throw std::runtime_error("Adam::load: moment shape mismatch for " + name);
      } else {
        m_[i] = Tensor<T>();
        v_[i] = Tensor<T>();
      }
    }
    if (!is) throw std::runtime_error("Adam::load: truncated optimizer state");
  }

 private:
  static void detail_write_u64(std::ostream& os, uint64_t u) {
    os.write(reinterpret_cast<const char*>(&u), sizeof(u));
  }
  static uint64_t detail_read_u64(std::istream& is) {
    uint64_t u = 0;
    is.read(reinterpret_cast<char*>(&u), sizeof(u));
    return u;
  }
  static void detail_write_str(std::ostream& os, const std::string& s) {
    detail_write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static std::string detail_read_str(std::istream& is) {
    std::string s(static_cast<size_t>(detail_read_u64(is)), '\0');
    is.read(s.data(), static_cast<std::streamsize>(s.size()));
    return s;
  }
  static void detail_write_tensor(std::ostream& os, const Tensor<T>& t) {
    detail_write_u64(os, static_cast<uint64_t>(t.shape().rank()));
    for (int64_t d = 0; d < t.shape().rank(); ++d)
      detail_write_u64(os, static_cast<uint64_t>(t.shape()[d]));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(sizeof(T) * static_cast<size_t>(t.numel())));
  }
  static Tensor<T> detail_read_tensor(std::istream& is) {
    const int64_t rank = static_cast<int64_t>(detail_read_u64(is));
    std::vector<int64_t> dims(static_cast<size_t>(rank));
    for (auto& d : dims) d = static_cast<int64_t>(detail_read_u64(is));
    Tensor<T> t{Shape(dims)};
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(T) * static_cast<size_t>(t.numel())));
    return t;
  }

  nn::NamedParams<T> params_;
  std::vector<Tensor<T>> m_, v_;
  std::vector<int64_t> t_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
};

}  // namespace cycleseg::trainer
