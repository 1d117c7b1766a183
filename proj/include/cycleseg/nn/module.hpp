#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cycleseg/autodiff/variable.hpp"
#include "cycleseg/core/tensor.hpp"

namespace cycleseg::nn {

/// Forward-pass context. `training` switches batch-norm statistics; `frozen`
/// substitutes detached parameter handles so the pass contributes no
/// parameter gradients (used for the generator's adversarial term, where the
/// discriminator must act as a fixed function).
struct Ctx {
  bool training = true;
  bool frozen = false;
};

inline constexpr Ctx kEval{false, false};
inline constexpr Ctx kTrain{true, false};
inline constexpr Ctx kTrainFrozen{true, true};

/// Resolve a parameter for use under the given context.
template <typename T>
inline ad::Var<T> use(const ad::Var<T>& p, const Ctx& ctx) {
  return ctx.frozen ? p.detach() : p;
}

template <typename T>
using NamedParams = std::vector<std::pair<std::string, ad::Var<T>>>;
template <typename T>
using NamedBuffers = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  virtual ad::Var<T> forward(const ad::Var<T>& x, const Ctx& ctx) = 0;

  /// Trainable parameters, prefixed and in fixed declaration order.
  virtual void collect_params(NamedParams<T>& out, const std::string& prefix) const {
    (void)out;
    (void)prefix;
  }
  /// Non-trainable state (running statistics). The returned tensors share
  /// storage with the module, so writing through them updates the module.
  virtual void collect_buffers(NamedBuffers<T>& out, const std::string& prefix) const {
    (void)out;
    (void)prefix;
  }
};

template <typename T>
class Sequential : public Module<T> {
 public:
  Sequential() = default;

  template <typename M, typename... Args>
  M& emplace(Args&&... args) {
    auto m = std::make_unique<M>(std::forward<Args>(args)...);
    M& ref = *m;
    children_.push_back(std::move(m));
    return ref;
  }

  ad::Var<T> forward(const ad::Var<T>& x, const Ctx& ctx) override {
    ad::Var<T> h = x;
    for (auto& child : children_) h = child->forward(h, ctx);
    return h;
  }

  void collect_params(NamedParams<T>& out, const std::string& prefix) const override {
    for (size_t i = 0; i < children_.size(); ++i)
      children_[i]->collect_params(out, prefix + std::to_string(i) + ".");
  }
  void collect_buffers(NamedBuffers<T>& out, const std::string& prefix) const override {
    for (size_t i = 0; i < children_.size(); ++i)
      children_[i]->collect_buffers(out, prefix + std::to_string(i) + ".");
  }

 private:
  std::vector<std::unique_ptr<Module<T>>> children_;
};

}  // namespace cycleseg::nn
