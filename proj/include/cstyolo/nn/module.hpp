#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cstyolo/tensor.hpp"

namespace cstyolo::nn {

/// Decides optimizer treatment (weight decay applies to conv_weight only).
enum class ParamKind { conv_weight, linear_weight, norm_weight, bias, other };

struct NamedTensor {
  std::string path;
  Tensor* tensor;
  ParamKind kind;
};

/// Owner of named parameters, buffers and child modules. Paths are
/// dot-separated and unique within a tree. Modules are not copyable or movable
/// because children and parameters are referenced by address.
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  virtual ~Module() = default;

  std::vector<NamedTensor> parameters();
  std::vector<NamedTensor> buffers();
  /// Parameters followed by buffers; the checkpoint order.
  std::vector<NamedTensor> state();
  int64_t num_parameters();

  void train(bool on = true);
  void eval() { train(false); }
  bool training() const { return training_; }

  /// Converts every parameter and buffer (gradients are discarded).
  void to(DType dtype);
  void zero_grad();

 protected:
  Tensor& add_parameter(std::string name, Tensor value, ParamKind kind);
  Tensor& add_buffer(std::string name, Tensor value);
  template <class M>
  M& add_module(std::string name, std::unique_ptr<M> child) {
    M& ref = *child;
    children_.emplace_back(std::move(name), std::move(child));
    return ref;
  }
  void remove_module(const std::string& name);

 private:
  struct Entry {
    std::string name;
    Tensor value;
    ParamKind kind;
  };
  void collect(const std::string& prefix, bool params, bool buffers, std::vector<NamedTensor>& out);

  std::vector<std::unique_ptr<Entry>> params_;
  std::vector<std::unique_ptr<Entry>> buffers_;
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> children_;
  bool training_ = true;
};

/// Default initialization for a weight with the given fan-in: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor init_uniform(const Shape& shape, int64_t fan_in, Rng& rng);

}  // namespace cstyolo::nn
