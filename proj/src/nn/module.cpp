#include "cstyolo/nn/module.hpp"

#include <cmath>

namespace cstyolo::nn {

Tensor& Module::add_parameter(std::string name, Tensor value, ParamKind kind) {
  value.set_requires_grad(true);
  params_.push_back(std::make_unique<Entry>(Entry{std::move(name), std::move(value), kind}));
  return params_.back()->value;
}

Tensor& Module::add_buffer(std::string name, Tensor value) {
  buffers_.push_back(
      std::make_unique<Entry>(Entry{std::move(name), std::move(value), ParamKind::other}));
  return buffers_.back()->value;
}

void Module::remove_module(const std::string& name) {
  std::erase_if(children_, [&](const auto& c) { return c.first == name; });
}

void Module::collect(const std::string& prefix, bool params, bool buffers,
                     std::vector<NamedTensor>& out) {
  if (params) {
    for (auto& e : params_) out.push_back({prefix + e->name, &e->value, e->kind});
  }
  if (buffers) {
    for (auto& e : buffers_) out.push_back({prefix + e->name, &e->value, e->kind});
  }
  for (auto& [name, child] : children_) child->collect(prefix + name + ".", params, buffers, out);
}

std::vector<NamedTensor> Module::parameters() {
  std::vector<NamedTensor> out;
  collect("", true, false, out);
  return out;
}

std::vector<NamedTensor> Module::buffers() {
  std::vector<NamedTensor> out;
  collect("", false, true, out);
  return out;
}

std::vector<NamedTensor> Module::state() {
  auto out = parameters();
  auto b = buffers();
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

int64_t Module::num_parameters() {
  int64_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->numel();
  return n;
}

void Module::train(bool on) {
  training_ = on;
  for (auto& [name, child] : children_) child->train(on);
}

void Module::to(DType dtype) {
  for (auto& p : parameters()) *p.tensor = p.tensor->to(dtype).set_requires_grad(true);
  for (auto& b : buffers()) *b.tensor = b.tensor->to(dtype);
}

void Module::zero_grad() {
  for (auto& p : parameters()) p.tensor->zero_grad();
}

Tensor init_uniform(const Shape& shape, int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(shape, -bound, bound, rng);
}

}  // namespace cstyolo::nn
