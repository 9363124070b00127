#pragma once

// Template body of for_each_tensor; included from model.hpp.

#include <string>
#include <utility>

namespace mdcn {
namespace detail {

inline std::vector<std::uint32_t> dims_of(const Shape5& s) {
  return {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
          static_cast<std::uint32_t>(s.d), static_cast<std::uint32_t>(s.h),
          static_cast<std::uint32_t>(s.w)};
}

template <typename E, typename Tens>
TensorRef<E> tensor_ref(std::string name, Tens& t) {
  return {std::move(name), std::span<E>(t.data(), static_cast<std::size_t>(t.size())),
          dims_of(t.shape())};
}

template <typename E, typename Vec>
TensorRef<E> vector_ref(std::string name, Vec& v) {
  return {std::move(name), std::span<E>(v.data(), v.size()),
          {static_cast<std::uint32_t>(v.size())}};
}

template <typename E, typename BN, typename Fn>
void visit_bn(const std::string& prefix, BN& bn, TensorGroup group, Fn& fn) {
  if (group == TensorGroup::learnable) {
    fn(vector_ref<E>(prefix + ".gamma", bn.gamma));
    fn(vector_ref<E>(prefix + ".beta", bn.beta));
  } else {
    fn(vector_ref<E>(prefix + ".running_mean", bn.running_mean));
    fn(vector_ref<E>(prefix + ".running_var", bn.running_var));
  }
}

template <typename E, typename SP, typename Fn>
void visit_stream(const std::string& prefix, SP& s, TensorGroup group, Fn& fn) {
  const bool learnable = group == TensorGroup::learnable;
  if (learnable) fn(tensor_ref<E>(prefix + ".stem.w", s.stem_w));
  visit_bn<E>(prefix + ".stem.bn", s.stem_bn, group, fn);
  for (std::size_t i = 0; i < s.blocks.size(); ++i) {
    auto& b = s.blocks[i];
    const std::string bp = prefix + ".block" + std::to_string(i + 1);
    if (learnable) {
      fn(tensor_ref<E>(bp + ".w_1d", b.w_1d));
      fn(tensor_ref<E>(bp + ".w_2d", b.w_2d));
      fn(tensor_ref<E>(bp + ".w_3d", b.w_3d));
    }
    visit_bn<E>(bp + ".bn_1d", b.bn_1d, group, fn);
    visit_bn<E>(bp + ".bn_2d", b.bn_2d, group, fn);
    visit_bn<E>(bp + ".bn_3d", b.bn_3d, group, fn);
    if (learnable) {
      fn(tensor_ref<E>(bp + ".w_reduce", b.w_reduce));
      if (!b.w_skip.empty()) fn(tensor_ref<E>(bp + ".w_skip", b.w_skip));
    }
  }
}

template <typename E, typename MP, typename Fn>
void visit_model(MP& p, TensorGroup group, Fn& fn) {
  if (p.rgb) visit_stream<E>("rgb", *p.rgb, group, fn);
  if (p.flow) visit_stream<E>("flow", *p.flow, group, fn);
  if (group == TensorGroup::learnable) {
    fn(TensorRef<E>{"head.fc.w", std::span<E>(p.fc_w.data.data(), p.fc_w.data.size()),
                    {static_cast<std::uint32_t>(p.fc_w.rows),
                     static_cast<std::uint32_t>(p.fc_w.cols)}});
    fn(vector_ref<E>("head.fc.b", p.fc_b));
  }
}

}  // namespace detail

template <typename T, typename Fn>
void for_each_tensor(ModelParams<T>& params, TensorGroup group, Fn&& fn) {
  detail::visit_model<T>(params, group, fn);
}

template <typename T, typename Fn>
void for_each_tensor(const ModelParams<T>& params, TensorGroup group, Fn&& fn) {
  detail::visit_model<const T>(params, group, fn);
}

template <typename T>
std::vector<TensorRef<T>> learnable_tensors(ModelParams<T>& params) {
  std::vector<TensorRef<T>> out;
  for_each_tensor(params, TensorGroup::learnable, [&](TensorRef<T> r) { out.push_back(std::move(r)); });
  return out;
}

template <typename T>
std::vector<TensorRef<const T>> learnable_tensors(const ModelParams<T>& params) {
  std::vector<TensorRef<const T>> out;
  for_each_tensor(params, TensorGroup::learnable,
                  [&](TensorRef<const T> r) { out.push_back(std::move(r)); });
  return out;
}

}  // namespace mdcn
