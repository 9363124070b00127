#include "mdcn/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "mdcn/error.hpp"

namespace mdcn {

std::string Shape5::str() const {
  std::ostringstream os;
  os << n << 'x' << c << 'x' << d << 'x' << h << 'x' << w;
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape5 shape, T fill) : shape_(shape) {
  if (!shape.valid()) throw ConfigError("tensor shape must be positive, got " + shape.str());
  data_.assign(static_cast<std::size_t>(shape.volume()), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape5 shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
  if (!shape.valid()) throw ConfigError("tensor shape must be positive, got " + shape.str());
  if (static_cast<std::int64_t>(data_.size()) != shape.volume()) {
    throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                      " does not match shape " + shape.str());
  }
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> samples) {
  if (samples.empty()) throw ConfigError("stack_batch: no samples");
  Shape5 s = samples.front().shape();
  if (s.n != 1) throw ConfigError("stack_batch: samples must have batch 1");
  Shape5 out_shape = s;
  out_shape.n = static_cast<int>(samples.size());
  Tensor<T> out(out_shape);
  const std::int64_t per = s.volume();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].shape() != s) {
      throw ConfigError("stack_batch: shape " + samples[i].shape().str() + " != " + s.str());
    }
    std::copy(samples[i].data(), samples[i].data() + per, out.data() + static_cast<std::int64_t>(i) * per);
  }
  return out;
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> stack_batch(std::span<const Tensor<float>>);
template Tensor<double> stack_batch(std::span<const Tensor<double>>);

}  // namespace mdcn
