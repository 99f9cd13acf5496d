#include "ssam/params.hpp"

#include <cstring>

namespace ssam {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

template <typename T>
std::uint64_t fold(std::uint64_t h, const Tensor<T>& tensor) {
  for (std::size_t d : tensor.shape()) {
    h ^= static_cast<std::uint64_t>(d);
    h *= kFnvPrime;
  }
  for (T v : tensor.data()) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= kFnvPrime;
    }
  }
  return h;
}

}  // namespace

template <typename T>
std::uint64_t checksum(const ParamList<T>& params) {
  std::uint64_t h = kFnvOffset;
  for (const auto& p : params) {
    for (char ch : p.name) {
      h ^= static_cast<unsigned char>(ch);
      h *= kFnvPrime;
    }
    h = fold(h, p.tensor);
  }
  return h;
}

template <typename T>
std::uint64_t checksum(const Tensor<T>& tensor) {
  return fold(kFnvOffset, tensor);
}

template std::uint64_t checksum<float>(const ParamList<float>&);
template std::uint64_t checksum<double>(const ParamList<double>&);
template std::uint64_t checksum<float>(const Tensor<float>&);
template std::uint64_t checksum<double>(const Tensor<double>&);

}  // namespace ssam
