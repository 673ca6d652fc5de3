#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <variant>

#include <json.hpp>

#include "bra/tensor.hpp"

namespace bra {

// Flat binary tensor container: little-endian header (magic "TNSR", dtype
// code, rank, extents) followed by the raw scalars.

static_assert(std::endian::native == std::endian::little,
              "tensor container assumes a little-endian host");

namespace detail {

inline constexpr char kTensorMagic[4] = {'T', 'N', 'S', 'R'};

template <typename T>
constexpr std::uint32_t dtype_code();
template <>
constexpr std::uint32_t dtype_code<float>() {
  return 0;
}
template <>
constexpr std::uint32_t dtype_code<double>() {
  return 1;
}

template <typename U>
void write_raw(std::ostream& out, const U& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_raw(std::istream& in) {
  U v;
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!in) throw io_error("tensor container truncated");
  return v;
}

}  // namespace detail

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t) {
  out.write(detail::kTensorMagic, 4);
  detail::write_raw(out, detail::dtype_code<T>());
  detail::write_raw(out, static_cast<std::uint32_t>(t.rank()));
  for (std::int64_t d = 0; d < t.rank(); ++d)
    detail::write_raw(out, static_cast<std::uint64_t>(t.extent(d)));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(sizeof(T) * static_cast<std::size_t>(t.size())));
  if (!out) throw io_error("tensor container write failed");
}

template <typename T>
void write_tensor_file(const std::string& path, const Tensor<T>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open " + path + " for writing");
  write_tensor(out, t);
}

namespace detail {

inline std::pair<std::uint32_t, Shape> read_header(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kTensorMagic, 4) != 0) {
    throw io_error("not a tensor container (bad magic)");
  }
  const auto dtype = read_raw<std::uint32_t>(in);
  const auto rank = read_raw<std::uint32_t>(in);
  Shape shape;
  for (std::uint32_t d = 0; d < rank; ++d)
    shape.push_back(static_cast<std::int64_t>(read_raw<std::uint64_t>(in)));
  return {dtype, shape};
}

template <typename T>
Tensor<T> read_payload(std::istream& in, Shape shape) {
  std::vector<T> data(static_cast<std::size_t>(shape_numel(shape)));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(sizeof(T) * data.size()));
  if (!in) throw io_error("tensor container truncated");
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace detail

template <typename T>
Tensor<T> read_tensor(std::istream& in) {
  auto [dtype, shape] = detail::read_header(in);
  if (dtype != detail::dtype_code<T>()) {
    throw io_error("tensor container dtype code " + std::to_string(dtype) +
                   " does not match the requested scalar type");
  }
  return detail::read_payload<T>(in, std::move(shape));
}

template <typename T>
Tensor<T> read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  return read_tensor<T>(in);
}

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

inline AnyTensor read_tensor_any(std::istream& in) {
  auto [dtype, shape] = detail::read_header(in);
  if (dtype == 0) return detail::read_payload<float>(in, std::move(shape));
  if (dtype == 1) return detail::read_payload<double>(in, std::move(shape));
  throw io_error("unknown tensor dtype code " + std::to_string(dtype));
}

// JSON debug form: {"shape": [...], "data": nested lists}, for fixtures.

namespace detail {

template <typename T>
nlohmann::json nest(const Tensor<T>& t, std::int64_t axis, std::int64_t& pos) {
  nlohmann::json arr = nlohmann::json::array();
  if (axis == t.rank() - 1) {
    for (std::int64_t i = 0; i < t.extent(axis); ++i) arr.push_back(t[pos++]);
  } else {
    for (std::int64_t i = 0; i < t.extent(axis); ++i) arr.push_back(nest(t, axis + 1, pos));
  }
  return arr;
}

template <typename T>
void flatten(const nlohmann::json& node, std::vector<T>& out) {
  if (node.is_array()) {
    for (const auto& child : node) flatten(child, out);
  } else {
    out.push_back(node.get<T>());
  }
}

}  // namespace detail

template <typename T>
nlohmann::json tensor_to_json(const Tensor<T>& t) {
  std::int64_t pos = 0;
  return nlohmann::json{{"shape", t.shape()}, {"data", detail::nest(t, 0, pos)}};
}

template <typename T>
Tensor<T> tensor_from_json(const nlohmann::json& j) {
  Shape shape = j.at("shape").get<Shape>();
  std::vector<T> data;
  data.reserve(static_cast<std::size_t>(shape_numel(shape)));
  detail::flatten(j.at("data"), data);
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace bra
