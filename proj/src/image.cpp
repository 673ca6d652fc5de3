#include "bra/image.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <vector>

#include "bra/serialize.hpp"

namespace bra {

namespace {

// Reads the next header token, skipping whitespace and '#' comment lines.
std::string next_token(std::istream& in) {
  std::string tok;
  int ch = in.get();
  while (in) {
    if (ch == '#') {
      while (in && ch != '\n') ch = in.get();
    } else if (std::isspace(ch)) {
      ch = in.get();
    } else {
      break;
    }
  }
  while (in && !std::isspace(ch)) {
    tok.push_back(static_cast<char>(ch));
    ch = in.get();
  }
  if (tok.empty()) throw io_error("truncated image header");
  return tok;
}

Tensor<float> read_pnm(std::istream& in, std::int64_t channels) {
  const std::int64_t w = std::stoll(next_token(in));
  const std::int64_t h = std::stoll(next_token(in));
  const std::int64_t maxval = std::stoll(next_token(in));
  if (w < 1 || h < 1) throw io_error("invalid image extents");
  if (maxval != 255) throw io_error("only 8-bit images are supported, maxval=" +
                                    std::to_string(maxval));
  std::vector<char> raw(static_cast<std::size_t>(h * w * channels));
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!in) throw io_error("truncated image payload");
  Tensor<float> img({h, w, channels});
  for (std::int64_t i = 0; i < img.size(); ++i) {
    img[i] = static_cast<float>(static_cast<unsigned char>(raw[static_cast<std::size_t>(i)])) /
             255.0f;
  }
  return img;
}

template <typename T>
Tensor<float> container_to_map(const Tensor<T>& t) {
  if (t.rank() != 3) {
    throw io_error("tensor input must be rank 3, got shape " + shape_str(t.shape()));
  }
  // Channel-last already, or channel-first to be transposed.
  if (t.extent(2) == 3 || t.extent(2) == 1) {
    Tensor<float> img(t.shape());
    for (std::int64_t i = 0; i < t.size(); ++i) img[i] = static_cast<float>(t[i]);
    return img;
  }
  if (t.extent(0) == 3 || t.extent(0) == 1) {
    const std::int64_t c = t.extent(0), h = t.extent(1), w = t.extent(2);
    Tensor<float> img({h, w, c});
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
          img(y, x, ch) = static_cast<float>(t(ch, y, x));
    return img;
  }
  throw io_error("tensor input shape " + shape_str(t.shape()) +
                 " has no 1- or 3-channel axis in first or last position");
}

}  // namespace

Tensor<float> read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in) throw io_error("cannot read " + path);
  if (magic[0] == 'P' && magic[1] == '6') return read_pnm(in, 3);
  if (magic[0] == 'P' && magic[1] == '5') return read_pnm(in, 1);
  if (magic[0] == 'T' && magic[1] == 'N') {
    in.seekg(0);
    AnyTensor any = read_tensor_any(in);
    return std::visit([](const auto& t) { return container_to_map(t); }, any);
  }
  throw io_error(path + " is neither PPM/PGM nor a tensor container");
}

void write_pgm(const std::string& path, const Tensor<double>& map) {
  if (map.rank() != 2) {
    throw argument_error("write_pgm: expected a rank-2 map, got " + shape_str(map.shape()));
  }
  double lo = map[0], hi = map[0];
  for (std::int64_t i = 0; i < map.size(); ++i) {
    lo = std::min(lo, map[i]);
    hi = std::max(hi, map[i]);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open " + path + " for writing");
  out << "P5\n" << map.extent(1) << " " << map.extent(0) << "\n255\n";
  for (std::int64_t i = 0; i < map.size(); ++i) {
    const double v = (map[i] - lo) / span;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  if (!out) throw io_error("failed writing " + path);
}

}  // namespace bra
