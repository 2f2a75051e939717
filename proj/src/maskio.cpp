#include "partonomy/maskio.hpp"

#include <algorithm>
#include <limits>

#include "partonomy/errors.hpp"

namespace partonomy::maskio {

BinaryMask::BinaryMask(std::uint32_t height, std::uint32_t width)
    : height_(height), width_(width),
      data_(static_cast<std::size_t>(height) * width, 0) {}

BinaryMask::BinaryMask(std::uint32_t height, std::uint32_t width, std::vector<std::uint8_t> data)
    : height_(height), width_(width), data_(std::move(data)) {
  if (data_.size() != static_cast<std::size_t>(height) * width) {
    throw LengthMismatch("mask data has " + std::to_string(data_.size()) +
                         " entries, expected " + std::to_string(height) + "x" +
                         std::to_string(width));
  }
  for (auto& v : data_) {
    v = v != 0 ? 1 : 0;
  }
}

std::uint64_t MaskRle::total() const noexcept {
  std::uint64_t sum = 0;
  for (auto c : counts) {
    sum += c;
  }
  return sum;
}

std::uint64_t MaskRle::area() const noexcept {
  std::uint64_t sum = 0;
  for (std::size_t i = 1; i < counts.size(); i += 2) {
    sum += counts[i];
  }
  return sum;
}

MaskRle rle_encode(const BinaryMask& mask) {
  MaskRle rle{mask.height(), mask.width(), {}};
  std::uint32_t run = 0;
  bool value = false;
  for (std::uint32_t x = 0; x < mask.width(); ++x) {
    for (std::uint32_t y = 0; y < mask.height(); ++y) {
      const bool pixel = mask.at(y, x);
      if (pixel != value) {
        rle.counts.push_back(run);
        run = 0;
        value = pixel;
      }
      ++run;
    }
  }
  rle.counts.push_back(run);
  return rle;
}

BinaryMask rle_decode(const MaskRle& rle) {
  const std::uint64_t expected = static_cast<std::uint64_t>(rle.height) * rle.width;
  if (rle.total() != expected) {
    throw LengthMismatch("RLE counts sum to " + std::to_string(rle.total()) + ", expected " +
                         std::to_string(rle.height) + "x" + std::to_string(rle.width) + "=" +
                         std::to_string(expected));
  }
  BinaryMask mask(rle.height, rle.width);
  std::uint64_t pos = 0;
  bool value = false;
  for (auto run : rle.counts) {
    if (value) {
      for (std::uint64_t k = pos; k < pos + run; ++k) {
        // column-major position -> (row, column)
        mask.set(static_cast<std::uint32_t>(k % rle.height),
                 static_cast<std::uint32_t>(k / rle.height));
      }
    }
    pos += run;
    value = !value;
  }
  return mask;
}

MaskRle canonicalize(const MaskRle& rle) {
  MaskRle out{rle.height, rle.width, {}};
  // out.counts.size() parity tells which value the last stored run has.
  bool value = false;
  for (auto run : rle.counts) {
    if (run > 0) {
      const bool last_is_foreground = out.counts.size() % 2 == 0;
      if (out.counts.empty()) {
        if (value) {
          out.counts.push_back(0);
        }
        out.counts.push_back(run);
      } else if (last_is_foreground == value) {
        out.counts.back() += run;
      } else {
        out.counts.push_back(run);
      }
    }
    value = !value;
  }
  if (out.counts.empty()) {
    out.counts.push_back(0);
  }
  return out;
}

std::string rle_to_string(const MaskRle& rle) {
  std::string s;
  const auto& c = rle.counts;
  for (std::size_t i = 0; i < c.size(); ++i) {
    std::int64_t x = c[i];
    if (i > 2) {
      x -= static_cast<std::int64_t>(c[i - 2]);
    }
    bool more = true;
    while (more) {
      char ch = static_cast<char>(x & 0x1f);
      x >>= 5;
      more = (ch & 0x10) ? x != -1 : x != 0;
      if (more) {
        ch |= 0x20;
      }
      s.push_back(static_cast<char>(ch + 48));
    }
  }
  return s;
}

MaskRle rle_from_string(std::string_view text, std::uint32_t height, std::uint32_t width) {
  MaskRle rle{height, width, {}};
  std::size_t k = 0;
  while (k < text.size()) {
    std::int64_t x = 0;
    int m = 0;
    bool more = true;
    while (more) {
      if (k >= text.size() || m > 12) {
        throw LengthMismatch("truncated compressed RLE string");
      }
      const int ch = static_cast<int>(text[k]) - 48;
      if (ch < 0 || ch > 63) {
        throw LengthMismatch("invalid character in compressed RLE string");
      }
      x |= static_cast<std::int64_t>(ch & 0x1f) << (5 * m);
      more = (ch & 0x20) != 0;
      ++k;
      ++m;
      if (!more && (ch & 0x10)) {
        x |= -(std::int64_t{1} << (5 * m));
      }
    }
    const std::size_t i = rle.counts.size();
    if (i > 2) {
      x += static_cast<std::int64_t>(rle.counts[i - 2]);
    }
    if (x < 0 || x > std::numeric_limits<std::uint32_t>::max()) {
      throw LengthMismatch("compressed RLE run out of range");
    }
    rle.counts.push_back(static_cast<std::uint32_t>(x));
  }
  return rle;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) {
    throw DimensionMismatch("iou: " + std::to_string(a.height()) + "x" +
                            std::to_string(a.width()) + " vs " + std::to_string(b.height()) +
                            "x" + std::to_string(b.width()));
  }
  std::uint64_t inter = 0;
  std::uint64_t uni = 0;
  const auto& da = a.data();
  const auto& db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    inter += da[i] & db[i];
    uni += da[i] | db[i];
  }
  if (uni == 0) {
    return 1.0;
  }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::uint64_t area(const BinaryMask& mask) noexcept {
  std::uint64_t n = 0;
  for (auto v : mask.data()) {
    n += v;
  }
  return n;
}

std::optional<Box> bbox(const BinaryMask& mask) noexcept {
  std::uint32_t x0 = mask.width();
  std::uint32_t y0 = mask.height();
  std::uint32_t x1 = 0;
  std::uint32_t y1 = 0;
  bool any = false;
  for (std::uint32_t y = 0; y < mask.height(); ++y) {
    for (std::uint32_t x = 0; x < mask.width(); ++x) {
      if (mask.at(y, x)) {
        any = true;
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
  }
  if (!any) {
    return std::nullopt;
  }
  return Box{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

nlohmann::json rle_to_json(const MaskRle& rle) {
  return nlohmann::json{{"size", {rle.height, rle.width}}, {"counts", rle.counts}};
}

MaskRle rle_from_json(const nlohmann::json& j, const std::string& record) {
  if (!j.is_object() || !j.contains("size") || !j.contains("counts")) {
    throw SchemaViolation(record, "RLE must be an object with \"size\" and \"counts\"");
  }
  const auto& size = j.at("size");
  if (!size.is_array() || size.size() != 2 || !size[0].is_number_unsigned() ||
      !size[1].is_number_unsigned()) {
    throw SchemaViolation(record, "RLE \"size\" must be [height, width]");
  }
  const auto h = size[0].get<std::uint32_t>();
  const auto w = size[1].get<std::uint32_t>();
  const auto& counts = j.at("counts");
  MaskRle rle{h, w, {}};
  try {
    if (counts.is_string()) {
      rle = rle_from_string(counts.get<std::string>(), h, w);
    } else if (counts.is_array()) {
      rle.counts.reserve(counts.size());
      for (const auto& c : counts) {
        if (!c.is_number_unsigned()) {
          throw SchemaViolation(record, "RLE counts must be non-negative integers");
        }
        rle.counts.push_back(c.get<std::uint32_t>());
      }
    } else {
      throw SchemaViolation(record, "RLE counts must be a list or a compressed string");
    }
  } catch (const LengthMismatch& e) {
    throw SchemaViolation(record, e.what());
  }
  if (rle.total() != static_cast<std::uint64_t>(h) * w) {
    throw SchemaViolation(record, "RLE counts sum to " + std::to_string(rle.total()) +
                                      " but size is " + std::to_string(h) + "x" +
                                      std::to_string(w));
  }
  return rle;
}

}  // namespace partonomy::maskio
