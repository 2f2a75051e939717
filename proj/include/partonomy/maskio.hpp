#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace partonomy::maskio {

// Dense binary mask, row-major, one byte per pixel (0 or 1).
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::uint32_t height, std::uint32_t width);
  // Throws LengthMismatch when data.size() != height * width. Non-zero bytes count as foreground.
  BinaryMask(std::uint32_t height, std::uint32_t width, std::vector<std::uint8_t> data);

  std::uint32_t height() const noexcept { return height_; }
  std::uint32_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  const std::vector<std::uint8_t>& data() const noexcept { return data_; }

  bool at(std::uint32_t y, std::uint32_t x) const { return data_[index(y, x)] != 0; }
  void set(std::uint32_t y, std::uint32_t x, bool value = true) {
    data_[index(y, x)] = value ? 1 : 0;
  }

  bool same_shape(const BinaryMask& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t index(std::uint32_t y, std::uint32_t x) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  std::uint32_t height_ = 0;
  std::uint32_t width_ = 0;
  std::vector<std::uint8_t> data_;
};

// COCO run-length encoding: column-major runs alternating background and
// foreground, starting with background (a leading 0 when the first pixel is set).
struct MaskRle {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<std::uint32_t> counts;

  std::uint64_t total() const noexcept;
  // Foreground pixel count, read straight off the odd runs.
  std::uint64_t area() const noexcept;

  friend bool operator==(const MaskRle&, const MaskRle&) = default;
};

struct Box {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::uint32_t w = 0;
  std::uint32_t h = 0;

  friend bool operator==(const Box&, const Box&) = default;
};

MaskRle rle_encode(const BinaryMask& mask);

// Throws LengthMismatch when the runs do not cover height * width exactly.
BinaryMask rle_decode(const MaskRle& rle);

// Drops interior zero runs and merges their neighbours; the result decodes to the same mask.
MaskRle canonicalize(const MaskRle& rle);

// Compressed string form used by pycocotools (6 bits per char, delta-coded from the
// run two positions back).
std::string rle_to_string(const MaskRle& rle);
MaskRle rle_from_string(std::string_view text, std::uint32_t height, std::uint32_t width);

// |a & b| / |a | b|. Both empty -> 1.0. Throws DimensionMismatch on shape mismatch.
double iou(const BinaryMask& a, const BinaryMask& b);

std::uint64_t area(const BinaryMask& mask) noexcept;

// Tight box around the foreground; nullopt for an empty mask.
std::optional<Box> bbox(const BinaryMask& mask) noexcept;

// {"size":[h,w],"counts":[...]}; always the integer-list form.
nlohmann::json rle_to_json(const MaskRle& rle);

// Accepts integer-list or compressed-string counts. Errors name `record` for context.
MaskRle rle_from_json(const nlohmann::json& j, const std::string& record = {});

}  // namespace partonomy::maskio
