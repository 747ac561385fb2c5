#ifndef MASKFUSE_RLE_H_
#define MASKFUSE_RLE_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "maskfuse/mask_core.h"

namespace maskfuse {

// Run of `length` pixels starting at `start`. Pixels are numbered from 1 in
// column-major order (down each column, then left to right).
struct RleRun {
  int64_t start = 0;
  int64_t length = 0;
  bool operator==(const RleRun&) const = default;
};

std::vector<RleRun> EncodeRle(const InstanceMask& instance, int height, int width);
// Throws FormatError on unsorted, overlapping or out-of-range runs.
InstanceMask DecodeRle(std::span<const RleRun> runs, uint32_t id, int height, int width);

// "start length start length ..."
std::string FormatRle(std::span<const RleRun> runs);
std::vector<RleRun> ParseRle(std::string_view text);

struct RleImage {
  std::string image_id;
  int height = 0;
  int width = 0;
  std::vector<InstanceMask> instances;
};

// CSV with header `ImageId,EncodedPixels`, one row per instance. An image
// without instances is written as a single row with an empty run list so it
// survives a round trip.
void WriteRleCsv(const std::filesystem::path& path, std::span<const RleImage> images);
// RLE files carry no dimensions, so the caller supplies them. Images appear in
// order of first occurrence; instance ids are 1..n in row order.
std::vector<RleImage> ReadRleCsv(const std::filesystem::path& path, int height, int width);

}  // namespace maskfuse

#endif  // MASKFUSE_RLE_H_
