#include "maskfuse/rle.h"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>

#include "maskfuse/errors.h"

namespace maskfuse {

std::vector<RleRun> EncodeRle(const InstanceMask& instance, int height, int width) {
  const BoundingBox& b = instance.bbox();
  if (b.min_row < 0 || b.min_col < 0 || b.max_row >= height || b.max_col >= width) {
    throw BoundsError("instance " + std::to_string(instance.id()) + " outside image");
  }
  std::vector<RleRun> runs;
  for (int c = b.min_col; c <= b.max_col; ++c) {
    for (int r = b.min_row; r <= b.max_row; ++r) {
      if (!instance.contains(r, c)) continue;
      const int64_t index = int64_t{c} * height + r + 1;
      if (!runs.empty() && runs.back().start + runs.back().length == index) {
        ++runs.back().length;
      } else {
        runs.push_back({index, 1});
      }
    }
  }
  return runs;
}

InstanceMask DecodeRle(std::span<const RleRun> runs, uint32_t id, int height, int width) {
  const int64_t total = int64_t{height} * width;
  std::vector<Pixel> pixels;
  int64_t prev_end = 0;
  for (const RleRun& run : runs) {
    if (run.length < 1 || run.start < 1 || run.start + run.length - 1 > total) {
      throw FormatError("RLE run " + std::to_string(run.start) + " " +
                        std::to_string(run.length) + " outside " + std::to_string(height) +
                        "x" + std::to_string(width) + " image");
    }
    if (run.start <= prev_end) {
      throw FormatError("RLE runs unsorted or overlapping at " + std::to_string(run.start));
    }
    for (int64_t i = run.start - 1; i < run.start - 1 + run.length; ++i) {
      pixels.push_back({static_cast<int>(i % height), static_cast<int>(i / height)});
    }
    prev_end = run.start + run.length - 1;
  }
  return InstanceMask::FromPixels(id, pixels);
}

std::string FormatRle(std::span<const RleRun> runs) {
  std::string out;
  for (const RleRun& run : runs) {
    if (!out.empty()) out += ' ';
    out += std::to_string(run.start);
    out += ' ';
    out += std::to_string(run.length);
  }
  return out;
}

std::vector<RleRun> ParseRle(std::string_view text) {
  std::vector<int64_t> numbers;
  size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && text[pos] == ' ') ++pos;
    if (pos >= text.size()) break;
    int64_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + text.size(), value);
    if (ec != std::errc() || (ptr != text.data() + text.size() && *ptr != ' ')) {
      throw FormatError("malformed RLE text: '" + std::string(text) + "'");
    }
    numbers.push_back(value);
    pos = static_cast<size_t>(ptr - text.data());
  }
  if (numbers.size() % 2 != 0) throw FormatError("RLE text has an odd number of values");
  std::vector<RleRun> runs;
  for (size_t i = 0; i < numbers.size(); i += 2) runs.push_back({numbers[i], numbers[i + 1]});
  return runs;
}

void WriteRleCsv(const std::filesystem::path& path, std::span<const RleImage> images) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "ImageId,EncodedPixels\n";
  for (const RleImage& image : images) {
    if (image.instances.empty()) {
      out << image.image_id << ",\n";
      continue;
    }
    for (const InstanceMask& inst : image.instances) {
      out << image.image_id << ',' << FormatRle(EncodeRle(inst, image.height, image.width))
          << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<RleImage> ReadRleCsv(const std::filesystem::path& path, int height, int width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty RLE file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "ImageId,EncodedPixels") {
    throw FormatError(path.string() + ": expected header ImageId,EncodedPixels");
  }
  std::vector<RleImage> images;
  std::map<std::string, size_t> index;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const size_t comma = line.find(',');
    if (comma == std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": missing comma");
    }
    const std::string id = line.substr(0, comma);
    auto [it, inserted] = index.try_emplace(id, images.size());
    if (inserted) images.push_back(RleImage{id, height, width, {}});
    RleImage& image = images[it->second];
    const std::vector<RleRun> runs = ParseRle(std::string_view(line).substr(comma + 1));
    if (runs.empty()) continue;
    try {
      image.instances.push_back(
          DecodeRle(runs, static_cast<uint32_t>(image.instances.size() + 1), height, width));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return images;
}

}  // namespace maskfuse
