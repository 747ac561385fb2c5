#ifndef MASKFUSE_PNG_IO_H_
#define MASKFUSE_PNG_IO_H_

#include <filesystem>

#include "maskfuse/mask_core.h"

namespace maskfuse {

// Label maps are single-channel 16-bit grayscale PNGs (pixel value = id).
// Reading also accepts 1/2/4/8-bit grayscale. Color PNGs raise FormatError.
LabelMap ReadLabelMapPng(const std::filesystem::path& path);
// Throws BoundsError when a label does not fit in 16 bits.
void WriteLabelMapPng(const std::filesystem::path& path, const LabelMap& map);

// Binary channels are 8-bit grayscale, 0 or 255. Any nonzero value reads as set.
BinaryMask ReadBinaryPng(const std::filesystem::path& path);
void WriteBinaryPng(const std::filesystem::path& path, const BinaryMask& mask);

}  // namespace maskfuse

#endif  // MASKFUSE_PNG_IO_H_
