#ifndef MASKFUSE_TARGET_GEN_H_
#define MASKFUSE_TARGET_GEN_H_

#include "maskfuse/mask_core.h"

namespace maskfuse {

// Two-channel training target for a semantic segmentation network that also
// learns where touching nuclei meet.
struct UnetTargets {
  BinaryMask nuclei;
  BinaryMask borders;
};

// nuclei  = every instance pixel.
// borders = pixels covered by at least two instances after each instance is
//           dilated on its own with a square element of the given radius.
// Border pixels stay in the nuclei channel.
UnetTargets MakeUnetTargets(const LabelMap& gt, int radius = 1);

}  // namespace maskfuse

#endif  // MASKFUSE_TARGET_GEN_H_
