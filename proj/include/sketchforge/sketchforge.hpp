#pragma once

// Umbrella header.

#include "sketchforge/augment.hpp"
#include "sketchforge/autodiff.hpp"
#include "sketchforge/commands.hpp"
#include "sketchforge/config.hpp"
#include "sketchforge/features.hpp"
#include "sketchforge/gradcheck.hpp"
#include "sketchforge/image.hpp"
#include "sketchforge/losses.hpp"
#include "sketchforge/metrics.hpp"
#include "sketchforge/nets.hpp"
#include "sketchforge/nlda.hpp"
#include "sketchforge/patchmatch.hpp"
#include "sketchforge/preprocess.hpp"
#include "sketchforge/selfcheck.hpp"
#include "sketchforge/tensor.hpp"
#include "sketchforge/train.hpp"
