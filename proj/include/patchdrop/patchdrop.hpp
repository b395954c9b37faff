#pragma once

#include "patchdrop/bagnet.hpp"
#include "patchdrop/baselines.hpp"
#include "patchdrop/checkpoint.hpp"
#include "patchdrop/classifier.hpp"
#include "patchdrop/config.hpp"
#include "patchdrop/data.hpp"
#include "patchdrop/gradcheck.hpp"
#include "patchdrop/hardpos.hpp"
#include "patchdrop/models.hpp"
#include "patchdrop/nn.hpp"
#include "patchdrop/optim.hpp"
#include "patchdrop/patch_grid.hpp"
#include "patchdrop/pipeline.hpp"
#include "patchdrop/policy.hpp"
#include "patchdrop/reward.hpp"
#include "patchdrop/rng.hpp"
#include "patchdrop/tensor.hpp"
#include "patchdrop/training.hpp"
