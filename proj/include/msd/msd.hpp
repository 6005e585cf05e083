#pragma once

// Umbrella header for the whole library.

#include "msd/common.hpp"
#include "msd/rng.hpp"
#include "msd/tensor.hpp"
#include "msd/tape.hpp"
#include "msd/ops.hpp"
#include "msd/gradcheck.hpp"
#include "msd/nn.hpp"
#include "msd/optim.hpp"
#include "msd/checkpoint.hpp"
#include "msd/data.hpp"
#include "msd/tokenizer.hpp"
#include "msd/seqmodel.hpp"
#include "msd/generate.hpp"
#include "msd/theory.hpp"
#include "msd/eval.hpp"
#include "msd/artifacts.hpp"
#include "msd/config.hpp"
