#ifndef DELAYCAST_DELAYCAST_HPP
#define DELAYCAST_DELAYCAST_HPP

// delaycast: multi-task delivery-delay prediction with conformalized
// quantile intervals. Umbrella header.

#include "delaycast/checkpoint.hpp"
#include "delaycast/config.hpp"
#include "delaycast/conformal.hpp"
#include "delaycast/csv_io.hpp"
#include "delaycast/data.hpp"
#include "delaycast/dates.hpp"
#include "delaycast/errors.hpp"
#include "delaycast/evaluation.hpp"
#include "delaycast/grad_check.hpp"
#include "delaycast/losses.hpp"
#include "delaycast/model.hpp"
#include "delaycast/optim.hpp"
#include "delaycast/pipeline.hpp"
#include "delaycast/rng.hpp"
#include "delaycast/synthgen.hpp"
#include "delaycast/tensor.hpp"
#include "delaycast/training.hpp"

namespace delaycast {
inline constexpr const char* kVersion = "0.1.0";
}

#endif  // DELAYCAST_DELAYCAST_HPP
