#pragma once

#include "pico/pico.hpp"
#include "pico/picoplus.hpp"

namespace pico::detail {

// Shared epoch loop. With `plus == nullptr`, or during warm-up, this is PiCO.
EpochMetrics run_epoch(TrainState& state, const TrainingData& data, const PicoConfig& config,
                       const PicoPlusConfig* plus, int epoch, const TrainingData* test);

}  // namespace pico::detail
