#pragma once

#include <cmath>
#include <span>

#include "fedbev/dataset.hpp"
#include "fedbev/nn.hpp"

namespace fedbev::eval {

/// Mean absolute error in Wh of eval-mode predictions over scaled samples.
inline double evaluate(const nn::ModelParameters& params, std::span<const dataset::WindowedSample> samples,
                       const dataset::ScalingSpec& scaling) {
  require(!samples.empty(), "evaluate: empty sample list");
  const auto pred = nn::predict(params, samples);
  double acc = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    acc += std::abs(dataset::unscale_label(pred[i], scaling) - dataset::unscale_label(samples[i].label, scaling));
  }
  return acc / static_cast<double>(samples.size());
}

}  // namespace fedbev::eval
