#pragma once

#include <string>
#include <vector>

#include "boxformer/model.hpp"

namespace boxformer {

/// One layer of the architecture listing.
struct LayerRow {
  std::string network;  // Encoder, Style, Aggregator, Generator, Discriminator
  std::string layer;    // e.g. "Conv-1 (Reflection)"
  std::string params;   // "(in,out,k,s,p)", "(in,out)" or "-"
  Shape output;         // per sample: C x H x W, or C for token layers
  std::string weight;   // parameter holding the layer's weights, if any
  Shape weight_shape;   // expected shape of that parameter
};

/// Layer-by-layer listing computed from the configuration alone, so it is
/// cheap at any scale. The transformer section lists one block.
std::vector<LayerRow> shape_walk(const ModelConfig& cfg);

/// Fixed-width text table of the rows.
std::string format_shape_walk(const std::vector<LayerRow>& rows);

}  // namespace boxformer
