#pragma once

#include <string>

#include "detnet/model.hpp"

namespace detnet {

// File layout: 8-byte magic "DETNETV1", one line of JSON metadata (config,
// build seed, ordered tensor list with shapes) terminated by '\n', then the
// tensor payloads as little-endian 32-bit floats concatenated in list order.
inline constexpr char kCheckpointMagic[8] = {'D', 'E', 'T', 'N',
                                             'E', 'T', 'V', '1'};

void save_checkpoint(DetNet& model, const std::string& path);

// Rebuilds the model from the embedded config, then loads the payloads.
DetNet load_checkpoint(const std::string& path);

// Loads payloads into an existing model; every checkpoint tensor must match
// the model's name and shape or the error names the offending layer.
void load_checkpoint_into(DetNet& model, const std::string& path);

}  // namespace detnet
