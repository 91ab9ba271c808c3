#pragma once

#include <map>
#include <string>
#include <vector>

#include "cb/layers.hpp"

namespace cb {

// Single-file binary checkpoint: a JSON manifest plus named parameter and
// buffer tensors, little-endian 64-bit floats. Byte-stable across save/load
// on the same platform.
struct CheckpointData {
    std::string manifest_json;
    struct Item {
        std::string name;
        bool is_buffer = false;
        Shape shape;
        std::vector<double> data;
    };
    std::vector<Item> items;
};

void save_checkpoint(const std::string& path, const std::string& manifest_json,
                     const ParamStore& store);
CheckpointData load_checkpoint(const std::string& path);

// Copies checkpoint values into matching names; unknown names or shape
// mismatches are data errors. Returns the number of tensors restored.
int apply_checkpoint(const CheckpointData& ckpt, ParamStore& store);

}  // namespace cb
