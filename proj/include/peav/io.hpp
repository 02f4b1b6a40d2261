#pragma once

#include <map>
#include <string>
#include <vector>

#include "peav/tensor.hpp"

namespace peav {

/// Binary tensor file: magic "PEAV", version byte 1, dtype byte
/// (0 = 32-bit float), rank as u32 LE, dims as u64 LE, payload f32 LE.
/// Values pass through 32-bit floats on disk, so read(write(t)) == t only
/// to f32 precision.
void write_feature_file(const std::string& path, const Tensor& t);
Tensor read_feature_file(const std::string& path);

/// Checkpoint: u64 LE header length, JSON header (config echo plus tensor
/// names/shapes in payload order), then all tensors concatenated as f32 LE.
struct Checkpoint {
    std::string config_json;                       // verbatim config echo
    std::vector<std::pair<std::string, Tensor>> tensors;  // payload order
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace peav
