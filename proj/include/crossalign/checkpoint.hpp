#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "crossalign/params.hpp"

namespace crossalign::nn {

inline constexpr const char* kCheckpointVersion = "crossalign-ckpt-v1";

/// On-disk layout:
///
///   crossalign-ckpt-v1
///   meta <key> <value...>            (zero or more)
///   param <name> <rank> <dims...> <byte offset>
///   end
///   <raw little-endian float32 data, row-major, offsets relative to here>
struct CheckpointEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::vector<float> data;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
};

template <typename T>
Checkpoint make_checkpoint(const ParameterSet<T>& params, std::map<std::string, std::string> meta);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint tensors into `params`. Every parameter must be present
/// with an identical shape; the error names the first offending parameter.
template <typename T>
void load_into(const Checkpoint& ckpt, ParameterSet<T>& params);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params,
                     std::map<std::string, std::string> meta = {}) {
  write_checkpoint(path, make_checkpoint(params, std::move(meta)));
}

}  // namespace crossalign::nn
