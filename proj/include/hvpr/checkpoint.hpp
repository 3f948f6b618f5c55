#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "hvpr/tensor.hpp"

namespace hvpr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers and floats little-endian):
//   "HVPRCKPT" u32 version u64 count { entry }*count
//   "OPTSTATE" u64 step u64 count { entry }*count
//   "CONFIGJS" u64 length <utf-8 json>
// entry = u32 name_length <utf-8 name> u32 rank u64 extent*rank f64 value*numel
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> params;
  std::uint64_t optimizer_step = 0;
  std::vector<std::pair<std::string, Tensor>> optimizer_state;
  std::string config_json;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hvpr
