#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vm3ac/autodiff/adam.hpp"
#include "vm3ac/autodiff/tensor.hpp"

namespace vm3ac::ad {

/// Parameter checkpoint, text format version 1:
///
///   vm3ac-checkpoint
///   format_version 1
///   meta <key> <value>                  (zero or more; value runs to end of line)
///   param <name> <rank> <d0> ... <dk>   (one per parameter)
///   <values>                            (one line, %.17g, space separated)
///   end
///
/// Names contain no whitespace. Values round-trip exactly.
struct Checkpoint {
  static constexpr int format_version = 1;

  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> params;

  static Checkpoint from_params(const ParamList& params);

  const Tensor& get(const std::string& name) const;
  /// Copies stored values into `params`, matching by name and shape.
  void load_into(const ParamList& params) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace vm3ac::ad
