#pragma once

#include <map>
#include <string>
#include <vector>

#include "fqdet/params.hpp"
#include "fqdet/tensor.hpp"

namespace fqdet::tc {

/// Tensor archive: a one-line header `FQT1 <manifest bytes>\n`, a JSON
/// manifest listing {name, dtype, shape, byte offset, byte length} per
/// tensor plus free-form string metadata, then a little-endian IEEE-754
/// payload. Loading validates the payload length against the manifest.
struct Archive {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::map<std::string, std::string> meta;
};

void save_archive(const std::string& path, const Archive& archive);
Archive load_archive(const std::string& path);

void save_params(const std::string& path, const ParamStore& params,
                 const std::map<std::string, std::string>& meta = {});

/// Copies archived values into the matching store entries. Every store
/// parameter must be present with identical dtype and shape.
void load_params(const Archive& archive, ParamStore& params);

}  // namespace fqdet::tc
