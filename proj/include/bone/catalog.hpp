#pragma once

// Built-in shape catalogs for parameter accounting. Shapes are
// [out_features, in_features].

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace bone {

using ShapeList = std::vector<std::pair<std::size_t, std::size_t>>;

struct ShapeCatalog {
  std::string name;
  ShapeList shapes;
};

// Returns nullptr when the name is unknown. Known catalogs:
//   llama2-7b  — 32 decoder layers: q,k,v,o 4096x4096; gate,up 11008x4096;
//                down 4096x11008
//   desk-64    — the default two-layer 64x64 toy model
const ShapeCatalog* find_catalog(const std::string& name);

const std::vector<ShapeCatalog>& all_catalogs();

}  // namespace bone
