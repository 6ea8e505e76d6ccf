#include "bone/catalog.hpp"

namespace bone {

namespace {

ShapeCatalog make_llama2_7b() {
  ShapeCatalog cat;
  cat.name = "llama2-7b";
  const std::size_t layers = 32, hidden = 4096, intermediate = 11008;
  for (std::size_t l = 0; l < layers; ++l) {
    for (int i = 0; i < 4; ++i) cat.shapes.emplace_back(hidden, hidden);  // q,k,v,o
    cat.shapes.emplace_back(intermediate, hidden);                        // gate
    cat.shapes.emplace_back(intermediate, hidden);                        // up
    cat.shapes.emplace_back(hidden, intermediate);                        // down
  }
  return cat;
}

ShapeCatalog make_desk_64() {
  return {"desk-64", {{64, 64}, {64, 64}}};
}

}  // namespace

const std::vector<ShapeCatalog>& all_catalogs() {
  static const std::vector<ShapeCatalog> cats = {make_llama2_7b(), make_desk_64()};
  return cats;
}

const ShapeCatalog* find_catalog(const std::string& name) {
  for (const auto& c : all_catalogs())
    if (c.name == name) return &c;
  return nullptr;
}

}  // namespace bone
