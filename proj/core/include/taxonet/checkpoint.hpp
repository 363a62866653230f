#pragma once

#include <filesystem>
#include <optional>

#include "taxonet/model.hpp"
#include "taxonet/taxonomy.hpp"

namespace taxonet {

// Versioned JSON documents; doubles round-trip bit-exactly (shortest
// representation on write, exact parse on read).

void save_tree_checkpoint(const std::filesystem::path& path, const TaxonomyTree& tree);
TaxonomyTree load_tree_checkpoint(const std::filesystem::path& path);

struct ModelCheckpoint {
  Model model;
  std::optional<ProjectionHeads> heads;
};

void save_model_checkpoint(const std::filesystem::path& path, Model& model,
                           ProjectionHeads* heads = nullptr);
ModelCheckpoint load_model_checkpoint(const std::filesystem::path& path);

}  // namespace taxonet
