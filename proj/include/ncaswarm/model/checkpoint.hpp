#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "ncaswarm/model/model.hpp"

namespace ncaswarm::model {

// {c, h, kernels, W1, B1, W2, B2, head?, glyphs, classes} with flat
// row-major float arrays.
nlohmann::json to_json(const NcaModel& model);
NcaModel model_from_json(const nlohmann::json& doc);

void save_checkpoint(const std::string& path, const NcaModel& model);
NcaModel load_checkpoint(const std::string& path);

}  // namespace ncaswarm::model
