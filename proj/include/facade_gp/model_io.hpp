#pragma once

#include "facade_gp/facade_model.hpp"

#include <json.hpp>

#include <filesystem>
#include <vector>

namespace facade_gp {

inline constexpr int kModelFormatVersion = 1;

nlohmann::json frame_to_json(const FacadeFrame& frame);
FacadeFrame frame_from_json(const nlohmann::json& j);

nlohmann::json gmm_to_json(const GmmModel& gmm);
GmmModel gmm_from_json(const nlohmann::json& j);

nlohmann::json kernel_to_json(const KernelParams& p);
KernelParams kernel_from_json(const nlohmann::json& j);

nlohmann::json model_to_json(const FacadeModel& model);
/// Rebuilds solve states from the stored training data; predictions match
/// the original model bit for bit.
FacadeModel model_from_json(const nlohmann::json& j);

/// Document {"format_version": 1, "facades": [...], "config": ...}.
void save_models(const std::filesystem::path& path, const std::vector<FacadeModel>& models,
                 const nlohmann::json& config = nlohmann::json::object());
/// Throws FormatError on a version mismatch.
std::vector<FacadeModel> load_models(const std::filesystem::path& path);

}  // namespace facade_gp
