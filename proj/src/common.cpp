#include "twgtm/common.hpp"

namespace twgtm {

std::string to_string(Task task) { return task == Task::kVton ? "vton" : "vtoff"; }

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::kStage1: return "stage1";
    case Stage::kStage2: return "stage2";
    case Stage::kInference: return "inference";
  }
  return "?";
}

std::string to_string(Category category) {
  switch (category) {
    case Category::kUpper: return "upper";
    case Category::kLower: return "lower";
    case Category::kDress: return "dress";
  }
  return "?";
}

Task parse_task(std::string_view text) {
  if (text == "vton") return Task::kVton;
  if (text == "vtoff") return Task::kVtoff;
  throw std::invalid_argument("unknown task '" + std::string(text) + "' (expected vton|vtoff)");
}

Stage parse_stage(std::string_view text) {
  if (text == "1" || text == "stage1") return Stage::kStage1;
  if (text == "2" || text == "stage2") return Stage::kStage2;
  if (text == "inference") return Stage::kInference;
  throw std::invalid_argument("unknown stage '" + std::string(text) + "' (expected 1|2)");
}

Category parse_category(std::string_view text) {
  if (text == "upper") return Category::kUpper;
  if (text == "lower") return Category::kLower;
  if (text == "dress") return Category::kDress;
  throw std::invalid_argument("invalid category '" + std::string(text) +
                              "' (expected upper|lower|dress)");
}

}  // namespace twgtm
