#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace isearle {

// Closed set of caption categories used to label multi-ground-truth queries.
enum class SemanticAspect {
  cardinality,
  addition,
  negation,
  direct_addressing,
  compare_change,
  comparative_statement,
  statement_conjunction,
  spatial_background,
  viewpoint,
};

inline constexpr std::array<SemanticAspect, 9> kAllAspects = {
    SemanticAspect::cardinality,           SemanticAspect::addition,
    SemanticAspect::negation,              SemanticAspect::direct_addressing,
    SemanticAspect::compare_change,        SemanticAspect::comparative_statement,
    SemanticAspect::statement_conjunction, SemanticAspect::spatial_background,
    SemanticAspect::viewpoint,
};

std::string_view to_string(SemanticAspect aspect);
std::optional<SemanticAspect> parse_aspect(std::string_view name);

// One-line labeling guideline shown to annotators.
std::string_view aspect_guideline(SemanticAspect aspect);

}  // namespace isearle
