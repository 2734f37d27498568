#include "isearle/aspects.hpp"

namespace isearle {

std::string_view to_string(SemanticAspect aspect) {
  switch (aspect) {
    case SemanticAspect::cardinality: return "cardinality";
    case SemanticAspect::addition: return "addition";
    case SemanticAspect::negation: return "negation";
    case SemanticAspect::direct_addressing: return "direct_addressing";
    case SemanticAspect::compare_change: return "compare_change";
    case SemanticAspect::comparative_statement: return "comparative_statement";
    case SemanticAspect::statement_conjunction: return "statement_conjunction";
    case SemanticAspect::spatial_background: return "spatial_background";
    case SemanticAspect::viewpoint: return "viewpoint";
  }
  return "unknown";
}

std::optional<SemanticAspect> parse_aspect(std::string_view name) {
  for (auto aspect : kAllAspects)
    if (to_string(aspect) == name) return aspect;
  return std::nullopt;
}

std::string_view aspect_guideline(SemanticAspect aspect) {
  switch (aspect) {
    case SemanticAspect::cardinality: return "Caption asks for a specific number of objects.";
    case SemanticAspect::addition: return "Caption adds an object or attribute to the reference.";
    case SemanticAspect::negation: return "Caption removes something or asks for its absence.";
    case SemanticAspect::direct_addressing: return "Caption describes properties of the target directly.";
    case SemanticAspect::compare_change: return "Caption swaps something while naming what the reference had.";
    case SemanticAspect::comparative_statement: return "Caption compares target and reference (more, bigger, ...).";
    case SemanticAspect::statement_conjunction: return "Caption joins requests with a conjunction such as and/or.";
    case SemanticAspect::spatial_background: return "Caption mentions the background or object positions.";
    case SemanticAspect::viewpoint: return "Caption asks for a different camera angle or perspective.";
  }
  return "";
}

}  // namespace isearle
