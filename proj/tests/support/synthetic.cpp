#include "synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "isearle/random.hpp"

namespace isearle::testing {

Image synthetic_image(std::uint64_t seed, int width, int height) {
  Rng rng(seed * 7919 + 17);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  Image image;
  image.width = width;
  image.height = height;
  image.rgb.resize(static_cast<std::size_t>(width) * height * 3);
  float top[3], bottom[3];
  for (int c = 0; c < 3; ++c) {
    top[c] = unit(rng);
    bottom[c] = unit(rng);
  }
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float t = static_cast<float>(y) / static_cast<float>(height - 1);
        image.rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c] = (1 - t) * top[c] + t * bottom[c];
      }
  const int shapes = 2 + static_cast<int>(uniform_index(rng, 4));
  for (int s = 0; s < shapes; ++s) {
    const float color[3] = {unit(rng), unit(rng), unit(rng)};
    const float cx = unit(rng) * width, cy = unit(rng) * height;
    const float rx = (0.1f + 0.3f * unit(rng)) * width, ry = (0.1f + 0.3f * unit(rng)) * height;
    const bool disc = unit(rng) < 0.5f;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const float dx = (x - cx) / rx, dy = (y - cy) / ry;
        const bool inside = disc ? dx * dx + dy * dy <= 1.0f : std::abs(dx) <= 1.0f && std::abs(dy) <= 1.0f;
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) image.rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c] = color[c];
      }
  }
  return image;
}

const std::vector<std::string>& fixture_concepts() {
  static const std::vector<std::string> concepts = {"cat",   "dog",  "car",   "tree",  "boat",
                                                    "horse", "bird", "chair", "pizza", "clock"};
  return concepts;
}

const std::vector<std::string>& extended_concepts() {
  static const std::vector<std::string> concepts = {
      "cat",    "dog",   "car",    "tree",   "boat",     "horse",  "bird",   "chair",  "pizza",  "clock",
      "person", "bus",   "train",  "truck",  "bicycle",  "sheep",  "cow",    "bear",   "zebra",  "giraffe",
      "bottle", "cup",   "fork",   "bowl",   "banana",   "apple",  "orange", "cake",   "couch",  "bed",
      "laptop", "mouse", "remote", "phone",  "book",     "vase",   "kite",   "umbrella", "bench", "lamp"};
  return concepts;
}

PhraseBank fixture_phrase_bank() { return templated_phrase_bank(fixture_concepts()); }

PhraseBank templated_phrase_bank(const std::vector<std::string>& concepts) {
  static const std::vector<std::string> endings = {
      " that is sitting in the sun",        " on a wooden table",
      " next to a window",                  " in a crowded street",
      " that is eating in front of a house", " with a blue sky in the background",
      " seen from above",                   " at night under a lamp",
  };
  PhraseBank bank;
  for (const auto& c : concepts) {
    std::vector<std::string> phrases;
    for (const auto& e : endings) phrases.push_back(concept_prompt(c) + e);
    bank.add(c, std::move(phrases));
  }
  return bank;
}

}  // namespace isearle::testing
