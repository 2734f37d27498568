#include "isearle/retrieval.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <iomanip>

#include "isearle/binary_io.hpp"
#include "isearle/errors.hpp"
#include "isearle/random.hpp"

namespace isearle {

namespace {

constexpr char kEmbedMagic[9] = "ISEMBEDS";
constexpr std::uint32_t kEmbedVersion = 1;

bool blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

}  // namespace

void EmbeddingManifest::append(std::string id, const Vector& values) {
  if (dim == 0) dim = static_cast<int>(values.size());
  if (values.size() != dim) throw InputError("embedding for '" + id + "' has wrong width");
  rows.conservativeResize(static_cast<Eigen::Index>(ids.size()) + 1, dim);
  rows.row(rows.rows() - 1) = values.transpose();
  ids.push_back(std::move(id));
}

void write_embedding_manifest(const std::filesystem::path& path, const EmbeddingManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write embeddings " + path.string());
  binio::write_magic(out, kEmbedMagic);
  binio::write_pod(out, kEmbedVersion);
  binio::write_pod(out, static_cast<std::uint32_t>(manifest.dim));
  binio::write_pod(out, static_cast<std::uint32_t>(manifest.normalized ? 1 : 0));
  for (std::size_t i = 0; i < manifest.ids.size(); ++i) {
    binio::write_string(out, manifest.ids[i]);
    binio::write_floats(out, to_float32(manifest.rows.row(static_cast<Eigen::Index>(i)).transpose()));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

EmbeddingManifest read_embedding_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embeddings " + path.string());
  binio::expect_magic(in, kEmbedMagic);
  if (binio::read_pod<std::uint32_t>(in) != kEmbedVersion) throw ParseError("unsupported embeddings version");
  EmbeddingManifest manifest;
  manifest.dim = static_cast<int>(binio::read_pod<std::uint32_t>(in));
  manifest.normalized = binio::read_pod<std::uint32_t>(in) != 0;
  std::vector<std::vector<float>> rows;
  while (in.peek() != std::char_traits<char>::eof()) {
    manifest.ids.push_back(binio::read_string(in));
    rows.push_back(binio::read_floats(in, static_cast<std::size_t>(manifest.dim)));
  }
  manifest.rows.resize(static_cast<Eigen::Index>(rows.size()), manifest.dim);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < manifest.dim; ++c) manifest.rows(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
  return manifest;
}

RetrievalIndex RetrievalIndex::build(const EmbeddingManifest& manifest) {
  RetrievalIndex index;
  index.manifest_.dim = manifest.dim;
  index.manifest_.normalized = true;
  index.manifest_.ids = manifest.ids;
  index.manifest_.rows = manifest.rows;
  if (manifest.rows.rows() != static_cast<Eigen::Index>(manifest.ids.size()))
    throw ValidationError("manifest row count does not match id count");
  for (std::size_t i = 0; i < manifest.ids.size(); ++i) {
    if (!index.positions_.emplace(manifest.ids[i], i).second)
      throw ValidationError("duplicate id '" + manifest.ids[i] + "'");
    auto row = index.manifest_.rows.row(static_cast<Eigen::Index>(i));
    if (!row.allFinite()) throw ValidationError("non-finite embedding for '" + manifest.ids[i] + "'");
    const double n = row.norm();
    if (n == 0.0) throw DegenerateInputError("zero embedding for '" + manifest.ids[i] + "'");
    row /= n;
    row = row.cast<float>().cast<double>();
  }
  std::uint64_t h = static_cast<std::uint64_t>(manifest.dim);
  for (std::size_t i = 0; i < manifest.ids.size(); ++i) {
    h = stable_hash(manifest.ids[i], h);
    const auto floats = to_float32(index.manifest_.rows.row(static_cast<Eigen::Index>(i)).transpose());
    h = stable_hash(std::string_view(reinterpret_cast<const char*>(floats.data()), floats.size() * sizeof(float)), h);
  }
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << h;
  index.digest_ = hex.str();
  return index;
}

RetrievalIndex RetrievalIndex::load(const std::filesystem::path& path) {
  return build(read_embedding_manifest(path));
}

void RetrievalIndex::save(const std::filesystem::path& path) const { write_embedding_manifest(path, manifest_); }

std::optional<std::size_t> RetrievalIndex::position(std::string_view id) const {
  const auto it = positions_.find(std::string(id));
  if (it == positions_.end()) return std::nullopt;
  return it->second;
}

Vector RetrievalIndex::row(std::string_view id) const {
  const auto pos = position(id);
  if (!pos) throw LookupError("id '" + std::string(id) + "' not in index");
  return manifest_.rows.row(static_cast<Eigen::Index>(*pos)).transpose();
}

std::vector<SearchHit> RetrievalIndex::search(const EmbeddingVector& query, std::size_t k) const {
  if (size() == 0) throw InputError("search on an empty index");
  if (k > size()) throw InputError("k exceeds index size");
  if (query.size() != dim()) throw InputError("query has wrong width");
  const Vector q = query.normalized ? query.values : normalized(query.values);
  const Vector scores = manifest_.rows * q;
  std::vector<std::size_t> order(size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double sa = scores[static_cast<Eigen::Index>(a)];
                      const double sb = scores[static_cast<Eigen::Index>(b)];
                      return sa != sb ? sa > sb : a < b;
                    });
  std::vector<SearchHit> hits;
  hits.reserve(k);
  for (std::size_t i = 0; i < k; ++i) hits.push_back({manifest_.ids[order[i]], scores[static_cast<Eigen::Index>(order[i])]});
  return hits;
}

std::string cir_prompt(std::string_view label, std::string_view caption) {
  if (blank(caption)) throw InputError("relative caption must be nonempty");
  return "a photo of " + std::string(label) + " that " + std::string(caption);
}

std::string domain_prompt(std::string_view label, std::string_view domain) {
  if (blank(domain)) throw InputError("domain must be nonempty");
  return std::string(domain) + " of " + std::string(label);
}

std::string object_prompt(std::string_view label, std::span<const std::string> objects) {
  if (objects.empty()) throw InputError("object list must be nonempty");
  for (const auto& o : objects)
    if (blank(o)) throw InputError("object descriptions must be nonempty");
  std::string out = "a photo of " + std::string(label) + ", " + objects[0];
  if (objects.size() >= 2) out += " and " + objects[1];
  for (std::size_t i = 2; i < objects.size(); ++i) out += (i + 1 == objects.size() ? ", and " : ", ") + objects[i];
  return out;
}

EmbeddingVector compose_cir_query(const ComposedQuery& query, const PseudoWordToken& token, const Backbone& backbone) {
  const auto injections = inject(token);
  if (!query.second_caption) return backbone.encode_text(cir_prompt(token.label, query.relative_caption), injections).as_unit();
  if (blank(*query.second_caption)) throw InputError("second caption must be nonempty");
  const auto& a = query.relative_caption;
  const auto& b = *query.second_caption;
  const Vector ab = backbone.encode_text(cir_prompt(token.label, a + " and " + b), injections).as_unit().values;
  const Vector ba = backbone.encode_text(cir_prompt(token.label, b + " and " + a), injections).as_unit().values;
  return EmbeddingVector::unit((ab + ba) / 2.0);
}

EmbeddingVector compose_domain_query(const PseudoWordToken& token, std::string_view domain, const Backbone& backbone) {
  return backbone.encode_text(domain_prompt(token.label, domain), inject(token)).as_unit();
}

EmbeddingVector compose_object_query(const PseudoWordToken& token, std::span<const std::string> objects,
                                     const Backbone& backbone) {
  return backbone.encode_text(object_prompt(token.label, objects), inject(token)).as_unit();
}

std::optional<BaselineMode> parse_baseline_mode(std::string_view name) {
  if (name == "image_only") return BaselineMode::image_only;
  if (name == "text_only") return BaselineMode::text_only;
  if (name == "image_plus_text") return BaselineMode::image_plus_text;
  return std::nullopt;
}

EmbeddingVector baseline_query(BaselineMode mode, const ComposedQuery& query, const std::optional<Vector>& reference,
                               const Backbone& backbone) {
  const auto image = [&] {
    if (!reference) throw InputError("baseline needs the reference image features");
    return normalized(*reference);
  };
  const auto text = [&] {
    if (blank(query.relative_caption)) throw InputError("baseline needs a relative caption");
    return backbone.encode_text(query.relative_caption).as_unit().values;
  };
  switch (mode) {
    case BaselineMode::image_only:
      return EmbeddingVector::unit(image());
    case BaselineMode::text_only:
      return EmbeddingVector::unit(text());
    case BaselineMode::image_plus_text:
      return EmbeddingVector::unit(image() + text());
  }
  throw InputError("unknown baseline mode");
}

}  // namespace isearle
