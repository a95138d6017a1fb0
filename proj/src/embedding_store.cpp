#include "trialign/embedding_store.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "trialign/binary_io.hpp"
#include "trialign/errors.hpp"
#include "trialign/random.hpp"

namespace trialign {
namespace {

constexpr std::string_view kMagic = "TRIEMB01";
constexpr std::uint32_t kVersion = 1;

std::vector<std::string> split_ids(std::string_view block) {
  std::vector<std::string> ids;
  if (block.empty()) return ids;
  std::size_t start = 0;
  while (true) {
    const auto pos = block.find('\n', start);
    if (pos == std::string_view::npos) {
      ids.emplace_back(block.substr(start));
      break;
    }
    ids.emplace_back(block.substr(start, pos - start));
    start = pos + 1;
  }
  return ids;
}

}  // namespace

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::ts: return "ts";
    case Modality::img: return "img";
    case Modality::txt: return "txt";
    case Modality::vl: return "vl";
  }
  return "?";
}

Modality modality_from_string(std::string_view name) {
  if (name == "ts") return Modality::ts;
  if (name == "img") return Modality::img;
  if (name == "txt") return Modality::txt;
  if (name == "vl") return Modality::vl;
  throw ConfigError("unknown modality '" + std::string(name) + "'");
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

EmbeddingSet EmbeddingSet::make(Modality modality, RowMatrixF data, std::vector<std::string> ids) {
  if (ids.size() != static_cast<std::size_t>(data.rows())) {
    throw DataError("embedding set has " + std::to_string(data.rows()) + " rows but " +
                    std::to_string(ids.size()) + " ids");
  }
  std::unordered_set<std::string_view> seen;
  for (const auto& id : ids) {
    if (id.find('\n') != std::string::npos) throw DataError("id contains a newline");
    if (!seen.insert(id).second) throw DuplicateIdError("duplicate id '" + id + "'");
  }
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.cols(); ++c) {
      if (!std::isfinite(data(r, c))) {
        throw DataError("non-finite value at row " + std::to_string(r) + " ('" +
                        ids[static_cast<std::size_t>(r)] + "'), column " + std::to_string(c));
      }
    }
  }
  return EmbeddingSet(modality, std::move(data), std::move(ids));
}

EmbeddingSet EmbeddingSet::select(const std::vector<std::size_t>& indices) const {
  RowMatrixF out(static_cast<Eigen::Index>(indices.size()), data_.cols());
  std::vector<std::string> out_ids;
  out_ids.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = data_.row(static_cast<Eigen::Index>(indices[i]));
    out_ids.push_back(ids_[indices[i]]);
  }
  return EmbeddingSet(modality_, std::move(out), std::move(out_ids));
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  const std::string raw = binary::read_file(path.string());
  binary::Reader in(raw, path.string());
  if (raw.size() < kMagic.size() || in.bytes(kMagic.size()) != kMagic) {
    throw FormatError(path.string() + ": bad magic, expected TRIEMB01");
  }
  const auto version = in.uint<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  }
  const auto tag = in.uint<std::uint8_t>();
  if (tag > static_cast<std::uint8_t>(Modality::vl)) {
    throw FormatError(path.string() + ": unknown modality tag " + std::to_string(tag));
  }
  const auto n = in.uint<std::uint64_t>();
  const auto dim = in.uint<std::uint64_t>();
  if (dim != 0 && n > in.remaining() / 4 / dim) {
    throw FormatError(path.string() + ": truncated payload (header declares " + std::to_string(n) +
                      "x" + std::to_string(dim) + ")");
  }
  RowMatrixF data(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  in.f32s(std::span<float>(data.data(), static_cast<std::size_t>(data.size())));
  const auto id_len = in.uint<std::uint64_t>();
  if (id_len > in.remaining()) throw FormatError(path.string() + ": truncated id block");
  auto ids = split_ids(in.bytes(static_cast<std::size_t>(id_len)));
  if (in.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after id block");
  if (ids.size() != n) {
    throw FormatError(path.string() + ": id block has " + std::to_string(ids.size()) +
                      " ids, header declares " + std::to_string(n));
  }
  try {
    return EmbeddingSet::make(static_cast<Modality>(tag), std::move(data), std::move(ids));
  } catch (const DuplicateIdError& e) {
    throw DuplicateIdError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  binary::Writer out;
  out.bytes(kMagic);
  out.uint<std::uint32_t>(kVersion);
  out.uint<std::uint8_t>(static_cast<std::uint8_t>(set.modality()));
  out.uint<std::uint64_t>(set.n());
  out.uint<std::uint64_t>(set.dim());
  out.f32s(std::span<const float>(set.data().data(), static_cast<std::size_t>(set.data().size())));
  std::string block;
  for (std::size_t i = 0; i < set.ids().size(); ++i) {
    if (i > 0) block.push_back('\n');
    block += set.ids()[i];
  }
  out.uint<std::uint64_t>(block.size());
  out.bytes(block);
  binary::write_file_atomic(path.string(), out.buffer());
}

EmbeddingSet normalize(const EmbeddingSet& set) {
  RowMatrixF out(set.data().rows(), set.data().cols());
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const Eigen::RowVectorXd row = set.data().row(r).cast<double>();
    const double norm = row.norm();
    if (!(norm > 0.0)) {
      throw DataError("cannot normalize zero row '" + set.ids()[static_cast<std::size_t>(r)] + "'");
    }
    out.row(r) = (row / norm).cast<float>();
  }
  return EmbeddingSet::make(set.modality(), std::move(out), set.ids());
}

TripletManifest TripletManifest::load(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(binary::read_file(path.string()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const auto base = path.parent_path();
  TripletManifest manifest;
  try {
    for (const auto& [key, _] : doc.items()) {
      if (key != "modalities" && key != "join") {
        throw ConfigError(path.string() + ": unknown manifest key '" + key + "'");
      }
    }
    for (const auto& [mod_name, splits] : doc.at("modalities").items()) {
      const Modality m = modality_from_string(mod_name);
      for (const auto& [split_name, file] : splits.items()) {
        std::filesystem::path p = file.get<std::string>();
        if (p.is_relative()) p = base / p;
        manifest.files[m][split_from_string(split_name)] = p;
      }
    }
    const std::string join = doc.value("join", std::string("id"));
    if (join == "id") {
      manifest.join = JoinMode::id;
    } else if (join == "position") {
      manifest.join = JoinMode::position;
    } else {
      throw ConfigError(path.string() + ": join must be \"id\" or \"position\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return manifest;
}

void TripletManifest::save(const std::filesystem::path& path) const {
  nlohmann::json doc;
  doc["modalities"] = nlohmann::json::object();
  for (const auto& [m, splits] : files) {
    for (const auto& [s, p] : splits) {
      doc["modalities"][std::string(to_string(m))][std::string(to_string(s))] = p.string();
    }
  }
  doc["join"] = join == JoinMode::id ? "id" : "position";
  binary::write_file_atomic(path.string(), doc.dump(2) + "\n");
}

std::size_t JoinedSplit::n() const { return sets.empty() ? 0 : sets.begin()->second.n(); }

const EmbeddingSet& JoinedSplit::at(Modality m) const {
  const auto it = sets.find(m);
  if (it == sets.end()) {
    throw JoinError("modality '" + std::string(to_string(m)) + "' is not available in this split");
  }
  return it->second;
}

JoinedSplit join_triplets(const TripletManifest& manifest, Split split,
                          const std::vector<Modality>& required) {
  std::map<Modality, EmbeddingSet> loaded;
  for (Modality m : required) {
    const auto mit = manifest.files.find(m);
    if (mit == manifest.files.end() || !mit->second.contains(split)) {
      throw JoinError("manifest has no " + std::string(to_string(split)) + " file for modality '" +
                      std::string(to_string(m)) + "'");
    }
    const auto& p = mit->second.at(split);
    if (!std::filesystem::exists(p)) {
      throw JoinError("missing " + std::string(to_string(m)) + " file " + p.string());
    }
  }
  for (const auto& [m, splits] : manifest.files) {
    const auto it = splits.find(split);
    if (it == splits.end()) continue;
    const bool needed = std::find(required.begin(), required.end(), m) != required.end();
    if (!needed && !std::filesystem::exists(it->second)) continue;
    auto set = [&] {
      try {
        return load_embeddings(it->second);
      } catch (const DuplicateIdError& e) {
        throw JoinError(std::string("cannot join on ids: ") + e.what());
      }
    }();
    if (set.modality() != m) {
      throw FormatError(it->second.string() + ": modality tag '" +
                        std::string(to_string(set.modality())) + "' does not match manifest entry '" +
                        std::string(to_string(m)) + "'");
    }
    loaded.emplace(m, std::move(set));
  }
  JoinedSplit out;
  if (loaded.empty()) return out;
  // std::map orders by tag value, so the first entry is the reference modality.
  const EmbeddingSet& reference = loaded.begin()->second;

  if (manifest.join == JoinMode::position) {
    for (const auto& [m, set] : loaded) {
      if (set.n() != reference.n()) {
        throw JoinError("position join: " + std::string(to_string(m)) + " has " +
                        std::to_string(set.n()) + " rows, " +
                        std::string(to_string(reference.modality())) + " has " +
                        std::to_string(reference.n()));
      }
    }
    for (auto& [m, set] : loaded) {
      out.sets.emplace(m, EmbeddingSet::make(m, set.data(), reference.ids()));
    }
    return out;
  }

  for (const auto& [m, set] : loaded) {
    std::unordered_map<std::string_view, std::size_t> index;
    for (std::size_t i = 0; i < set.n(); ++i) index.emplace(set.ids()[i], i);
    std::vector<std::string> missing;
    std::vector<std::size_t> order;
    order.reserve(reference.n());
    for (const auto& id : reference.ids()) {
      const auto it = index.find(id);
      if (it == index.end()) {
        missing.push_back(id);
      } else {
        order.push_back(it->second);
      }
    }
    std::vector<std::string> extra;
    if (set.n() != reference.n() || !missing.empty()) {
      std::unordered_set<std::string_view> ref_ids(reference.ids().begin(), reference.ids().end());
      for (const auto& id : set.ids()) {
        if (!ref_ids.contains(id)) extra.push_back(id);
      }
    }
    if (!missing.empty() || !extra.empty()) {
      std::string msg = "id join failed for " + std::string(to_string(m)) + ":";
      auto list = [&msg](const char* label, const std::vector<std::string>& ids) {
        if (ids.empty()) return;
        msg += std::string(" ") + label + " [";
        for (std::size_t i = 0; i < ids.size() && i < 20; ++i) msg += (i ? ", " : "") + ids[i];
        if (ids.size() > 20) msg += ", ... (" + std::to_string(ids.size()) + " total)";
        msg += "]";
      };
      list("missing", missing);
      list("not in reference", extra);
      throw JoinError(msg);
    }
    out.sets.emplace(m, set.select(order));
  }
  return out;
}

std::vector<std::size_t> subsample_indices(std::size_t n, const SubsampleSpec& spec) {
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  if (n <= spec.max_n) return all;
  // Partial Fisher-Yates: the first max_n slots become the sample.
  Rng rng(spec.seed);
  for (std::size_t i = 0; i < spec.max_n; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(all[i], all[j]);
  }
  all.resize(spec.max_n);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace trialign
