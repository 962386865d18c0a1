#pragma once

// Synthetic MIL bags and the on-disk dataset layout:
//   <dir>/manifest.json  +  one SGCD bag file per slide.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "slidegcd/bag_io.hpp"
#include "slidegcd/mil_backbone.hpp"

namespace slidegcd {

struct SyntheticSpec {
  std::size_t num_slides = 300;
  std::size_t classes = 4;
  std::size_t instances_min = 30;
  std::size_t instances_max = 60;
  std::size_t feature_dim = 64;
  double witness_rate = 0.3;
  double prototype_separation = 6.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;
  std::size_t folds = 5;  // only used to check num_slides >= classes * folds
};

inline void validate(const SyntheticSpec& s) {
  auto need = [](bool ok, const char* key, const char* msg) {
    if (!ok) throw InvalidValueError(key, msg);
  };
  need(s.classes >= 2, "classes", "must be >= 2");
  need(s.feature_dim >= 1, "feature_dim", "must be >= 1");
  need(s.instances_min >= 1, "instances_min", "must be >= 1");
  need(s.instances_max >= s.instances_min, "instances_max", "must be >= instances_min");
  need(s.witness_rate > 0.0 && s.witness_rate <= 1.0, "witness_rate", "must lie in (0, 1]");
  need(s.noise_sigma >= 0.0, "noise_sigma", "must be >= 0");
  need(s.prototype_separation >= 0.0, "prototype_separation", "must be >= 0");
  need(s.num_slides >= s.classes * s.folds, "num_slides", "must be >= classes * folds");
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ParseError, "synthetic spec must be a JSON object");
  SyntheticSpec s;
  for (const auto& [key, v] : j.items()) {
    auto count = [&](std::size_t& out) {
      if (!v.is_number_integer() || v.get<long long>() < 0) throw InvalidValueError(key, "expected a count");
      out = v.get<std::size_t>();
    };
    auto real = [&](double& out) {
      if (!v.is_number()) throw InvalidValueError(key, "expected a number");
      out = v.get<double>();
    };
    if (key == "num_slides") count(s.num_slides);
    else if (key == "classes") count(s.classes);
    else if (key == "instances_min") count(s.instances_min);
    else if (key == "instances_max") count(s.instances_max);
    else if (key == "feature_dim") count(s.feature_dim);
    else if (key == "witness_rate") real(s.witness_rate);
    else if (key == "prototype_separation") real(s.prototype_separation);
    else if (key == "noise_sigma") real(s.noise_sigma);
    else if (key == "folds") count(s.folds);
    else if (key == "seed") {
      std::size_t seed = 0;
      count(seed);
      s.seed = seed;
    } else {
      throw Error(ErrorCode::ParseError, "unknown synthetic spec key '" + key + "'");
    }
  }
  validate(s);
  return s;
}

struct SyntheticData {
  Matrix prototypes;  // C x D_p
  std::vector<SlideBag> bags;
};

// Class prototypes on the sphere of radius separation/sqrt(2) (orthogonal
// directions then sit exactly `separation` apart), redrawn until every
// pair is at least 0.9 * separation apart.
template <class Rng>
Matrix sample_prototypes(const SyntheticSpec& s, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double radius = s.prototype_separation / std::sqrt(2.0);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Matrix p(s.classes, s.feature_dim);
    for (std::size_t c = 0; c < s.classes; ++c) {
      double norm = 0.0;
      for (auto& v : p.row(c)) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (auto& v : p.row(c)) v = norm > 0 ? v * radius / norm : 0.0;
    }
    bool ok = true;
    for (std::size_t a = 0; a < s.classes && ok; ++a)
      for (std::size_t b = a + 1; b < s.classes && ok; ++b)
        ok = std::sqrt(squared_distance(p.row(a), p.row(b))) >= 0.9 * s.prototype_separation;
    if (ok) return p;
  }
  throw InvalidValueError("prototype_separation", "could not place prototypes far enough apart");
}

inline SyntheticData generate_synthetic(const SyntheticSpec& s) {
  validate(s);
  std::mt19937_64 rng(s.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  SyntheticData data;
  data.prototypes = sample_prototypes(s, rng);

  std::vector<int> labels(s.num_slides);
  for (std::size_t i = 0; i < s.num_slides; ++i) labels[i] = static_cast<int>(i % s.classes);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::uniform_int_distribution<std::size_t> bag_size(s.instances_min, s.instances_max);
  char id[32];
  for (std::size_t i = 0; i < s.num_slides; ++i) {
    const std::size_t m = bag_size(rng);
    const auto witnesses = static_cast<std::size_t>(std::ceil(s.witness_rate * static_cast<double>(m) - 1e-12));
    Matrix x(m, s.feature_dim);
    const auto proto = data.prototypes.row(static_cast<std::size_t>(labels[i]));
    for (std::size_t r = 0; r < m; ++r) {
      auto row = x.row(r);
      for (std::size_t d = 0; d < s.feature_dim; ++d) {
        row[d] = (r < witnesses ? proto[d] : 0.0) + s.noise_sigma * normal(rng);
      }
    }
    // Scatter witnesses among background rows.
    std::vector<std::size_t> perm(m);
    for (std::size_t r = 0; r < m; ++r) perm[r] = r;
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix shuffled(m, s.feature_dim);
    for (std::size_t r = 0; r < m; ++r) std::copy(x.row(perm[r]).begin(), x.row(perm[r]).end(), shuffled.row(r).begin());

    std::snprintf(id, sizeof(id), "slide_%04zu", i);
    data.bags.push_back(SlideBag{id, std::move(shuffled), labels[i]});
  }
  return data;
}

struct ManifestEntry {
  std::string id;
  int label = 0;
  std::string path;  // relative to the dataset directory
  std::size_t num_instances = 0;
};

struct DatasetManifest {
  int version = 1;
  std::size_t classes = 0;
  std::size_t feature_dim = 0;
  std::vector<ManifestEntry> entries;
};

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"id", e.id}, {"label", e.label}, {"path", e.path}, {"num_instances", e.num_instances}});
  }
  return {{"version", m.version}, {"classes", m.classes}, {"feature_dim", m.feature_dim}, {"entries", entries}};
}

inline constexpr const char* kManifestName = "manifest.json";

inline DatasetManifest write_dataset(const std::filesystem::path& dir, std::span<const SlideBag> bags,
                                     std::size_t classes, std::size_t feature_dim) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  DatasetManifest m;
  m.classes = classes;
  m.feature_dim = feature_dim;
  for (const auto& bag : bags) {
    ManifestEntry e{bag.id, bag.label, bag.id + ".sgcd", bag.instances.rows()};
    write_bag((dir / e.path).string(), bag.instances);
    m.entries.push_back(std::move(e));
  }
  std::ofstream out(dir / kManifestName, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write manifest in " + dir.string());
  out << to_json(m).dump(2) << "\n";
  return m;
}

inline DatasetManifest generate_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  SyntheticData data = generate_synthetic(spec);
  return write_dataset(out_dir, data.bags, spec.classes, spec.feature_dim);
}

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifestName);
  if (!in) throw Error(ErrorCode::IoError, "no manifest in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    m.classes = j.at("classes").get<std::size_t>();
    m.feature_dim = j.at("feature_dim").get<std::size_t>();
    std::set<std::string> ids;
    for (const auto& e : j.at("entries")) {
      ManifestEntry me{e.at("id").get<std::string>(), e.at("label").get<int>(), e.at("path").get<std::string>(),
                       e.at("num_instances").get<std::size_t>()};
      if (me.label < 0 || static_cast<std::size_t>(me.label) >= m.classes) {
        throw Error(ErrorCode::LabelOutOfRange, "manifest entry " + me.id);
      }
      if (!ids.insert(me.id).second) throw Error(ErrorCode::InvalidValue, "duplicate id " + me.id);
      if (!std::filesystem::exists(dir / me.path)) throw Error(ErrorCode::IoError, "missing bag " + me.path);
      m.entries.push_back(std::move(me));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("manifest: ") + e.what());
  }
}

struct Dataset {
  DatasetManifest manifest;
  std::vector<SlideBag> bags;
};

// Reads every bag and checks it against its manifest entry.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.manifest = read_manifest(dir);
  for (const auto& e : d.manifest.entries) {
    Matrix inst = read_bag((dir / e.path).string());
    if (inst.rows() != e.num_instances) {
      throw Error(ErrorCode::InvalidValue, "manifest says " + std::to_string(e.num_instances) + " instances for " +
                                               e.id + ", file has " + std::to_string(inst.rows()));
    }
    SlideBag bag{e.id, std::move(inst), e.label};
    validate_bag(bag, d.manifest.feature_dim, static_cast<int>(d.manifest.classes));
    d.bags.push_back(std::move(bag));
  }
  return d;
}

}  // namespace slidegcd
