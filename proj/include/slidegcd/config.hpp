#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "slidegcd/error.hpp"
#include "slidegcd/hgcn.hpp"
#include "slidegcd/mil_backbone.hpp"

namespace slidegcd {

enum class AggMode {
  FixedRandom,  // seeded random projection, never updated
  TiedTheta1,   // layer1 = leading D_h columns of the first HGC weight, layer2 = I
};

struct TrainConfig {
  std::size_t k = 12;
  std::size_t buffer_capacity = 256;
  double t_hat = 1.5;
  double kd_weight = 1.0;
  std::size_t warmup_epochs = 5;
  double warmup_lr = 1e-3;
  double formal_lr = 1e-4;
  std::size_t batch_size = 16;
  std::size_t epochs = 20;  // formal-phase epochs
  std::uint64_t seed = 0;
  std::size_t d_p = 64;
  std::size_t d_s = 128;
  std::size_t d_h = 64;
  std::size_t d_a = 0;  // 0 -> ceil(d_s / 2)
  std::size_t d_m = 0;  // 0 -> d_s
  std::size_t classes = 4;
  BackboneVariant backbone = BackboneVariant::MeanPool;
  std::size_t folds = 5;
  double leaky_slope = kDefaultLeakySlope;
  CenteringMode centering = CenteringMode::Global;
  AggMode agg_mode = AggMode::FixedRandom;
  bool seed_buffer_from_warmup = false;

  std::size_t attention_dim() const { return d_a != 0 ? d_a : (d_s + 1) / 2; }
  std::size_t mlp_dim() const { return d_m != 0 ? d_m : d_s; }

  bool operator==(const TrainConfig&) const = default;
};

namespace detail {

template <class E>
struct EnumNames;

template <>
struct EnumNames<BackboneVariant> {
  static constexpr std::pair<BackboneVariant, const char*> table[] = {
      {BackboneVariant::MeanPool, "mean_pool"}, {BackboneVariant::AttentionPool, "attention_pool"}};
};
template <>
struct EnumNames<CenteringMode> {
  static constexpr std::pair<CenteringMode, const char*> table[] = {{CenteringMode::Global, "global"},
                                                                    {CenteringMode::PerChannel, "per_channel"},
                                                                    {CenteringMode::PerNode, "per_node"}};
};
template <>
struct EnumNames<AggMode> {
  static constexpr std::pair<AggMode, const char*> table[] = {{AggMode::FixedRandom, "fixed_random"},
                                                              {AggMode::TiedTheta1, "tied_theta1"}};
};

template <class E>
std::string enum_name(E e) {
  for (const auto& [v, s] : EnumNames<E>::table)
    if (v == e) return s;
  return "?";
}

template <class E>
E parse_enum(const std::string& key, const std::string& s) {
  for (const auto& [v, name] : EnumNames<E>::table)
    if (s == name) return v;
  throw InvalidValueError(key, "unknown option '" + s + "'");
}

}  // namespace detail

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"k", c.k},
          {"buffer_capacity", c.buffer_capacity},
          {"t_hat", c.t_hat},
          {"kd_weight", c.kd_weight},
          {"warmup_epochs", c.warmup_epochs},
          {"warmup_lr", c.warmup_lr},
          {"formal_lr", c.formal_lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"d_p", c.d_p},
          {"d_s", c.d_s},
          {"d_h", c.d_h},
          {"d_a", c.d_a},
          {"d_m", c.d_m},
          {"classes", c.classes},
          {"backbone", detail::enum_name(c.backbone)},
          {"folds", c.folds},
          {"leaky_slope", c.leaky_slope},
          {"centering", detail::enum_name(c.centering)},
          {"agg_mode", detail::enum_name(c.agg_mode)},
          {"seed_buffer_from_warmup", c.seed_buffer_from_warmup}};
}

inline void validate(const TrainConfig& c) {
  auto need = [](bool ok, const char* key, const char* msg) {
    if (!ok) throw InvalidValueError(key, msg);
  };
  need(c.k >= 1, "k", "must be >= 1");
  need(c.batch_size >= 1, "batch_size", "must be >= 1");
  need(c.buffer_capacity >= c.batch_size, "buffer_capacity", "must be >= batch_size");
  need(c.t_hat > 0.0, "t_hat", "must be > 0");
  need(c.kd_weight >= 0.0, "kd_weight", "must be >= 0");
  need(c.warmup_lr > 0.0, "warmup_lr", "must be > 0");
  need(c.formal_lr > 0.0, "formal_lr", "must be > 0");
  need(c.d_p >= 1, "d_p", "must be >= 1");
  need(c.d_s >= 1, "d_s", "must be >= 1");
  need(c.d_h >= 1, "d_h", "must be >= 1");
  need(c.classes >= 2, "classes", "must be >= 2");
  need(c.folds >= 2, "folds", "must be >= 2");
  need(c.leaky_slope >= 0.0, "leaky_slope", "must be >= 0");
  need(c.agg_mode != AggMode::TiedTheta1 || c.d_h <= c.d_s, "d_h", "tied_theta1 needs d_h <= d_s");
}

// Missing keys keep their defaults; unknown keys are a ParseError.
inline TrainConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ParseError, "config must be a JSON object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    auto as_count = [&](std::size_t& out) {
      if (!value.is_number_integer()) throw InvalidValueError(key, "expected an integer");
      if (value.get<long long>() < 0) throw InvalidValueError(key, "must be >= 0");
      out = value.get<std::size_t>();
    };
    auto as_real = [&](double& out) {
      if (!value.is_number()) throw InvalidValueError(key, "expected a number");
      out = value.get<double>();
    };
    auto as_string = [&]() {
      if (!value.is_string()) throw InvalidValueError(key, "expected a string");
      return value.get<std::string>();
    };
    if (key == "k") as_count(c.k);
    else if (key == "buffer_capacity") as_count(c.buffer_capacity);
    else if (key == "t_hat") as_real(c.t_hat);
    else if (key == "kd_weight") as_real(c.kd_weight);
    else if (key == "warmup_epochs") as_count(c.warmup_epochs);
    else if (key == "warmup_lr") as_real(c.warmup_lr);
    else if (key == "formal_lr") as_real(c.formal_lr);
    else if (key == "batch_size") as_count(c.batch_size);
    else if (key == "epochs") as_count(c.epochs);
    else if (key == "seed") {
      std::size_t s = 0;
      as_count(s);
      c.seed = s;
    }
    else if (key == "d_p") as_count(c.d_p);
    else if (key == "d_s") as_count(c.d_s);
    else if (key == "d_h") as_count(c.d_h);
    else if (key == "d_a") as_count(c.d_a);
    else if (key == "d_m") as_count(c.d_m);
    else if (key == "classes") as_count(c.classes);
    else if (key == "backbone") c.backbone = detail::parse_enum<BackboneVariant>(key, as_string());
    else if (key == "folds") as_count(c.folds);
    else if (key == "leaky_slope") as_real(c.leaky_slope);
    else if (key == "centering") c.centering = detail::parse_enum<CenteringMode>(key, as_string());
    else if (key == "agg_mode") c.agg_mode = detail::parse_enum<AggMode>(key, as_string());
    else if (key == "seed_buffer_from_warmup") {
      if (!value.is_boolean()) throw InvalidValueError(key, "expected a boolean");
      c.seed_buffer_from_warmup = value.get<bool>();
    } else {
      throw Error(ErrorCode::ParseError, "unknown config key '" + key + "'");
    }
  }
  validate(c);
  return c;
}

inline TrainConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  return config_from_json(j);
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace slidegcd
