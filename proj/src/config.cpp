#include "boxformer/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace boxformer {

namespace {

using nlohmann::json;

// Reads known keys of one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& doc, std::string name) : name_(std::move(name)) {
    if (doc.is_null()) return;
    if (!doc.is_object()) throw ConfigError(name_ + " must be an object");
    obj_ = &doc;
  }

  template <typename T>
  void read(const char* key, T& out) {
    known_.push_back(key);
    if (!obj_ || !obj_->contains(key)) return;
    const auto& v = obj_->at(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(path(key) + " has the wrong type (got " + v.dump() + ")");
    }
  }

  void allow(const char* key) { known_.push_back(key); }

  void finish() const {
    if (!obj_) return;
    for (const auto& [key, value] : obj_->items()) {
      if (std::find(known_.begin(), known_.end(), key) == known_.end()) {
        throw ConfigError("unknown config key '" + path(key) + "'");
      }
    }
  }

  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

 private:
  std::string name_;
  const json* obj_ = nullptr;
  std::vector<std::string> known_;
};

void apply_scale(RunConfig& cfg) {
  if (cfg.scale == "desk") return;
  if (cfg.scale != "paper") throw ConfigError("scale must be \"desk\" or \"paper\", got \"" + cfg.scale + "\"");
  cfg.model.backbone = BackboneConfig::paper();
  cfg.model.aggregator = AggregatorConfig::paper();
  cfg.model.nce.patches_per_layer = 256;
  cfg.model.nce.projection_dim = 256;
  cfg.train.batch = 8;
}

const json& member(const json& doc, const char* key) {
  static const json null;
  return doc.contains(key) ? doc.at(key) : null;
}

}  // namespace

void RunConfig::validate() const {
  if (scale != "desk" && scale != "paper") throw ConfigError("scale must be \"desk\" or \"paper\"");
  try {
    model.validate();
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": invalid JSON: " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(source + ": top level must be an object");
  RunConfig cfg;
  try {
    Section top(doc, "");
    top.read("scale", cfg.scale);
    apply_scale(cfg);
    for (const char* key : {"backbone", "aggregator", "nce", "weights", "train", "paths"}) top.allow(key);
    top.finish();

    auto& bb = cfg.model.backbone;
    Section b(member(doc, "backbone"), "backbone");
    b.read("image_size", bb.image_size);
    b.read("base_channels", bb.base_channels);
    b.read("content_channels", bb.content_channels);
    b.read("style_dim", bb.style_dim);
    b.finish();

    auto& ag = cfg.model.aggregator;
    Section a(member(doc, "aggregator"), "aggregator");
    a.read("patch_stride", ag.patch_stride);
    a.read("token_dim", ag.token_dim);
    a.read("blocks", ag.blocks);
    a.read("heads", ag.heads);
    a.read("mlp_dim", ag.mlp_dim);
    a.finish();

    auto& nc = cfg.model.nce;
    Section n(member(doc, "nce"), "nce");
    n.read("temperature", nc.temperature);
    n.read("layers", nc.layers);
    n.read("patches_per_layer", nc.patches_per_layer);
    n.read("projection_dim", nc.projection_dim);
    n.read("hidden_dim", nc.hidden_dim);
    n.read("instance_grid", nc.instance_grid);
    n.finish();

    auto& w = cfg.train.weights;
    Section lw(member(doc, "weights"), "weights");
    lw.read("global", w.global);
    lw.read("instance", w.instance);
    lw.read("style", w.style);
    lw.read("image", w.image);
    lw.finish();

    auto& tr = cfg.train;
    std::string schedule = to_string(tr.schedule);
    std::string gan = to_string(tr.gan);
    Section t(member(doc, "train"), "train");
    t.read("lr", tr.lr);
    t.read("batch", tr.batch);
    t.read("steps", tr.steps);
    t.read("beta1", tr.beta1);
    t.read("beta2", tr.beta2);
    t.read("eps", tr.eps);
    t.read("schedule", schedule);
    t.read("seed", tr.seed);
    t.read("ckpt_every", tr.ckpt_every);
    t.read("gan", gan);
    t.finish();
    try {
      tr.schedule = lr_schedule_from_string(schedule);
      tr.gan = gan_mode_from_string(gan);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("train: ") + e.what());
    }

    Section p(member(doc, "paths"), "paths");
    p.read("data_a", cfg.paths.data_a);
    p.read("data_b", cfg.paths.data_b);
    p.read("out", cfg.paths.out);
    p.finish();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

std::string to_json(const RunConfig& cfg) {
  const auto& bb = cfg.model.backbone;
  const auto& ag = cfg.model.aggregator;
  const auto& nc = cfg.model.nce;
  const auto& tr = cfg.train;
  json doc;
  doc["scale"] = cfg.scale;
  doc["backbone"] = {{"image_size", bb.image_size},
                     {"base_channels", bb.base_channels},
                     {"content_channels", bb.content_channels},
                     {"style_dim", bb.style_dim}};
  doc["aggregator"] = {{"patch_stride", ag.patch_stride},
                       {"token_dim", ag.token_dim},
                       {"blocks", ag.blocks},
                       {"heads", ag.heads},
                       {"mlp_dim", ag.mlp_dim}};
  doc["nce"] = {{"temperature", nc.temperature},           {"layers", nc.layers},
                {"patches_per_layer", nc.patches_per_layer}, {"projection_dim", nc.projection_dim},
                {"hidden_dim", nc.hidden_dim},               {"instance_grid", nc.instance_grid}};
  doc["weights"] = {{"global", tr.weights.global},
                    {"instance", tr.weights.instance},
                    {"style", tr.weights.style},
                    {"image", tr.weights.image}};
  doc["train"] = {{"lr", tr.lr},
                  {"batch", tr.batch},
                  {"steps", tr.steps},
                  {"beta1", tr.beta1},
                  {"beta2", tr.beta2},
                  {"eps", tr.eps},
                  {"schedule", to_string(tr.schedule)},
                  {"seed", tr.seed},
                  {"ckpt_every", tr.ckpt_every},
                  {"gan", to_string(tr.gan)}};
  doc["paths"] = {{"data_a", cfg.paths.data_a}, {"data_b", cfg.paths.data_b}, {"out", cfg.paths.out}};
  return doc.dump(2) + "\n";
}

}  // namespace boxformer
