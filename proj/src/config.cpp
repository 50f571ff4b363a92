#include "hds/config.hpp"

#include <fstream>

#include "hds/errors.hpp"

namespace hds {

using nlohmann::json;

RunConfig paper_preset() {
  RunConfig c;
  c.arch = paper_arch();
  c.loss = loss_weights_for(c.arch);
  return c;
}

RunConfig desk_preset() {
  RunConfig c;
  c.arch = desk_arch();
  c.loss = loss_weights_for(c.arch);
  c.train = rescaled(TrainConfig{}, 200);
  c.loss.alpha = 0.3;
  c.train.batch_size = 1;
  c.train.patch_height = 128;
  c.train.patch_width = 128;
  c.train.max_grad_norm = 5.0;
  return c;
}

RunConfig preset(const std::string& name) {
  if (name == "paper") return paper_preset();
  if (name == "desk") return desk_preset();
  throw ValueError("unknown preset '" + name + "' (expected paper or desk)");
}

void set_mode(RunConfig& config, Mode mode) {
  const std::vector<int> before = config.arch.supervision_levels;
  apply_mode(config.arch, mode);
  const std::vector<int>& after = config.arch.supervision_levels;
  if (after == before || config.loss.eta.size() != before.size()) return;
  std::vector<double> eta;
  for (int d : after) {
    const auto it = std::find(before.begin(), before.end(), d);
    eta.push_back(it != before.end() ? config.loss.eta[static_cast<std::size_t>(it - before.begin())]
                                     : default_eta(std::vector<int>{d}).front());
  }
  config.loss.eta = std::move(eta);
}

void validate(const RunConfig& config) {
  validate(config.arch);
  validate(config.loss, config.arch.supervision_levels.size());
  validate(config.train);
}

json to_json(const RunConfig& c) {
  const ArchConfig& a = c.arch;
  const LossWeights& l = c.loss;
  const TrainConfig& t = c.train;
  return json{
      {"arch",
       {{"scales", a.scales},
        {"base_channels", a.base_channels},
        {"channel_cap_exponent", a.channel_cap_exponent},
        {"encoder_blocks", a.encoder_blocks},
        {"decoder_blocks", a.decoder_blocks},
        {"dropout_low", a.dropout_low},
        {"dropout_high", a.dropout_high},
        {"dropout_channel_threshold", a.dropout_channel_threshold},
        {"supervision_levels", a.supervision_levels},
        {"mode", to_string(a.mode)},
        {"taps", to_string(a.taps)}}},
      {"loss",
       {{"alpha", l.alpha},
        {"lambda", l.lambda},
        {"mu", l.mu},
        {"eta", l.eta},
        {"eta_floor_fraction", l.eta_floor_fraction}}},
      {"train",
       {{"lr0", t.lr0},
        {"momentum", t.momentum},
        {"lr_decay_factor", t.lr_decay_factor},
        {"lr_milestones", t.lr_milestones},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"eta_decay_start", t.eta_decay_start},
        {"eta_decay_end", t.eta_decay_end},
        {"seed", t.seed},
        {"precision", t.precision},
        {"patch_height", t.patch_height},
        {"patch_width", t.patch_width},
        {"positive_center_prob", t.positive_center_prob},
        {"flip", t.flip},
        {"val_every", t.val_every},
        {"max_grad_norm", t.max_grad_norm}}},
  };
}

namespace {

// Reads one field with a diagnostic naming "section.key".
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ValueError("config: '" + name_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.push_back(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    const std::string field = name_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ValueError("config: " + field + " must be a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw ValueError("config: " + field + " must be an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (it->is_number_unsigned() == false && it->template get<long long>() < 0) {
          throw ValueError("config: " + field + " must be non-negative");
        }
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ValueError("config: " + field + " must be a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ValueError("config: " + field + " must be a string");
    } else {
      if (!it->is_array()) throw ValueError("config: " + field + " must be an array");
      for (const auto& e : *it) {
        using E = typename T::value_type;
        const bool ok = std::is_integral_v<E> ? e.is_number_integer() : e.is_number();
        if (!ok) throw ValueError("config: " + field + " has a non-numeric entry");
      }
    }
    out = it->template get<T>();
  }

  void reject_unknown() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
        throw ValueError("config: unknown field " + name_ + "." + it.key());
      }
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::vector<std::string> seen_;
};

}  // namespace

RunConfig merge_json(const RunConfig& base, const json& j) {
  if (!j.is_object()) throw ValueError("config: top level must be an object");
  RunConfig c = base;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "arch" && it.key() != "loss" && it.key() != "train") {
      throw ValueError("config: unknown section '" + it.key() + "'");
    }
  }
  if (j.contains("arch")) {
    Section s(j["arch"], "arch");
    ArchConfig& a = c.arch;
    std::string mode = to_string(a.mode), taps = to_string(a.taps);
    s.read("scales", a.scales);
    s.read("base_channels", a.base_channels);
    s.read("channel_cap_exponent", a.channel_cap_exponent);
    s.read("encoder_blocks", a.encoder_blocks);
    s.read("decoder_blocks", a.decoder_blocks);
    s.read("dropout_low", a.dropout_low);
    s.read("dropout_high", a.dropout_high);
    s.read("dropout_channel_threshold", a.dropout_channel_threshold);
    s.read("supervision_levels", a.supervision_levels);
    s.read("mode", mode);
    s.read("taps", taps);
    s.reject_unknown();
    a.mode = parse_mode(mode);
    a.taps = parse_tap_side(taps);
    // Levels given without eta get the default weights for those levels.
    const bool eta_given = j.contains("loss") && j["loss"].is_object() && j["loss"].contains("eta");
    if (!eta_given && a.supervision_levels != base.arch.supervision_levels) {
      c.loss.eta = default_eta(a.supervision_levels);
    }
  }
  if (j.contains("loss")) {
    Section s(j["loss"], "loss");
    LossWeights& l = c.loss;
    s.read("alpha", l.alpha);
    s.read("lambda", l.lambda);
    s.read("mu", l.mu);
    s.read("eta", l.eta);
    s.read("eta_floor_fraction", l.eta_floor_fraction);
    s.reject_unknown();
  }
  if (j.contains("train")) {
    Section s(j["train"], "train");
    TrainConfig& t = c.train;
    s.read("lr0", t.lr0);
    s.read("momentum", t.momentum);
    s.read("lr_decay_factor", t.lr_decay_factor);
    s.read("lr_milestones", t.lr_milestones);
    s.read("epochs", t.epochs);
    s.read("batch_size", t.batch_size);
    s.read("eta_decay_start", t.eta_decay_start);
    s.read("eta_decay_end", t.eta_decay_end);
    s.read("seed", t.seed);
    s.read("precision", t.precision);
    s.read("patch_height", t.patch_height);
    s.read("patch_width", t.patch_width);
    s.read("positive_center_prob", t.positive_center_prob);
    s.read("flip", t.flip);
    s.read("val_every", t.val_every);
    s.read("max_grad_norm", t.max_grad_norm);
    s.reject_unknown();
  }
  return c;
}

RunConfig load_config_file(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ValueError("config: cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValueError("config: " + path.string() + ": " + e.what());
  }
  return merge_json(base, j);
}

}  // namespace hds
