#include "fogseg/runconfig.hpp"

#include <cstdlib>
#include <functional>

#include <json.hpp>

#include "fogseg/common.hpp"

using ordered_json = nlohmann::ordered_json;

namespace fogseg {
namespace harness {

namespace {

// Reads known keys out of one JSON object and rejects everything else, so a
// typo in a config file fails loudly instead of silently using a default.
class StrictObj {
 public:
  StrictObj(const ordered_json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: " + path_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;  // partial configs keep defaults
    read(*it, key, out);
    seen_.push_back(key);
  }

  void section(const char* key, const std::function<void(const ordered_json&)>& fn) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    fn(*it);
    seen_.push_back(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      (void)value;
      bool known = false;
      for (const auto& s : seen_)
        if (s == key) known = true;
      if (!known) throw ConfigError("config: unknown key " + join(key));
    }
  }

 private:
  std::string join(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void read(const ordered_json& v, const char* key, int& out) {
    if (!v.is_number_integer() && !v.is_number_unsigned())
      throw ConfigError("config: " + join(key) + " must be an integer");
    out = v.get<int>();
  }
  void read(const ordered_json& v, const char* key, uint64_t& out) {
    if (!v.is_number_integer() && !v.is_number_unsigned())
      throw ConfigError("config: " + join(key) + " must be an integer");
    out = v.get<uint64_t>();
  }
  void read(const ordered_json& v, const char* key, float& out) {
    if (!v.is_number())
      throw ConfigError("config: " + join(key) + " must be a number");
    out = v.get<float>();
  }
  void read(const ordered_json& v, const char* key, bool& out) {
    if (!v.is_boolean()) throw ConfigError("config: " + join(key) + " must be a boolean");
    out = v.get<bool>();
  }
  void read(const ordered_json& v, const char* key, std::string& out) {
    if (!v.is_string()) throw ConfigError("config: " + join(key) + " must be a string");
    out = v.get<std::string>();
  }
  void read(const ordered_json& v, const char* key, std::vector<int>& out) {
    if (!v.is_array()) throw ConfigError("config: " + join(key) + " must be an array");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number_integer() && !e.is_number_unsigned())
        throw ConfigError("config: " + join(key) + " must hold integers");
      out.push_back(e.get<int>());
    }
  }

  const ordered_json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

ordered_json data_json(const DatasetConfig& d) {
  ordered_json j;
  j["height"] = d.scene.height;
  j["width"] = d.scene.width;
  j["num_classes"] = d.scene.num_classes;
  j["min_shapes"] = d.scene.min_shapes;
  j["max_shapes"] = d.scene.max_shapes;
  j["depth_near"] = double(d.scene.depth_near);
  j["depth_far"] = double(d.scene.depth_far);
  j["seed"] = d.seed;
  j["train"] = d.train;
  j["val"] = d.val;
  j["test"] = d.test;
  j["real_fog"] = d.real_fog;
  j["synth_beta_lo"] = double(d.synth_beta_lo);
  j["synth_beta_hi"] = double(d.synth_beta_hi);
  j["real_beta_lo"] = double(d.real_beta_lo);
  j["real_beta_hi"] = double(d.real_beta_hi);
  j["airlight_lo"] = double(d.airlight_lo);
  j["airlight_hi"] = double(d.airlight_hi);
  j["illum_amplitude"] = double(d.illum_amplitude);
  return j;
}

void data_from(const ordered_json& j, DatasetConfig& d) {
  StrictObj o(j, "data");
  o.get("height", d.scene.height);
  o.get("width", d.scene.width);
  o.get("num_classes", d.scene.num_classes);
  o.get("min_shapes", d.scene.min_shapes);
  o.get("max_shapes", d.scene.max_shapes);
  o.get("depth_near", d.scene.depth_near);
  o.get("depth_far", d.scene.depth_far);
  o.get("seed", d.seed);
  o.get("train", d.train);
  o.get("val", d.val);
  o.get("test", d.test);
  o.get("real_fog", d.real_fog);
  o.get("synth_beta_lo", d.synth_beta_lo);
  o.get("synth_beta_hi", d.synth_beta_hi);
  o.get("real_beta_lo", d.real_beta_lo);
  o.get("real_beta_hi", d.real_beta_hi);
  o.get("airlight_lo", d.airlight_lo);
  o.get("airlight_hi", d.airlight_hi);
  o.get("illum_amplitude", d.illum_amplitude);
  o.finish();
}

}  // namespace

void RunConfig::validate() const {
  data.validate();
  arch.validate();
  if (arch.num_classes != data.scene.num_classes)
    throw ConfigError("config: arch and data disagree on num_classes");
  if (ft.input != "fog" && ft.input != "defogged")
    throw ConfigError("config: finetune.input must be fog or defogged");
  if (ft.kl_direction != "clean_ref" && ft.kl_direction != "fog_ref")
    throw ConfigError("config: finetune.kl_direction must be clean_ref or fog_ref");
  if (!(fdm.gamma >= 0.0f && fdm.gamma <= 1.0f))
    throw ConfigError("config: fdm.gamma must lie in [0,1]");
  if (fdm.rounds < 1) throw ConfigError("config: fdm.rounds must be >= 1");
  if (ft.lambda_con < 0.0f) throw ConfigError("config: finetune.lambda_con must be >= 0");
  for (int v : {clean.steps, basic.steps, fdm.steps, joint.steps, ft.steps})
    if (v <= 0) throw ConfigError("config: iteration budgets must be positive");
  for (int v : {clean.batch, basic.batch, joint.batch, ft.batch})
    if (v <= 0) throw ConfigError("config: batch sizes must be positive");
}

std::string RunConfig::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["data"] = data_json(data);
  ordered_json a;
  a["stage_channels"] = arch.stage_channels;
  a["decoder_depth"] = std::string(to_string(arch.decoder_depth));
  a["dfnet_out_channels"] = arch.dfnet_out_channels;
  j["arch"] = a;
  ordered_json c;
  c["steps"] = clean.steps;
  c["batch"] = clean.batch;
  c["encoder_lr"] = double(clean.encoder_lr);
  c["decoder_lr"] = double(clean.decoder_lr);
  c["momentum"] = double(clean.momentum);
  c["poly_power"] = double(clean.poly_power);
  j["clean"] = c;
  ordered_json b;
  b["steps"] = basic.steps;
  b["batch"] = basic.batch;
  b["lr0"] = double(basic.lr0);
  b["lr1"] = double(basic.lr1);
  b["adam_beta1"] = double(basic.adam_beta1);
  b["adam_beta2"] = double(basic.adam_beta2);
  j["basic"] = b;
  ordered_json f;
  f["steps"] = fdm.steps;
  f["lr0"] = double(fdm.lr0);
  f["lr1"] = double(fdm.lr1);
  f["gamma"] = double(fdm.gamma);
  f["rounds"] = fdm.rounds;
  j["fdm"] = f;
  ordered_json jt;
  jt["steps"] = joint.steps;
  jt["batch"] = joint.batch;
  jt["lr0"] = double(joint.lr0);
  jt["lr1"] = double(joint.lr1);
  j["joint"] = jt;
  ordered_json t;
  t["steps"] = ft.steps;
  t["batch"] = ft.batch;
  t["encoder_lr"] = double(ft.encoder_lr);
  t["decoder_lr"] = double(ft.decoder_lr);
  t["momentum"] = double(ft.momentum);
  t["lambda_con"] = double(ft.lambda_con);
  t["use_fog"] = ft.use_fog;
  t["use_cl"] = ft.use_cl;
  t["use_con"] = ft.use_con;
  t["input"] = ft.input;
  t["kl_direction"] = ft.kl_direction;
  j["finetune"] = t;
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig cfg;
  StrictObj o(j, "");
  o.get("seed", cfg.seed);
  o.section("data", [&](const ordered_json& s) { data_from(s, cfg.data); });
  o.section("arch", [&](const ordered_json& s) {
    StrictObj a(s, "arch");
    a.get("stage_channels", cfg.arch.stage_channels);
    std::string depth = to_string(cfg.arch.decoder_depth);
    a.get("decoder_depth", depth);
    if (depth == "light")
      cfg.arch.decoder_depth = DecoderDepth::light;
    else if (depth == "heavy")
      cfg.arch.decoder_depth = DecoderDepth::heavy;
    else
      throw ConfigError("config: arch.decoder_depth must be light or heavy");
    a.get("dfnet_out_channels", cfg.arch.dfnet_out_channels);
    a.finish();
    cfg.arch.n_stages = int(cfg.arch.stage_channels.size());
  });
  o.section("clean", [&](const ordered_json& s) {
    StrictObj c(s, "clean");
    c.get("steps", cfg.clean.steps);
    c.get("batch", cfg.clean.batch);
    c.get("encoder_lr", cfg.clean.encoder_lr);
    c.get("decoder_lr", cfg.clean.decoder_lr);
    c.get("momentum", cfg.clean.momentum);
    c.get("poly_power", cfg.clean.poly_power);
    c.finish();
  });
  o.section("basic", [&](const ordered_json& s) {
    StrictObj b(s, "basic");
    b.get("steps", cfg.basic.steps);
    b.get("batch", cfg.basic.batch);
    b.get("lr0", cfg.basic.lr0);
    b.get("lr1", cfg.basic.lr1);
    b.get("adam_beta1", cfg.basic.adam_beta1);
    b.get("adam_beta2", cfg.basic.adam_beta2);
    b.finish();
  });
  o.section("fdm", [&](const ordered_json& s) {
    StrictObj f(s, "fdm");
    f.get("steps", cfg.fdm.steps);
    f.get("lr0", cfg.fdm.lr0);
    f.get("lr1", cfg.fdm.lr1);
    f.get("gamma", cfg.fdm.gamma);
    f.get("rounds", cfg.fdm.rounds);
    f.finish();
  });
  o.section("joint", [&](const ordered_json& s) {
    StrictObj jj(s, "joint");
    jj.get("steps", cfg.joint.steps);
    jj.get("batch", cfg.joint.batch);
    jj.get("lr0", cfg.joint.lr0);
    jj.get("lr1", cfg.joint.lr1);
    jj.finish();
  });
  o.section("finetune", [&](const ordered_json& s) {
    StrictObj t(s, "finetune");
    t.get("steps", cfg.ft.steps);
    t.get("batch", cfg.ft.batch);
    t.get("encoder_lr", cfg.ft.encoder_lr);
    t.get("decoder_lr", cfg.ft.decoder_lr);
    t.get("momentum", cfg.ft.momentum);
    t.get("lambda_con", cfg.ft.lambda_con);
    t.get("use_fog", cfg.ft.use_fog);
    t.get("use_cl", cfg.ft.use_cl);
    t.get("use_con", cfg.ft.use_con);
    t.get("input", cfg.ft.input);
    t.get("kl_direction", cfg.ft.kl_direction);
    t.finish();
  });
  o.finish();
  cfg.arch.num_classes = cfg.data.scene.num_classes;
  cfg.validate();
  return cfg;
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
  ordered_json doc = ordered_json::parse(to_json());
  ordered_json* node = &doc;
  std::string rest = key;
  while (true) {
    size_t dot = rest.find('.');
    std::string head = rest.substr(0, dot);
    if (!node->is_object() || !node->contains(head))
      throw ConfigError("config: unknown key " + key);
    node = &(*node)[head];
    if (dot == std::string::npos) break;
    rest = rest.substr(dot + 1);
  }

  auto bad = [&](const char* want) {
    return ConfigError("config: " + key + " expects " + want + ", got '" + value + "'");
  };
  try {
    size_t used = 0;
    if (node->is_boolean()) {
      if (value == "true" || value == "1")
        *node = true;
      else if (value == "false" || value == "0")
        *node = false;
      else
        throw bad("a boolean");
    } else if (node->is_number_float()) {
      *node = std::stod(value, &used);
      if (used != value.size()) throw bad("a number");
    } else if (node->is_number_integer() || node->is_number_unsigned()) {
      *node = std::stoll(value, &used);
      if (used != value.size()) throw bad("an integer");
    } else if (node->is_string()) {
      *node = value;
    } else if (node->is_array()) {
      std::vector<int64_t> vals;
      std::string item;
      for (size_t i = 0; i <= value.size(); ++i) {
        if (i == value.size() || value[i] == ',') {
          vals.push_back(std::stoll(item, &used));
          if (used != item.size()) throw bad("a comma-separated integer list");
          item.clear();
        } else {
          item += value[i];
        }
      }
      *node = vals;
    } else {
      throw ConfigError("config: " + key + " is not an overridable field");
    }
  } catch (const std::invalid_argument&) {
    throw bad("a number");
  } catch (const std::out_of_range&) {
    throw bad("a representable number");
  }
  *this = from_json(doc.dump());
}

std::string RunConfig::fingerprint() const { return hex64(fnv1a64(to_json())); }

curriculum::CleanBaselineOptions RunConfig::clean_options(const std::string& log_path) const {
  curriculum::CleanBaselineOptions o;
  o.steps = clean.steps;
  o.batch = clean.batch;
  o.encoder_lr = clean.encoder_lr;
  o.decoder_lr = clean.decoder_lr;
  o.momentum = clean.momentum;
  o.poly_power = clean.poly_power;
  o.seed = mix_seed(seed, "stage.clean");
  o.log_path = log_path;
  return o;
}

curriculum::PretrainOptions RunConfig::basic_options(const std::string& log_path) const {
  curriculum::PretrainOptions o;
  o.steps = basic.steps;
  o.batch = basic.batch;
  o.lr0 = basic.lr0;
  o.lr1 = basic.lr1;
  o.adam_beta1 = basic.adam_beta1;
  o.adam_beta2 = basic.adam_beta2;
  o.seed = mix_seed(seed, "stage.basic");
  o.log_path = log_path;
  return o;
}

curriculum::PretrainOptions RunConfig::fdm_options(const std::string& log_path) const {
  curriculum::PretrainOptions o = basic_options(log_path);
  o.steps = fdm.steps;
  o.lr0 = fdm.lr0;
  o.lr1 = fdm.lr1;
  o.seed = mix_seed(seed, "stage.fdm");
  return o;
}

curriculum::JointOptions RunConfig::joint_options(const std::string& log_path) const {
  curriculum::JointOptions o;
  o.steps = joint.steps;
  o.batch = joint.batch;
  o.lr0 = joint.lr0;
  o.lr1 = joint.lr1;
  o.adam_beta1 = basic.adam_beta1;
  o.adam_beta2 = basic.adam_beta2;
  o.seed = mix_seed(seed, "stage.joint");
  o.log_path = log_path;
  return o;
}

finetune::FinetuneOptions RunConfig::finetune_options(const std::string& log_path) const {
  finetune::FinetuneOptions o;
  o.steps = ft.steps;
  o.batch = ft.batch;
  o.encoder_lr = ft.encoder_lr;
  o.decoder_lr = ft.decoder_lr;
  o.momentum = ft.momentum;
  o.lambda_con = ft.lambda_con;
  o.use_fog = ft.use_fog;
  o.use_cl = ft.use_cl;
  o.use_con = ft.use_con;
  o.input = ft.input == "fog" ? finetune::FinetuneInput::fog : finetune::FinetuneInput::defogged;
  o.kl_direction =
      ft.kl_direction == "clean_ref" ? KlDirection::clean_ref : KlDirection::fog_ref;
  o.seed = mix_seed(seed, "stage.finetune");
  o.log_path = log_path;
  return o;
}

}  // namespace harness
}  // namespace fogseg
