#include "srf/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace srf {

void RunConfig::validate() const {
  scene.validate();
  net.validate();
  if (net.num_classes != scene.num_classes) throw ConfigError("net.num_classes must equal scene.num_classes");
  if (net.in_channels != 3) throw ConfigError("net.in_channels must be 3 for RGB scenes");
  if (data.train_scenes < 1) throw ConfigError("data.train_scenes must be positive");
  if (data.eval_scenes < 1) throw ConfigError("data.eval_scenes must be positive");
  if (!(optim.lr >= 0.0)) throw ConfigError("optim.lr must be nonnegative");
  if (!(optim.momentum >= 0.0 && optim.momentum < 1.0)) throw ConfigError("optim.momentum must be in [0, 1)");
  if (!(optim.weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be nonnegative");
  if (!(optim.power >= 0.0)) throw ConfigError("optim.power must be nonnegative");
  if (train.steps < 0) throw ConfigError("train.steps must be nonnegative");
  if (train.batch < 1) throw ConfigError("train.batch must be positive");
  if (train.checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be nonnegative");
  if (!(loss.tau > 0.0)) throw ConfigError("loss.tau must be positive");
  if (!(loss.lambda >= 0.0)) throw ConfigError("loss.lambda must be nonnegative");
  if (loss.anchor_budget < 1) throw ConfigError("loss.anchors must be positive");
  if (ablate_seeds < 1) throw ConfigError("ablate.seeds must be positive");
  if (out.empty()) throw ConfigError("out must not be empty");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("'" + v + "' is not a valid number");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("'" + v + "' is not a boolean (true/false)");
}

std::string format_double(double v) {
  char buf[64];
  const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
  return std::string(buf, end);
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T, class Access>
Field numeric(std::string key, Access access) {
  Field f;
  f.key = std::move(key);
  f.set = [access](RunConfig& c, const std::string& v) { access(c) = parse_number<T>(v); };
  f.get = [access](const RunConfig& c) {
    auto& value = access(const_cast<RunConfig&>(c));
    if constexpr (std::is_floating_point_v<T>) return format_double(value);
    else return std::to_string(value);
  };
  return f;
}

template <class Access>
Field boolean(std::string key, Access access) {
  Field f;
  f.key = std::move(key);
  f.set = [access](RunConfig& c, const std::string& v) { access(c) = parse_bool(v); };
  f.get = [access](const RunConfig& c) { return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false"); };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> t;
    t.push_back(numeric<std::uint64_t>("seed", [](RunConfig& c) -> auto& { return c.seed; }));
    t.push_back(Field{"out", [](RunConfig& c, const std::string& v) { c.out = v; },
                      [](const RunConfig& c) { return c.out; }});
    t.push_back(numeric<std::int64_t>("scene.height", [](RunConfig& c) -> auto& { return c.scene.height; }));
    t.push_back(numeric<std::int64_t>("scene.width", [](RunConfig& c) -> auto& { return c.scene.width; }));
    t.push_back(numeric<int>("scene.num_classes", [](RunConfig& c) -> auto& { return c.scene.num_classes; }));
    t.push_back(numeric<int>("scene.min_shapes", [](RunConfig& c) -> auto& { return c.scene.min_shapes; }));
    t.push_back(numeric<int>("scene.max_shapes", [](RunConfig& c) -> auto& { return c.scene.max_shapes; }));
    t.push_back(numeric<double>("scene.noise_std", [](RunConfig& c) -> auto& { return c.scene.noise_std; }));
    t.push_back(numeric<double>("scene.min_size", [](RunConfig& c) -> auto& { return c.scene.min_size; }));
    t.push_back(numeric<double>("scene.max_size", [](RunConfig& c) -> auto& { return c.scene.max_size; }));
    t.push_back(numeric<std::uint64_t>("scene.seed", [](RunConfig& c) -> auto& { return c.scene.seed; }));
    t.push_back(numeric<int>("data.train_scenes", [](RunConfig& c) -> auto& { return c.data.train_scenes; }));
    t.push_back(numeric<int>("data.eval_scenes", [](RunConfig& c) -> auto& { return c.data.eval_scenes; }));
    t.push_back(numeric<std::uint64_t>("data.eval_offset", [](RunConfig& c) -> auto& { return c.data.eval_offset; }));
    for (int l = 0; l < 4; ++l) {
      t.push_back(numeric<std::int64_t>("net.stage" + std::to_string(l + 1) + "_width",
                                        [l](RunConfig& c) -> auto& { return c.net.stage_widths[l]; }));
    }
    t.push_back(numeric<std::int64_t>("net.decoder_width", [](RunConfig& c) -> auto& { return c.net.decoder_width; }));
    t.push_back(numeric<std::int64_t>("net.embedding_dim", [](RunConfig& c) -> auto& { return c.net.embedding_dim; }));
    t.push_back(numeric<int>("net.blocks_per_stage", [](RunConfig& c) -> auto& { return c.net.blocks_per_stage; }));
    t.push_back(numeric<std::int64_t>("net.srm_hidden", [](RunConfig& c) -> auto& { return c.net.srm_hidden; }));
    t.push_back(numeric<std::int64_t>("net.ffn_expansion", [](RunConfig& c) -> auto& { return c.net.ffn_expansion; }));
    t.push_back(Field{"variant",
                      [](RunConfig& c, const std::string& v) { c.variant = parse_variant(v); },
                      [](const RunConfig& c) { return variant_string(c.variant); }});
    t.push_back(numeric<double>("optim.lr", [](RunConfig& c) -> auto& { return c.optim.lr; }));
    t.push_back(numeric<double>("optim.momentum", [](RunConfig& c) -> auto& { return c.optim.momentum; }));
    t.push_back(numeric<double>("optim.weight_decay", [](RunConfig& c) -> auto& { return c.optim.weight_decay; }));
    t.push_back(numeric<double>("optim.power", [](RunConfig& c) -> auto& { return c.optim.power; }));
    t.push_back(numeric<long>("train.steps", [](RunConfig& c) -> auto& { return c.train.steps; }));
    t.push_back(numeric<int>("train.batch", [](RunConfig& c) -> auto& { return c.train.batch; }));
    t.push_back(numeric<long>("train.checkpoint_every", [](RunConfig& c) -> auto& { return c.train.checkpoint_every; }));
    t.push_back(boolean("train.flip", [](RunConfig& c) -> auto& { return c.train.flip; }));
    t.push_back(numeric<double>("loss.lambda", [](RunConfig& c) -> auto& { return c.loss.lambda; }));
    t.push_back(numeric<double>("loss.tau", [](RunConfig& c) -> auto& { return c.loss.tau; }));
    t.push_back(numeric<int>("loss.anchors", [](RunConfig& c) -> auto& { return c.loss.anchor_budget; }));
    t.push_back(numeric<int>("ablate.seeds", [](RunConfig& c) -> auto& { return c.ablate_seeds; }));
    return t;
  }();
  return table;
}

}  // namespace

RunConfig parse_config(const std::string& text, RunConfig base) {
  RunConfig c = std::move(base);
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* field = nullptr;
    for (const auto& f : fields()) {
      if (f.key == key) field = &f;
    }
    if (field == nullptr) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    try {
      field->set(c, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + " (" + key + "): " + e.what());
    }
  }
  c.net.num_classes = c.scene.num_classes;
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_text(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

}  // namespace srf
