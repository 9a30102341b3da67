#include "adarelu/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>

namespace adarelu {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("bad value for " + key + ": '" + value + "'");
  return out;
}

std::string format_double(double v) {
  char buf[40];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);  // shortest form that reads back exactly
  return std::string(buf, ptr);
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Member>
Field int_field(std::string key, Member member) {
  return {key, [member](const RunConfig& c) { return std::to_string(member(c)); },
          [member, key](RunConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(member(c))>;
            member(c) = parse_number<T>(key, v);
          }};
}

template <typename Member>
Field double_field(std::string key, Member member) {
  return {key, [member](const RunConfig& c) { return format_double(member(c)); },
          [member, key](RunConfig& c, const std::string& v) { member(c) = parse_number<double>(key, v); }};
}

template <typename Member, typename ToString, typename Parse>
Field enum_field(std::string key, Member member, ToString to_str, Parse parse) {
  return {key, [member, to_str](const RunConfig& c) { return to_str(member(c)); },
          [member, parse](RunConfig& c, const std::string& v) { member(c) = parse(v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto arch = [](auto& c) -> auto& { return c.train.arch; };
    f.push_back(int_field("image_size", [=](auto& c) -> auto& { return arch(c).image_size; }));
    f.push_back(int_field("base_channels", [=](auto& c) -> auto& { return arch(c).base_channels; }));
    f.push_back(int_field("down_blocks", [=](auto& c) -> auto& { return arch(c).down_blocks; }));
    f.push_back(int_field("translator_blocks", [=](auto& c) -> auto& { return arch(c).translator_blocks; }));
    f.push_back(int_field("style_dim", [=](auto& c) -> auto& { return arch(c).style_dim; }));
    f.push_back(int_field("latent_dim", [=](auto& c) -> auto& { return arch(c).latent_dim; }));
    f.push_back(int_field("num_domains", [=](auto& c) -> auto& { return arch(c).num_domains; }));
    f.push_back(enum_field(
        "activation", [=](auto& c) -> auto& { return arch(c).activation; },
        [](ActivationKind k) { return to_string(k); }, parse_activation_kind));
    f.push_back(double_field("fixed_slope", [=](auto& c) -> auto& { return arch(c).fixed_slope; }));
    f.push_back(enum_field(
        "adain_mode", [=](auto& c) -> auto& { return arch(c).adain_mode; },
        [](AdainMode m) { return to_string(m); }, parse_adain_mode));
    f.push_back(enum_field(
        "structural", [=](auto& c) -> auto& { return arch(c).structural; },
        [](StructuralMode m) { return to_string(m); }, parse_structural_mode));
    f.push_back(int_field("mapping_hidden", [=](auto& c) -> auto& { return arch(c).mapping_hidden; }));

    f.push_back(double_field("lambda_adv", [](auto& c) -> auto& { return c.train.weights.adv; }));
    f.push_back(double_field("lambda_sty", [](auto& c) -> auto& { return c.train.weights.sty; }));
    f.push_back(double_field("lambda_ds_initial", [](auto& c) -> auto& { return c.train.weights.ds_initial; }));
    f.push_back(double_field("lambda_ds_final", [](auto& c) -> auto& { return c.train.weights.ds_final; }));
    f.push_back(double_field("lambda_cyc", [](auto& c) -> auto& { return c.train.weights.cyc; }));
    f.push_back(double_field("r1_gamma", [](auto& c) -> auto& { return c.train.weights.r1_gamma; }));

    f.push_back(double_field("lr", [](auto& c) -> auto& { return c.train.adam.lr; }));
    f.push_back(double_field("beta1", [](auto& c) -> auto& { return c.train.adam.beta1; }));
    f.push_back(double_field("beta2", [](auto& c) -> auto& { return c.train.adam.beta2; }));
    f.push_back(double_field("adam_eps", [](auto& c) -> auto& { return c.train.adam.eps; }));

    f.push_back(int_field("iterations", [](auto& c) -> auto& { return c.train.iterations; }));
    f.push_back(int_field("batch_size", [](auto& c) -> auto& { return c.train.batch; }));
    f.push_back(int_field("seed", [](auto& c) -> auto& { return c.train.seed; }));
    f.push_back(int_field("log_every", [](auto& c) -> auto& { return c.train.log_every; }));
    f.push_back(int_field("checkpoint_every", [](auto& c) -> auto& { return c.train.checkpoint_every; }));

    f.push_back(int_field("data_seed", [](auto& c) -> auto& { return c.data_seed; }));
    f.push_back(int_field("data_count", [](auto& c) -> auto& { return c.data_count; }));
    f.push_back({"data_dir", [](const RunConfig& c) { return c.data_dir; },
                 [](RunConfig& c, const std::string& v) { c.data_dir = v; }});
    f.push_back({"out_dir", [](const RunConfig& c) { return c.out_dir; },
                 [](RunConfig& c, const std::string& v) { c.out_dir = v; }});

    f.push_back(enum_field(
        "eval_mode", [](auto& c) -> auto& { return c.eval.mode; },
        [](GuidanceMode m) { return to_string(m); }, parse_guidance_mode));
    f.push_back(int_field("eval_seed", [](auto& c) -> auto& { return c.eval.seed; }));
    f.push_back(int_field("eval_sources", [](auto& c) -> auto& { return c.eval.diversity_sources; }));
    f.push_back(int_field("feature_seed", [](auto& c) -> auto& { return c.eval.feature_seed; }));
    return f;
  }();
  return table;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + " is not key=value: " + t);
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    const Field* field = nullptr;
    for (const auto& f : fields()) {
      if (f.key == key) field = &f;
    }
    if (!field) throw std::invalid_argument("unknown config key: " + key);
    if (!seen.insert(key).second) throw std::invalid_argument("duplicate config key: " + key);
    field->set(c, value);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + "=" + f.get(*this) + "\n";
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> k;
  for (const auto& f : fields()) k.push_back(f.key);
  return k;
}

void RunConfig::validate() const {
  train.validate();
  if (data_count < kMinCountPerDomain) throw std::invalid_argument("data_count must be >= 32");
  if (eval.diversity_sources < 1) throw std::invalid_argument("eval_sources must be >= 1");
}

}  // namespace adarelu
