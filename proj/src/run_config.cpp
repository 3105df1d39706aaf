#include "tssg/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <thread>

namespace tssg {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("key '" + key + "': cannot parse '" + value + "' as " + expected);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value, std::is_integral_v<T> ? "an integer" : "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true/false");
}

std::array<int, kNetworkDepth> parse_list(const std::string& key, const std::string& value) {
  std::array<int, kNetworkDepth> out{};
  std::stringstream ss(value);
  std::string item;
  std::size_t n = 0;
  while (std::getline(ss, item, ',')) {
    if (n == out.size()) bad_value(key, value, "a list of 5 integers");
    out[n++] = parse_number<int>(key, trim(item));
  }
  if (n != out.size()) bad_value(key, value, "a list of 5 integers");
  return out;
}

// Shortest form that parses back to the same double.
std::string format_double(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string format_list(const std::array<int, kNetworkDepth>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Entry {
  RunConfig::KeyInfo info;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define TSSG_INT(field) \
  [](const RunConfig& c) { return std::to_string(c.field); }, \
      [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_number<int>(k, v); }
#define TSSG_DOUBLE(field) \
  [](const RunConfig& c) { return format_double(c.field); }, \
      [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_number<double>(k, v); }
#define TSSG_BOOL(field) \
  [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }, \
      [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_bool(k, v); }
#define TSSG_STRING(field) \
  [](const RunConfig& c) { return c.field; }, [](RunConfig& c, const std::string&, const std::string& v) { c.field = v; }
#define TSSG_LIST(field) \
  [](const RunConfig& c) { return format_list(c.field); }, \
      [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_list(k, v); }

const std::vector<Entry>& table() {
  static const std::vector<Entry> entries = {
      {{"seed", "RNG seed for data generation, initialization, augmentation and splits"},
       [](const RunConfig& c) { return std::to_string(c.train.seed); },
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = parse_number<std::uint64_t>(k, v); }},
      {{"deterministic", "single-threaded, manifest-ordered execution"}, TSSG_BOOL(deterministic)},
      {{"threads", "worker threads when not deterministic (0: all cores)"}, TSSG_INT(threads)},
      {{"epochs", "training epochs per stage"}, TSSG_INT(train.epochs)},
      {{"batch_size", "samples per optimizer step"}, TSSG_INT(train.batch_size)},
      {{"learning_rate", "Adam step size"}, TSSG_DOUBLE(train.learning_rate)},
      {{"augmentation_multiplier", "augmented copies of each training sample per epoch"},
       TSSG_INT(train.augmentation_multiplier)},
      {{"validation_fraction", "share of training samples held out for val_dice"},
       TSSG_DOUBLE(train.validation_fraction)},
      {{"augment", "random rotation, shift and scale during training"}, TSSG_BOOL(train.augment)},
      {{"encoder_widths", "output channels of the 5 encoder blocks"}, TSSG_LIST(network.encoder_widths)},
      {{"convs_per_block", "convolutions in each of the 5 blocks (2 or 3)"}, TSSG_LIST(network.convs_per_block)},
      {{"window_radius", "decomposition interval-gradient radius"}, TSSG_INT(decomposition.window_radius)},
      {{"eps_s", "decomposition gradient-rescaling regularizer"}, TSSG_DOUBLE(decomposition.eps_s)},
      {{"smoothing_eps", "decomposition smoothing regularizer"}, TSSG_DOUBLE(decomposition.smoothing_eps)},
      {{"iterations", "decomposition passes"}, TSSG_INT(decomposition.iterations)},
      {{"manifest", "dataset manifest (overridden by --manifest)"}, TSSG_STRING(manifest)},
      {{"checkpoint_dir", "directory holding roi/binary/multiclass.tssg"}, TSSG_STRING(checkpoint_dir)},
      {{"output_dir", "directory for written artifacts"}, TSSG_STRING(output_dir)},
  };
  return entries;
}

#undef TSSG_INT
#undef TSSG_DOUBLE
#undef TSSG_BOOL
#undef TSSG_STRING
#undef TSSG_LIST

const Entry& find(const std::string& key) {
  for (const auto& e : table()) {
    if (e.info.name == key) return e;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::vector<RunConfig::KeyInfo> RunConfig::keys() {
  std::vector<KeyInfo> out;
  for (const auto& e : table()) out.push_back(e.info);
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) { find(key).set(*this, key, value); }

std::string RunConfig::get(const std::string& key) const { return find(key).get(*this); }

RunConfig RunConfig::parse(std::istream& in, const std::string& source) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      cfg.set(key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in, path.string());
}

std::string RunConfig::echo() const {
  std::string out = "# effective configuration\n";
  for (const auto& e : table()) out += e.info.name + " = " + e.get(*this) + "\n";
  return out;
}

void RunConfig::write_echo(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << echo();
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void RunConfig::validate() const {
  try {
    train.validate();
    network.validate();
    decomposition.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (threads < 0) throw ConfigError("threads must be >= 0");
}

int RunConfig::effective_threads() const {
  if (deterministic) return 1;
  if (threads > 0) return threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace tssg
