#include "spikediff/runconfig.hpp"

#include <fstream>

namespace spikediff {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct Parser {
  const std::string& path;
  int line;

  [[noreturn]] void fail(const std::string& msg) const {
    raise(str("config: ", path, ":", line, ": ", msg));
  }
  int64_t to_int(const std::string& key, const std::string& v) const {
    size_t used = 0;
    int64_t out = 0;
    try {
      out = std::stoll(v, &used);
    } catch (...) {
      fail(str(key, ": expected an integer, got '", v, "'"));
    }
    if (used != v.size()) fail(str(key, ": expected an integer, got '", v, "'"));
    return out;
  }
  double to_double(const std::string& key, const std::string& v) const {
    size_t used = 0;
    double out = 0;
    try {
      out = std::stod(v, &used);
    } catch (...) {
      fail(str(key, ": expected a number, got '", v, "'"));
    }
    if (used != v.size()) fail(str(key, ": expected a number, got '", v, "'"));
    return out;
  }
  bool to_bool(const std::string& key, const std::string& v) const {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    fail(str(key, ": expected a boolean (true/false/on/off/1/0), got '", v, "'"));
  }
};

}  // namespace

RunConfig parse_config(const std::string& path) {
  std::ifstream f(path);
  SPD_REQUIRE(f.good(), "config: cannot open ", path);

  RunConfig cfg;
  Parser p{path, 0};
  std::string raw;
  while (std::getline(f, raw)) {
    p.line++;
    size_t hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    std::string s = trim(raw);
    if (s.empty()) continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos) p.fail("expected 'key = value'");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (key.empty()) p.fail("empty key");
    if (value.empty()) p.fail(str(key, ": empty value"));

    if (key == "dataset.path") {
      cfg.dataset_path = value;
    } else if (key == "dataset.format") {
      if (value != "idx-images" && value != "raw-dir")
        p.fail(str(key, ": expected idx-images or raw-dir, got '", value, "'"));
      cfg.dataset_format = DatasetSpec::parse_format(value);
    } else if (key == "image.size") {
      int64_t v = p.to_int(key, value);
      if (v < 1) p.fail(str(key, ": must be >= 1"));
      cfg.image_size = static_cast<int>(v);
    } else if (key == "model.base_channels") {
      int64_t v = p.to_int(key, value);
      if (v < 1) p.fail(str(key, ": must be >= 1"));
      cfg.base_channels = static_cast<int>(v);
    } else if (key == "model.levels") {
      int64_t v = p.to_int(key, value);
      if (v < 1) p.fail(str(key, ": must be >= 1"));
      cfg.levels = static_cast<int>(v);
    } else if (key == "snn.steps") {
      int64_t v = p.to_int(key, value);
      if (v < 1) p.fail(str(key, ": S must be >= 1, got ", v));
      cfg.snn_steps = static_cast<int>(v);
    } else if (key == "snn.v_threshold") {
      double v = p.to_double(key, value);
      if (v <= 0) p.fail(str(key, ": must be > 0"));
      cfg.v_threshold = v;
    } else if (key == "snn.tau_decay") {
      double v = p.to_double(key, value);
      if (v < 0 || v >= 1) p.fail(str(key, ": must be in [0, 1)"));
      cfg.tau_decay = v;
    } else if (key == "snn.surrogate_width") {
      double v = p.to_double(key, value);
      if (v <= 0) p.fail(str(key, ": must be > 0"));
      cfg.surrogate_width = v;
    } else if (key == "diffusion.T") {
      int64_t v = p.to_int(key, value);
      if (v < 1) p.fail(str(key, ": must be >= 1"));
      cfg.diffusion_T = static_cast<int>(v);
    } else if (key == "train.lr") {
      double v = p.to_double(key, value);
      if (v <= 0) p.fail(str(key, ": must be > 0"));
      cfg.lr = v;
    } else if (key == "train.batch") {
      int64_t v = p.to_int(key, value);
      if (v < 1) p.fail(str(key, ": must be >= 1"));
      cfg.batch = static_cast<int>(v);
    } else if (key == "train.epochs") {
      int64_t v = p.to_int(key, value);
      if (v < 1) p.fail(str(key, ": must be >= 1"));
      cfg.epochs = static_cast<int>(v);
    } else if (key == "loss.scl") {
      cfg.loss_scl = p.to_bool(key, value);
    } else if (key == "loss.signal") {
      cfg.loss_signal = p.to_bool(key, value);
    } else if (key == "sample.steps") {
      int64_t v = p.to_int(key, value);
      if (v < 1) p.fail(str(key, ": must be >= 1"));
      cfg.sample_steps = static_cast<int>(v);
    } else if (key == "seed") {
      cfg.seed = static_cast<uint64_t>(p.to_int(key, value));
    } else {
      p.fail(str("unknown key '", key, "'"));
    }
  }
  return cfg;
}

}  // namespace spikediff
