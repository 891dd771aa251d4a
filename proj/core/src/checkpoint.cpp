#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "sttm/errors.hpp"
#include "sttm/features.hpp"
#include "sttm/hash.hpp"
#include "sttm/model.hpp"

namespace sttm::model {

namespace {

constexpr std::string_view kMagic = "sttm-checkpoint 1";

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

struct ConfigField {
  const char* key;
  std::size_t SttmConfig::*field;
};

constexpr ConfigField kSizeFields[] = {
    {"m", &SttmConfig::m},
    {"n", &SttmConfig::n},
    {"d_a", &SttmConfig::d_a},
    {"d_b", &SttmConfig::d_b},
    {"h", &SttmConfig::hidden},
    {"layers", &SttmConfig::layers},
    {"e", &SttmConfig::embed},
    {"h_mem", &SttmConfig::mem_hidden},
    {"l_mem", &SttmConfig::mem_patterns},
    {"d_mem", &SttmConfig::mem_dim},
    {"heads", &SttmConfig::heads},
    {"ffn", &SttmConfig::ffn},
    {"mlp_hidden", &SttmConfig::mlp_hidden},
};

std::string header(const SttmModel& model, std::uint64_t dataset_fingerprint, std::uint64_t seed) {
  const auto& c = model.config();
  std::ostringstream h;
  h << kMagic << '\n';
  for (const auto& f : kSizeFields) h << "config." << f.key << ' ' << c.*f.field << '\n';
  h << "config.nx " << c.nx << "\nconfig.ny " << c.ny << '\n';
  h << "config.dropout " << hexfloat(c.dropout) << '\n';
  h << "config.vocab";
  for (std::size_t v : c.vocab) h << ' ' << v;
  h << "\nconfig.variant " << to_string(c.variant) << '\n';
  h << "feature_order_hash " << to_hex(features::feature_order_hash()) << '\n';
  h << "dataset_fingerprint " << to_hex(dataset_fingerprint) << '\n';
  h << "seed " << seed << '\n';
  h << "label_affine " << hexfloat(model.label_mean()) << ' ' << hexfloat(model.label_scale()) << '\n';
  for (const auto& [name, t] : model.named_parameters()) h << "param " << name << ' ' << t.size() << '\n';
  h << "payload\n";
  return h.str();
}

struct Parsed {
  CheckpointInfo info;
  std::vector<std::pair<std::string, std::size_t>> params;
  std::size_t payload_offset = 0;
};

Parsed parse(const std::string& bytes, const std::string& path) {
  Parsed out;
  auto& c = out.info.config;
  std::map<std::string, std::size_t SttmConfig::*> size_keys;
  for (const auto& f : kSizeFields) size_keys[std::string("config.") + f.key] = f.field;

  std::size_t pos = 0, line_no = 0;
  bool payload = false;
  while (pos < bytes.size()) {
    const std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos) break;
    const std::string line = bytes.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line_no == 1) {
      if (line != kMagic) throw ParseError(path, 1, "not an sttm checkpoint");
      continue;
    }
    if (line == "payload") {
      payload = true;
      break;
    }
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (auto it = size_keys.find(key); it != size_keys.end()) {
      ss >> c.*(it->second);
    } else if (key == "config.nx") {
      ss >> c.nx;
    } else if (key == "config.ny") {
      ss >> c.ny;
    } else if (key == "config.dropout") {
      std::string v;
      ss >> v;
      c.dropout = std::strtod(v.c_str(), nullptr);
    } else if (key == "config.vocab") {
      for (auto& v : c.vocab) ss >> v;
    } else if (key == "config.variant") {
      std::string v;
      ss >> v;
      c.variant = parse_variant(v);
    } else if (key == "feature_order_hash") {
      std::string hex;
      ss >> hex;
      out.info.feature_order_hash = std::stoull(hex, nullptr, 16);
    } else if (key == "dataset_fingerprint") {
      std::string hex;
      ss >> hex;
      out.info.dataset_fingerprint = std::stoull(hex, nullptr, 16);
    } else if (key == "seed") {
      ss >> out.info.seed;
    } else if (key == "label_affine") {
      std::string a, b;
      ss >> a >> b;
      out.info.label_mean = std::strtod(a.c_str(), nullptr);
      out.info.label_scale = std::strtod(b.c_str(), nullptr);
    } else if (key == "param") {
      std::string name;
      std::size_t count = 0;
      ss >> name >> count;
      out.params.emplace_back(name, count);
    } else {
      throw ParseError(path, line_no, "unknown header key '" + key + "'");
    }
    if (ss.fail()) throw ParseError(path, line_no, "malformed value for '" + key + "'");
  }
  if (!payload) throw ParseError(path, line_no, "missing payload");
  out.payload_offset = pos;
  return out;
}

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open checkpoint " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_checkpoint(const std::string& path, const SttmModel& model, std::uint64_t dataset_fingerprint,
                     std::uint64_t seed) {
  std::string bytes = header(model, dataset_fingerprint, seed);
  for (const auto& [name, t] : model.named_parameters()) {
    const auto d = t.data();
    bytes.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write checkpoint " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw UserError("failed writing checkpoint " + path);
}

CheckpointInfo read_checkpoint_info(const std::string& path) { return parse(read_all(path), path).info; }

SttmModel load_checkpoint(const std::string& path, std::uint64_t expected_dataset, CheckpointInfo* info) {
  const std::string bytes = read_all(path);
  const Parsed parsed = parse(bytes, path);
  if (parsed.info.feature_order_hash != features::feature_order_hash()) {
    throw CompatibilityError(path + ": checkpoint was trained on a different feature order");
  }
  if (expected_dataset != 0 && parsed.info.dataset_fingerprint != expected_dataset) {
    throw CompatibilityError(path + ": checkpoint dataset fingerprint " + to_hex(parsed.info.dataset_fingerprint) +
                             " does not match dataset " + to_hex(expected_dataset));
  }
  SttmModel model(parsed.info.config, parsed.info.seed);
  model.set_label_affine(parsed.info.label_mean, parsed.info.label_scale);
  const auto named = model.named_parameters();
  if (named.size() != parsed.params.size()) {
    throw CompatibilityError(path + ": parameter list does not match the stored configuration");
  }
  std::size_t pos = parsed.payload_offset;
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& [name, tensor] = named[i];
    if (parsed.params[i].first != name || parsed.params[i].second != tensor.size()) {
      throw CompatibilityError(path + ": parameter '" + parsed.params[i].first + "' does not match '" + name + "'");
    }
    const std::size_t n = tensor.size() * sizeof(double);
    if (pos + n > bytes.size()) throw ParseError(path, 0, "truncated parameter payload");
    Tensor t = tensor;
    std::memcpy(t.mutable_data().data(), bytes.data() + pos, n);
    pos += n;
  }
  if (pos != bytes.size()) throw ParseError(path, 0, "trailing bytes after parameter payload");
  if (info != nullptr) *info = parsed.info;
  return model;
}

std::uint64_t parameter_fingerprint(const SttmModel& model) {
  Fnv1a h;
  h.update(model.config().hash());
  h.update(model.label_mean());
  h.update(model.label_scale());
  for (const auto& [name, t] : model.named_parameters()) {
    h.update(std::string_view(name));
    for (double v : t.data()) h.update(v);
  }
  return h.digest();
}

}  // namespace sttm::model
