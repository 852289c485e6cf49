#include "vm3ac/autodiff/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vm3ac::ad {

namespace {

constexpr const char* kMagic = "vm3ac-checkpoint";

[[noreturn]] void parse_error(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

Checkpoint Checkpoint::from_params(const ParamList& params) {
  Checkpoint c;
  for (const auto& p : params) c.params.emplace_back(p.name, p.tensor->detach());
  return c;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : params) {
    if (n == name) return t;
  }
  throw std::out_of_range("checkpoint: no parameter named '" + name + "'");
}

void Checkpoint::load_into(const ParamList& targets) const {
  for (const auto& p : targets) {
    const Tensor& stored = get(p.name);
    if (stored.shape() != p.tensor->shape()) {
      throw std::invalid_argument("checkpoint: parameter '" + p.name + "' has shape " +
                                  shape_string(stored.shape()) + ", expected " + shape_string(p.tensor->shape()));
    }
    *p.tensor = stored.detach();
  }
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out << kMagic << '\n' << "format_version " << Checkpoint::format_version << '\n';
  for (const auto& [key, value] : checkpoint.meta) {
    if (key.find_first_of(" \t\n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint: meta entry '" + key + "' contains whitespace/newline");
    }
    out << "meta " << key << ' ' << value << '\n';
  }
  char buf[32];
  for (const auto& [name, tensor] : checkpoint.params) {
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
      throw std::invalid_argument("checkpoint: invalid parameter name '" + name + "'");
    }
    out << "param " << name << ' ' << tensor.rank();
    for (auto d : tensor.shape()) out << ' ' << d;
    out << '\n';
    bool first = true;
    for (double v : tensor.data()) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      if (!first) out << ' ';
      out << buf;
      first = false;
    }
    out << '\n';
  }
  out << "end\n";
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  Checkpoint c;
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++lineno;
    return true;
  };
  if (!next() || line != kMagic) parse_error(path, lineno, "not a vm3ac checkpoint");
  if (!next()) parse_error(path, lineno, "missing format_version");
  {
    std::istringstream ss(line);
    std::string key;
    int version = 0;
    if (!(ss >> key >> version) || key != "format_version") parse_error(path, lineno, "missing format_version");
    if (version != Checkpoint::format_version) {
      parse_error(path, lineno, "unsupported format_version " + std::to_string(version));
    }
  }
  bool ended = false;
  while (next()) {
    std::istringstream ss(line);
    std::string kind;
    ss >> kind;
    if (kind == "end") {
      ended = true;
      break;
    }
    if (kind == "meta") {
      std::string key;
      ss >> key;
      std::string value;
      std::getline(ss >> std::ws, value);
      c.meta[key] = value;
    } else if (kind == "param") {
      std::string name;
      std::size_t rank = 0;
      if (!(ss >> name >> rank)) parse_error(path, lineno, "malformed param header");
      Shape shape(rank);
      for (auto& d : shape) {
        if (!(ss >> d)) parse_error(path, lineno, "malformed shape for '" + name + "'");
      }
      if (!next()) parse_error(path, lineno, "missing values for '" + name + "'");
      std::vector<double> values;
      values.reserve(shape_size(shape));
      std::istringstream vs(line);
      std::string token;
      while (vs >> token) {
        try {
          values.push_back(std::stod(token));
        } catch (const std::exception&) {
          parse_error(path, lineno, "bad value '" + token + "' for '" + name + "'");
        }
      }
      if (values.size() != shape_size(shape)) {
        parse_error(path, lineno,
                    "'" + name + "' expects " + std::to_string(shape_size(shape)) + " values, found " +
                        std::to_string(values.size()));
      }
      c.params.emplace_back(name, Tensor(std::move(shape), std::move(values)));
    } else if (!kind.empty()) {
      parse_error(path, lineno, "unknown record '" + kind + "'");
    }
  }
  if (!ended) parse_error(path, lineno, "truncated checkpoint (no 'end')");
  return c;
}

}  // namespace vm3ac::ad
