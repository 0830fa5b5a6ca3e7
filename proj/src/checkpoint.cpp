#include "bat/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "bat/errors.hpp"

namespace bat::ad {
namespace {

constexpr const char* kMagic = "bat-checkpoint";

void write_double(std::ostream& os, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
  os.write(buf, res.ptr - buf);
}

double read_double(const std::string& token, std::size_t line) {
  double v = 0.0;
  const char* begin = token.data();
  const char* end = begin + token.size();
  bool negative = false;
  if (begin != end && *begin == '-') {
    negative = true;
    ++begin;
  }
  auto res = std::from_chars(begin, end, v, std::chars_format::hex);
  if (res.ec != std::errc() || res.ptr != end) {
    // inf/nan are spelled without the hex prefix
    res = std::from_chars(begin, end, v);
    if (res.ec != std::errc() || res.ptr != end) {
      throw ParseError("checkpoint: bad value '" + token + "'", line);
    }
  }
  return negative ? -v : v;
}

bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (c == ' ' || c == '\n' || c == '\t' || c == '\r') return false;
  }
  return true;
}

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const NamedTensor& Checkpoint::at(const std::string& name) const {
  if (const auto* t = find(name)) return *t;
  throw SchemaError("checkpoint has no tensor named '" + name + "'");
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream os;
  os << kMagic << ' ' << ckpt.format_version << '\n';
  for (const auto& [key, value] : ckpt.meta) {
    if (!valid_name(key) || value.find('\n') != std::string::npos) {
      throw ContractError("checkpoint: invalid meta entry '" + key + "'");
    }
    os << "meta " << key << ' ' << value << '\n';
  }
  for (const auto& t : ckpt.tensors) {
    if (!valid_name(t.name)) throw ContractError("checkpoint: invalid tensor name '" + t.name + "'");
    if (numel(t.shape) != t.values.size()) {
      throw ShapeError("checkpoint: tensor '" + t.name + "' values do not match shape");
    }
    os << "tensor " << t.name << ' ' << t.shape.size();
    for (auto d : t.shape) os << ' ' << d;
    os << '\n';
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      if (i) os << ' ';
      write_double(os, t.values[i]);
    }
    os << '\n';
  }
  os << "end\n";
  return os.str();
}

Checkpoint parse_checkpoint(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  Checkpoint ckpt;

  auto next = [&]() -> bool {
    if (!std::getline(is, line)) return false;
    ++lineno;
    return true;
  };

  if (!next()) throw ParseError("checkpoint: empty file", 1);
  {
    std::istringstream head(line);
    std::string magic;
    head >> magic >> ckpt.format_version;
    if (magic != kMagic || !head) throw ParseError("checkpoint: missing header", lineno);
    if (ckpt.format_version != kCheckpointFormatVersion) {
      throw ParseError("checkpoint: unsupported format version " +
                           std::to_string(ckpt.format_version),
                       lineno);
    }
  }
  bool ended = false;
  while (next()) {
    if (line == "end") {
      ended = true;
      break;
    }
    if (line.rfind("meta ", 0) == 0) {
      const auto space = line.find(' ', 5);
      if (space == std::string::npos) {
        ckpt.meta[line.substr(5)] = "";
      } else {
        ckpt.meta[line.substr(5, space - 5)] = line.substr(space + 1);
      }
      continue;
    }
    if (line.rfind("tensor ", 0) != 0) throw ParseError("checkpoint: unexpected line", lineno);
    std::istringstream head(line.substr(7));
    NamedTensor t;
    std::size_t rank = 0;
    head >> t.name >> rank;
    t.shape.resize(rank);
    for (auto& d : t.shape) head >> d;
    if (!head) throw ParseError("checkpoint: malformed tensor header", lineno);
    if (!next()) throw ParseError("checkpoint: missing values", lineno);
    std::istringstream body(line);
    std::string token;
    while (body >> token) t.values.push_back(read_double(token, lineno));
    if (t.values.size() != numel(t.shape)) {
      throw ParseError("checkpoint: tensor '" + t.name + "' has wrong value count", lineno);
    }
    ckpt.tensors.push_back(std::move(t));
  }
  if (!ended) throw ParseError("checkpoint: truncated (no end marker)", lineno);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string text = serialize_checkpoint(ckpt);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os << text;
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace bat::ad
