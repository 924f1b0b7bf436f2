#include "dreg/params.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "dreg/rng.hpp"

namespace dreg {

std::string_view role_name(Role r) {
  switch (r) {
    case Role::kTheta: return "theta";
    case Role::kPhi: return "phi";
    case Role::kShared: return "shared";
  }
  return "?";
}

Role parse_role(std::string_view s) {
  if (s == "theta") return Role::kTheta;
  if (s == "phi") return Role::kPhi;
  if (s == "shared") return Role::kShared;
  throw Error("unknown parameter role '" + std::string(s) + "'");
}

void ParamLayout::add(std::string name, std::size_t length, Role role) {
  for (const auto& s : slices_)
    if (s.name == name) throw Error("ParamLayout: duplicate slice '" + name + "'");
  slices_.push_back({std::move(name), size_, length, role});
  size_ += length;
}

const ParamSlice& ParamLayout::find(std::string_view name) const {
  for (const auto& s : slices_)
    if (s.name == name) return s;
  throw Error("ParamLayout: no slice named '" + std::string(name) + "'");
}

Role ParamLayout::role(std::size_t index) const {
  for (const auto& s : slices_)
    if (index >= s.offset && index < s.offset + s.length) return s.role;
  throw Error("ParamLayout: index out of range");
}

std::vector<std::size_t> ParamLayout::indices(Role r) const {
  std::vector<std::size_t> out;
  for (const auto& s : slices_)
    if (s.role == r)
      for (std::size_t i = 0; i < s.length; ++i) out.push_back(s.offset + i);
  return out;
}

bool ParamLayout::has_shared() const {
  for (const auto& s : slices_)
    if (s.role == Role::kShared) return true;
  return false;
}

bool ParamLayout::operator==(const ParamLayout& o) const {
  if (size_ != o.size_ || slices_.size() != o.slices_.size()) return false;
  for (std::size_t i = 0; i < slices_.size(); ++i) {
    const auto& a = slices_[i];
    const auto& b = o.slices_[i];
    if (a.name != b.name || a.offset != b.offset || a.length != b.length || a.role != b.role)
      return false;
  }
  return true;
}

std::span<double> ParamVector::slice(std::string_view name) {
  const auto& s = layout.find(name);
  return std::span<double>(flat).subspan(s.offset, s.length);
}

std::span<const double> ParamVector::slice(std::string_view name) const {
  const auto& s = layout.find(name);
  return std::span<const double>(flat).subspan(s.offset, s.length);
}

ParamVector perturb_params(const ParamVector& p, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw Error("perturb_params: sigma must be non-negative");
  ParamVector out = p;
  if (sigma == 0.0) return out;
  const CounterRng rng(seed, stream_id(StreamTag::kPerturb, 0));
  for (std::size_t i = 0; i < out.flat.size(); ++i) out.flat[i] += sigma * rng.normal(i);
  return out;
}

void save_checkpoint(const ParamVector& p, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + tmp);
    out << "dreg-checkpoint 1\n" << p.layout.slices().size() << ' ' << p.layout.size() << '\n';
    for (const auto& s : p.layout.slices())
      out << s.name << ' ' << s.offset << ' ' << s.length << ' ' << role_name(s.role) << '\n';
    out << "data\n";
    for (double v : p.flat) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      char bytes[8];
      for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
      out.write(bytes, 8);
    }
    if (!out) throw Error("short write on checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

ParamVector load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "dreg-checkpoint 1") throw Error("checkpoint: bad header");
  std::size_t count = 0, total = 0;
  {
    std::getline(in, line);
    std::istringstream ss(line);
    if (!(ss >> count >> total)) throw Error("checkpoint: bad size line");
  }
  ParamLayout layout;
  for (std::size_t i = 0; i < count; ++i) {
    std::getline(in, line);
    std::istringstream ss(line);
    std::string name, role;
    std::size_t offset = 0, length = 0;
    if (!(ss >> name >> offset >> length >> role)) throw Error("checkpoint: bad layout line");
    if (offset != layout.size()) throw Error("checkpoint: slices are not contiguous");
    layout.add(name, length, parse_role(role));
  }
  if (layout.size() != total) throw Error("checkpoint: layout does not cover the array");
  std::getline(in, line);
  if (line != "data") throw Error("checkpoint: missing data marker");
  ParamVector p(std::move(layout));
  for (auto& v : p.flat) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw Error("checkpoint: truncated data");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    v = std::bit_cast<double>(bits);
  }
  return p;
}

}  // namespace dreg
