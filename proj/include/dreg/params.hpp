#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dreg/error.hpp"

namespace dreg {

/// Which side of the model a parameter belongs to: generative (theta),
/// inference (phi), or both.
enum class Role : std::uint8_t { kTheta, kPhi, kShared };

std::string_view role_name(Role r);
Role parse_role(std::string_view s);

struct ParamSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
  Role role = Role::kTheta;
};

/// Named, disjoint, contiguous slices covering a flat parameter array.
class ParamLayout {
 public:
  void add(std::string name, std::size_t length, Role role);

  const ParamSlice& find(std::string_view name) const;
  const std::vector<ParamSlice>& slices() const { return slices_; }
  std::size_t size() const { return size_; }
  Role role(std::size_t index) const;

  /// Flat indices carrying a role, ascending.
  std::vector<std::size_t> indices(Role r) const;
  bool has_shared() const;

  bool operator==(const ParamLayout& other) const;

 private:
  std::vector<ParamSlice> slices_;
  std::size_t size_ = 0;
};

struct ParamVector {
  ParamLayout layout;
  std::vector<double> flat;

  ParamVector() = default;
  explicit ParamVector(ParamLayout l) : layout(std::move(l)), flat(layout.size(), 0.0) {}

  std::span<double> slice(std::string_view name);
  std::span<const double> slice(std::string_view name) const;
};

/// Independent N(0, sigma^2) offset on each coordinate, keyed by seed.
ParamVector perturb_params(const ParamVector& p, double sigma, std::uint64_t seed);

/// Text layout table (one "name offset length role" line per slice) followed
/// by the flat array as little-endian IEEE-754 doubles.
void save_checkpoint(const ParamVector& p, const std::filesystem::path& path);
ParamVector load_checkpoint(const std::filesystem::path& path);

}  // namespace dreg
