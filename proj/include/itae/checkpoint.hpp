#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "itae/tensor.hpp"

namespace itae {

struct NamedTensor {
  std::string name;
  Tensor5 value;
};

// Ordered collection of named trainable tensors.
class ParameterSet {
 public:
  Tensor5& add(std::string name, Tensor5 value);
  Tensor5& get(const std::string& name);
  const Tensor5& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return items_.size(); }
  std::int64_t numel() const;
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  void set_requires_grad(bool flag);
  void zero_grad();
  // Copies of all values, detached.
  std::vector<Tensor5> snapshot() const;
  void restore(const std::vector<Tensor5>& values);
  // Copy values from `other` by name; shapes must match.
  void load_from(const ParameterSet& other);

 private:
  std::vector<NamedTensor> items_;
};

using Metadata = std::map<std::string, std::string>;

// A checkpoint is a directory holding one packed tensor file per parameter and
// a text manifest ("manifest.txt") listing metadata and tensors.
void save_checkpoint(const std::filesystem::path& dir, const ParameterSet& params,
                     const Metadata& meta);

struct Checkpoint {
  ParameterSet params;
  Metadata meta;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// SHA-256 over the manifest and every tensor file, in manifest order; hex string.
std::string checkpoint_hash(const std::filesystem::path& dir);

// SHA-256 of a byte string, lowercase hex.
std::string sha256_hex(const std::string& bytes);

}  // namespace itae
