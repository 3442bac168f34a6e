#include "itae/checkpoint.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "itae/errors.hpp"
#include "itae/tensor_io.hpp"

namespace itae {

namespace fs = std::filesystem;

Tensor5& ParameterSet::add(std::string name, Tensor5 value) {
  if (contains(name)) throw ContractError("duplicate parameter name: " + name);
  items_.push_back({std::move(name), std::move(value)});
  return items_.back().value;
}

Tensor5& ParameterSet::get(const std::string& name) {
  for (auto& it : items_) {
    if (it.name == name) return it.value;
  }
  throw ContractError("unknown parameter: " + name);
}

const Tensor5& ParameterSet::get(const std::string& name) const {
  return const_cast<ParameterSet*>(this)->get(name);
}

bool ParameterSet::contains(const std::string& name) const {
  for (const auto& it : items_) {
    if (it.name == name) return true;
  }
  return false;
}

std::int64_t ParameterSet::numel() const {
  std::int64_t n = 0;
  for (const auto& it : items_) n += it.value.numel();
  return n;
}

void ParameterSet::set_requires_grad(bool flag) {
  for (auto& it : items_) it.value.set_requires_grad(flag);
}

void ParameterSet::zero_grad() {
  for (auto& it : items_) it.value.zero_grad();
}

std::vector<Tensor5> ParameterSet::snapshot() const {
  std::vector<Tensor5> out;
  out.reserve(items_.size());
  for (const auto& it : items_) out.push_back(it.value.detach());
  return out;
}

void ParameterSet::restore(const std::vector<Tensor5>& values) {
  if (values.size() != items_.size()) throw ContractError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    auto dst = items_[i].value.mutable_data();
    auto src = values[i].data();
    if (dst.size() != src.size()) throw DimensionError("restore: size mismatch for " + items_[i].name);
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

void ParameterSet::load_from(const ParameterSet& other) {
  for (auto& it : items_) {
    const Tensor5& src = other.get(it.name);
    if (src.shape() != it.value.shape()) {
      throw DimensionError("parameter " + it.name + ": checkpoint shape " + src.shape().str() +
                           " vs model shape " + it.value.shape().str());
    }
    auto d = it.value.mutable_data();
    std::copy(src.data().begin(), src.data().end(), d.begin());
  }
}

void save_checkpoint(const fs::path& dir, const ParameterSet& params, const Metadata& meta) {
  fs::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  for (const auto& [k, v] : meta) manifest << "meta " << k << ' ' << v << '\n';
  for (const auto& p : params) {
    const std::string file = p.name + ".t5";
    save_tensor(dir / file, p.value);
    manifest << "tensor " << p.name << ' ' << p.value.shape().str() << ' ' << file << '\n';
  }
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw ConfigError("no checkpoint manifest in " + dir.string());
  Checkpoint ck;
  std::string line;
  while (std::getline(manifest, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls >> std::ws, value);
      ck.meta[key] = value;
    } else if (kind == "tensor") {
      std::string name, shape, file;
      ls >> name >> shape >> file;
      Tensor5 t = load_tensor(dir / file);
      if (t.shape().str() != shape) {
        throw std::runtime_error("checkpoint tensor " + name + " has shape " + t.shape().str() +
                                 ", manifest says " + shape);
      }
      ck.params.add(name, t);
    } else if (!kind.empty()) {
      throw std::runtime_error("malformed manifest line: " + line);
    }
  }
  return ck;
}

namespace {

struct DigestDeleter {
  void operator()(EVP_MD_CTX* ctx) const { EVP_MD_CTX_free(ctx); }
};

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw std::runtime_error("SHA-256 init failed");
    }
  }
  void update(const std::string& bytes) {
    EVP_DigestUpdate(ctx_.get(), bytes.data(), bytes.size());
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), md, &len);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) {
      os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    }
    return os.str();
  }

 private:
  std::unique_ptr<EVP_MD_CTX, DigestDeleter> ctx_;
};

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  Sha256 h;
  h.update(bytes);
  return h.hex();
}

std::string checkpoint_hash(const fs::path& dir) {
  const std::string manifest = read_file(dir / "manifest.txt");
  Sha256 h;
  h.update(manifest);
  std::istringstream ms(manifest);
  std::string line;
  while (std::getline(ms, line)) {
    std::istringstream ls(line);
    std::string kind, name, shape, file;
    ls >> kind;
    if (kind != "tensor") continue;
    ls >> name >> shape >> file;
    h.update(read_file(dir / file));
  }
  return h.hex();
}

}  // namespace itae
