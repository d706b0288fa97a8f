#include "hens/manifest.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "hens/error.hpp"

namespace hens::manifest {
namespace {

class Digest {
 public:
  Digest() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      throw std::runtime_error("SHA-256 initialisation failed");
  }
  ~Digest() { EVP_MD_CTX_free(ctx_); }
  Digest(const Digest&) = delete;
  Digest& operator=(const Digest&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }

  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md.data(), &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(kHex[md[i] >> 4]);
      out.push_back(kHex[md[i] & 15]);
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  Digest d;
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    d.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  if (in.bad()) throw DataError("read failed on '" + path.string() + "'");
  return d.hex();
}

std::string sha256_text(const std::string& text) {
  Digest d;
  d.update(text.data(), text.size());
  return d.hex();
}

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command_line"] = command_line;
  j["config_hash"] = config_hash;
  if (seed) j["seed"] = *seed;
  else j["seed"] = nullptr;
  j["format_version"] = format_version;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["wall_time_seconds"] = wall_time_seconds;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  RunManifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.command_line = j.at("command_line").get<std::vector<std::string>>();
    m.config_hash = j.at("config_hash").get<std::string>();
    if (!j.at("seed").is_null()) m.seed = j.at("seed").get<std::uint64_t>();
    m.format_version = j.at("format_version").get<int>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    m.wall_time_seconds = j.at("wall_time_seconds").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void RunManifest::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << to_json();
  if (!out) throw DataError("cannot write manifest '" + path.string() + "'");
}

RunManifest RunManifest::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read manifest '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::vector<ChecksumResult> verify_checksums(const RunManifest& manifest,
                                             const std::vector<std::string>& files) {
  std::vector<ChecksumResult> out;
  for (const auto& f : files) {
    ChecksumResult r;
    r.path = f;
    if (auto it = manifest.outputs.find(f); it != manifest.outputs.end()) r.expected = it->second;
    else if (auto in = manifest.inputs.find(f); in != manifest.inputs.end()) r.expected = in->second;
    else throw DataError("'" + f + "' is not listed in the manifest");
    if (!std::filesystem::exists(f)) throw DataError("missing file '" + f + "'");
    r.actual = sha256_file(f);
    r.match = r.actual == r.expected;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace hens::manifest
