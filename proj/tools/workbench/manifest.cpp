#include "workbench/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "cardiopinn/error.hpp"
#include "cardiopinn/io.hpp"

namespace cardiopinn::workbench {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw Error("sha256: init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const char* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_, data, n) != 1) throw Error("sha256: update failed");
  }

  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, md, &len) != 1) throw Error("sha256: final failed");
    std::ostringstream s;
    for (unsigned int i = 0; i < len; ++i) s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return s.str();
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Sha256 h;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

void RunManifest::add(const std::filesystem::path& root, const std::filesystem::path& path) {
  ProducedFile f;
  f.path = std::filesystem::relative(path, root).generic_string();
  f.bytes = std::filesystem::file_size(path);
  f.sha256 = sha256_file(path);
  files.push_back(std::move(f));
}

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["config_name"] = config_name;
  j["config_sha256"] = config_hash;
  j["tool_version"] = tool_version;
  j["seed"] = seed;
  j["deterministic"] = deterministic;
  j["threads"] = threads;
  j["started"] = started;
  j["finished"] = finished;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& f : files) arr.push_back({{"path", f.path}, {"bytes", f.bytes}, {"sha256", f.sha256}});
  j["files"] = arr;
  return j.dump(2) + "\n";
}

std::filesystem::path RunManifest::write(const std::filesystem::path& root) const {
  const auto path = root / ("manifest_" + command + ".json");
  write_text_atomic(path, to_json());
  return path;
}

}  // namespace cardiopinn::workbench
