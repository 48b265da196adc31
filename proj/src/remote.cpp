#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "streammem/ports.hpp"
#include "streammem/retrieval.hpp"

namespace streammem {

using nlohmann::json;

void RemoteBackendConfig::validate() const {
  if (!(timeout > 0.0)) throw InputError("remote timeout must be positive");
  if (base_url.rfind("http://", 0) != 0 && base_url.rfind("https://", 0) != 0) {
    throw InputError("remote base_url must start with http:// or https://");
  }
}

RemoteClient::RemoteClient(RemoteBackendConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

namespace {

// Splits "http://host:port/prefix" into ("http://host:port", "/prefix").
std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, ""};
  std::string prefix = url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, slash), prefix};
}

std::chrono::microseconds to_micros(double seconds) {
  return std::chrono::microseconds(static_cast<long long>(seconds * 1e6));
}

}  // namespace

json RemoteClient::call(std::string_view endpoint, const json& payload) const {
  const auto [origin, prefix] = split_url(cfg_.base_url);
  const std::string path = prefix + "/" + std::string(endpoint);
  httplib::Client cli(origin);
  cli.set_connection_timeout(to_micros(cfg_.timeout));
  cli.set_read_timeout(to_micros(cfg_.timeout));
  cli.set_write_timeout(to_micros(cfg_.timeout));

  httplib::Headers headers;
  if (!cfg_.api_key_env_var.empty()) {
    if (const char* key = std::getenv(cfg_.api_key_env_var.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }
  const std::string body = payload.dump();
  const std::size_t attempts = cfg_.retry_count + 1;
  std::string last_error;
  for (std::size_t attempt = 1; attempt <= attempts; ++attempt) {
    auto res = cli.Post(path, headers, body, "application/json");
    if (res && res->status >= 200 && res->status < 300) {
      try {
        return json::parse(res->body);
      } catch (const json::parse_error& e) {
        throw ProtocolError("/" + std::string(endpoint) + ": malformed JSON response: " + e.what());
      }
    }
    last_error = res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error());
    if (attempt < attempts) {
      std::this_thread::sleep_for(to_micros(cfg_.backoff_initial * static_cast<double>(1ULL << (attempt - 1))));
    }
  }
  throw BackendError("/" + std::string(endpoint) + " failed after " + std::to_string(attempts) +
                     " attempts: " + last_error);
}

json remote_call(const RemoteBackendConfig& cfg, std::string_view endpoint, const json& payload) {
  return RemoteClient(cfg).call(endpoint, payload);
}

RemoteTextEncoder::RemoteTextEncoder(std::shared_ptr<const RemoteClient> client, std::size_t dim)
    : client_(std::move(client)), dim_(dim) {}

std::vector<double> RemoteTextEncoder::encode(std::string_view text) const {
  const json res = client_->call("embed", {{"texts", {std::string(text)}}});
  try {
    auto vecs = res.at("vectors").get<std::vector<std::vector<double>>>();
    if (vecs.size() != 1) throw ProtocolError("/embed: expected exactly one vector");
    if (vecs[0].size() != dim_) {
      throw ProtocolError("/embed: vector has dimension " + std::to_string(vecs[0].size()) + ", expected " +
                          std::to_string(dim_));
    }
    return std::move(vecs[0]);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("/embed: unexpected response: ") + e.what());
  }
}

namespace {

std::string caption_field(const json& res, std::string_view endpoint) {
  try {
    return res.at("caption").get<std::string>();
  } catch (const json::exception& e) {
    throw ProtocolError("/" + std::string(endpoint) + ": unexpected response: " + e.what());
  }
}

}  // namespace

std::string RemoteCaptioner::caption_chunk(const Chunk& chunk) const {
  return caption_field(client_->call("caption", {{"captions", json::array()}, {"tags", chunk.tags()}}), "caption");
}

std::string RemoteCaptioner::summarize(std::span<const std::string> captions) const {
  const std::vector<std::string> cs(captions.begin(), captions.end());
  return caption_field(client_->call("caption", {{"captions", cs}, {"tags", json::array()}}), "caption");
}

std::string RemoteGenerator::generate(const PromptBundle& bundle) const {
  const json res = client_->call("generate", {{"bundle", bundle_to_json(bundle, true)}});
  try {
    return res.at("text").get<std::string>();
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("/generate: unexpected response: ") + e.what());
  }
}

Judgement RemoteJudge::judge(std::string_view q, std::string_view r, std::string_view p) const {
  const json res = client_->call(
      "judge", {{"question", std::string(q)}, {"reference", std::string(r)}, {"prediction", std::string(p)}});
  try {
    Judgement j;
    const auto verdict = res.at("verdict").get<std::string>();
    if (verdict != "yes" && verdict != "no") throw ProtocolError("/judge: verdict must be yes or no");
    j.verdict = verdict == "yes";
    j.score = res.at("score").get<int>();
    if (j.score < 0 || j.score > 5) throw ProtocolError("/judge: score outside 0..5");
    return j;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("/judge: unexpected response: ") + e.what());
  }
}

PortSet make_remote_ports(const RemoteBackendConfig& cfg, std::size_t tokens_n, std::size_t dim_d,
                          std::size_t text_dim) {
  auto client = std::make_shared<const RemoteClient>(cfg);
  PortSet p;
  p.frame_encoder = std::make_shared<StubFrameEncoder>(tokens_n, dim_d);
  p.text_encoder = std::make_shared<RemoteTextEncoder>(client, text_dim);
  p.captioner = std::make_shared<RemoteCaptioner>(client);
  p.generator = std::make_shared<RemoteGenerator>(client);
  p.judge = std::make_shared<RemoteJudge>(client);
  return p;
}

}  // namespace streammem
