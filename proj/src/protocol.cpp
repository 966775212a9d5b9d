#include "zkinfer/protocol.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <openssl/evp.h>
#include <sys/file.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <future>
#include <sstream>

#include "zkinfer/bytes.hpp"

namespace zkinfer {

// JSON forms ------------------------------------------------------------------------

json tensor_to_json(const IntTensor& t) { return {{"shape", t.shape}, {"data", t.data}}; }

IntTensor tensor_from_json(const json& j) {
  return IntTensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<std::int64_t>>());
}

json tensors_to_json(const TensorMap& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[k] = tensor_to_json(v);
  return j;
}

TensorMap tensors_from_json(const json& j) {
  TensorMap m;
  for (const auto& [k, v] : j.items()) m.emplace(k, tensor_from_json(v));
  return m;
}

namespace {

json segment_to_json(const IoSegment& s) {
  return {{"id", s.id},         {"tokens", s.tokens}, {"shape", s.shape},  {"vocab", s.vocab},
          {"scale", s.scale},   {"offset", s.offset}, {"length", s.length}};
}

IoSegment segment_from_json(const json& j) {
  IoSegment s;
  s.id = j.at("id").get<std::string>();
  s.tokens = j.at("tokens").get<bool>();
  s.shape = j.at("shape").get<Shape>();
  s.vocab = j.at("vocab").get<std::int64_t>();
  s.scale = j.at("scale").get<int>();
  s.offset = j.at("offset").get<std::uint64_t>();
  s.length = j.at("length").get<std::uint64_t>();
  return s;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

json description_to_json(const CircuitDescription& d) {
  json j;
  j["quant"] = d.quant.to_string();
  j["n_rows"] = d.geometry.n_rows;
  j["n_groups"] = d.geometry.n_groups;
  j["io_size"] = d.io.size;
  j["inputs"] = json::array();
  for (const auto& s : d.io.inputs) j["inputs"].push_back(segment_to_json(s));
  j["outputs"] = json::array();
  for (const auto& s : d.io.outputs) j["outputs"].push_back(segment_to_json(s));
  j["fixed_roots"] = json::array();
  for (const auto& r : d.fixed_roots) j["fixed_roots"].push_back(to_hex(r));
  return j;
}

CircuitDescription description_from_json(const json& j) {
  CircuitDescription d;
  d.quant = QuantConfig::parse(j.at("quant").get<std::string>());
  d.geometry.n_rows = j.at("n_rows").get<std::uint64_t>();
  d.geometry.n_groups = j.at("n_groups").get<std::uint64_t>();
  d.io.size = j.at("io_size").get<std::uint64_t>();
  for (const auto& s : j.at("inputs")) d.io.inputs.push_back(segment_from_json(s));
  for (const auto& s : j.at("outputs")) d.io.outputs.push_back(segment_from_json(s));
  for (const auto& r : j.at("fixed_roots")) d.fixed_roots.push_back(digest_from_hex(r.get<std::string>()));
  return d;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw ProtocolError("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw ProtocolError("malformed base64");
  std::size_t len = static_cast<std::size_t>(n);
  // EVP_DecodeBlock keeps the zero bytes that stand for '=' padding.
  for (std::size_t i = text.size(); i > 0 && text[i - 1] == '='; --i) --len;
  out.resize(len);
  return out;
}

// Registry --------------------------------------------------------------------------

json CommitmentRecord::to_json() const {
  return {{"model_id", model_id},
          {"digest", commitment.hex()},
          {"geometry_digest", to_hex(geometry_digest())},
          {"published_at", published_at},
          {"circuit", description_to_json(description)}};
}

CommitmentRecord CommitmentRecord::from_json(const json& j) {
  CommitmentRecord r;
  r.model_id = j.at("model_id").get<std::string>();
  r.commitment.digest = digest_from_hex(j.at("digest").get<std::string>());
  r.description = description_from_json(j.at("circuit"));
  r.published_at = j.at("published_at").get<std::string>();
  if (to_hex(r.geometry_digest()) != j.at("geometry_digest").get<std::string>())
    throw RegistryError("record for " + r.model_id + " has an inconsistent geometry digest");
  return r;
}

CommitmentRecord make_record(const std::string& model_id, const ModelCommitment& mc, const CircuitDescription& d) {
  return {model_id, mc, d, utc_now()};
}

namespace {

class LockedFile {
 public:
  LockedFile(const std::string& path, bool exclusive) {
    fd_ = ::open(path.c_str(), exclusive ? (O_RDWR | O_CREAT | O_APPEND) : O_RDONLY, 0644);
    if (fd_ < 0) {
      if (!exclusive && errno == ENOENT) return;
      throw RegistryError("cannot open registry " + path + ": " + std::strerror(errno));
    }
    if (::flock(fd_, exclusive ? LOCK_EX : LOCK_SH) != 0) {
      ::close(fd_);
      throw RegistryError("cannot lock registry " + path);
    }
  }
  ~LockedFile() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  int fd() const { return fd_; }

  std::string read_all() const {
    std::string s;
    if (fd_ < 0) return s;
    char buf[65536];
    ::lseek(fd_, 0, SEEK_SET);
    for (;;) {
      const ssize_t n = ::read(fd_, buf, sizeof buf);
      if (n < 0) throw RegistryError("cannot read registry");
      if (n == 0) break;
      s.append(buf, static_cast<std::size_t>(n));
    }
    return s;
  }

 private:
  int fd_ = -1;
};

std::vector<CommitmentRecord> parse_records(const std::string& text) {
  std::vector<CommitmentRecord> out;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(CommitmentRecord::from_json(json::parse(line)));
    } catch (const RegistryError&) {
      throw;
    } catch (const std::exception& e) {
      throw RegistryError("registry line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

void Registry::publish(const CommitmentRecord& r) const {
  LockedFile f(path_, true);
  for (const auto& old : parse_records(f.read_all())) {
    if (old.model_id != r.model_id) continue;
    if (old.commitment == r.commitment && old.description == r.description) return;
    throw RegistryError("model " + r.model_id + " is already published with digest " + old.commitment.hex());
  }
  const std::string line = r.to_json().dump() + "\n";
  if (::write(f.fd(), line.data(), line.size()) != static_cast<ssize_t>(line.size()) || ::fsync(f.fd()) != 0)
    throw RegistryError("cannot append to registry " + path_);
}

std::vector<CommitmentRecord> Registry::records() const {
  LockedFile f(path_, false);
  return parse_records(f.read_all());
}

std::optional<CommitmentRecord> Registry::find(const std::string& model_id) const {
  for (auto& r : records())
    if (r.model_id == model_id) return r;
  return std::nullopt;
}

// Wire ------------------------------------------------------------------------------

namespace {

void write_all(int fd, const std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::send(fd, p, n, MSG_NOSIGNAL);
    if (k < 0 && errno == EINTR) continue;
    if (k <= 0) throw NetworkError(std::string("send failed: ") + std::strerror(errno));
    p += k;
    n -= static_cast<std::size_t>(k);
  }
}

void read_all(int fd, std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::recv(fd, p, n, 0);
    if (k < 0 && errno == EINTR) continue;
    if (k == 0) throw NetworkError("connection closed");
    if (k < 0) throw NetworkError(std::string("receive failed: ") + std::strerror(errno));
    p += k;
    n -= static_cast<std::size_t>(k);
  }
}

}  // namespace

void send_message(int fd, const json& msg, std::vector<std::uint8_t>* tap) {
  const std::string body = msg.dump();
  if (body.size() > kMaxMessageBytes) throw ProtocolError("message too large");
  std::vector<std::uint8_t> frame(4 + body.size());
  const auto n = static_cast<std::uint32_t>(body.size());
  frame[0] = static_cast<std::uint8_t>(n >> 24);
  frame[1] = static_cast<std::uint8_t>(n >> 16);
  frame[2] = static_cast<std::uint8_t>(n >> 8);
  frame[3] = static_cast<std::uint8_t>(n);
  std::memcpy(frame.data() + 4, body.data(), body.size());
  if (tap) tap->insert(tap->end(), frame.begin(), frame.end());
  write_all(fd, frame.data(), frame.size());
}

json recv_message(int fd, std::vector<std::uint8_t>* tap) {
  std::uint8_t hdr[4];
  read_all(fd, hdr, 4);
  const std::uint32_t n = (std::uint32_t{hdr[0]} << 24) | (std::uint32_t{hdr[1]} << 16) | (std::uint32_t{hdr[2]} << 8) | hdr[3];
  if (n > kMaxMessageBytes) throw ProtocolError("frame of " + std::to_string(n) + " bytes exceeds the limit");
  std::vector<std::uint8_t> body(n);
  read_all(fd, body.data(), n);
  if (tap) {
    tap->insert(tap->end(), hdr, hdr + 4);
    tap->insert(tap->end(), body.begin(), body.end());
  }
  try {
    return json::parse(body.begin(), body.end());
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed message: ") + e.what());
  }
}

std::pair<std::string, std::uint16_t> parse_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("address must be host:port, got " + addr);
  const std::string port = addr.substr(colon + 1);
  unsigned long p = 0;
  try {
    std::size_t used = 0;
    p = std::stoul(port, &used);
    if (used != port.size() || p > 65535) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw std::invalid_argument("bad port in address " + addr);
  }
  std::string host = addr.substr(0, colon);
  if (host.empty()) host = "127.0.0.1";
  return {host, static_cast<std::uint16_t>(p)};
}

int connect_to(const std::string& addr) {
  const auto [host, port] = parse_address(addr);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res); rc != 0)
    throw NetworkError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  int fd = -1;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw NetworkError("cannot connect to " + addr + ": " + std::strerror(errno));
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return fd;
}

json InferenceRequest::to_json() const {
  return {{"type", "infer"}, {"model", model_id}, {"inputs", tensors_to_json(inputs)}, {"k", k}};
}

InferenceRequest InferenceRequest::from_json(const json& j) {
  if (j.at("type").get<std::string>() != "infer") throw ProtocolError("expected an infer request");
  InferenceRequest r;
  r.model_id = j.at("model").get<std::string>();
  r.inputs = tensors_from_json(j.at("inputs"));
  r.k = j.value("k", kDefaultSamples);
  return r;
}

json InferenceResponse::to_json() const {
  return {{"type", "result"}, {"model", model_id}, {"outputs", tensors_to_json(outputs)}, {"proof", base64_encode(proof)}};
}

InferenceResponse InferenceResponse::from_json(const json& j) {
  if (j.at("type").get<std::string>() != "result") throw ProtocolError("expected a result message");
  InferenceResponse r;
  r.model_id = j.at("model").get<std::string>();
  r.outputs = tensors_from_json(j.at("outputs"));
  r.proof = base64_decode(j.at("proof").get<std::string>());
  return r;
}

json error_message(const std::string& text) { return {{"type", "error"}, {"message", text}}; }

// Server ----------------------------------------------------------------------------

LoadedModel::LoadedModel(std::string id, ModelBundle bundle, std::optional<std::uint64_t> row_cap)
    : id_(std::move(id)), bundle_(std::move(bundle)), graph_(reduce(bundle_.graph())),
      constants_(quantize_constants(graph_, bundle_.weights, bundle_.quant)),
      cc_(std::make_unique<CommittedCircuit>(CircuitMatrix::compile(graph_, constants_, bundle_.quant, row_cap))),
      mc_(bundle_.commitment()) {
  prepare_tables(bundle_.quant);
}

InferenceResponse LoadedModel::answer(const TensorMap& inputs, std::uint32_t k) const {
  const CircuitMatrix& c = cc_->circuit();
  if (k == 0 || k > c.geometry().total_rows())
    throw ProtocolError("k must be between 1 and " + std::to_string(c.geometry().total_rows()));
  Witness w;
  try {
    w = gen_witness(c, inputs);
  } catch (const std::exception& e) {
    throw ProtocolError(std::string("bad input: ") + e.what());
  }
  if (w.saturations) throw ProtocolError("input drives a lookup out of range; no proof is possible");
  InferenceResponse r;
  r.model_id = id_;
  r.outputs = decode_outputs(c.io(), w.public_io);
  r.proof = prove(*cc_, w, mc_, k).serialize();
  return r;
}

struct Server::Job {
  std::shared_ptr<const LoadedModel> model;
  InferenceRequest request;
  std::promise<json> reply;
};

Server::Server(std::vector<std::shared_ptr<const LoadedModel>> models, ServerOptions opt) : opt_(std::move(opt)) {
  for (auto& m : models) models_[m->id()] = std::move(m);
}

Server::~Server() { stop(); }

void Server::start(const std::string& host, std::uint16_t port) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw NetworkError("socket failed");
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.empty() ? "127.0.0.1" : host.c_str(), &sa.sin_addr) != 1)
    throw NetworkError("bad listen address " + host);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0 || ::listen(listen_fd_, 64) != 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw NetworkError("cannot listen on " + host + ":" + std::to_string(port) + ": " + err);
  }
  socklen_t len = sizeof sa;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&sa), &len);
  port_ = ntohs(sa.sin_port);
  running_ = true;
  worker_ = std::thread([this] { worker_loop(); });
  acceptor_ = std::thread([this] { accept_loop(); });
}

void Server::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  {
    std::lock_guard lock(mu_);
    for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  cv_.notify_all();
  stopped_cv_.notify_all();
  if (acceptor_.joinable()) acceptor_.join();
  if (worker_.joinable()) worker_.join();
  std::vector<std::thread> conns;
  {
    std::lock_guard lock(mu_);
    conns.swap(connections_);
  }
  for (auto& t : conns) t.join();
}

void Server::wait() {
  std::unique_lock lock(mu_);
  stopped_cv_.wait(lock, [this] { return !running_; });
}

void Server::accept_loop() {
  while (running_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (!running_) break;
      if (errno == EINTR || errno == ECONNABORTED) continue;
      break;
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::lock_guard lock(mu_);
    if (!running_) {
      ::close(fd);
      break;
    }
    open_fds_.push_back(fd);
    connections_.emplace_back([this, fd] { handle(fd); });
  }
}

void Server::handle(int fd) {
  try {
    while (running_) {
      json msg;
      try {
        msg = recv_message(fd);
      } catch (const ProtocolError& e) {
        send_message(fd, error_message(std::string("malformed request: ") + e.what()));
        break;
      }
      send_message(fd, dispatch(msg));
    }
  } catch (const NetworkError&) {
  }
  std::lock_guard lock(mu_);
  std::erase(open_fds_, fd);
  ::close(fd);
}

json Server::dispatch(const json& msg) {
  InferenceRequest req;
  try {
    req = InferenceRequest::from_json(msg);
  } catch (const std::exception& e) {
    return error_message(std::string("malformed request: ") + e.what());
  }
  std::string served = req.model_id;
  if (auto s = opt_.swap.find(served); s != opt_.swap.end()) served = s->second;
  const auto m = models_.find(served);
  if (m == models_.end() || !models_.count(req.model_id)) return error_message("unknown model: " + req.model_id);

  auto job = std::make_shared<Job>();
  job->model = m->second;
  job->request = std::move(req);
  auto reply = job->reply.get_future();
  {
    std::lock_guard lock(mu_);
    jobs_.push(job);
  }
  cv_.notify_one();
  return reply.get();
}

void Server::worker_loop() {
  for (;;) {
    std::shared_ptr<Job> job;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return !jobs_.empty() || !running_; });
      if (jobs_.empty()) {
        if (!running_) return;
        continue;
      }
      job = std::move(jobs_.front());
      jobs_.pop();
    }
    try {
      InferenceResponse r = job->model->answer(job->request.inputs, job->request.k);
      r.model_id = job->request.model_id;
      json reply = r.to_json();
      ++served_;
      job->reply.set_value(std::move(reply));
    } catch (const std::exception& e) {
      job->reply.set_value(error_message(e.what()));
    }
  }
}

// Client ----------------------------------------------------------------------------

VerifyReport check_response(const CommitmentRecord& record, const TensorMap& inputs, const TensorMap& outputs,
                            const std::vector<std::uint8_t>& proof_bytes, std::uint32_t min_k) {
  Proof p;
  try {
    p = Proof::deserialize(proof_bytes);
  } catch (const DecodeError& e) {
    return {false, FailureReason::MerklePath, std::string("proof could not be decoded: ") + e.what()};
  }
  VerifyOptions opt{min_k, std::nullopt};
  try {
    opt.expected_public_io = encode_public_io(record.description.io, inputs, outputs);
  } catch (const std::exception& e) {
    VerifyReport rep = verify(p, record.description, record.commitment, {min_k, std::nullopt});
    if (!rep.accepted) return rep;
    return {false, FailureReason::TranscriptMismatch, std::string("response does not fit the instance: ") + e.what()};
  }
  return verify(p, record.description, record.commitment, opt);
}

QueryResult client_query(const std::string& addr, const std::string& model_id, const TensorMap& inputs,
                         std::uint32_t k, const Registry& registry, const ClientOptions& opt) {
  const int fd = connect_to(addr);
  json reply;
  try {
    send_message(fd, InferenceRequest{model_id, inputs, k}.to_json(), opt.tap);
    reply = recv_message(fd, opt.tap);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  if (reply.value("type", "") == "error") throw ProtocolError(reply.value("message", "server error"));
  InferenceResponse resp;
  try {
    resp = InferenceResponse::from_json(reply);
  } catch (const ProtocolError&) {
    throw;
  } catch (const std::exception& e) {
    throw ProtocolError(std::string("malformed response: ") + e.what());
  }
  if (resp.model_id != model_id) throw ProtocolError("response names model " + resp.model_id);
  const auto record = registry.find(model_id);
  if (!record) throw RegistryError("no published commitment for model " + model_id);
  if (opt.mangle) opt.mangle(resp.proof);
  prepare_tables(record->description.quant);

  QueryResult out;
  out.outputs = resp.outputs;
  out.proof_bytes = resp.proof.size();
  const auto t0 = std::chrono::steady_clock::now();
  out.report = check_response(*record, inputs, resp.outputs, resp.proof, k);
  out.verify_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace zkinfer
