#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "zkinfer/argument.hpp"
#include "zkinfer/model.hpp"

namespace zkinfer {

using nlohmann::json;

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NetworkError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct RegistryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// JSON forms ------------------------------------------------------------------------

json tensor_to_json(const IntTensor& t);
IntTensor tensor_from_json(const json& j);
json tensors_to_json(const TensorMap& m);
TensorMap tensors_from_json(const json& j);

json description_to_json(const CircuitDescription& d);
CircuitDescription description_from_json(const json& j);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
/// Throws ProtocolError on malformed input.
std::vector<std::uint8_t> base64_decode(const std::string& text);

// Registry --------------------------------------------------------------------------

struct CommitmentRecord {
  std::string model_id;
  ModelCommitment commitment;
  CircuitDescription description;
  std::string published_at;  // UTC, ISO 8601

  Digest geometry_digest() const { return description.geometry_digest(); }
  json to_json() const;
  static CommitmentRecord from_json(const json& j);
};

CommitmentRecord make_record(const std::string& model_id, const ModelCommitment& mc, const CircuitDescription& d);

/// Append-only JSON-lines file of commitment records, guarded by flock.
class Registry {
 public:
  explicit Registry(std::string path) : path_(std::move(path)) {}

  /// Re-publishing an identical commitment is a no-op; a different one under
  /// an existing id throws RegistryError.
  void publish(const CommitmentRecord& r) const;
  std::optional<CommitmentRecord> find(const std::string& model_id) const;
  std::vector<CommitmentRecord> records() const;
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Wire ------------------------------------------------------------------------------

/// Frames are a 4-byte big-endian length followed by that many bytes of JSON.
inline constexpr std::uint32_t kMaxMessageBytes = 1u << 28;

/// Every byte written or read is appended to `tap` when given.
void send_message(int fd, const json& msg, std::vector<std::uint8_t>* tap = nullptr);
/// Throws NetworkError on a closed or failing socket, ProtocolError on a bad frame.
json recv_message(int fd, std::vector<std::uint8_t>* tap = nullptr);

/// "host:port"; the host may be empty (loopback).
std::pair<std::string, std::uint16_t> parse_address(const std::string& addr);
int connect_to(const std::string& addr);

struct InferenceRequest {
  std::string model_id;
  TensorMap inputs;
  std::uint32_t k = kDefaultSamples;

  json to_json() const;
  static InferenceRequest from_json(const json& j);
};

struct InferenceResponse {
  std::string model_id;
  TensorMap outputs;
  std::vector<std::uint8_t> proof;

  json to_json() const;
  static InferenceResponse from_json(const json& j);
};

json error_message(const std::string& text);

// Server ----------------------------------------------------------------------------

/// A model ready to answer requests: reduced graph, constants, committed circuit.
class LoadedModel {
 public:
  LoadedModel(std::string id, ModelBundle bundle, std::optional<std::uint64_t> row_cap = std::nullopt);

  const std::string& id() const { return id_; }
  const ModelBundle& bundle() const { return bundle_; }
  const Graph& graph() const { return graph_; }
  const TensorMap& constants() const { return constants_; }
  const CommittedCircuit& committed() const { return *cc_; }
  const ModelCommitment& commitment() const { return mc_; }
  CommitmentRecord record() const { return make_record(id_, mc_, cc_->description()); }

  /// Runs the circuit on `inputs` and proves it. Throws ProtocolError for
  /// inputs the circuit cannot take or cannot prove.
  InferenceResponse answer(const TensorMap& inputs, std::uint32_t k) const;

 private:
  std::string id_;
  ModelBundle bundle_;
  Graph graph_;
  TensorMap constants_;
  std::unique_ptr<CommittedCircuit> cc_;
  ModelCommitment mc_;
};

struct ServerOptions {
  /// Test hook for a dishonest provider: requests naming the key are answered
  /// by the model named by the value.
  std::map<std::string, std::string> swap;
};

/// Thread per connection; proofs are produced one at a time, in arrival order.
class Server {
 public:
  Server(std::vector<std::shared_ptr<const LoadedModel>> models, ServerOptions opt = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts the accept loop. Port 0 picks a free port.
  void start(const std::string& host, std::uint16_t port);
  std::uint16_t port() const { return port_; }
  void stop();
  /// Blocks until stop() is called from another thread.
  void wait();
  std::uint64_t proofs_served() const { return served_.load(); }

 private:
  struct Job;
  void accept_loop();
  void handle(int fd);
  void worker_loop();
  json dispatch(const json& msg);

  std::map<std::string, std::shared_ptr<const LoadedModel>> models_;
  ServerOptions opt_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::atomic<std::uint64_t> served_{0};
  std::thread acceptor_, worker_;
  std::mutex mu_;
  std::condition_variable cv_, stopped_cv_;
  std::queue<std::shared_ptr<Job>> jobs_;
  std::vector<std::thread> connections_;
  std::vector<int> open_fds_;
};

// Client ----------------------------------------------------------------------------

struct QueryResult {
  TensorMap outputs;
  VerifyReport report;
  std::size_t proof_bytes = 0;
  double verify_ms = 0;
};

struct ClientOptions {
  /// Captures all traffic of the query.
  std::vector<std::uint8_t>* tap = nullptr;
  /// Test hook applied to the proof bytes before decoding.
  std::function<void(std::vector<std::uint8_t>&)> mangle;
};

/// Sends one request and verifies the answer against the local registry
/// record, requiring at least k opened rows and the exact input/output pair.
/// Throws NetworkError, ProtocolError (server-reported or malformed reply) or
/// RegistryError (no local record).
QueryResult client_query(const std::string& addr, const std::string& model_id, const TensorMap& inputs,
                         std::uint32_t k, const Registry& registry, const ClientOptions& opt = {});

/// Local check of a response, shared by the client and the CLI.
VerifyReport check_response(const CommitmentRecord& record, const TensorMap& inputs, const TensorMap& outputs,
                            const std::vector<std::uint8_t>& proof_bytes, std::uint32_t min_k);

}  // namespace zkinfer
